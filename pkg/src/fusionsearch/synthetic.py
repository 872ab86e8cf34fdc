"""Planted-signal feature pools and an exhaustive search oracle for tiny instances."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np

from .feature_store import CandidateFeaturePool, FeatureMatrix, LabelSet
from .fusion_tree import FusionOp, Genome, canonical_key
from .moea import Evaluator, SearchConfig

MAX_CANDIDATES = 10**7


@dataclass(frozen=True)
class PlantConfig:
    """Recipe for a planted pool.

    Every feature starts as isotropic Gaussian noise (``noise_sd``). A feature
    with strength ``s`` adds ``s * (2y - 1)`` along a random unit direction in
    its first ``signal_dims`` columns. A complementary pair ``(i, j)`` shares
    one direction and one nuisance draw ``v ~ N(0, nuisance_sd)``: feature ``i``
    carries ``s_i (2y - 1) + v`` and feature ``j`` carries
    ``s_j (2y - 1) - pair_ratio * v``, so either alone is blurred by ``v`` while
    ``pair_ratio * phi_i + phi_j`` cancels it.
    """

    n_res: int = 2000
    n_features: int = 6
    dim: int = 8
    n_views: int = 2
    strengths: tuple[float, ...] = ()
    complementary_pairs: tuple[tuple[int, int], ...] = ()
    nuisance_sd: float = 2.0
    pair_ratio: float = 1.0
    noise_sd: float = 1.0
    signal_dims: int = 4
    positive_rate: float = 0.3
    pad_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        strengths = tuple(float(v) for v in self.strengths) or (0.0,) * self.n_features
        pairs = tuple((int(i), int(j)) for i, j in self.complementary_pairs)
        object.__setattr__(self, "strengths", strengths)
        object.__setattr__(self, "complementary_pairs", pairs)
        if len(strengths) != self.n_features:
            raise ValueError(f"need {self.n_features} strengths, got {len(strengths)}")
        if any(not 0.0 <= s <= 1.0 for s in strengths):
            raise ValueError("strengths must lie in [0, 1]")
        if pairs and self.n_features < 2:
            raise ValueError("complementary pairs need at least two features")
        members = [t for pair in pairs for t in pair]
        if len(set(members)) != len(members) or any(not 0 <= t < self.n_features for t in members):
            raise ValueError("complementary pairs must use distinct, valid feature indices")
        if self.n_res < 5 or self.dim < 1 or self.n_features < 1:
            raise ValueError("n_res >= 5, dim >= 1 and n_features >= 1 required")
        if not 0.0 <= self.pad_fraction < 1.0:
            raise ValueError("pad_fraction must lie in [0, 1)")

    def to_json(self) -> dict:
        out = asdict(self)
        out["strengths"] = list(self.strengths)
        out["complementary_pairs"] = [list(p) for p in self.complementary_pairs]
        return out


def split_tags(n_res: int) -> np.ndarray:
    """60/20/20 round-robin assignment: residue i goes by ``i mod 5``."""
    cycle = np.array(["train", "train", "train", "val", "test"], dtype=object)
    return cycle[np.arange(n_res) % 5]


def generate_planted_pool(cfg: PlantConfig) -> tuple[CandidateFeaturePool, LabelSet]:
    rng = np.random.default_rng(cfg.seed)
    T, n, d = cfg.n_features, cfg.n_res, cfg.dim
    k = min(cfg.signal_dims, d)

    y = (rng.random(n) < cfg.positive_rate).astype(np.int64)
    sign = 2.0 * y - 1.0
    data = cfg.noise_sd * rng.standard_normal((T, n, d))
    directions = rng.standard_normal((T, k))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    paired = {}
    for i, j in cfg.complementary_pairs:
        nuisance = cfg.nuisance_sd * rng.standard_normal(n)
        paired[i] = (cfg.strengths[i] * sign + nuisance, directions[i])
        paired[j] = (cfg.strengths[j] * sign - cfg.pair_ratio * nuisance, directions[i])
    for t in range(T):
        latent, w = paired.get(t, (cfg.strengths[t] * sign, directions[t]))
        data[t, :, :k] += latent[:, None] * w[None, :]

    mask = np.ones(n, dtype=bool)
    if cfg.pad_fraction > 0:
        mask[rng.random(n) < cfg.pad_fraction] = False

    per_view = -(-T // cfg.n_views)
    features = tuple(FeatureMatrix(f"view{t // per_view}-f{t:02d}", data[t]) for t in range(T))
    meta = {"plant": cfg.to_json(), "names": [f.name for f in features], "dims": [d] * T}
    pool = CandidateFeaturePool(features, mask, meta)
    return pool, LabelSet(y, split_tags(n), mask)


# -- exhaustive oracle ------------------------------------------------------


def count_candidates(T: int, n_max: int, n_ops: int = 4, n_weights: int = 1) -> int:
    return sum(T**n * n_ops ** (n - 1) * n_weights ** (2 * (n - 1)) for n in range(1, n_max + 1))


def enumerate_genomes(
    T: int,
    n_max: int,
    operator_set: Sequence = tuple(FusionOp),
    weight_grid: Sequence[float] = (1.0,),
) -> Iterator[Genome]:
    ops = [int(FusionOp.parse(op)) for op in operator_set]
    grid = [float(w) for w in weight_grid]
    for n in range(1, n_max + 1):
        for s in itertools.product(range(T), repeat=n):
            for q in itertools.product(ops, repeat=n - 1):
                for a in itertools.product(grid, repeat=2 * (n - 1)):
                    yield Genome(s, q, a)


def brute_force_search(
    pool: CandidateFeaturePool,
    labels: LabelSet,
    n_max_small: int,
    operator_set: Sequence = tuple(FusionOp),
    weight_grid: Sequence[float] = (1.0,),
    config: SearchConfig | None = None,
    evaluator: Evaluator | None = None,
) -> tuple[Genome, float]:
    """Score every genome on the grid and return the best with its f1.

    Ties resolve exactly as :func:`fusionsearch.moea.best_entry` does. Raises
    ``ValueError`` when the grid holds more than ten million genomes.
    """
    total = count_candidates(pool.T, n_max_small, len(operator_set), len(weight_grid))
    if total > MAX_CANDIDATES:
        raise ValueError(f"{total} candidates exceed the enumeration guard of {MAX_CANDIDATES}")
    evaluator = evaluator or Evaluator(pool, labels, config or SearchConfig(n_max=n_max_small))
    best, best_rank = None, None
    for genome in enumerate_genomes(pool.T, n_max_small, operator_set, weight_grid):
        fit = evaluator(genome)
        rank = (-fit.f1, fit.f2, canonical_key(genome))
        if best_rank is None or rank < best_rank:
            best, best_rank = genome, rank
    return best, -best_rank[0]
