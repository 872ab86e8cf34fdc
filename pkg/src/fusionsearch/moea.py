"""NSGA-II selection with differential-evolution weight updates over fusion trees.

Discrete structure (features ``s`` and operators ``q``) is varied by integer
mutation and synchronized single-point crossover; the continuous fusion
weights ``a`` follow a DE/current-to-best-style update whose step size decays
linearly over the generations. Two objectives drive selection: validation AUC
(maximised) and the number of fused features (minimised).
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .feature_store import CandidateFeaturePool, LabelSet, PoolFormatError, one_hot_targets, validate_pool
from .fusion_tree import (
    WEIGHT_HIGH,
    WEIGHT_LOW,
    FusionOp,
    FusionOverflowError,
    Genome,
    canonical_key,
    fit_head,
    fuse,
    predict,
    random_genome,
)
from .metrics import auc

log = logging.getLogger(__name__)

OBJECTIVE_MODES = ("multi", "single_f1")
WEIGHT_MODES = ("evolved", "fixed_one")


@dataclass(frozen=True, order=True)
class FitnessPair:
    f1: float
    f2: int


@dataclass(frozen=True)
class SearchConfig:
    population_size: int = 40
    max_generations: int = 100
    p_mutation: float = 0.25
    p_crossover: float = 0.4
    n_max: int = 12
    rho0: float = 0.9
    rho_range: tuple[float, float] = (0.1, 0.9)
    ridge: float = 1e-6
    seed: int = 0
    objective_mode: str = "multi"
    weight_mode: str = "evolved"
    fixed_operator: str | None = None
    patience: int | None = None
    workers: int = 1

    _ALIASES = {
        "N": "population_size",
        "G_max": "max_generations",
        "P_mu": "p_mutation",
        "P_cx": "p_crossover",
    }

    def __post_init__(self):
        object.__setattr__(self, "rho_range", tuple(float(v) for v in self.rho_range))
        if self.objective_mode == "single":
            object.__setattr__(self, "objective_mode", "single_f1")
        if self.fixed_operator is not None:
            if str(self.fixed_operator).lower() == "none":
                object.__setattr__(self, "fixed_operator", None)
            else:
                object.__setattr__(self, "fixed_operator", FusionOp.parse(self.fixed_operator).label)
        problems = []
        if self.population_size < 2:
            problems.append("population_size must be >= 2")
        if self.max_generations < 1:
            problems.append("max_generations must be >= 1")
        if self.n_max < 1:
            problems.append("n_max must be >= 1")
        for name in ("p_mutation", "p_crossover"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        lo, hi = self.rho_range
        if not 0.0 <= lo <= hi <= 1.0:
            problems.append("rho_range must satisfy 0 <= lo <= hi <= 1")
        if not self.ridge > 0:
            problems.append("ridge must be positive")
        if self.objective_mode not in OBJECTIVE_MODES:
            problems.append(f"objective_mode must be one of {OBJECTIVE_MODES}")
        if self.weight_mode not in WEIGHT_MODES:
            problems.append(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.patience is not None and self.patience < 1:
            problems.append("patience must be >= 1 when set")
        if self.workers < 1:
            problems.append("workers must be >= 1")
        if problems:
            raise ValueError("invalid search config: " + "; ".join(problems))

    @classmethod
    def from_dict(cls, raw: dict) -> "SearchConfig":
        known = {f for f in cls.__dataclass_fields__ if not f.startswith("_")}
        kwargs = {}
        for key, value in raw.items():
            name = cls._ALIASES.get(key, key)
            if name not in known:
                raise ValueError(f"unknown config field {key!r}")
            kwargs[name] = value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["rho_range"] = list(self.rho_range)
        return out


@dataclass(frozen=True)
class Individual:
    genome: Genome
    fitness: FitnessPair
    generation: int = 0


@dataclass
class ParetoFront:
    entries: list[Individual] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def to_json(self) -> dict:
        return {"entries": [entry_to_json(e) for e in self.entries]}

    @classmethod
    def from_json(cls, obj: dict) -> "ParetoFront":
        return cls([entry_from_json(e) for e in obj["entries"]])


def entry_to_json(ind: Individual) -> dict:
    return {
        "genome": ind.genome.to_json(),
        "f1": ind.fitness.f1,
        "f2": ind.fitness.f2,
        "generation": ind.generation,
    }


def entry_from_json(obj: dict) -> Individual:
    return Individual(
        Genome.from_json(obj["genome"]),
        FitnessPair(float(obj["f1"]), int(obj["f2"])),
        int(obj.get("generation", 0)),
    )


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best_f1: float
    mean_f2: float
    front_size: int
    union_size: int = 0


@dataclass
class SearchResult:
    front: ParetoFront
    best: Individual
    history: list[GenerationStats]
    population: list[Individual]
    evaluations: int


# -- evaluation -------------------------------------------------------------


def apply_modes(genome: Genome, weight_mode: str = "evolved", fixed_operator: str | None = None) -> Genome:
    """Force unit weights and/or a single operator, as the ablation modes require."""
    q, a = genome.q, genome.a
    if fixed_operator is not None:
        q = (int(FusionOp.parse(fixed_operator)),) * len(q)
    if weight_mode == "fixed_one":
        a = (1.0,) * len(a)
    if q is genome.q and a is genome.a:
        return genome
    return Genome(genome.s, q, a)


class Evaluator:
    """Memoised fitness: fit the head on ``fit_split``, score AUC on ``score_split``.

    The cache is a plain dict keyed by :func:`canonical_key`; concurrent
    inserts of the same key always carry the same value, so no lock is needed.
    """

    def __init__(
        self,
        pool: CandidateFeaturePool,
        labels: LabelSet,
        config: SearchConfig | None = None,
        fit_split: str = "train",
        score_split: str = "val",
    ):
        self.config = config or SearchConfig()
        self.pool = pool
        self.labels = labels
        fit_rows = labels.rows(fit_split)
        score_rows = labels.rows(score_split)
        self._n_fit = fit_rows.size
        rows = np.concatenate([fit_rows, score_rows])
        self._features = [f.data[rows] for f in pool.features]
        self._targets = one_hot_targets(labels, fit_split)
        self._score_labels = labels.split_labels(score_split)
        self.cache: dict[tuple, FitnessPair] = {}
        self.hits = 0
        self.misses = 0

    def effective(self, genome: Genome) -> Genome:
        return apply_modes(genome, self.config.weight_mode, self.config.fixed_operator)

    def scores(self, genome: Genome) -> np.ndarray:
        """Disorder probabilities on the scoring split (raises on overflow)."""
        fused = fuse(self.effective(genome), self._features)
        head = fit_head(fused[: self._n_fit], self._targets, self.config.ridge)
        return predict(head, fused[self._n_fit:])

    def __call__(self, genome: Genome) -> FitnessPair:
        genome = self.effective(genome)
        key = canonical_key(genome)
        hit = self.cache.get(key)
        if hit is not None:
            self.hits += 1
            return hit
        self.misses += 1
        try:
            f1 = auc(self.scores(genome), self._score_labels)
        except (FusionOverflowError, PoolFormatError, np.linalg.LinAlgError) as exc:
            log.debug("evaluation failed for %s: %s", genome, exc)
            f1 = 0.0
        result = FitnessPair(float(f1), genome.n)
        self.cache[key] = result
        return result

    def evaluate_many(self, genomes: Sequence[Genome], workers: int = 1) -> list[FitnessPair]:
        if workers <= 1 or len(genomes) < 2:
            return [self(g) for g in genomes]
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(self, genomes))


def evaluate(genome: Genome, pool: CandidateFeaturePool, labels: LabelSet, config: SearchConfig | None = None) -> FitnessPair:
    """One-off evaluation. Build an :class:`Evaluator` to reuse its cache."""
    return Evaluator(pool, labels, config)(genome)


# -- NSGA-II machinery ------------------------------------------------------


def dominates(a: FitnessPair, b: FitnessPair) -> bool:
    """``a`` is at least as good on both objectives and strictly better on one."""
    return (a.f1 >= b.f1 and a.f2 <= b.f2) and (a.f1 > b.f1 or a.f2 < b.f2)


def fast_nondominated_sort(fitness: Sequence[FitnessPair]) -> list[list[int]]:
    """Deb's O(M N^2) sort; each front lists member indices in ascending order."""
    n = len(fitness)
    dominated_by = [[] for _ in range(n)]
    counts = [0] * n
    for p in range(n):
        for q in range(p + 1, n):
            if dominates(fitness[p], fitness[q]):
                dominated_by[p].append(q)
                counts[q] += 1
            elif dominates(fitness[q], fitness[p]):
                dominated_by[q].append(p)
                counts[p] += 1
    fronts = []
    current = [p for p in range(n) if counts[p] == 0]
    while current:
        fronts.append(current)
        nxt = []
        for p in current:
            for q in dominated_by[p]:
                counts[q] -= 1
                if counts[q] == 0:
                    nxt.append(q)
        current = sorted(nxt)
    return fronts


def crowding_distance(fitness: Sequence[FitnessPair]) -> np.ndarray:
    """Crowding distance of each member of one front.

    Boundary members of every objective get ``inf``; an objective whose
    values are all equal adds nothing to interior members.
    """
    n = len(fitness)
    dist = np.zeros(n)
    if n == 0:
        return dist
    if n <= 2:
        dist[:] = math.inf
        return dist
    for values in (np.array([f.f1 for f in fitness]), np.array([f.f2 for f in fitness], dtype=float)):
        order = np.argsort(values, kind="stable")
        dist[order[0]] = dist[order[-1]] = math.inf
        span = values[order[-1]] - values[order[0]]
        if span == 0:
            continue
        gaps = (values[order[2:]] - values[order[:-2]]) / span
        dist[order[1:-1]] += gaps
    return dist


def next_generation(fitness: Sequence[FitnessPair], size: int, objective_mode: str = "multi") -> list[int]:
    """Indices of the ``size`` survivors of ``fitness``, in selection order.

    Multi-objective mode orders by (front rank, crowding distance descending,
    index); single-objective mode by (f1 descending, index).
    """
    if len(fitness) < size:
        raise ValueError(f"cannot select {size} from a union of {len(fitness)}")
    if objective_mode == "single_f1":
        return sorted(range(len(fitness)), key=lambda i: -fitness[i].f1)[:size]
    chosen: list[int] = []
    for front in fast_nondominated_sort(fitness):
        dist = crowding_distance([fitness[i] for i in front])
        ranked = [front[j] for j in sorted(range(len(front)), key=lambda j: -dist[j])]
        chosen.extend(ranked[: size - len(chosen)])
        if len(chosen) == size:
            break
    return chosen


def select_best(front: Iterable[Individual]) -> Genome:
    return best_entry(front).genome


def best_entry(front: Iterable[Individual]) -> Individual:
    """Highest f1; ties go to fewer features, then the smallest canonical key."""
    entries = list(front)
    if not entries:
        raise ValueError("cannot select from an empty front")
    return min(entries, key=lambda e: (-e.fitness.f1, e.fitness.f2, canonical_key(e.genome)))


# -- variation --------------------------------------------------------------


def differential_weight(g: int, max_generations: int, rho0: float = 0.9, rho_range=None) -> float:
    """Linearly decaying DE weight, optionally clamped to ``rho_range``."""
    rho = rho0 * (1 - g / max_generations)
    if rho_range is not None:
        lo, hi = rho_range
        rho = min(max(rho, lo), hi)
    return rho


def _fit_length(a: Sequence[float], length: int) -> np.ndarray:
    out = np.zeros(length)
    k = min(length, len(a))
    out[:k] = a[:k]
    return out


def de_update(target: Sequence[float], donors: Sequence[Sequence[float]], rho: float) -> np.ndarray:
    """``a + rho (a1 - a) + rho (a2 - a3)`` with donors cut or zero-padded to ``len(a)``."""
    a = np.asarray(target, dtype=np.float64)
    a1, a2, a3 = (_fit_length(d, a.size) for d in donors)
    return a + rho * (a1 - a) + rho * (a2 - a3)


def _sample_donors(population: Sequence[Individual], rng: np.random.Generator, exclude: int | None) -> list[Individual]:
    pool = [i for i in range(len(population)) if i != exclude]
    if len(pool) >= 3:
        picks = rng.choice(pool, size=3, replace=False)
    elif len(population) >= 3:
        picks = rng.choice(len(population), size=3, replace=False)
    else:
        picks = rng.choice(len(population), size=3, replace=True)
    donors = [population[int(i)] for i in picks]
    return sorted(donors, key=lambda ind: -ind.fitness.f1)


def hybrid_mutation(
    genome: Genome,
    population: Sequence[Individual],
    g: int,
    config: SearchConfig,
    rng: np.random.Generator,
    n_features: int,
    target_index: int | None = None,
) -> Genome:
    """Integer mutation of ``s`` and ``q`` followed by a DE step on ``a``.

    ``target_index`` is the parent's position in ``population``; when given,
    the three DE donors are drawn from the other members if there are enough.
    """
    if not population:
        raise ValueError("population must not be empty")
    s, q, a = list(genome.s), list(genome.q), list(genome.a)
    p_mu = config.p_mutation

    if rng.random() <= p_mu:
        n_new = int(rng.integers(1, config.n_max + 1))
        n_old = len(s)
        if n_new < n_old:
            s, q, a = s[:n_new], q[: n_new - 1], a[: 2 * (n_new - 1)]
        elif n_new > n_old:
            extra = n_new - n_old
            s += rng.integers(0, n_features, size=extra).tolist()
            q += rng.integers(0, len(FusionOp), size=extra).tolist()
            a += rng.uniform(WEIGHT_LOW, WEIGHT_HIGH, size=2 * extra).tolist()
    n = len(s)

    if rng.random() <= p_mu:
        t = int(rng.integers(0, n))
        if n_features > 1:
            choice = int(rng.integers(0, n_features - 1))
            s[t] = choice + (choice >= s[t])
    if rng.random() <= p_mu and n > 1:
        j = int(rng.integers(0, n - 1))
        q[j] = int(rng.integers(0, len(FusionOp)))

    if config.weight_mode == "fixed_one":
        a = [1.0] * len(a)
    elif a:
        donors = _sample_donors(population, rng, target_index)
        rho = differential_weight(g, config.max_generations, config.rho0, config.rho_range)
        a = de_update(a, [d.genome.a for d in donors], rho).tolist()
    return apply_modes(Genome(tuple(s), tuple(q), tuple(a)), config.weight_mode, config.fixed_operator)


def hybrid_crossover(parent_k: Genome, parent_m: Genome, rng: np.random.Generator) -> Genome:
    """Synchronized single-point crossover; the child always has ``parent_m``'s length.

    With cut point ``c`` drawn from 1..min(n_k, n_m) the child takes the first
    ``c - 1`` features, operators and weight pairs from ``parent_k`` and the
    rest from ``parent_m``.
    """
    cut = int(rng.integers(1, min(parent_k.n, parent_m.n) + 1)) - 1
    s = parent_k.s[:cut] + parent_m.s[cut:]
    q = parent_k.q[:cut] + parent_m.q[cut:]
    a = parent_k.a[: 2 * cut] + parent_m.a[2 * cut:]
    return Genome(s, q, a)


# -- driver -----------------------------------------------------------------


def _dedupe(union: list[Individual], size: int) -> list[Individual]:
    """Drop repeated genomes (first occurrence wins) unless that leaves fewer than ``size``."""
    seen, unique, repeats = set(), [], []
    for ind in union:
        key = canonical_key(ind.genome)
        (repeats if key in seen else unique).append(ind)
        seen.add(key)
    if len(unique) >= size:
        return unique
    return unique + repeats[: size - len(unique)]


def population_front(population: Sequence[Individual], objective_mode: str = "multi") -> ParetoFront:
    """Non-dominated, duplicate-free members of ``population``."""
    if objective_mode == "single_f1":
        return ParetoFront([best_entry(population)])
    first = fast_nondominated_sort([ind.fitness for ind in population])[0]
    seen, entries = set(), []
    for i in first:
        key = canonical_key(population[i].genome)
        if key not in seen:
            seen.add(key)
            entries.append(population[i])
    entries.sort(key=lambda e: (e.fitness.f2, -e.fitness.f1, canonical_key(e.genome)))
    return ParetoFront(entries)


def _stats(g: int, population: Sequence[Individual], front: ParetoFront, union_size: int = 0) -> GenerationStats:
    return GenerationStats(
        generation=g,
        best_f1=max(ind.fitness.f1 for ind in population),
        mean_f2=float(np.mean([ind.fitness.f2 for ind in population])),
        front_size=len(front),
        union_size=union_size,
    )


def resolve_workers(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    return max(1, int(os.environ.get("FUSION_WORKERS", "1")))


def run_search(
    config: SearchConfig,
    pool: CandidateFeaturePool,
    labels: LabelSet,
    callback: Callable[[int, list[Individual], ParetoFront], None] | None = None,
    evaluator: Evaluator | None = None,
) -> SearchResult:
    """Evolve fusion trees for ``config.max_generations`` generations.

    ``callback(g, population, front)`` runs after initialisation (g = 0) and
    after each selection step. Raises ``ValueError`` if the inputs fail
    validation; failed evaluations never escape (they score f1 = 0).
    """
    report = validate_pool(pool, labels)
    if not report.ok:
        raise ValueError("pool/labels failed validation: " + "; ".join(report.issues))
    rng = np.random.default_rng(config.seed)
    evaluator = evaluator or Evaluator(pool, labels, config)
    T, N, mode = pool.T, config.population_size, config.objective_mode

    genomes = [
        apply_modes(random_genome(rng, T, config.n_max), config.weight_mode, config.fixed_operator)
        for _ in range(N)
    ]
    fitness = evaluator.evaluate_many(genomes, config.workers)
    population = [Individual(gn, ft, 0) for gn, ft in zip(genomes, fitness)]
    front = population_front(population, mode)
    history = [_stats(0, population, front)]
    if callback:
        callback(0, population, front)

    best_so_far, stale = history[0].best_f1, 0
    for g in range(config.max_generations):
        offspring: list[Genome] = []
        for k, parent in enumerate(population):
            mutant = hybrid_mutation(parent.genome, population, g, config, rng, T, target_index=k)
            offspring.append(mutant)
            if rng.random() < config.p_crossover:
                child = hybrid_crossover(parent.genome, mutant, rng)
                offspring.append(apply_modes(child, config.weight_mode, config.fixed_operator))
        scored = evaluator.evaluate_many(offspring, config.workers)
        union = population + [Individual(gn, ft, g + 1) for gn, ft in zip(offspring, scored)]
        union_size = len(union)
        union = _dedupe(union, N)
        keep = next_generation([ind.fitness for ind in union], N, mode)
        population = [union[i] for i in keep]
        front = population_front(population, mode)
        stats = _stats(g + 1, population, front, union_size)
        history.append(stats)
        if callback:
            callback(g + 1, population, front)
        log.info("generation %d: best f1 %.4f, front %d, mean n %.2f", g + 1, stats.best_f1, stats.front_size, stats.mean_f2)

        if stats.best_f1 > best_so_far:
            best_so_far, stale = stats.best_f1, 0
        else:
            stale += 1
        if config.patience is not None and stale >= config.patience:
            log.info("stopping early: no improvement for %d generations", stale)
            break

    return SearchResult(
        front=front,
        best=best_entry(front),
        history=history,
        population=population,
        evaluations=evaluator.misses,
    )


def with_overrides(config: SearchConfig, **changes) -> SearchConfig:
    return replace(config, **{k: v for k, v in changes.items() if v is not None})
