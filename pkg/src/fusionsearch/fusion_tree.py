"""Fusion-tree genomes, left-fold decoding and the least-squares prediction head."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .feature_store import CandidateFeaturePool, LabelSet, NonFiniteError

WEIGHT_LOW, WEIGHT_HIGH = 0.1, 2.0
KEY_QUANTUM = 1e-9
DEFAULT_RIDGE = 1e-6


class FusionOp(enum.IntEnum):
    ADD = 0
    MUL = 1
    MAX = 2
    MIN = 3

    @classmethod
    def parse(cls, value) -> "FusionOp":
        if isinstance(value, FusionOp):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown fusion operator {value!r}") from None
        return cls(int(value))

    @property
    def label(self) -> str:
        return self.name.capitalize()


def _apply(op: int, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    if op == FusionOp.ADD:
        return left + right
    if op == FusionOp.MUL:
        return left * right
    if op == FusionOp.MAX:
        return np.maximum(left, right)
    if op == FusionOp.MIN:
        return np.minimum(left, right)
    raise ValueError(f"unknown fusion operator code {op}")


class FusionOverflowError(ArithmeticError):
    """A fusion step produced a non-finite value."""


@dataclass(frozen=True)
class Genome:
    """One individual: feature indices ``s``, operators ``q`` and weight pairs ``a``.

    Step ``t`` of the fold (t = 1..n-1, zero-based) scales the running
    descriptor by ``a[2(t-1)]`` and feature ``s[t]`` by ``a[2(t-1)+1]``.
    """

    s: tuple[int, ...]
    q: tuple[int, ...] = ()
    a: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "s", tuple(int(v) for v in self.s))
        object.__setattr__(self, "q", tuple(int(v) for v in self.q))
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))

    @property
    def n(self) -> int:
        return len(self.s)

    def check(self, T: int | None = None, n_max: int | None = None) -> None:
        """Raise ``ValueError`` if any structural invariant is broken."""
        n = self.n
        if n < 1:
            raise ValueError("genome must select at least one feature")
        if n_max is not None and n > n_max:
            raise ValueError(f"genome has {n} features, n_max is {n_max}")
        if len(self.q) != n - 1:
            raise ValueError(f"expected {n - 1} operators, got {len(self.q)}")
        if len(self.a) != 2 * (n - 1):
            raise ValueError(f"expected {2 * (n - 1)} weights, got {len(self.a)}")
        if any(op not in (0, 1, 2, 3) for op in self.q):
            raise ValueError(f"operator codes must be in 0..3, got {self.q}")
        if not all(np.isfinite(self.a)):
            raise ValueError("weights must be finite")
        if T is not None and any(not 0 <= t < T for t in self.s):
            raise ValueError(f"feature indices {self.s} out of range for T={T}")

    def to_json(self) -> dict:
        return {"s": list(self.s), "q": list(self.q), "a": list(self.a)}

    @classmethod
    def from_json(cls, obj: dict) -> "Genome":
        return cls(tuple(obj["s"]), tuple(obj.get("q", ())), tuple(obj.get("a", ())))

    def describe(self, names: Sequence[str] | None = None) -> str:
        label = (lambda t: names[t]) if names else str
        expr = label(self.s[0])
        for t in range(1, self.n):
            op = FusionOp(self.q[t - 1]).label
            expr = f"{op}({self.a[2 * t - 2]:.3g}*{expr}, {self.a[2 * t - 1]:.3g}*{label(self.s[t])})"
        return expr


def fuse(genome: Genome, features: Sequence[np.ndarray]) -> np.ndarray:
    """Left-fold ``genome`` over already row-restricted feature matrices.

    ``features[t]`` is the matrix for feature index ``t``. Raises
    ``FusionOverflowError`` as soon as an intermediate leaves the finite range.
    """
    s, q, a = genome.s, genome.q, genome.a
    fused = np.array(features[s[0]], dtype=np.float64, copy=True)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, len(s)):
            fused = _apply(q[t - 1], a[2 * t - 2] * fused, a[2 * t - 1] * features[s[t]])
            if not np.isfinite(fused).all():
                raise FusionOverflowError(f"non-finite descriptor after fusion step {t}")
    return fused


def decode_fuse(genome: Genome, pool: CandidateFeaturePool, split: str, labels: LabelSet) -> np.ndarray:
    """Fused descriptor of ``genome`` over the real residues of ``split``."""
    genome.check(T=pool.T)
    rows = labels.rows(split)
    if rows.size == 0:
        raise ValueError(f"split {split!r} is empty after masking")
    used = set(genome.s)
    features = {t: pool[t].data[rows] for t in used}
    return fuse(genome, features)


@dataclass(frozen=True)
class LinearHead:
    W: np.ndarray  # (d + 1) x 2, last row is the bias
    ridge: float

    def logits(self, descriptor: np.ndarray) -> np.ndarray:
        X = np.asarray(descriptor, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] + 1 != self.W.shape[0]:
            raise ValueError(f"descriptor shape {X.shape} does not match head with {self.W.shape[0] - 1} inputs")
        return X @ self.W[:-1] + self.W[-1]


def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def ridge_objective(W: np.ndarray, descriptor: np.ndarray, targets: np.ndarray, ridge: float) -> float:
    """Sum of squared residuals plus ``ridge`` times the squared non-bias weights."""
    resid = _augment(descriptor) @ W - targets
    return float(np.sum(resid**2) + ridge * np.sum(W[:-1] ** 2))


def fit_head(descriptor: np.ndarray, targets: np.ndarray, ridge: float = DEFAULT_RIDGE) -> LinearHead:
    """Solve the ridge-regularised normal equations for a linear two-class head.

    The bias row is left unpenalised, so the system stays positive definite
    for any ``ridge > 0``.
    """
    X = np.asarray(descriptor, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"descriptor has {X.shape[0]} rows, targets have {Y.shape[0]}")
    if not ridge > 0:
        raise ValueError("ridge must be positive")
    if not np.isfinite(X).all():
        raise NonFiniteError("descriptor contains non-finite values")
    Xa = _augment(X)
    with np.errstate(over="ignore", invalid="ignore"):
        gram = Xa.T @ Xa
        penalty = np.full(Xa.shape[1], ridge)
        penalty[-1] = 0.0
        gram[np.diag_indices_from(gram)] += penalty
        rhs = Xa.T @ Y
        if not (np.isfinite(gram).all() and np.isfinite(rhs).all()):
            raise NonFiniteError("normal equations overflowed")
        W = np.linalg.solve(gram, rhs)
    if not np.isfinite(W).all():
        raise NonFiniteError("head weights are not finite")
    return LinearHead(W, float(ridge))


def softmax_pairs(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict(head: LinearHead, descriptor: np.ndarray) -> np.ndarray:
    """Per-row disorder probability (softmax column 1)."""
    X = np.asarray(descriptor, dtype=np.float64)
    if not np.isfinite(X).all():
        raise NonFiniteError("descriptor contains non-finite values")
    with np.errstate(over="ignore", invalid="ignore"):
        logits = head.logits(X)
    if not np.isfinite(logits).all():
        raise NonFiniteError("logits overflowed")
    return softmax_pairs(logits)[:, 1]


def random_genome(rng: np.random.Generator, T: int, n_max: int) -> Genome:
    if T < 1 or n_max < 1:
        raise ValueError("T and n_max must be at least 1")
    n = int(rng.integers(1, n_max + 1))
    s = rng.integers(0, T, size=n)
    q = rng.integers(0, len(FusionOp), size=n - 1)
    a = rng.uniform(WEIGHT_LOW, WEIGHT_HIGH, size=2 * (n - 1))
    return Genome(tuple(s.tolist()), tuple(q.tolist()), tuple(a.tolist()))


def canonical_key(genome: Genome) -> tuple:
    """Hashable, totally ordered key; weights are quantised to 1e-9."""
    return (
        genome.s,
        genome.q,
        tuple(int(round(w / KEY_QUANTUM)) for w in genome.a),
    )
