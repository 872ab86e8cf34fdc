"""Candidate feature pools, residue labels and their on-disk formats.

A pool directory holds ``pool.json`` (the manifest), one ``FPM1`` matrix file
per candidate feature and a one-column ``FPM1`` mask file. Labels live in a
CSV with columns ``index,label,mask,split``.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"FPM1"
HEADER = struct.Struct("<4sIII")
MANIFEST_NAME = "pool.json"
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


class PoolFormatError(ValueError):
    """Base class for malformed pool or label inputs."""


class MissingFileError(PoolFormatError, FileNotFoundError):
    pass


class MagicMismatchError(PoolFormatError):
    pass


class DimensionMismatchError(PoolFormatError):
    pass


class NonFiniteError(PoolFormatError):
    pass


class EmptySplitError(PoolFormatError):
    pass


@dataclass(frozen=True)
class FeatureMatrix:
    name: str
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionMismatchError(f"feature {self.name!r}: expected a 2-D matrix, got shape {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def n_res(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class CandidateFeaturePool:
    features: tuple[FeatureMatrix, ...]
    residue_mask: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        feats = tuple(self.features)
        if not feats:
            raise PoolFormatError("a pool needs at least one feature")
        n_res = feats[0].n_res
        for f in feats:
            if f.n_res != n_res:
                raise DimensionMismatchError(
                    f"feature {f.name!r} has {f.n_res} rows, expected {n_res}"
                )
        mask = np.asarray(self.residue_mask, dtype=bool)
        if mask.shape != (n_res,):
            raise DimensionMismatchError(f"mask has shape {mask.shape}, expected ({n_res},)")
        mask.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "residue_mask", mask)

    @property
    def T(self) -> int:
        return len(self.features)

    @property
    def n_res(self) -> int:
        return self.features[0].n_res

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def __getitem__(self, t: int) -> FeatureMatrix:
        return self.features[t]


@dataclass(frozen=True)
class LabelSet:
    """Per-residue binary labels (1 = disordered), mask and split tags."""

    labels: np.ndarray
    split: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        split = np.asarray(self.split, dtype=object)
        mask = np.ones(labels.shape, dtype=bool) if self.mask is None else np.asarray(self.mask, dtype=bool)
        if labels.ndim != 1 or split.shape != labels.shape or mask.shape != labels.shape:
            raise DimensionMismatchError("labels, split and mask must be 1-D vectors of equal length")
        for arr in (labels, split, mask):
            arr.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "split", split)
        object.__setattr__(self, "mask", mask)

    def __len__(self):
        return len(self.labels)

    def rows(self, split: str) -> np.ndarray:
        """Residue indices of ``split`` that are real (mask true), in residue order."""
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}; expected one of {SPLITS}")
        return np.flatnonzero((self.split == split) & self.mask)

    def split_labels(self, split: str) -> np.ndarray:
        return self.labels[self.rows(split)].astype(np.int64)


@dataclass
class ValidationReport:
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __len__(self):
        return len(self.issues)

    def __iter__(self):
        return iter(self.issues)


# -- matrix files -----------------------------------------------------------


def write_matrix(path, data) -> None:
    arr = np.ascontiguousarray(np.asarray(data), dtype="<f4")
    if arr.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-D matrix, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, arr.shape[0], arr.shape[1], 0))
        fh.write(arr.tobytes(order="C"))


def read_matrix(path) -> np.ndarray:
    """Read an ``FPM1`` file and return a float64 array of shape (n_res, dim)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"matrix file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise MagicMismatchError(f"{path}: file shorter than the {HEADER.size}-byte header")
    magic, n_res, dim, _reserved = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise MagicMismatchError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    expected = n_res * dim * 4
    body = raw[HEADER.size:]
    if len(body) != expected:
        raise DimensionMismatchError(
            f"{path}: header declares {n_res}x{dim} ({expected} bytes) but payload is {len(body)} bytes"
        )
    arr = np.frombuffer(body, dtype="<f4").reshape(n_res, dim)
    return arr.astype(np.float64)


def _first_nonfinite(data: np.ndarray) -> tuple[int, int] | None:
    bad = np.argwhere(~np.isfinite(data))
    if bad.size == 0:
        return None
    return int(bad[0][0]), int(bad[0][1])


# -- pools ------------------------------------------------------------------


def load_pool(path) -> CandidateFeaturePool:
    """Load and check a pool directory (or a path to its ``pool.json``).

    Raises
    ------
    MissingFileError
        The manifest or a file it references does not exist.
    MagicMismatchError
        A matrix file does not start with ``FPM1``.
    DimensionMismatchError
        A matrix disagrees with the manifest's ``n_res`` or ``dim``.
    NonFiniteError
        A matrix contains NaN or Inf.
    """
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    if not manifest_path.is_file():
        raise MissingFileError(f"manifest not found: {manifest_path}")
    root = manifest_path.parent
    try:
        manifest = json.loads(manifest_path.read_text())
        n_res = int(manifest["n_res"])
        entries = manifest["features"]
        mask_file = manifest["mask_file"]
    except (KeyError, TypeError, ValueError) as exc:
        raise PoolFormatError(f"{manifest_path}: malformed manifest ({exc})") from exc

    features = []
    for entry in entries:
        name, dim, fname = entry["name"], int(entry["dim"]), entry["file"]
        data = read_matrix(root / fname)
        if data.shape != (n_res, dim):
            raise DimensionMismatchError(
                f"feature {name!r}: file holds {data.shape[0]}x{data.shape[1]}, manifest says {n_res}x{dim}"
            )
        where = _first_nonfinite(data)
        if where is not None:
            raise NonFiniteError(f"feature {name!r}: non-finite entry at {where}")
        features.append(FeatureMatrix(name, data))

    mask = read_matrix(root / mask_file)
    if mask.shape != (n_res, 1):
        raise DimensionMismatchError(f"mask file holds {mask.shape}, expected ({n_res}, 1)")
    meta = {
        "version": manifest.get("version", MANIFEST_VERSION),
        "source": str(root),
        "names": [e["name"] for e in entries],
        "dims": [int(e["dim"]) for e in entries],
    }
    return CandidateFeaturePool(tuple(features), mask[:, 0] != 0, meta)


def save_pool(pool: CandidateFeaturePool, path) -> Path:
    """Write ``pool`` to directory ``path``; returns the manifest path."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for t, f in enumerate(pool.features):
        fname = f"feature_{t:02d}.fpm"
        write_matrix(root / fname, f.data)
        entries.append({"name": f.name, "dim": f.d, "file": fname})
    write_matrix(root / "mask.fpm", pool.residue_mask.astype(np.float32)[:, None])
    manifest = {
        "version": MANIFEST_VERSION,
        "n_res": pool.n_res,
        "mask_file": "mask.fpm",
        "features": entries,
    }
    out = root / MANIFEST_NAME
    out.write_text(json.dumps(manifest, indent=2) + "\n")
    return out


# -- labels -----------------------------------------------------------------


def load_labels(path) -> LabelSet:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"labels file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"index", "label", "mask", "split"} - set(reader.fieldnames or ())
        if missing:
            raise PoolFormatError(f"{path}: missing columns {sorted(missing)}")
        rows = list(reader)
    idx = np.array([int(r["index"]) for r in rows], dtype=np.int64)
    if not np.array_equal(np.sort(idx), np.arange(len(rows))):
        raise PoolFormatError(f"{path}: index column must be a permutation of 0..{len(rows) - 1}")
    order = np.argsort(idx, kind="stable")
    labels = np.array([int(rows[i]["label"]) for i in order], dtype=np.int64)
    mask = np.array([rows[i]["mask"].strip().lower() in ("1", "true") for i in order], dtype=bool)
    split = np.array([rows[i]["split"].strip() for i in order], dtype=object)
    return LabelSet(labels, split, mask)


def save_labels(labels: LabelSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "label", "mask", "split"])
        for i in range(len(labels)):
            writer.writerow([i, int(labels.labels[i]), int(labels.mask[i]), labels.split[i]])


# -- checks -----------------------------------------------------------------


def validate_pool(pool: CandidateFeaturePool, labels: LabelSet) -> ValidationReport:
    """List every problem that would stop ``pool`` + ``labels`` from being searched."""
    report = ValidationReport()
    issues = report.issues
    n_res = pool.n_res
    for f in pool.features:
        if f.n_res != n_res:
            issues.append(f"feature {f.name!r}: {f.n_res} rows, expected {n_res}")
        if f.d < 1:
            issues.append(f"feature {f.name!r}: zero columns")
        where = _first_nonfinite(f.data)
        if where is not None:
            issues.append(f"feature {f.name!r}: non-finite value at (row {where[0]}, col {where[1]})")
    if len({f.d for f in pool.features}) > 1:
        issues.append(f"features disagree on dimension: {sorted({f.d for f in pool.features})}")

    if len(labels) != n_res:
        issues.append(f"labels cover {len(labels)} residues, pool has {n_res}")
        return report
    bad_labels = ~np.isin(labels.labels, (0, 1))
    if bad_labels.any():
        issues.append(f"label values outside {{0,1}} at residues {np.flatnonzero(bad_labels)[:10].tolist()}")
    bad_split = ~np.isin(labels.split, SPLITS)
    if bad_split.any():
        issues.append(f"unknown split tags {sorted(set(labels.split[bad_split]))}")
    if not np.array_equal(labels.mask, pool.residue_mask):
        diff = np.flatnonzero(labels.mask != pool.residue_mask)
        issues.append(f"label mask disagrees with pool mask at residues {diff[:10].tolist()}")

    for split in SPLITS:
        y = labels.labels[labels.rows(split)]
        if not (y == 1).any():
            issues.append(f"split {split!r} has no positive (disordered) residue")
        if not (y == 0).any():
            issues.append(f"split {split!r} has no negative (ordered) residue")
    return report


def one_hot_targets(labels: LabelSet, split: str) -> np.ndarray:
    """Two-column targets for the real residues of ``split``: (1,0) ordered, (0,1) disordered."""
    y = labels.split_labels(split)
    if y.size == 0:
        raise EmptySplitError(f"split {split!r} is empty after masking")
    targets = np.zeros((y.size, 2))
    targets[np.arange(y.size), y] = 1.0
    return targets
