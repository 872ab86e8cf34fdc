import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fusionsearch.feature_store import CandidateFeaturePool, FeatureMatrix, LabelSet  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


def make_pool(matrices, mask=None, names=None):
    names = names or [f"f{t}" for t in range(len(matrices))]
    feats = tuple(FeatureMatrix(n, np.asarray(m, dtype=float)) for n, m in zip(names, matrices))
    n_res = feats[0].n_res
    return CandidateFeaturePool(feats, np.ones(n_res, bool) if mask is None else mask)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_pool():
    """Two features, six residues; splits train,train,val,val,test,test."""
    phi0 = np.array([[1.0, 2.0], [0.5, -1.0], [3.0, 0.0], [-2.0, 1.0], [0.0, 0.0], [1.5, 2.5]])
    phi1 = np.array([[3.0, 4.0], [1.0, 1.0], [-1.0, 2.0], [0.5, 0.5], [2.0, -2.0], [0.0, 1.0]])
    pool = make_pool([phi0, phi1])
    labels = LabelSet(
        np.array([0, 1, 0, 1, 1, 0]),
        np.array(["train", "train", "val", "val", "test", "test"], dtype=object),
    )
    return pool, labels
