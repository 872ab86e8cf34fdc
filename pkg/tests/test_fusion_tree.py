import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_pool
from fusionsearch.feature_store import LabelSet, NonFiniteError
from fusionsearch.fusion_tree import (
    FusionOp,
    FusionOverflowError,
    Genome,
    LinearHead,
    canonical_key,
    decode_fuse,
    fit_head,
    fuse,
    predict,
    random_genome,
    ridge_objective,
    softmax_pairs,
)
from fusionsearch.metrics import auc
from oracles import ridge_lstsq, straight_line_fold

ADD, MUL, MAX, MIN = (int(op) for op in FusionOp)


def one_split(n):
    return LabelSet(np.zeros(n, int), np.array(["train"] * n, dtype=object))


def test_operator_codes_are_stable():
    assert [int(op) for op in FusionOp] == [0, 1, 2, 3]
    assert [op.label for op in FusionOp] == ["Add", "Mul", "Max", "Min"]
    assert FusionOp.parse("max") is FusionOp.MAX
    assert FusionOp.parse(3) is FusionOp.MIN


def test_single_feature_is_a_copy(rng):
    mats = [rng.standard_normal((5, 3)) for _ in range(3)]
    out = decode_fuse(Genome((2,)), make_pool(mats), "train", one_split(5))
    assert np.array_equal(out, mats[2])


def test_unit_weight_add():
    pool = make_pool([[[1.0, 2.0]], [[3.0, 4.0]]])
    out = decode_fuse(Genome((0, 1), (ADD,), (1.0, 1.0)), pool, "train", one_split(1))
    assert out.tolist() == [[4.0, 6.0]]


def test_three_step_mul_then_max():
    phi = [[[1.0, -1.0]], [[3.0, 2.0]]]
    genome = Genome((0, 1, 0), (MUL, MAX), (2.0, 1.0, 1.0, 0.5))
    out = decode_fuse(genome, make_pool(phi), "train", one_split(1))
    # step 1: (2*1*3, 2*-1*2) = (6, -4); step 2: max((6, -4), (0.5, -0.5))
    assert out.tolist() == [[6.0, -0.5]]
    assert np.array_equal(out, straight_line_fold(genome.s, genome.q, genome.a, phi))


def test_decode_restricts_to_split_rows(tiny_pool):
    pool, labels = tiny_pool
    out = decode_fuse(Genome((1,)), pool, "val", labels)
    assert np.array_equal(out, pool[1].data[[2, 3]])


def test_decode_rejects_bad_index(tiny_pool):
    pool, labels = tiny_pool
    with pytest.raises(ValueError):
        decode_fuse(Genome((0, 2), (ADD,), (1.0, 1.0)), pool, "train", labels)


def test_mul_overflow_raises():
    big = np.full((2, 2), 1e200)
    with pytest.raises(FusionOverflowError):
        fuse(Genome((0, 0), (MUL,), (1.0, 1.0)), [big])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_all_add_unit_weights_is_the_plain_sum(seed, n):
    rng = np.random.default_rng(seed)
    mats = [rng.standard_normal((7, 4)) for _ in range(4)]
    s = rng.integers(0, 4, size=n)
    expected = sum(mats[t] for t in s)
    for order in (s, s[::-1], rng.permutation(s)):
        out = fuse(Genome(tuple(order), (ADD,) * (n - 1), (1.0,) * (2 * n - 2)), mats)
        np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_max_of_duplicates_is_identity(seed, n):
    rng = np.random.default_rng(seed)
    mats = [rng.standard_normal((6, 3)) for _ in range(3)]
    t = int(rng.integers(0, 3))
    out = fuse(Genome((t,) * n, (MAX,) * (n - 1), (1.0,) * (2 * n - 2)), mats)
    assert np.array_equal(out, mats[t])


def test_single_feature_genome_has_no_operators_or_weights():
    Genome((1,)).check()
    with pytest.raises(ValueError):
        Genome((1,), (ADD,), ()).check()
    with pytest.raises(ValueError):
        Genome((1,), (), (1.0, 1.0)).check()


# -- head -------------------------------------------------------------------


def test_separable_two_rows():
    X = np.array([[0.0], [1.0]])
    head = fit_head(X, np.array([[1.0, 0.0], [0.0, 1.0]]), ridge=1e-6)
    p = predict(head, X)
    assert p[1] > p[0]


def test_single_class_targets_predict_class_zero(rng):
    X = rng.standard_normal((2, 3))
    head = fit_head(X, np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert np.all(predict(head, X) < 0.5)


def test_planted_linear_rule_matches_ridge_oracle(rng):
    X = rng.standard_normal((50, 8))
    w_star = rng.standard_normal(8)
    y = (X @ w_star > 0).astype(int)
    Y = np.eye(2)[y]
    head = fit_head(X, Y, ridge=1e-6)
    np.testing.assert_allclose(head.W, ridge_lstsq(X, Y, 1e-6), rtol=1e-7, atol=1e-9)
    assert auc(predict(head, X), y) >= 0.99


def test_fit_is_deterministic(rng):
    X, Y = rng.standard_normal((30, 5)), np.eye(2)[rng.integers(0, 2, 30)]
    assert fit_head(X, Y, 1e-3).W.tobytes() == fit_head(X, Y, 1e-3).W.tobytes()


def test_fit_handles_collinear_and_wide_inputs(rng):
    col = rng.standard_normal((4, 1))
    X = np.hstack([col, col, col, rng.standard_normal((4, 6))])  # 9 columns, 4 rows
    head = fit_head(X, np.eye(2)[[0, 1, 0, 1]])
    assert np.isfinite(head.W).all()


def test_fit_rejects_non_finite_and_bad_ridge():
    with pytest.raises(NonFiniteError):
        fit_head(np.array([[np.nan]]), np.array([[1.0, 0.0]]))
    with pytest.raises(ValueError):
        fit_head(np.zeros((2, 1)), np.eye(2), ridge=0.0)


def test_ridge_optimum_survives_random_probes(rng):
    X = rng.standard_normal((40, 6))
    Y = np.eye(2)[rng.integers(0, 2, 40)]
    ridge = 0.5
    head = fit_head(X, Y, ridge)
    base = ridge_objective(head.W, X, Y, ridge)
    for _ in range(100):
        direction = rng.standard_normal(head.W.shape)
        direction *= 1e-3 / np.linalg.norm(direction)
        assert ridge_objective(head.W + direction, X, Y, ridge) >= base


def test_zero_head_gives_one_half(rng):
    head = LinearHead(np.zeros((4, 2)), 1e-6)
    assert np.all(predict(head, rng.standard_normal((10, 3))) == 0.5)


@pytest.mark.parametrize("z", [-700.0, -3.0, 0.0, 2.5, 700.0])
def test_equal_logits_give_one_half(z):
    assert softmax_pairs(np.array([[z, z]]))[0, 1] == 0.5


def test_logits_zero_and_ln3():
    W = np.zeros((2, 2))
    W[-1] = [0.0, math.log(3.0)]
    p = predict(LinearHead(W, 1e-6), np.zeros((1, 1)))
    assert p[0] == pytest.approx(0.75, abs=1e-15)


@pytest.mark.parametrize("scale", [0.5, 20.0])
def test_probabilities_sum_to_one(rng, scale):
    head = LinearHead(rng.standard_normal((6, 2)) * scale, 1e-6)
    probs = softmax_pairs(head.logits(rng.standard_normal((200, 5)) * scale))
    assert np.all(np.abs(probs.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all((probs >= 0) & (probs <= 1))


def test_probabilities_open_interval_for_moderate_logits(rng):
    head = LinearHead(rng.standard_normal((6, 2)), 1e-6)
    p = predict(head, rng.standard_normal((500, 5)))
    assert np.all((p > 0) & (p < 1))


# -- random genomes and keys --------------------------------------------------


def test_random_genome_reproducible():
    a = random_genome(np.random.default_rng(7), 12, 12)
    b = random_genome(np.random.default_rng(7), 12, 12)
    assert a == b


def test_random_genome_n_max_one(rng):
    for _ in range(50):
        g = random_genome(rng, 12, 1)
        assert g.n == 1 and g.q == () and g.a == ()


def test_random_genome_invariants(rng):
    for _ in range(500):
        g = random_genome(rng, 5, 7)
        g.check(T=5, n_max=7)
        assert all(0.1 <= w <= 2.0 for w in g.a)


def test_random_genome_feature_frequencies(rng):
    counts = np.zeros(12)
    for _ in range(10_000):
        for t in random_genome(rng, 12, 12).s:
            counts[t] += 1
    expected = counts.sum() / 12
    assert np.all(np.abs(counts - expected) <= 0.10 * expected)


def test_canonical_key():
    g = Genome((0, 1), (ADD,), (1.0, 0.5))
    assert canonical_key(g) == canonical_key(Genome((0, 1), (ADD,), (1.0, 0.5)))
    assert canonical_key(g) != canonical_key(Genome((0, 1), (ADD,), (2.0, 0.5)))
    assert canonical_key(g) == canonical_key(Genome((0, 1), (ADD,), (1.0 + 1e-12, 0.5)))
    assert hash(canonical_key(g)) == hash(canonical_key(Genome((0, 1), (ADD,), (1.0, 0.5))))


def test_genome_json_round_trip():
    g = Genome((3, 0, 2), (MIN, MUL), (0.25, 1.5, -0.75, 2.0))
    assert Genome.from_json(g.to_json()) == g
    assert g.to_json() == {"s": [3, 0, 2], "q": [3, 1], "a": [0.25, 1.5, -0.75, 2.0]}
