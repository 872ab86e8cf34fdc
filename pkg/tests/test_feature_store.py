import json

import numpy as np
import pytest

from conftest import make_pool
from fusionsearch.feature_store import (
    DimensionMismatchError,
    EmptySplitError,
    LabelSet,
    MagicMismatchError,
    MissingFileError,
    NonFiniteError,
    load_labels,
    load_pool,
    one_hot_targets,
    read_matrix,
    save_labels,
    save_pool,
    validate_pool,
    write_matrix,
)
from fusionsearch.fusion_tree import Genome
from fusionsearch.moea import Evaluator
from fusionsearch.synthetic import PlantConfig, generate_planted_pool


def f32_pool(rng, T=3, n_res=20, d=5, mask=None):
    mats = [rng.standard_normal((n_res, d)).astype(np.float32) for _ in range(T)]
    return make_pool(mats, mask=mask)


def test_load_twelve_by_258(tmp_path, rng):
    pool = f32_pool(rng, T=12, n_res=700, d=258)
    save_pool(pool, tmp_path)
    loaded = load_pool(tmp_path)
    assert loaded.T == 12
    assert loaded.n_res == 700
    assert all(f.d == 258 for f in loaded.features)


def test_minimal_zero_pool(tmp_path):
    pool = make_pool([np.zeros((4, 3))])
    save_pool(pool, tmp_path)
    loaded = load_pool(tmp_path / "pool.json")
    assert loaded.T == 1
    assert np.array_equal(loaded[0].data, np.zeros((4, 3)))


def test_round_trip_is_bit_exact(tmp_path, rng):
    mask = np.ones(20, bool)
    mask[[3, 11]] = False
    pool = f32_pool(rng, mask=mask)
    save_pool(pool, tmp_path)
    loaded = load_pool(tmp_path)
    assert loaded.names == pool.names
    assert np.array_equal(loaded.residue_mask, pool.residue_mask)
    for a, b in zip(pool.features, loaded.features):
        assert a.data.tobytes() == b.data.tobytes()


def test_feature_order_follows_manifest(tmp_path, rng):
    pool = f32_pool(rng, T=3)
    save_pool(pool, tmp_path)
    manifest = json.loads((tmp_path / "pool.json").read_text())
    manifest["features"].reverse()
    (tmp_path / "pool.json").write_text(json.dumps(manifest))
    loaded = load_pool(tmp_path)
    assert loaded.names == ["f2", "f1", "f0"]
    assert np.array_equal(loaded[0].data, pool[2].data)


def test_dimension_mismatch(tmp_path, rng):
    pool = make_pool([np.zeros((6, 258), np.float32)])
    save_pool(pool, tmp_path)
    manifest = json.loads((tmp_path / "pool.json").read_text())
    manifest["features"][0]["dim"] = 256
    (tmp_path / "pool.json").write_text(json.dumps(manifest))
    with pytest.raises(DimensionMismatchError):
        load_pool(tmp_path)


def test_bad_magic(tmp_path, rng):
    save_pool(f32_pool(rng), tmp_path)
    raw = bytearray((tmp_path / "feature_01.fpm").read_bytes())
    raw[:4] = b"FPM2"
    (tmp_path / "feature_01.fpm").write_bytes(bytes(raw))
    with pytest.raises(MagicMismatchError):
        load_pool(tmp_path)


def test_missing_matrix_file(tmp_path, rng):
    save_pool(f32_pool(rng), tmp_path)
    (tmp_path / "feature_02.fpm").unlink()
    with pytest.raises(MissingFileError):
        load_pool(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(MissingFileError):
        load_pool(tmp_path)


def test_non_finite_entry(tmp_path, rng):
    save_pool(f32_pool(rng), tmp_path)
    data = read_matrix(tmp_path / "feature_00.fpm")
    data[3, 2] = np.inf
    write_matrix(tmp_path / "feature_00.fpm", data)
    with pytest.raises(NonFiniteError, match=r"\(3, 2\)"):
        load_pool(tmp_path)


def test_truncated_payload(tmp_path, rng):
    save_pool(f32_pool(rng), tmp_path)
    path = tmp_path / "feature_00.fpm"
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(DimensionMismatchError):
        load_pool(tmp_path)


def test_header_layout(tmp_path):
    write_matrix(tmp_path / "m.fpm", np.arange(6, dtype=np.float32).reshape(2, 3))
    raw = (tmp_path / "m.fpm").read_bytes()
    assert raw[:4] == b"FPM1"
    assert int.from_bytes(raw[4:8], "little") == 2
    assert int.from_bytes(raw[8:12], "little") == 3
    assert int.from_bytes(raw[12:16], "little") == 0
    assert np.array_equal(np.frombuffer(raw[16:], "<f4"), np.arange(6, dtype=np.float32))


def test_labels_round_trip(tmp_path):
    labels = LabelSet(np.array([1, 0, 1]), np.array(["train", "val", "test"], dtype=object), np.array([1, 0, 1], bool))
    save_labels(labels, tmp_path / "labels.csv")
    assert (tmp_path / "labels.csv").read_text().splitlines()[0] == "index,label,mask,split"
    back = load_labels(tmp_path / "labels.csv")
    assert np.array_equal(back.labels, labels.labels)
    assert np.array_equal(back.mask, labels.mask)
    assert list(back.split) == list(labels.split)


def _good(n=10):
    split = np.array(["train", "train", "val", "val", "test", "test", "train", "val", "test", "train"], dtype=object)[:n]
    y = np.array([0, 1, 0, 1, 0, 1, 0, 1, 0, 1])[:n]
    return LabelSet(y, split)


def test_validate_clean(rng):
    pool = f32_pool(rng, n_res=10)
    assert validate_pool(pool, _good()).issues == []


def test_validate_names_single_class_split(rng):
    pool = f32_pool(rng, n_res=10)
    y = _good().labels.copy()
    y[_good().split == "val"] = 0
    rep = validate_pool(pool, LabelSet(y, _good().split))
    assert not rep.ok
    assert any("'val'" in issue and "positive" in issue for issue in rep)


def test_validate_cites_nan_coordinates(rng):
    mats = [rng.standard_normal((10, 9)) for _ in range(2)]
    mats[1][3, 7] = np.nan
    pool = make_pool(mats, names=["alpha", "beta"])
    rep = validate_pool(pool, _good())
    assert any("'beta'" in i and "row 3" in i and "col 7" in i for i in rep)


def test_validate_mask_disagreement(rng):
    pool = f32_pool(rng, n_res=10)
    lab = _good()
    mask = np.ones(10, bool)
    mask[0] = False
    rep = validate_pool(pool, LabelSet(lab.labels, lab.split, mask))
    assert any("mask" in i for i in rep)


def test_validate_length_mismatch(rng):
    pool = f32_pool(rng, n_res=12)
    assert any("labels cover" in i for i in validate_pool(pool, _good()))


def test_one_hot_basic():
    labels = LabelSet(np.array([0, 1]), np.array(["train", "train"], dtype=object))
    assert one_hot_targets(labels, "train").tolist() == [[1, 0], [0, 1]]


def test_one_hot_drops_padding():
    labels = LabelSet(np.array([0, 1, 0]), np.array(["val"] * 3, dtype=object), np.array([True, False, True]))
    assert one_hot_targets(labels, "val").tolist() == [[1, 0], [1, 0]]


def test_one_hot_single_class_split_still_builds():
    labels = LabelSet(np.ones(4, int), np.array(["test"] * 4, dtype=object))
    assert one_hot_targets(labels, "test").tolist() == [[0, 1]] * 4


def test_one_hot_empty_split():
    labels = LabelSet(np.array([0, 1]), np.array(["train", "train"], dtype=object))
    with pytest.raises(EmptySplitError):
        one_hot_targets(labels, "val")


def test_padding_sentinels_never_reach_fitness():
    pool, labels = generate_planted_pool(
        PlantConfig(n_res=600, n_features=3, dim=4, strengths=(0.8, 0.3, 0.0), pad_fraction=0.2, seed=3)
    )
    flipped = labels.labels.copy()
    flipped[~labels.mask] = 1 - flipped[~labels.mask]
    sentinel = LabelSet(flipped, labels.split, labels.mask)
    genome = Genome((0, 1), (0,), (1.0, 0.5))
    assert Evaluator(pool, labels)(genome) == Evaluator(pool, sentinel)(genome)
    assert np.array_equal(one_hot_targets(labels, "train"), one_hot_targets(sentinel, "train"))
