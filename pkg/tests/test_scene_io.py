import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_predictions, random_scene
from sptree.errors import (
    BadMagic,
    DimensionMismatch,
    IndexOutOfRange,
    InvalidScene,
    LengthMismatch,
    MissingFile,
    NonSimplexRow,
    TruncatedFile,
)
from sptree.scene_io import (
    ClassifierWeights,
    DenseLayer,
    PointPredictions,
    Proposal,
    Scene,
    load_predictions,
    load_proposals,
    load_scene,
    load_weights,
    ply_sidecar_path,
    predictions_from_bytes,
    predictions_to_bytes,
    proposals_from_bytes,
    proposals_to_bytes,
    read_ply_colors,
    save_predictions,
    save_proposals,
    save_scene,
    save_weights,
    scene_from_bytes,
    scene_to_bytes,
    weights_from_bytes,
    weights_to_bytes,
)


def _block(arr, code=0):
    arr = np.asarray(arr)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return struct.pack("<III", code, *arr.shape) + arr.tobytes()


def test_minimal_scene_file(tmp_path):
    data = (b"SSTS" + struct.pack("<IIII", 1, 0, 0, 0)
            + _block(np.zeros((1, 3), np.float32)) + _block(np.zeros((1, 3), np.float32)))
    path = tmp_path / "one.ssts"
    path.write_bytes(data)
    scene = load_scene(path)
    assert scene.n_points == 1
    assert scene.normals is None and scene.gt_instance is None
    np.testing.assert_array_equal(scene.positions, [[0, 0, 0]])


def test_short_colors_block_is_length_mismatch():
    data = (b"SSTS" + struct.pack("<IIII", 3, 0, 0, 0)
            + _block(np.zeros((3, 3), np.float32)) + _block(np.zeros((2, 3), np.float32)))
    with pytest.raises(LengthMismatch):
        scene_from_bytes(data)


def test_bad_magic_and_missing_file(tmp_path):
    with pytest.raises(BadMagic):
        scene_from_bytes(b"XXXX" + bytes(16))
    with pytest.raises(MissingFile):
        load_scene(tmp_path / "nope.ssts")


def test_truncated_and_trailing_bytes_rejected(rng):
    data = scene_to_bytes(random_scene(rng, 10))
    with pytest.raises(TruncatedFile):
        scene_from_bytes(data[:-1])
    with pytest.raises(Exception, match="trailing"):
        scene_from_bytes(data + b"\0")


def test_scene_roundtrip_is_byte_identical(tmp_path, rng):
    scene = random_scene(rng, 100)
    path = tmp_path / "s.ssts"
    save_scene(path, scene)
    first = path.read_bytes()
    save_scene(path, load_scene(path))
    assert path.read_bytes() == first


def test_scene_invariants(rng):
    pos = np.zeros((2, 3))
    with pytest.raises(InvalidScene):
        Scene(pos, np.zeros((2, 3)), normals=np.ones((2, 3)))
    with pytest.raises(InvalidScene):
        Scene(pos, np.zeros((2, 3)), gt_semantic=[-1, 0], gt_instance=[0, -1])
    with pytest.raises(LengthMismatch):
        Scene(pos, np.zeros((1, 3)))
    scene = random_scene(rng, 5)
    with pytest.raises(ValueError):
        scene.positions[0, 0] = 1.0


def test_predictions_accept_simplex_rows():
    scene = Scene(np.zeros((2, 3)), np.zeros((2, 3)))
    pred = PointPredictions(np.zeros((2, 4)), [[1, 0, 0], [0, 0, 1]], np.zeros((2, 3)))
    back = predictions_from_bytes(predictions_to_bytes(pred), scene)
    assert back.n_features == 4 and back.n_categories == 3


def test_predictions_reject_non_simplex_row():
    pred_bytes = (b"SSTP" + struct.pack("<III", 1, 3, 1)
                  + _block(np.zeros((1, 1), np.float32))
                  + _block(np.array([[0.5, 0.6, 0.0]], np.float32))
                  + _block(np.zeros((1, 3), np.float32)))
    with pytest.raises(NonSimplexRow):
        predictions_from_bytes(pred_bytes)


def test_predictions_header_n_must_match_scene(tmp_path, rng):
    path = tmp_path / "p.sstp"
    save_predictions(path, random_predictions(rng, 5))
    scene = Scene(np.zeros((4, 3)), np.zeros((4, 3)))
    with pytest.raises(DimensionMismatch):
        load_predictions(path, scene)


def test_weights_roundtrip_and_chaining(tmp_path, rng):
    w = ClassifierWeights.random([7, 5, 3, 1], rng)
    path = tmp_path / "w.sstw"
    save_weights(path, w)
    back = load_weights(path)
    assert [l.activation for l in back.layers] == ["relu", "relu", "sigmoid"]
    x = rng.normal(size=(4, 7))
    np.testing.assert_array_equal(back.forward(x), w.forward(x))
    with pytest.raises(DimensionMismatch):
        ClassifierWeights((DenseLayer(np.zeros((3, 2)), np.zeros(2)), DenseLayer(np.zeros((3, 1)), np.zeros(1))))


def test_empty_proposal_file(tmp_path, rng):
    scene = random_scene(rng, 10)
    path = tmp_path / "p.sstr"
    save_proposals(path, [], scene)
    assert load_proposals(path, scene) == []
    assert ply_sidecar_path(path).exists()


def test_single_full_proposal_colors_every_vertex_alike(tmp_path, rng):
    scene = random_scene(rng, 20)
    path = tmp_path / "p.sstr"
    save_proposals(path, [Proposal(0, [0], np.arange(20), 1, 0.9)], scene)
    colors = read_ply_colors(ply_sidecar_path(path))
    assert colors.shape == (20, 3)
    assert len(np.unique(colors, axis=0)) == 1
    assert tuple(colors[0]) != (128, 128, 128)


def test_proposal_index_out_of_range(tmp_path, rng):
    scene = random_scene(rng, 5)
    with pytest.raises(IndexOutOfRange):
        save_proposals(tmp_path / "p.sstr", [Proposal(0, [0], [0, 5], 1, 0.5)], scene)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 60), normals=st.booleans(), gt=st.booleans())
def test_scene_roundtrip_property(seed, n, normals, gt):
    scene = random_scene(np.random.default_rng(seed), n, normals, gt)
    data = scene_to_bytes(scene)
    back = scene_from_bytes(data)
    assert scene_to_bytes(back) == data
    np.testing.assert_array_equal(back.positions, scene.positions)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 40), k=st.integers(1, 6), nf=st.integers(0, 9))
def test_predictions_roundtrip_property(seed, n, k, nf):
    pred = random_predictions(np.random.default_rng(seed), n, k, nf)
    data = predictions_to_bytes(pred)
    assert predictions_to_bytes(predictions_from_bytes(data)) == data


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), count=st.integers(0, 8))
def test_proposals_roundtrip_property(seed, count):
    rng = np.random.default_rng(seed)
    n = 50
    props = [Proposal(int(rng.integers(0, 99)), rng.choice(20, size=rng.integers(1, 5), replace=False),
                      rng.choice(n, size=rng.integers(0, n), replace=False), int(rng.integers(0, 5)),
                      float(np.float32(rng.uniform()))) for _ in range(count)]
    back = proposals_from_bytes(proposals_to_bytes(props, n))
    assert len(back) == count
    for a, b in zip(props, back):
        np.testing.assert_array_equal(a.point_indices, b.point_indices)
        np.testing.assert_array_equal(a.superpoint_ids, b.superpoint_ids)
        assert (a.category, a.confidence, a.node_id) == (b.category, b.confidence, b.node_id)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(1, 4))
def test_weights_roundtrip_property(seed, depth):
    rng = np.random.default_rng(seed)
    dims = rng.integers(1, 8, size=depth + 1).tolist()
    data = weights_to_bytes(ClassifierWeights.random(dims, rng))
    assert weights_to_bytes(weights_from_bytes(data)) == data
