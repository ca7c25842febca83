import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ntu_text
from dogclr import errors
from dogclr.skeleton import (
    DatasetSplit,
    SkeletonGraph,
    SkeletonSequence,
    ToySpec,
    compute_gsbp,
    derive_stream,
    derive_stream_array,
    generate_toy_dataset,
    load_graph,
    normalize,
    parse_ntu_file,
    parse_ntu_skeleton,
    resample_frames,
    toy_graph,
)
from dogclr.skelpack import save_split
from oracles import elementwise_mean


def seq_of(values, label=None):
    return SkeletonSequence(np.asarray(values, dtype=np.float32), label)


# ---------------------------------------------------------------- NTU parsing


def grid_body(t):
    return np.array([[j, t, j + t] for j in range(25)], dtype=float)


def test_ntu_two_frame_fixture_identity_resample():
    text = ntu_text([[grid_body(0)], [grid_body(1)]])
    seq = parse_ntu_skeleton(text, target_T=2)
    expected = np.stack([grid_body(0), grid_body(1)]).transpose(2, 0, 1)
    assert seq.shape == (3, 2, 25)
    np.testing.assert_array_equal(seq.values, expected.astype(np.float32))


def test_ntu_resamples_to_target():
    text = ntu_text([[grid_body(0)], [grid_body(2)]])
    seq = parse_ntu_skeleton(text, target_T=3)
    # frame axis (channel 1 holds t) interpolated linearly
    np.testing.assert_allclose(seq.values[1, :, 0], [0, 1, 2])


def test_ntu_wrong_joint_count():
    text = ntu_text([[np.zeros((24, 3))]], joints=24)
    with pytest.raises(errors.JointCountMismatch):
        parse_ntu_skeleton(text, 2)


def test_ntu_empty():
    with pytest.raises(errors.EmptyFile):
        parse_ntu_skeleton("", 2)
    with pytest.raises(errors.EmptyFile):
        parse_ntu_skeleton("  \n\n", 2)


def test_ntu_truncated():
    text = ntu_text([[grid_body(0)], [grid_body(1)]])
    cut = "\n".join(text.splitlines()[:-5])
    with pytest.raises(errors.TruncatedFile):
        parse_ntu_skeleton(cut, 2)
    assert issubclass(errors.TruncatedFile, errors.MalformedHeader)


def test_ntu_bad_header_and_no_frames():
    with pytest.raises(errors.MalformedHeader):
        parse_ntu_skeleton("frames?\n", 2)
    with pytest.raises(errors.NoFrames):
        parse_ntu_skeleton("0\n", 2)
    with pytest.raises(errors.NoFrames):
        parse_ntu_skeleton("2\n0\n0\n", 2)


def test_ntu_primary_body_is_most_active():
    still = np.zeros((25, 3))
    frames = [[still, grid_body(0)], [still, grid_body(3)]]
    text = ntu_text(frames, body_ids=("A", "B"))
    seq = parse_ntu_skeleton(text, 2)
    assert seq.values[1, 1, 0] == 3
    first = parse_ntu_skeleton(text, 2, primary_body_only=False)
    assert not first.values.any()


def test_ntu_missing_body_frames_zero_filled():
    frames = [[grid_body(1)], [], [grid_body(1)]]
    seq = parse_ntu_skeleton(ntu_text(frames), 3)
    assert not seq.values[:, 1].any()
    assert seq.values[:, 0].any()


def test_ntu_filename_metadata(tmp_path):
    p = tmp_path / "S001C002P003R001A013.skeleton"
    p.write_text(ntu_text([[grid_body(0)], [grid_body(1)]]))
    seq = parse_ntu_file(p, 2)
    assert (seq.label, seq.subject_id, seq.view_id) == (12, 3, 2)


# ---------------------------------------------------------------- graphs


def test_ntu_graph_file():
    g = load_graph("ntu25")
    assert g.num_joints == 25
    assert len(g.edges) == 24
    assert set(g.parents) == set(range(25)) - {g.root}


def test_graph_roundtrip(tmp_path, path3):
    p = tmp_path / "g.json"
    import json

    p.write_text(json.dumps(path3.to_dict()))
    g = load_graph(str(p))
    assert g.edges == path3.edges and g.parents == path3.parents
    assert load_graph("toy9").num_joints == 9


def test_smoothing_matrix_is_adjacency_plus_identity(path3):
    np.testing.assert_array_equal(path3.smoothing_matrix, [[1, 1, 0], [1, 1, 1], [0, 1, 1]])


# ---------------------------------------------------------------- sequences and splits


def test_sequence_validation():
    with pytest.raises(ValueError):
        seq_of(np.zeros((3, 1, 4)))
    with pytest.raises(ValueError):
        seq_of(np.full((3, 4, 4), np.nan))
    s = seq_of(np.zeros((3, 4, 4)))
    assert not s.values.flags.writeable


def test_split_rejects_empty_and_mixed(path3):
    with pytest.raises(errors.EmptySplit):
        DatasetSplit((), "train", path3)
    with pytest.raises(errors.ShapeMismatch):
        DatasetSplit((seq_of(np.zeros((3, 4, 3))), seq_of(np.zeros((3, 5, 3)))), "train", path3)


# ---------------------------------------------------------------- toy data


def test_toy_counts_and_labels():
    train, test = generate_toy_dataset(ToySpec(("wave", "kick"), 10), 0)
    assert len(train) == 20 and len(test) == 20
    assert np.bincount(train.labels).tolist() == [10, 10]


def test_toy_determinism(tmp_path):
    spec = ToySpec(("wave", "jump"), 5)
    a = save_split(tmp_path / "a.skelpack", generate_toy_dataset(spec, 7)[0]).read_bytes()
    b = save_split(tmp_path / "b.skelpack", generate_toy_dataset(spec, 7)[0]).read_bytes()
    assert a == b


def test_toy_still_is_rest_pose():
    train, _ = generate_toy_dataset(ToySpec(("still",), 3, noise_sigma=0.0), 0)
    x = train.array
    assert np.array_equal(x, np.broadcast_to(x[:, :, :1], x.shape))


def test_toy_unknown_template():
    with pytest.raises(errors.UnknownTemplate):
        generate_toy_dataset(ToySpec(("dance",), 2), 0)


# ---------------------------------------------------------------- GSBP


def test_gsbp_identical_copies(rng):
    x = rng.normal(size=(3, 4, 5)).astype(np.float32)
    assert np.array_equal(compute_gsbp([seq_of(x)] * 4).values, x)


def test_gsbp_symmetric_pair(rng):
    x = rng.normal(size=(3, 4, 5))
    assert not compute_gsbp([seq_of(x), seq_of(-x)]).values.any()


def test_gsbp_matches_scalar_loop(rng):
    xs = [rng.normal(size=(3, 4, 5)).astype(np.float32) for _ in range(3)]
    np.testing.assert_allclose(compute_gsbp([seq_of(x) for x in xs]).values, elementwise_mean(xs), atol=1e-6)


def test_gsbp_array_input_and_errors(rng):
    x = rng.normal(size=(4, 3, 4, 5)).astype(np.float32)
    assert np.array_equal(compute_gsbp(x).values, compute_gsbp([seq_of(v) for v in x]).values)
    with pytest.raises(errors.EmptySplit):
        compute_gsbp([])
    with pytest.raises(errors.ShapeMismatch):
        compute_gsbp([seq_of(np.zeros((3, 4, 5))), seq_of(np.zeros((3, 4, 6)))])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_gsbp_order_invariant(seed, n):
    r = np.random.default_rng(seed)
    xs = r.normal(size=(n, 2, 3, 4)).astype(np.float32)
    perm = r.permutation(n)
    assert np.array_equal(compute_gsbp(xs).values, compute_gsbp(xs[perm]).values)


# ---------------------------------------------------------------- streams and normalization


def test_motion_of_constant_is_zero():
    x = np.broadcast_to(np.arange(6.0).reshape(3, 1, 2), (3, 5, 2))
    assert not derive_stream(seq_of(x), "motion").values.any()


def test_joint_stream_identity(rng):
    s = seq_of(rng.normal(size=(3, 4, 2)))
    assert np.array_equal(derive_stream(s, "joint").values, s.values)


def test_bone_two_joint_chain():
    g = SkeletonGraph(2, [(0, 1)], parents={1: 0}, root=0)
    parent = np.random.default_rng(0).normal(size=(3, 4))
    x = np.stack([parent, parent + np.array([1.0, 0, 0])[:, None]], axis=-1)
    b = derive_stream(seq_of(x), "bone", g).values
    np.testing.assert_allclose(b[:, :, 1], np.tile([[1.0], [0], [0]], (1, 4)), atol=1e-6)
    assert not b[:, :, 0].any()


def test_bone_without_parents():
    with pytest.raises(errors.MissingParentMap):
        derive_stream(seq_of(np.zeros((3, 2, 2))), "bone")


def test_stream_array_matches_single(rng):
    g = toy_graph(9)
    x = rng.normal(size=(2, 3, 5, 9)).astype(np.float32)
    for stream in ("joint", "motion", "bone"):
        batched = derive_stream_array(x, stream, g)
        for i in range(2):
            np.testing.assert_array_equal(batched[i], derive_stream(seq_of(x[i]), stream, g).values)


def test_normalize_modes(rng):
    x = rng.normal(size=(3, 4, 5))
    s = seq_of(x)
    assert normalize(s, "none") is s
    c = normalize(s, "center_root", root=0).values
    assert not c[:, :, 0].any()
    shifted = seq_of(x + np.array([5.0, 0, 0])[:, None, None])
    np.testing.assert_allclose(normalize(shifted, "center_root", root=0).values, c, atol=1e-5)


def test_resample_identity_and_interpolation():
    x = np.arange(12.0).reshape(1, 4, 3)
    assert np.array_equal(resample_frames(x, 4), x)
    y = resample_frames(np.array([[[0.0], [2.0]]]), 3)
    np.testing.assert_allclose(y[0, :, 0], [0, 1, 2])
