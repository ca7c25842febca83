import csv

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from dogclr.config import EvalConfig
from dogclr.encoder import EncoderConfig, EncoderPair, parameter_vector
from dogclr.errors import EmptyTrain, IOFailure, LabelMismatch, MisalignedStreams
from dogclr.evaluation import (
    EvalReport,
    ensemble_eval,
    export_figures,
    fit_linear_probe,
    knn_eval,
    knn_scores,
    linear_eval,
    report_from_scores,
)
from dogclr.skeleton import SkeletonGraph


def _separable(n_per, K, noise, seed):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(K), n_per)
    x = np.eye(K)[y] + noise * rng.standard_normal((len(y), K))
    return x, y


# ---------------------------------------------------------------- linear


def test_linear_probe_separable_features():
    xtr, ytr = _separable(40, 5, 0.05, 0)
    xte, yte = _separable(20, 5, 0.05, 1)
    layer = fit_linear_probe(xtr, ytr, 5, epochs=30, lr=0.1)
    with torch.no_grad():
        pred = layer(torch.as_tensor(xte, dtype=torch.float32)).argmax(1).numpy()
    assert (pred == yte).mean() >= 0.99


def test_linear_probe_random_labels_near_chance():
    rng = np.random.default_rng(5)
    K, n = 4, 2000
    layer = fit_linear_probe(rng.standard_normal((400, 8)), rng.integers(0, K, 400), K, epochs=20)
    with torch.no_grad():
        pred = layer(torch.as_tensor(rng.standard_normal((n, 8)), dtype=torch.float32)).argmax(1).numpy()
    acc = (pred == rng.integers(0, K, n)).mean()
    p = 1 / K
    assert abs(acc - p) <= 3 * np.sqrt(p * (1 - p) / n)


def _identity_pair(V=4):
    graph = SkeletonGraph(V, [(i, i + 1) for i in range(V - 1)])
    return EncoderPair.build(EncoderConfig.identity(), graph, dtype=torch.float64)


def _as_skeletons(feats, V=4):
    # identity encoder flattens (1, 1, V) back into the feature vector
    return np.asarray(feats, dtype=np.float64).reshape(len(feats), 1, 1, V)


def test_linear_eval_freezes_encoder():
    graph = SkeletonGraph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    pair = EncoderPair.build(EncoderConfig.tiny(channels=(4,)), graph, seed=1)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((24, 3, 8, 5)).astype(np.float32)
    y = np.arange(24) % 3
    before = parameter_vector(pair).copy()
    report = linear_eval(pair, (x, y), (x, y), EvalConfig(linear_epochs=3))
    assert np.array_equal(before, parameter_vector(pair))
    assert report.top1 <= report.top5


def test_linear_eval_end_to_end_separable():
    xtr, ytr = _separable(30, 4, 0.05, 2)
    xte, yte = _separable(10, 4, 0.05, 3)
    report = linear_eval(_identity_pair(), (_as_skeletons(xtr), ytr), (_as_skeletons(xte), yte),
                         EvalConfig(linear_epochs=30))
    assert report.top1 >= 0.99


def test_label_mismatch():
    x = _as_skeletons(np.eye(4))
    with pytest.raises(LabelMismatch):
        linear_eval(_identity_pair(), (x, np.array([0, 0, 1, 1])), (x, np.array([0, 1, 2, 3])))


# ---------------------------------------------------------------- KNN


def test_knn_self_retrieval():
    rng = np.random.default_rng(1)
    emb = rng.standard_normal((30, 6))
    y = rng.integers(0, 3, 30)
    assert (knn_scores(emb, y, emb, k=1, num_classes=3).argmax(1) == y).all()


def test_knn_all_neighbors_is_majority():
    rng = np.random.default_rng(2)
    emb = rng.standard_normal((11, 4))
    y = np.array([0, 1, 1, 2, 1, 0, 2, 1, 0, 1, 2])
    pred = knn_scores(emb, y, rng.standard_normal((7, 4)), k=11, num_classes=3).argmax(1)
    assert (pred == 1).all()


def test_knn_three_point_fixture():
    train = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    labels = np.array([0, 1, 2])
    test = np.array([[0.9, 0.2], [0.1, 0.8], [-0.7, -0.1], [0.6, 0.7]])
    # angles to the three anchors decide: nearest is the smallest angle
    pred = knn_scores(train, labels, test, k=1, num_classes=3).argmax(1)
    assert pred.tolist() == [0, 1, 2, 1]


def test_knn_tie_broken_by_similarity_sum():
    train = np.array([[1.0, 0.0], [0.0, 1.0]])
    labels = np.array([0, 1])
    # both neighbors vote once; the second class is closer
    assert knn_scores(train, labels, np.array([[0.2, 0.9]]), k=2, num_classes=2).argmax(1)[0] == 1
    assert knn_scores(train, labels, np.array([[0.9, 0.2]]), k=2, num_classes=2).argmax(1)[0] == 0


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 10_000))
def test_knn_scale_invariance(scale, seed):
    rng = np.random.default_rng(seed)
    tr, te = rng.standard_normal((20, 5)), rng.standard_normal((8, 5))
    y = rng.integers(0, 3, 20)
    a = knn_scores(tr, y, te, k=5, num_classes=3).argmax(1)
    b = knn_scores(tr * scale, y, te * scale, k=5, num_classes=3).argmax(1)
    assert np.array_equal(a, b)


def test_knn_errors():
    with pytest.raises(EmptyTrain):
        knn_scores(np.zeros((0, 3)), np.zeros(0, dtype=int), np.ones((1, 3)), k=1, num_classes=2)
    with pytest.raises(ValueError):
        knn_scores(np.ones((2, 3)), np.array([0, 1]), np.ones((1, 3)), k=3)
    with pytest.raises(EmptyTrain):
        knn_eval(_identity_pair(), (np.zeros((0, 1, 1, 4)), np.zeros(0, dtype=int)),
                 (_as_skeletons(np.eye(4)), np.arange(4)), k=1)


def test_knn_eval_identity_encoder():
    x, y = _separable(10, 4, 0.05, 4)
    report = knn_eval(_identity_pair(), (_as_skeletons(x), y), (_as_skeletons(x), y), k=1)
    assert report.top1 == 1.0


# ---------------------------------------------------------------- ensemble


def test_ensemble_two_stream_arithmetic():
    a = np.array([[0.6, 0.4]])
    b = np.array([[0.1, 0.9]])
    report = ensemble_eval([a, b], labels=np.array([1]))
    assert np.allclose(report.scores, [[0.7, 1.3]])
    assert report.predictions.tolist() == [1]


def test_ensemble_identical_and_projection():
    rng = np.random.default_rng(3)
    s = [rng.dirichlet(np.ones(4), 10) for _ in range(3)]
    y = rng.integers(0, 4, 10)
    single = s[0].argmax(1)
    assert np.array_equal(ensemble_eval([s[0]] * 3, labels=y).predictions, single)
    assert np.array_equal(ensemble_eval(s, weights=(1, 0, 0), labels=y).predictions, single)
    fwd = ensemble_eval(s, labels=y).predictions
    assert np.array_equal(fwd, ensemble_eval(s[::-1], labels=y).predictions)


def test_ensemble_misaligned():
    y = np.array([0, 1])
    with pytest.raises(MisalignedStreams):
        ensemble_eval([np.ones((2, 3)), np.ones((3, 3))], labels=y)
    with pytest.raises(MisalignedStreams):
        ensemble_eval([np.ones((2, 3))], weights=(1, 1), labels=y)
    r1 = report_from_scores("a", np.ones((2, 2)), [0, 1], 2)
    r2 = report_from_scores("b", np.ones((2, 2)), [1, 0], 2)
    with pytest.raises(MisalignedStreams):
        ensemble_eval([r1, r2])


# ---------------------------------------------------------------- reports and figures


def test_report_invariants():
    rng = np.random.default_rng(4)
    scores = rng.random((50, 6))
    y = rng.integers(0, 6, 50)
    r = report_from_scores("x", scores, y, 6)
    conf = np.asarray(r.confusion)
    assert r.top1 <= r.top5
    assert conf.sum(axis=1).tolist() == np.bincount(y, minlength=6).tolist()


def _read_rows(path):
    with open(path) as f:
        return list(csv.reader(f))


def test_export_figures_confusion_and_curve(tmp_path):
    y = np.array([0, 0, 1, 1, 1, 3])
    scores = np.eye(4)[[0, 1, 1, 1, 0, 3]]
    report = report_from_scores("knn", scores, y, 4)
    files = export_figures(report, out_dir=tmp_path, curve=[(5, 0.5), (10, 0.7)])
    rows = _read_rows(files["confusion_csv"])
    body = np.array([[int(v) for v in r[1:]] for r in rows[1:]])
    assert np.array_equal(body, np.asarray(report.confusion))
    assert body.sum(axis=1).tolist() == [2, 3, 0, 1]
    assert body[2].tolist() == [0, 0, 0, 0] and report.per_class[2] is None
    assert _read_rows(files["curve_csv"])[1:] == [["5", "0.5"], ["10", "0.7"]]
    assert files["confusion_png"].stat().st_size > 0 and files["curve_png"].exists()


def test_export_figures_scatter_deterministic(tmp_path):
    rng = np.random.default_rng(6)
    emb = rng.standard_normal((20, 8))
    y = np.arange(20) % 2
    report = report_from_scores("knn", np.eye(2)[y], y, 2)
    a = export_figures(report, emb, tmp_path / "a", seed=0)["scatter_csv"].read_bytes()
    b = export_figures(report, emb, tmp_path / "b", seed=0)["scatter_csv"].read_bytes()
    assert a == b and len(a.splitlines()) == 21


def test_export_figures_io_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    report = report_from_scores("knn", np.eye(2), [0, 1], 2)
    with pytest.raises(IOFailure):
        export_figures(report, out_dir=blocker / "sub")


def test_report_json_roundtrip(tmp_path):
    import json

    r = report_from_scores("linear", np.eye(3), [0, 1, 2], 3, {"k": 1})
    data = json.loads(r.save(tmp_path / "r.json").read_text())
    assert data["top1"] == 1.0 and data["config"] == {"k": 1}
    assert isinstance(r, EvalReport)
