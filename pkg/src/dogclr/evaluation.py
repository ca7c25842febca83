"""Downstream protocols on frozen features: linear probe, KNN, stream ensemble."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import EvalConfig, to_dict
from .encoder import EncoderPair
from .errors import EmptyTrain, IOFailure, LabelMismatch, MisalignedStreams
from .trainer import load_encoder, prepare_array


@dataclass
class EvalReport:
    protocol: str
    top1: float
    top5: float
    per_class: list
    confusion: list
    num_classes: int
    config: dict = field(default_factory=dict)
    scores: np.ndarray | None = field(default=None, repr=False)
    labels: np.ndarray | None = field(default=None, repr=False)

    @property
    def predictions(self) -> np.ndarray:
        return np.asarray(self.scores).argmax(axis=1)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "top1": self.top1,
            "top5": self.top5,
            "per_class": self.per_class,
            "confusion": self.confusion,
            "num_classes": self.num_classes,
            "config": self.config,
        }

    def save(self, path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        except OSError as e:
            raise IOFailure(f"cannot write report {path}: {e}") from e
        return path


def report_from_scores(protocol: str, scores, labels, num_classes: int, config=None) -> EvalReport:
    """Accuracies and confusion from a (N, K) score matrix; argmax ties go to the lower class."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pred = scores.argmax(axis=1)
    # stable descending rank keeps the lower class first on equal scores
    rank = np.argsort(-scores, axis=1, kind="stable")[:, : min(5, num_classes)]
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    counts = conf.sum(axis=1)
    per_class = [float(conf[c, c] / counts[c]) if counts[c] else None for c in range(num_classes)]
    return EvalReport(
        protocol=protocol,
        top1=float((pred == labels).mean()),
        top5=float((rank == labels[:, None]).any(axis=1).mean()),
        per_class=per_class,
        confusion=conf.tolist(),
        num_classes=num_classes,
        config=dict(config or {}),
        scores=scores,
        labels=labels,
    )


# ---------------------------------------------------------------- features


def _resolve_pair(checkpoint) -> EncoderPair:
    if isinstance(checkpoint, EncoderPair):
        return checkpoint
    return load_encoder(checkpoint)[0]


@torch.no_grad()
def extract_features(pair_or_encoder, x, batch_size: int = 256) -> np.ndarray:
    """Pooled backbone features of the query encoder, shape (N, D)."""
    enc = pair_or_encoder.query if isinstance(pair_or_encoder, EncoderPair) else pair_or_encoder
    dtype = next(iter(enc.parameters()), torch.zeros(())).dtype
    x = np.asarray(x)
    out = [enc.pooled(torch.as_tensor(x[i : i + batch_size], dtype=dtype)).cpu().numpy()
           for i in range(0, len(x), batch_size)]
    return np.concatenate(out).astype(np.float64)


def _split_inputs(split, stream: str, normalize: str):
    if hasattr(split, "array"):
        return prepare_array(split, stream, normalize), np.asarray(split.labels)
    x, y = split
    return np.asarray(x, dtype=np.float32), np.asarray(y)


def _check_labels(train_y, test_y) -> int:
    if (train_y < 0).any() or (test_y < 0).any():
        raise LabelMismatch("evaluation needs every sample labeled")
    unseen = set(np.unique(test_y)) - set(np.unique(train_y))
    if unseen:
        raise LabelMismatch(f"test labels {sorted(int(u) for u in unseen)} never occur in train")
    return int(max(train_y.max(), test_y.max())) + 1


# ---------------------------------------------------------------- linear probe


def fit_linear_probe(features, labels, num_classes: int, epochs: int = 100, lr: float = 0.1,
                     momentum: float = 0.9, batch_size: int = 256, milestones=(0.6, 0.8),
                     seed: int = 0) -> torch.nn.Linear:
    """Softmax regression by SGD with step decay (x0.1) at the given epoch fractions."""
    feats = torch.as_tensor(np.asarray(features), dtype=torch.float32)
    y = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    gen = torch.Generator().manual_seed(seed)
    layer = torch.nn.Linear(feats.shape[1], num_classes)
    with torch.no_grad():
        bound = 1.0 / np.sqrt(feats.shape[1])
        layer.weight.uniform_(-bound, bound, generator=gen)
        layer.bias.zero_()
    opt = torch.optim.SGD(layer.parameters(), lr=lr, momentum=momentum)
    steps = sorted({int(round(m * epochs)) for m in milestones})
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, milestones=steps, gamma=0.1)
    n = len(feats)
    for _ in range(epochs):
        order = torch.randperm(n, generator=gen)
        for i in range(0, n, batch_size):
            idx = order[i : i + batch_size]
            loss = F.cross_entropy(layer(feats[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()
    return layer


def _standardizer(train_feats):
    mu = train_feats.mean(axis=0)
    sd = train_feats.std(axis=0)
    sd[sd == 0] = 1.0
    return lambda f: (f - mu) / sd


def linear_eval(checkpoint, train, test, cfg: EvalConfig | None = None, stream: str = "joint",
                normalize: str = "none") -> EvalReport:
    """Linear probe on frozen pooled features; the encoder is never modified.

    Features are standardized with train-split statistics before fitting.
    """
    cfg = cfg or EvalConfig()
    pair = _resolve_pair(checkpoint)
    xtr, ytr = _split_inputs(train, stream, normalize)
    xte, yte = _split_inputs(test, stream, normalize)
    K = _check_labels(ytr, yte)
    ftr = extract_features(pair, xtr)
    fte = extract_features(pair, xte)
    std = _standardizer(ftr)
    layer = fit_linear_probe(std(ftr), ytr, K, cfg.linear_epochs, cfg.linear_lr, cfg.linear_momentum,
                             cfg.linear_batch_size, tuple(cfg.linear_milestones), cfg.seed)
    with torch.no_grad():
        logits = layer(torch.as_tensor(std(fte), dtype=torch.float32))
        scores = torch.softmax(logits, dim=1).numpy()
    echo = {"stream": stream, "epochs": cfg.linear_epochs, "lr": cfg.linear_lr,
            "momentum": cfg.linear_momentum, "milestones": list(cfg.linear_milestones)}
    return report_from_scores("linear", scores, yte, K, echo)


# ---------------------------------------------------------------- KNN


def _unit(a):
    a = np.asarray(a, dtype=np.float64)
    n = np.linalg.norm(a, axis=1, keepdims=True)
    n[n == 0] = 1.0
    return a / n


def knn_scores(train_emb, train_labels, test_emb, k: int = 20, num_classes: int | None = None,
               weighted: bool = False) -> np.ndarray:
    """Per-class vote matrix (N_test, K) from cosine nearest neighbors.

    Plain votes count neighbors; ties on the count are broken by the summed
    similarity of each class's neighbors, then by the lower class index.
    The returned rows are vote shares with the tie-break folded in as a
    sub-vote perturbation, so argmax applies the full rule.
    """
    train_emb = np.asarray(train_emb)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    if len(train_emb) == 0:
        raise EmptyTrain("KNN needs at least one training embedding")
    if not 1 <= k <= len(train_emb):
        raise ValueError(f"k={k} must lie in [1, {len(train_emb)}]")
    K = int(num_classes if num_classes is not None else train_labels.max() + 1)
    sims = _unit(test_emb) @ _unit(train_emb).T
    nn_idx = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    nn_sim = np.take_along_axis(sims, nn_idx, axis=1)
    nn_lab = train_labels[nn_idx]
    votes = np.zeros((len(sims), K))
    simsum = np.zeros((len(sims), K))
    rows = np.repeat(np.arange(len(sims)), k)
    np.add.at(simsum, (rows, nn_lab.ravel()), nn_sim.ravel())
    if weighted:
        # each neighbor votes with its similarity
        return simsum / k
    np.add.at(votes, (rows, nn_lab.ravel()), 1.0)
    # |simsum| <= k, so this term never reorders different vote counts
    return (votes + simsum / (2.0 * k + 1.0)) / k


def knn_eval(checkpoint, train, test, k: int = 20, weighted: bool = False, stream: str = "joint",
             normalize: str = "none") -> EvalReport:
    pair = _resolve_pair(checkpoint)
    xtr, ytr = _split_inputs(train, stream, normalize)
    xte, yte = _split_inputs(test, stream, normalize)
    if len(xtr) == 0:
        raise EmptyTrain("KNN needs a non-empty train split")
    K = _check_labels(ytr, yte)
    ftr = extract_features(pair, xtr)
    fte = extract_features(pair, xte)
    scores = knn_scores(ftr, ytr, fte, k, K, weighted)
    return report_from_scores("knn", scores, yte, K, {"stream": stream, "k": k, "weighted": weighted})


# ---------------------------------------------------------------- ensemble


def ensemble_eval(reports_or_scores, weights=None, labels=None) -> EvalReport:
    """Weighted sum of per-stream class-probability matrices, then argmax.

    Inputs are EvalReports (their ``scores`` are already probabilities) or
    raw (N, K) matrices with ``labels`` given.
    """
    items = list(reports_or_scores)
    if not items:
        raise MisalignedStreams("ensemble needs at least one stream")
    mats = []
    for it in items:
        if isinstance(it, EvalReport):
            if labels is None:
                labels = it.labels
            elif it.labels is not None and not np.array_equal(it.labels, labels):
                raise MisalignedStreams("streams were evaluated on different test sets")
            mats.append(np.asarray(it.scores, dtype=np.float64))
        else:
            mats.append(np.asarray(it, dtype=np.float64))
    if labels is None:
        raise ValueError("labels are required when raw score matrices are given")
    shape = mats[0].shape
    if any(m.shape != shape for m in mats) or shape[0] != len(labels):
        raise MisalignedStreams(f"score matrices {[m.shape for m in mats]} do not align")
    w = np.ones(len(mats)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (len(mats),):
        raise MisalignedStreams(f"{len(w)} weights for {len(mats)} streams")
    fused = sum(wi * m for wi, m in zip(w, mats))
    return report_from_scores("ensemble", fused, labels, shape[1],
                              {"weights": w.tolist(), "fusion": "weighted score sum"})


# ---------------------------------------------------------------- figures


def reduce_2d(embeddings, method: str = "tsne", seed: int = 0) -> np.ndarray:
    """Deterministic 2-D embedding: t-SNE with a fixed seed, PCA when too few points."""
    from sklearn.decomposition import PCA
    from sklearn.manifold import TSNE

    emb = np.asarray(embeddings, dtype=np.float64)
    if method == "tsne" and len(emb) > 5:
        perplexity = min(30.0, (len(emb) - 1) / 3.0)
        return TSNE(2, perplexity=perplexity, init="pca", random_state=seed).fit_transform(emb)
    n_comp = min(2, *emb.shape)
    out = np.zeros((len(emb), 2))
    out[:, :n_comp] = PCA(n_comp, random_state=seed).fit_transform(emb)
    return out


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def export_figures(report: EvalReport, embeddings=None, out_dir=".", labels=None, curve=None,
                   method: str = "tsne", seed: int = 0) -> dict:
    """Write confusion, scatter and accuracy-curve CSV + PNG pairs; returns their paths.

    ``curve`` is a sequence of (epoch, accuracy) pairs.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    files = {}
    try:
        out.mkdir(parents=True, exist_ok=True)
        conf = np.asarray(report.confusion)
        K = conf.shape[0]
        files["confusion_csv"] = out / "confusion.csv"
        _write_csv(files["confusion_csv"], ["true"] + [str(c) for c in range(K)],
                   [[c] + conf[c].tolist() for c in range(K)])
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.imshow(conf, cmap="Blues")
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_title(f"{report.protocol} top-1 {report.top1:.3f}")
        files["confusion_png"] = out / "confusion.png"
        fig.savefig(files["confusion_png"], dpi=80)
        plt.close(fig)

        if embeddings is not None:
            lab = report.labels if labels is None else np.asarray(labels)
            xy = reduce_2d(embeddings, method, seed)
            files["scatter_csv"] = out / "scatter.csv"
            _write_csv(files["scatter_csv"], ["x", "y", "label"],
                       [[repr(float(a)), repr(float(b)), int(c)] for (a, b), c in zip(xy, lab)])
            fig, ax = plt.subplots(figsize=(4, 4))
            ax.scatter(xy[:, 0], xy[:, 1], c=lab, s=6, cmap="tab10")
            files["scatter_png"] = out / "scatter.png"
            fig.savefig(files["scatter_png"], dpi=80)
            plt.close(fig)

        if curve is not None:
            curve = [(int(e), float(a)) for e, a in curve]
            files["curve_csv"] = out / "accuracy_curve.csv"
            _write_csv(files["curve_csv"], ["epoch", "accuracy"], curve)
            fig, ax = plt.subplots(figsize=(4, 3))
            if curve:
                ax.plot(*zip(*curve), marker="o")
            ax.set_xlabel("epoch")
            ax.set_ylabel("accuracy")
            files["curve_png"] = out / "accuracy_curve.png"
            fig.savefig(files["curve_png"], dpi=80)
            plt.close(fig)
    except OSError as e:
        raise IOFailure(f"cannot write figures to {out}: {e}") from e
    return files


def evaluate(cfg: EvalConfig, checkpoint, train, test, stream: str = "joint", normalize: str = "none"):
    """Run the configured protocols on one stream; returns {protocol: EvalReport}."""
    pair = _resolve_pair(checkpoint)
    reports = {}
    if "linear" in cfg.protocols:
        reports["linear"] = linear_eval(pair, train, test, cfg, stream, normalize)
    if "knn" in cfg.protocols:
        reports["knn"] = knn_eval(pair, train, test, cfg.knn_k, cfg.knn_weighted, stream, normalize)
    for r in reports.values():
        r.config["eval"] = to_dict(cfg)
    return reports
