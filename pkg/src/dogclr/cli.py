"""Command-line entry point: ``dogclr make-toy|pretrain|eval|ablate|visualize``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure. Errors are
reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
import yaml

from .config import (
    ExperimentConfig,
    config_hash,
    load_config,
    parse_override,
    pretrain_identity,
    to_dict,
    validate,
)
from .errors import ConfigError, DogclrError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
COMMANDS = ("make-toy", "pretrain", "eval", "ablate", "visualize")
TOGGLE_ROWS = (
    ("base", dict(use_dwkrm=False, use_dga=False, use_edgrq=False)),
    ("+dwkrm", dict(use_dwkrm=True, use_dga=False, use_edgrq=False)),
    ("+dga", dict(use_dwkrm=True, use_dga=True, use_edgrq=False)),
    ("+edgrq", dict(use_dwkrm=True, use_dga=True, use_edgrq=True)),
)


def runs_root() -> Path:
    return Path(os.environ.get("DOGCLR_RUNS_DIR", "runs"))


def _say(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------- run directories


def _prepare_run(kind: str, identity: dict, cfg: ExperimentConfig, config_path, force: bool):
    """Run directory keyed by ``identity``; returns (dir, already_complete)."""
    run_id = f"{kind}-{config_hash(identity)}"
    run_dir = runs_root() / run_id
    manifest = {
        "command": kind,
        "run_id": run_id,
        "config_path": None if config_path is None else str(config_path),
        "artifact_dir": str(run_dir),
        "seed": cfg.seed,
        "identity": identity,
    }
    done = (run_dir / "done.json").exists()
    if force and run_dir.exists():
        shutil.rmtree(run_dir)
        done = False
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(yaml.safe_dump(to_dict(cfg), sort_keys=True))
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return run_dir, done


def _mark_done(run_dir: Path, **info) -> None:
    (run_dir / "done.json").write_text(json.dumps(info, indent=2, sort_keys=True))


# ---------------------------------------------------------------- data


def _toy_spec(cfg: ExperimentConfig):
    from .skeleton import ToySpec

    t = cfg.data.toy
    return ToySpec(tuple(t.classes), t.per_class, t.T, t.V, t.noise_sigma, t.test_per_class)


def make_toy(cfg: ExperimentConfig, force: bool = False) -> Path:
    """Write train/test SKELPACK files and a manifest into ``data.dir``."""
    from .skeleton import generate_toy_dataset
    from .skelpack import save_split

    out = Path(cfg.data.dir)
    manifest = {"generator": "toy", "seed": cfg.data.seed, "toy": to_dict(cfg.data.toy)}
    mpath = out / "manifest.json"
    if not force and mpath.exists() and json.loads(mpath.read_text()) == manifest:
        if (out / "train.skelpack").exists() and (out / "test.skelpack").exists():
            return out
    out.mkdir(parents=True, exist_ok=True)
    train, test = generate_toy_dataset(_toy_spec(cfg), cfg.data.seed)
    save_split(out / "train.skelpack", train)
    save_split(out / "test.skelpack", test)
    (out / "graph.json").write_text(json.dumps(train.graph.to_dict(), indent=1, sort_keys=True))
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def load_data(cfg: ExperimentConfig):
    from .skelpack import load_split

    d = Path(cfg.data.dir)
    if not (d / "train.skelpack").exists():
        make_toy(cfg)
    return load_split(d / "train.skelpack", role="train"), load_split(d / "test.skelpack", role="test")


# ---------------------------------------------------------------- pretraining


def _pretrain_target(cfg: ExperimentConfig, n_train: int) -> int:
    total = (n_train // cfg.train.batch_size) * cfg.train.epochs
    return total if cfg.train.max_steps is None else min(total, cfg.train.max_steps)


def run_pretrain(cfg: ExperimentConfig, config_path=None, force=False, resume=None) -> Path:
    """Pretrain (or reuse a finished run) and return its run directory."""
    from .trainer import pretrain

    train, _ = load_data(cfg)
    staged = None
    if resume is not None:
        # the checkpoint may live in the run directory that is about to be rewritten
        fd, staged = tempfile.mkstemp(suffix=".ckpt")
        os.close(fd)
        shutil.copyfile(resume, staged)
        resume = staged
    run_dir, done = _prepare_run("pretrain", pretrain_identity(cfg), cfg, config_path, force)
    target = _pretrain_target(cfg, len(train))
    if done and resume is None:
        info = json.loads((run_dir / "done.json").read_text())
        if info.get("step") == target:
            _say(f"pretrain: up to date in {run_dir}")
            return run_dir
    try:
        last = pretrain(cfg.train, train, run_dir, resume=resume, normalize=cfg.data.normalize)
    finally:
        if staged is not None:
            os.remove(staged)
    _mark_done(run_dir, step=target, checkpoint=str(last))
    _say(f"pretrain: {target} steps, checkpoint {last}")
    return run_dir


def _checkpoint_in(run_dir: Path) -> Path:
    ck = run_dir / "checkpoints"
    for name in ("final.ckpt", "last.ckpt"):
        if (ck / name).exists():
            return ck / name
    raise DogclrError(f"no checkpoint in {ck}; run pretrain first")


# ---------------------------------------------------------------- evaluation


def _stream_cfg(cfg: ExperimentConfig, stream: str) -> ExperimentConfig:
    c = copy.deepcopy(cfg)
    c.train.stream = stream
    return c


def _knn_curve(run_dir: Path, cfg: ExperimentConfig, train, test, stream: str):
    from .evaluation import knn_eval

    curve = []
    for p in sorted((run_dir / "checkpoints").glob("epoch_*.ckpt")):
        epoch = int(p.stem.split("_")[1])
        r = knn_eval(p, train, test, cfg.eval.knn_k, cfg.eval.knn_weighted, stream, cfg.data.normalize)
        curve.append((epoch, r.top1))
    return curve


def run_eval(cfg: ExperimentConfig, config_path=None, force=False, pretrain_if_missing=False) -> dict:
    """Evaluate every configured stream and fuse them when there are several."""
    from .evaluation import ensemble_eval, evaluate, export_figures, extract_features
    from .trainer import load_encoder, prepare_array

    streams = list(cfg.eval.streams or [cfg.train.stream])
    identity = {"pretrain": [pretrain_identity(_stream_cfg(cfg, s)) for s in streams],
                "eval": to_dict(cfg.eval), "max_steps": cfg.train.max_steps}
    run_dir, done = _prepare_run("eval", identity, cfg, config_path, force)
    summary_path = run_dir / "summary.json"
    if done and summary_path.exists():
        _say(f"eval: up to date in {run_dir}")
        return json.loads(summary_path.read_text())
    train, test = load_data(cfg)
    per_stream = {}
    for s in streams:
        scfg = _stream_cfg(cfg, s)
        if cfg.eval.checkpoint and len(streams) == 1:
            ckpt = Path(cfg.eval.checkpoint)
            pre_dir = None
        else:
            pre_dir = runs_root() / f"pretrain-{config_hash(pretrain_identity(scfg))}"
            if not (pre_dir / "done.json").exists():
                if not pretrain_if_missing:
                    raise DogclrError(f"stream {s!r} has no pretraining run at {pre_dir}; run pretrain first")
                run_pretrain(scfg)
            ckpt = _checkpoint_in(pre_dir)
        pair, _ = load_encoder(ckpt)
        reports = evaluate(cfg.eval, pair, train, test, s, cfg.data.normalize)
        for proto, r in reports.items():
            r.config["checkpoint"] = str(ckpt)
            r.save(run_dir / f"report_{s}_{proto}.json")
        per_stream[s] = reports
        if cfg.eval.figures:
            first = next(iter(reports.values()))
            emb = extract_features(pair, prepare_array(test, s, cfg.data.normalize))
            curve = _knn_curve(pre_dir, cfg, train, test, s) if pre_dir is not None else None
            export_figures(first, emb, run_dir / "figures" / s, curve=curve,
                           method=cfg.eval.scatter_method, seed=cfg.eval.seed)
    summary = {s: {p: r.top1 for p, r in reps.items()} for s, reps in per_stream.items()}
    if len(streams) > 1:
        for proto in cfg.eval.protocols:
            fused = ensemble_eval([per_stream[s][proto] for s in streams], cfg.eval.stream_weights)
            fused.config["streams"] = streams
            fused.save(run_dir / f"report_ensemble_{proto}.json")
            summary.setdefault("ensemble", {})[proto] = fused.top1
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    _mark_done(run_dir)
    for s, accs in summary.items():
        _say(f"eval[{s}]: " + ", ".join(f"{p} top1={a:.4f}" for p, a in accs.items()))
    return summary


# ---------------------------------------------------------------- ablation


def _variant(cfg: ExperimentConfig, seed=None, **train_overrides) -> ExperimentConfig:
    c = copy.deepcopy(cfg)
    if seed is not None:
        c.seed = seed
        c.train.seed = seed
    if cfg.ablate.epochs is not None:
        c.train.epochs = cfg.ablate.epochs
    for k, v in train_overrides.items():
        if k == "embedding_dim":
            c.train.encoder.embedding_dim = v
        else:
            setattr(c.train, k, v)
    c.eval.streams = None
    c.eval.checkpoint = None
    c.eval.figures = False
    return validate(c)


def _accuracies(cfg: ExperimentConfig) -> dict:
    run_pretrain(cfg)
    summary = run_eval(cfg, pretrain_if_missing=True)
    return summary[cfg.train.stream]


def run_ablate(cfg: ExperimentConfig, config_path=None, force=False) -> Path:
    identity = {"ablate": to_dict(cfg.ablate), "base": pretrain_identity(cfg),
                "eval": to_dict(cfg.eval), "seed": cfg.seed}
    run_dir, _ = _prepare_run("ablate", identity, cfg, config_path, force)
    protos = list(cfg.eval.protocols)

    # toggle lattice, one shared seed
    rows = []
    for name, toggles in TOGGLE_ROWS:
        acc = _accuracies(_variant(cfg, cfg.seed, **toggles))
        rows.append([name, 1, int(toggles["use_dwkrm"]), int(toggles["use_dga"]), int(toggles["use_edgrq"])]
                    + [f"{acc[p]:.6f}" for p in protos])
    with open(run_dir / "toggle_ablation.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["row", "basic_augmentation", "dwkrm_jdam", "dga", "edgrq"] + [f"{p}_top1" for p in protos])
        w.writerows(rows)

    # bank policy comparison over seeds
    per_seed = []
    for policy, use_edgrq in (("fifo", False), ("edgrq", True)):
        for seed in cfg.ablate.seeds:
            acc = _accuracies(_variant(cfg, seed, use_dwkrm=True, use_dga=True, use_edgrq=use_edgrq))
            per_seed.append((policy, seed, acc))
    with open(run_dir / "policy_runs.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["policy", "seed"] + [f"{p}_top1" for p in protos])
        for policy, seed, acc in per_seed:
            w.writerow([policy, seed] + [f"{acc[p]:.6f}" for p in protos])
    with open(run_dir / "policy_comparison.csv", "w", newline="") as f:
        w = csv.writer(f)
        header = ["policy", "n_seeds"]
        for p in protos:
            header += [f"{p}_mean", f"{p}_std"]
        w.writerow(header)
        for policy in ("fifo", "edgrq"):
            accs = [a for pol, _, a in per_seed if pol == policy]
            row = [policy, len(accs)]
            for p in protos:
                vals = np.array([a[p] for a in accs])
                row += [f"{vals.mean():.6f}", f"{vals.std(ddof=1) if len(vals) > 1 else 0.0:.6f}"]
            w.writerow(row)

    # embedding-size grid as runnable configs
    grid_dir = run_dir / "embedding_grid"
    grid_dir.mkdir(exist_ok=True)
    sweep = []
    for dim in cfg.ablate.embedding_dims:
        v = _variant(cfg, cfg.seed, embedding_dim=int(dim))
        (grid_dir / f"embedding_{dim}.yaml").write_text(yaml.safe_dump(to_dict(v), sort_keys=True))
        if cfg.ablate.run_embedding_sweep:
            acc = _accuracies(v)
            sweep.append([dim] + [f"{acc[p]:.6f}" for p in protos])
    if sweep:
        with open(run_dir / "embedding_sweep.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["embedding_dim"] + [f"{p}_top1" for p in protos])
            w.writerows(sweep)
    _mark_done(run_dir)
    _say(f"ablate: tables in {run_dir}")
    return run_dir


# ---------------------------------------------------------------- visualization


def run_visualize(cfg: ExperimentConfig, config_path=None, force=False) -> Path:
    from .dga import compose_views, style_transfer
    from .dwkrm import localize
    from .encoder import EncoderPair
    from .skeleton import compute_gsbp
    from .trainer import load_encoder, prepare_array, sample_rng
    from .jdam import joint_degree_weights
    from .visualize import render_augmentation, render_overlay, write_coordinates

    identity = {"visualize": to_dict(cfg.visualize), "pretrain": pretrain_identity(cfg), "seed": cfg.seed}
    run_dir, done = _prepare_run("visualize", identity, cfg, config_path, force)
    if done:
        _say(f"visualize: up to date in {run_dir}")
        return run_dir
    train, test = load_data(cfg)
    graph = train.graph
    if cfg.visualize.checkpoint:
        pair, _ = load_encoder(cfg.visualize.checkpoint)
    else:
        pre_dir = runs_root() / f"pretrain-{config_hash(pretrain_identity(cfg))}"
        if (pre_dir / "done.json").exists():
            pair, _ = load_encoder(_checkpoint_in(pre_dir))
        else:
            pair = EncoderPair.build(cfg.train.encoder, graph, cfg.train.momentum, cfg.train.seed)
    xtr = prepare_array(train, cfg.train.stream, cfg.data.normalize)
    xte = prepare_array(test, cfg.train.stream, cfg.data.normalize)
    n = min(cfg.visualize.num_samples, len(xte))
    idx = np.linspace(0, len(xte) - 1, n).round().astype(int)
    x = xte[idx]
    jd = np.asarray(joint_degree_weights(graph))
    if cfg.train.use_dwkrm:
        _, masks, _ = localize(pair, x, compute_gsbp(xtr).values, jd, graph, cfg.train.theta_spec)
    else:
        masks = np.ones((n,) + x.shape[2:], dtype=np.uint8)
    frame = cfg.visualize.frame if cfg.visualize.frame is not None else x.shape[2] // 2
    rows = []
    for i in range(n):
        px = render_overlay(x[i], masks[i], graph, frame, run_dir / f"mask_{i:03d}.png")
        rows += [(i, v, px[v, 0], px[v, 1], masks[i][frame, v]) for v in range(graph.num_joints)]
        partner = x[(i + 1) % n]
        styled = style_transfer(x[i], partner, jd, cfg.train.augment.style_direction) if cfg.train.use_dga else x[i]
        rq = sample_rng(cfg.seed, 0, int(idx[i]), 0)
        rk = sample_rng(cfg.seed, 0, int(idx[i]), 1)
        views = compose_views(x[i], styled, masks[i], cfg.train.augment, (rq, rk), partner)
        render_augmentation(x[i], views.view_q, masks[i], graph, frame, run_dir / f"augment_{i:03d}.png")
    write_coordinates(run_dir / "screen_coords.csv", rows)
    _mark_done(run_dir, samples=[int(i) for i in idx], frame=int(frame))
    _say(f"visualize: {n} overlays in {run_dir}")
    return run_dir


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dogclr", description="Skeleton contrastive pretraining toolkit.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="YAML or JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="override the experiment seed")
    p.add_argument("--resume", default=None, help="checkpoint to continue pretraining from")
    p.add_argument("--force", action="store_true", help="recompute even if the run directory is complete")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. train.epochs=5")
    return p


def _fail(code: int, exc: Exception) -> int:
    err = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError) and exc.field is not None:
        err["field"] = exc.field
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("DOGCLR_THREADS")
    try:
        overrides = [parse_override(s) for s in args.overrides]
        cfg = load_config(args.config, overrides, args.seed)
        if args.resume is not None and args.command != "pretrain":
            raise ConfigError("--resume only applies to pretrain", "resume")
        if args.resume is not None and not Path(args.resume).exists():
            raise ConfigError(f"resume checkpoint {args.resume} does not exist", "resume")
    except ConfigError as e:
        return _fail(EXIT_CONFIG, e)
    try:
        if threads:
            import torch

            torch.set_num_threads(int(threads))
        if args.command == "make-toy":
            out = make_toy(cfg, args.force)
            _say(f"make-toy: wrote {out}")
        elif args.command == "pretrain":
            run_pretrain(cfg, args.config, args.force, args.resume)
        elif args.command == "eval":
            run_eval(cfg, args.config, args.force)
        elif args.command == "ablate":
            run_ablate(cfg, args.config, args.force)
        else:
            run_visualize(cfg, args.config, args.force)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, e)
    except (DogclrError, OSError, ValueError, RuntimeError) as e:
        return _fail(EXIT_RUNTIME, e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
