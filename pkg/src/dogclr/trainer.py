"""Momentum-contrast pretraining loop with the three switchable modules.

Every random draw in a step comes from a generator derived from
``(seed, epoch, sample_id, purpose)``, so results do not depend on batch
composition order beyond the sample ids and a checkpoint only has to carry
parameters, optimizer buffers, the bank and the step counter.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckpt_io
from .config import TrainConfig, from_dict, to_dict
from .dga import compose_views, normal_augment, style_transfer
from .dwkrm import localize
from .edgrq import MemoryBank, enqueue
from .encoder import EncoderPair, momentum_update
from .errors import EmptyBatch
from .jdam import joint_degree_weights
from .skeleton import DatasetSplit, SkeletonGraph, compute_gsbp, derive_stream_array

_VIEW_Q, _VIEW_K, _PARTNERS = 0, 1, 2


def info_nce_loss(q, k, bank=None, tau: float = 0.2):
    """Single-positive InfoNCE: mean of -log softmax at the positive logit.

    ``bank`` is a MemoryBank, an (M, D) tensor/array of negatives, or None.
    """
    if q.shape[0] == 0:
        raise EmptyBatch("InfoNCE over an empty batch")
    if q.shape != k.shape:
        raise ValueError(f"query {tuple(q.shape)} and key {tuple(k.shape)} batches differ")
    if isinstance(bank, MemoryBank):
        neg = bank.snapshot()
    elif bank is None:
        neg = q.new_zeros((0, q.shape[1]))
    else:
        neg = torch.as_tensor(bank)
    neg = neg.to(dtype=q.dtype)
    pos = (q * k).sum(dim=1, keepdim=True)
    logits = torch.cat([pos, q @ neg.T], dim=1) / tau
    target = torch.zeros(q.shape[0], dtype=torch.long)
    return F.cross_entropy(logits, target)


@dataclass
class TrainContext:
    """Fixed inputs shared by every step of one run."""

    graph: SkeletonGraph
    jd: np.ndarray
    gsbp: np.ndarray
    steps_per_epoch: int
    total_steps: int


@dataclass
class TrainState:
    pair: EncoderPair
    optimizer: torch.optim.SGD
    bank: MemoryBank
    context: TrainContext
    step: int = 0
    history: list = field(default_factory=list)

    @property
    def epoch(self) -> int:
        return self.step // max(self.context.steps_per_epoch, 1)


def prepare_array(split: DatasetSplit, stream: str, normalize: str = "none") -> np.ndarray:
    """(N, C, T, V) float32 array of one input stream."""
    x = np.array(split.array, dtype=np.float32)
    if normalize == "center_root":
        x = x - x[..., split.graph.root : split.graph.root + 1]
    return derive_stream_array(x, stream, split.graph).astype(np.float32, copy=False)


def init_state(config: TrainConfig, graph: SkeletonGraph, x_train: np.ndarray) -> TrainState:
    n = len(x_train)
    spe = n // config.batch_size
    ctx = TrainContext(
        graph=graph,
        jd=np.asarray(joint_degree_weights(graph)),
        gsbp=compute_gsbp(x_train).values,
        steps_per_epoch=spe,
        total_steps=spe * config.epochs,
    )
    pair = EncoderPair.build(config.encoder, graph, config.momentum, config.seed)
    opt = torch.optim.SGD(
        [p for p in pair.query.parameters() if p.requires_grad],
        lr=config.base_lr,
        momentum=config.sgd_momentum,
        weight_decay=config.weight_decay,
    )
    bank = MemoryBank(
        capacity=config.bank_capacity,
        dim=config.encoder.embedding_dim if config.encoder.kind == "stgcn" else int(np.prod(x_train.shape[1:])),
        policy="edgrq" if config.use_edgrq else "fifo",
        probe=config.probe,
    )
    return TrainState(pair, opt, bank, ctx)


def learning_rate(config: TrainConfig, step: int, total_steps: int) -> float:
    if config.schedule == "constant" or total_steps <= 0:
        return config.base_lr
    return config.base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def sample_rng(seed: int, epoch: int, sample_id: int, purpose: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch, sample_id, purpose])))


def _partners(B: int, i: int, rng) -> tuple[int, int]:
    if B < 2:
        return i, i
    j_style, j_mix = (i + rng.integers(1, B, size=2)) % B
    return int(j_style), int(j_mix)


def build_views(x: np.ndarray, masks: np.ndarray, ids, config: TrainConfig, ctx: TrainContext, epoch: int):
    """Two augmented views per sample, plus the code path that produced them."""
    B = len(x)
    aug = config.augment
    vq = np.empty_like(x)
    vk = np.empty_like(x)
    if config.use_dga:
        path = "dga"
    elif config.use_dwkrm:
        path = "partition"
    else:
        path = "normal"
    for i in range(B):
        sid = int(ids[i])
        rq = sample_rng(config.seed, epoch, sid, _VIEW_Q)
        rk = sample_rng(config.seed, epoch, sid, _VIEW_K)
        j_style, j_mix = _partners(B, i, sample_rng(config.seed, epoch, sid, _PARTNERS))
        if path == "normal":
            vq[i] = normal_augment(x[i], aug, rq, x[j_mix])
            vk[i] = normal_augment(x[i], aug, rk, x[j_mix])
            continue
        if path == "dga":
            styled = style_transfer(x[i], x[j_style], ctx.jd, aug.style_direction)
        else:
            styled = x[i]
        views = compose_views(x[i], styled, masks[i], aug, (rq, rk), x[j_mix])
        vq[i] = views.view_q
        vk[i] = views.view_k
    return vq, vk, path


def train_step(state: TrainState, batch, config: TrainConfig, sample_ids=None):
    """One optimization step; returns (state, metrics record)."""
    x = np.asarray(getattr(batch, "array", batch), dtype=np.float32)
    B = len(x)
    if B == 0:
        raise EmptyBatch("train_step received an empty batch")
    ids = np.arange(B) if sample_ids is None else np.asarray(sample_ids)
    ctx = state.context
    pair = state.pair
    epoch = state.epoch

    # (1) key-region masks from the key branch, outside the optimizer's graph
    if config.use_dwkrm:
        _, masks, _ = localize(pair, x, ctx.gsbp, ctx.jd, ctx.graph, config.theta_spec)
    else:
        masks = np.ones((B,) + x.shape[2:], dtype=np.uint8)

    # (2) views
    vq, vk, view_path = build_views(x, masks, ids, config, ctx, epoch)

    # (3) encode
    dtype = pair.dtype
    _, q = pair.query(torch.from_numpy(vq).to(dtype))
    with torch.no_grad():
        _, k = pair.key(torch.from_numpy(vk).to(dtype))

    # (4) loss against the bank as it stood at step start
    loss = info_nce_loss(q, k, state.bank.snapshot(), config.temperature)

    # (5) gradient step on the query branch
    lr = learning_rate(config, state.step, ctx.total_steps)
    for g in state.optimizer.param_groups:
        g["lr"] = lr
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()

    # (6) momentum update, (7) bank update
    momentum_update(pair)
    enqueue(state.bank, k.detach().cpu().numpy())

    tele = state.bank.last_telemetry
    record = {
        "step": state.step,
        "epoch": epoch,
        "loss": float(loss.item()),
        "lr": lr,
        "key_fraction": float(masks.mean()),
        "bank": {
            "size": state.bank.size,
            "policy": state.bank.policy,
            "games": len(tele),
            "mean_max_payoff": float(np.mean([t["max_payoff"] for t in tele])) if tele else None,
            "mean_fifo_payoff": float(np.mean([t["fifo_payoff"] for t in tele])) if tele else None,
            "chosen": [t["index"] for t in tele],
        },
        "toggles": config.toggles,
        "path": {
            "masks": "dwkrm" if config.use_dwkrm else "ones",
            "views": view_path,
            "bank": state.bank.policy,
        },
    }
    state.step += 1
    state.history.append(record["loss"])
    return state, record


# ---------------------------------------------------------------- checkpoints


def _module_arrays(prefix, module):
    return {f"{prefix}.{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def save_state(path, state: TrainState, config: TrainConfig) -> Path:
    arrays = {}
    arrays.update(_module_arrays("query", state.pair.query))
    arrays.update(_module_arrays("key", state.pair.key))
    params = [p for g in state.optimizer.param_groups for p in g["params"]]
    for i, p in enumerate(params):
        buf = state.optimizer.state.get(p, {}).get("momentum_buffer")
        if buf is not None:
            arrays[f"optim.{i}"] = buf.detach().cpu().numpy()
    arrays["bank.entries"] = state.bank.entries
    arrays["gsbp"] = state.context.gsbp
    arrays["jd"] = state.context.jd
    meta = {
        "step": state.step,
        "epoch": state.epoch,
        "config": to_dict(config),
        "graph": state.context.graph.to_dict(),
        "bank": state.bank.state_dict(),
        "steps_per_epoch": state.context.steps_per_epoch,
        "total_steps": state.context.total_steps,
        "rng": {"scheme": "pcg64(seed, epoch, sample_id, purpose)", "seed": config.seed},
        "optimizer_params": len(params),
    }
    return ckpt_io.save(path, arrays, meta)


def load_state(path, config: TrainConfig | None = None) -> tuple[TrainState, dict]:
    """Rebuild a TrainState from a checkpoint. ``config`` defaults to the echoed one."""
    arrays, manifest = ckpt_io.load(path)
    if config is None:
        config = from_dict(TrainConfig, manifest["config"])
    graph = SkeletonGraph.from_dict(manifest["graph"])
    pair = EncoderPair.build(config.encoder, graph, config.momentum, config.seed)
    for prefix, module in (("query", pair.query), ("key", pair.key)):
        sd = {k: torch.from_numpy(np.array(arrays[f"{prefix}.{k}"])) for k in module.state_dict()}
        module.load_state_dict(sd)
    opt = torch.optim.SGD(
        [p for p in pair.query.parameters() if p.requires_grad],
        lr=config.base_lr, momentum=config.sgd_momentum, weight_decay=config.weight_decay,
    )
    params = [p for g in opt.param_groups for p in g["params"]]
    for i, p in enumerate(params):
        if f"optim.{i}" in arrays:
            opt.state[p]["momentum_buffer"] = torch.from_numpy(np.array(arrays[f"optim.{i}"]))
    bank = MemoryBank.from_state(manifest["bank"], arrays["bank.entries"])
    ctx = TrainContext(graph, np.array(arrays["jd"]), np.array(arrays["gsbp"]),
                       manifest["steps_per_epoch"], manifest["total_steps"])
    return TrainState(pair, opt, bank, ctx, step=manifest["step"]), manifest


def load_encoder(path) -> tuple[EncoderPair, dict]:
    """Both branches from a checkpoint, in eval mode, without optimizer state."""
    state, manifest = load_state(path)
    return state.pair, manifest


# ---------------------------------------------------------------- loop


def _resume_compatible(a: TrainConfig, b: TrainConfig) -> bool:
    da, db = to_dict(a), to_dict(b)
    for d in (da, db):
        d.pop("max_steps")
        d.pop("checkpoint_every")
    return da == db


def pretrain(config: TrainConfig, data: DatasetSplit, run_dir=None, resume=None,
             normalize: str = "none", log=None) -> Path:
    """Run pretraining and return the path of the last checkpoint written.

    ``run_dir`` receives ``metrics.jsonl`` (deterministic), ``timing.jsonl``
    and ``checkpoints/``. ``resume`` is a checkpoint path to continue from.
    ``config.max_steps`` stops early (global step count) without changing
    the learning-rate schedule.
    """
    run_dir = Path(run_dir if run_dir is not None else "runs/pretrain")
    ck_dir = run_dir / "checkpoints"
    ck_dir.mkdir(parents=True, exist_ok=True)
    x = prepare_array(data, config.stream, normalize)
    n = len(x)
    if n < config.batch_size and config.epochs > 0:
        raise ValueError(f"batch size {config.batch_size} exceeds the {n} training samples")

    if resume is not None:
        state, manifest = load_state(resume, config)
        saved = from_dict(TrainConfig, manifest["config"])
        if not _resume_compatible(saved, config):
            raise ValueError("resume checkpoint was written under a different configuration")
    else:
        state = init_state(config, data.graph, x)

    metrics_path = run_dir / "metrics.jsonl"
    timing_path = run_dir / "timing.jsonl"
    kept = []
    if resume is not None and metrics_path.exists():
        with open(metrics_path) as f:
            kept = [ln for ln in f if ln.strip() and json.loads(ln)["step"] < state.step]
    with open(metrics_path, "w") as f:
        f.writelines(kept)
    if resume is None:
        timing_path.write_text("")

    spe = state.context.steps_per_epoch
    total = state.context.total_steps
    stop = total if config.max_steps is None else min(total, config.max_steps)
    order = None
    order_epoch = -1
    with open(metrics_path, "a") as mf, open(timing_path, "a") as tf:
        while state.step < stop:
            epoch = state.epoch
            if epoch != order_epoch:
                order = np.random.default_rng([config.seed, epoch]).permutation(n)
                order_epoch = epoch
            pos = state.step % spe
            idx = order[pos * config.batch_size : (pos + 1) * config.batch_size]
            t0 = time.perf_counter()
            state, rec = train_step(state, x[idx], config, idx)
            dt = time.perf_counter() - t0
            mf.write(json.dumps(rec, sort_keys=True) + "\n")
            tf.write(json.dumps({"step": rec["step"], "seconds": dt}) + "\n")
            if log is not None:
                log(rec)
            if state.step % spe == 0 and state.epoch % config.checkpoint_every == 0:
                mf.flush()
                save_state(ck_dir / f"epoch_{state.epoch:04d}.ckpt", state, config)
    last = save_state(ck_dir / "last.ckpt", state, config)
    if state.step >= total:
        save_state(ck_dir / "final.ckpt", state, config)
    return last


def read_metrics(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(ln) for ln in f if ln.strip()]


def epoch_mean_losses(records) -> dict[int, float]:
    by = {}
    for r in records:
        by.setdefault(r["epoch"], []).append(r["loss"])
    return {e: float(np.mean(v)) for e, v in sorted(by.items())}
