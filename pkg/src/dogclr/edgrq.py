"""Negative-sample memory bank with FIFO or entropy-game replacement.

Under the ``edgrq`` policy a full bank replaces, for each incoming key, the
slot whose replacement maximizes the entropy of the softmax over cosine
similarities between a probe embedding and the bank. The probe is the key
itself (``probe="key"``) or the normalized batch mean (``probe="batch_mean"``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import BankNotFull, EmptyBank, InvalidDistribution

TIE_TOL = 1e-12
POLICIES = ("fifo", "edgrq")
PROBES = ("key", "batch_mean")


def _unit_rows(a) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    n = np.linalg.norm(a, axis=1, keepdims=True)
    if (n == 0).any():
        raise ValueError("cannot normalize a zero embedding")
    return a / n


@dataclass
class ReplacementDecision:
    index: int
    payoffs: np.ndarray
    tie_count: int

    @property
    def max_payoff(self) -> float:
        return float(self.payoffs.max())


@dataclass
class MemoryBank:
    """Fixed-capacity store of unit-norm negatives kept in float64."""

    capacity: int = 32768
    dim: int = 256
    policy: str = "fifo"
    probe: str = "key"
    entries: np.ndarray = field(default=None, repr=False)
    size: int = 0
    fill_cursor: int = 0
    stats: dict = field(default_factory=lambda: {"enqueued": 0, "games": 0, "ties": 0})

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown bank policy {self.policy!r}")
        if self.probe not in PROBES:
            raise ValueError(f"unknown probe mode {self.probe!r}")
        if self.capacity < 0:
            raise ValueError("capacity must be non-negative")
        if self.policy == "edgrq" and self.capacity < 1:
            raise ValueError("the edgrq policy needs a bank capacity of at least 1")
        if self.entries is None:
            self.entries = np.zeros((self.capacity, self.dim), dtype=np.float64)

    @property
    def full(self) -> bool:
        return self.size == self.capacity

    def contents(self) -> np.ndarray:
        """Filled slots in storage order."""
        return self.entries[: self.size]

    def ordered(self) -> np.ndarray:
        """Filled slots oldest first (meaningful for FIFO)."""
        if not self.full:
            return self.entries[: self.size].copy()
        return np.roll(self.entries, -self.fill_cursor, axis=0)

    def snapshot(self):
        import torch

        return torch.from_numpy(self.contents().astype(np.float32))

    def state_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "dim": self.dim,
            "policy": self.policy,
            "probe": self.probe,
            "size": self.size,
            "fill_cursor": self.fill_cursor,
            "stats": dict(self.stats),
        }

    @classmethod
    def from_state(cls, state: dict, entries: np.ndarray) -> "MemoryBank":
        bank = cls(state["capacity"], state["dim"], state["policy"], state["probe"],
                   np.array(entries, dtype=np.float64))
        bank.size = state["size"]
        bank.fill_cursor = state["fill_cursor"]
        bank.stats = dict(state["stats"])
        return bank


def similarity_distribution(query, entries) -> np.ndarray:
    """Softmax over cosine similarities of ``query`` to each entry (no temperature)."""
    entries = np.asarray(entries, dtype=np.float64)
    if entries.size == 0:
        raise EmptyBank("similarity distribution over an empty bank")
    s = _unit_rows(entries) @ _unit_rows(query)[0]
    e = np.exp(s - s.max())
    return e / e.sum()


def entropy_payoff(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise InvalidDistribution("payoff needs a probability vector")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def select_replacement(bank: MemoryBank, incoming, probe) -> ReplacementDecision:
    """Slot to overwrite so that the probe's similarity distribution has maximal entropy."""
    if not bank.full or bank.capacity == 0:
        raise BankNotFull(f"bank holds {bank.size} of {bank.capacity} entries")
    p = _unit_rows(probe)[0]
    sims = _unit_rows(bank.entries) @ p
    incoming_sim = float(_unit_rows(incoming)[0] @ p)
    idx, payoffs, ties = kernels.replacement_scan(sims, incoming_sim, TIE_TOL)
    return ReplacementDecision(idx, payoffs, ties)


def _append(bank: MemoryBank, keys: np.ndarray) -> None:
    for k in keys:
        bank.entries[bank.fill_cursor] = k
        bank.fill_cursor = (bank.fill_cursor + 1) % bank.capacity
        bank.size = min(bank.size + 1, bank.capacity)


def enqueue(bank: MemoryBank, keys, probe_source=None) -> MemoryBank:
    """Insert a batch of keys; returns the bank (mutated in place).

    ``bank.last_telemetry`` afterwards holds one record per key that went
    through the replacement game: chosen slot, its payoff and the payoff the
    FIFO slot would have had.
    """
    keys = _unit_rows(keys)
    bank.last_telemetry = []
    bank.stats["enqueued"] += len(keys)
    if bank.capacity == 0 or len(keys) == 0:
        return bank
    if bank.policy == "fifo":
        _append(bank, keys)
        return bank
    n_fill = min(len(keys), bank.capacity - bank.size)
    _append(bank, keys[:n_fill])
    rest = keys[n_fill:]
    if not len(rest):
        return bank
    if bank.probe == "key":
        probes = rest
    else:
        src = rest if probe_source is None else _unit_rows(probe_source)
        probes = np.repeat(_unit_rows(src.mean(axis=0)), len(rest), axis=0)
    sims = np.ascontiguousarray(probes @ bank.entries.T)
    cross = np.ascontiguousarray(probes @ rest.T)
    idx, best, ties, fifo = kernels.sequential_replace(sims, cross, bank.fill_cursor, TIE_TOL)
    for c, i in enumerate(idx):
        bank.entries[i] = rest[c]
    bank.fill_cursor = (bank.fill_cursor + len(rest)) % bank.capacity
    bank.stats["games"] += len(rest)
    bank.stats["ties"] += int((ties > 1).sum())
    bank.last_telemetry = [
        {"index": int(i), "max_payoff": float(b), "fifo_payoff": float(f), "ties": int(t)}
        for i, b, f, t in zip(idx, best, fifo, ties)
    ]
    return bank
