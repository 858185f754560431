"""Compute-capacity estimation from PoW proof histories.

Every history entry gives one hash-rate point ``2**bits / elapsed``. A node's
rate is the mean over a recent window of low-variance points, and the
per-node estimate is that rate divided by the best rate in the network.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InsufficientHistory, NoEligibleNodes, ZeroElapsed


@dataclass(frozen=True)
class HistoryEntry:
    epoch: int
    achieved_bits: int
    is_full: bool
    elapsed: float

    @classmethod
    def from_proof(cls, epoch, proof) -> "HistoryEntry":
        return cls(epoch, proof.achieved_bits, proof.is_full, proof.elapsed)

    @classmethod
    def from_outcome(cls, epoch, outcome) -> "HistoryEntry":
        # share_count proofs at share_bits over the window: one entry at the
        # mean spacing between them
        return cls(epoch, outcome.share_bits, outcome.proof.is_full, outcome.window / outcome.share_count)


@dataclass(frozen=True)
class ProofHistory:
    node_id: str
    entries: tuple = ()

    def __post_init__(self):
        epochs = [e.epoch for e in self.entries]
        if epochs != sorted(set(epochs)):
            raise ValueError("history entries must be strictly increasing in epoch")

    def append(self, entry: HistoryEntry) -> "ProofHistory":
        return ProofHistory(self.node_id, self.entries + (entry,))

    def tail(self, keep: int) -> "ProofHistory":
        return ProofHistory(self.node_id, self.entries[-keep:])


@dataclass(frozen=True)
class ComputeEstimate:
    c_hat: Mapping[str, float]
    rates: Mapping[str, float]
    d_max: float
    window_used: Mapping[str, int] = field(default_factory=dict)


def hash_rate_point(entry: HistoryEntry) -> float:
    if entry.elapsed <= 0:
        raise ZeroElapsed(f"entry for epoch {entry.epoch} has no elapsed time")
    return 2.0**entry.achieved_bits / entry.elapsed


def _mean_std(xs):
    mu = math.fsum(xs) / len(xs)
    if len(xs) < 2:
        return mu, 0.0
    var = math.fsum((x - mu) ** 2 for x in xs) / (len(xs) - 1)
    return mu, math.sqrt(var)


def select_window(history, eps: int) -> int:
    """Largest N >= eps whose last-N mean sits within one std of every last-M mean.

    M ranges over eps <= M < N. Falls back to N = eps.
    """
    entries = history.entries if isinstance(history, ProofHistory) else tuple(history)
    if len(entries) < eps:
        raise InsufficientHistory(f"{len(entries)} entries, need {eps}")
    points = [hash_rate_point(e) for e in entries]
    tails = {m: _mean_std(points[-m:]) for m in range(eps, len(points) + 1)}
    for n in range(len(points), eps, -1):
        mu_n = tails[n][0]
        ok = True
        for m in range(eps, n):
            mu_m, sd_m = tails[m]
            slack = 1e-12 * abs(mu_m)
            if not (mu_m - sd_m - slack <= mu_n <= mu_m + sd_m + slack):
                ok = False
                break
        if ok:
            return n
    return eps


def node_rate(history, eps: int) -> tuple[float, int]:
    entries = history.entries if isinstance(history, ProofHistory) else tuple(history)
    n = select_window(entries, eps)
    return math.fsum(hash_rate_point(e) for e in entries[-n:]) / n, n


def estimate(histories: Mapping[str, object], eps: int, bytes_per_hash_unit: float = 1.0) -> ComputeEstimate:
    """Normalized compute estimate for every node with at least ``eps`` entries."""
    rates, windows = {}, {}
    for nid in sorted(histories):
        h = histories[nid]
        entries = h.entries if isinstance(h, ProofHistory) else tuple(h)
        if len(entries) < eps:
            continue
        rates[nid], windows[nid] = node_rate(entries, eps)
    if not rates:
        raise NoEligibleNodes("no node has enough proof history")
    top = max(rates.values())
    c_hat = {nid: (1.0 if r == top else r / top) for nid, r in rates.items()}
    return ComputeEstimate(c_hat, rates, bytes_per_hash_unit * top, windows)


def consistency_ratio(rate: float, task_latency: float) -> float:
    """Hashes a node could have computed during one task run."""
    if rate <= 0 or task_latency <= 0:
        raise ValueError("rate and latency must be positive")
    return rate * task_latency


@dataclass(frozen=True)
class CalibrationRow:
    node_id: str
    hash_rate: float
    task: str
    latency: float
    hash_rate_std: float = 0.0
    latency_std: float = 0.0

    @property
    def ratio(self) -> float:
        return consistency_ratio(self.hash_rate, self.latency)

    @property
    def ratio_std(self) -> float:
        return math.hypot(self.hash_rate * self.latency_std, self.latency * self.hash_rate_std)


def flag_outliers(rows: Sequence[CalibrationRow], iqr_multiplier: float = 2.0) -> set:
    """Node ids whose ratio sits far from the rest of the same task.

    A node is flagged when its distance to the median of the others exceeds
    ``iqr_multiplier`` times both the others' IQR and its own ratio
    uncertainty. Needs at least three other nodes.
    """
    flagged = set()
    for row in rows:
        others = [r.ratio for r in rows if r.node_id != row.node_id]
        if len(others) < 3:
            continue
        q1, med, q3 = np.percentile(others, [25, 50, 75])
        dev = abs(row.ratio - med)
        if dev > iqr_multiplier * (q3 - q1) and dev > iqr_multiplier * row.ratio_std:
            flagged.add(row.node_id)
    return flagged


CALIBRATION_COLUMNS = ("node_id", "hash_rate", "task", "latency")


def load_calibration_csv(path) -> list:
    """Rows of (node_id, hash_rate, task, latency[, hash_rate_std, latency_std]).

    Latencies are in seconds. Missing std cells read as zero.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CALIBRATION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"calibration CSV missing column(s): {', '.join(missing)}")
        rows = []
        for rec in reader:
            rows.append(CalibrationRow(
                rec["node_id"], float(rec["hash_rate"]), rec["task"], float(rec["latency"]),
                float(rec.get("hash_rate_std") or 0.0), float(rec.get("latency_std") or 0.0),
            ))
    return rows


def ratio_report(rows: Iterable[CalibrationRow], iqr_multiplier: float = 2.0) -> list:
    """One dict per row: node, task, ratio, ratio_std, outlier flag."""
    rows = list(rows)
    out = []
    for task in sorted({r.task for r in rows}):
        group = [r for r in rows if r.task == task]
        flagged = flag_outliers(group, iqr_multiplier)
        for r in group:
            out.append({"node_id": r.node_id, "task": task, "ratio": r.ratio,
                        "ratio_std": r.ratio_std, "outlier": r.node_id in flagged})
    return out


def write_estimate_csv(path, est: ComputeEstimate):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "rate", "c_hat", "window"])
        for nid in sorted(est.c_hat):
            w.writerow([nid, repr(est.rates[nid]), repr(est.c_hat[nid]), est.window_used.get(nid, "")])
