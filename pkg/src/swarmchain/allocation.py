"""Choosing which data exchanges to run in an epoch.

Every (request, availability) pair of the same data type is a candidate
exchange x_ij from provider j to receiver i. Its size is the largest one the
constraints allow; its value is ``alpha * Q_j + beta / E`` where ``E`` grows
with the mismatch between what was asked for and what is on offer. The plan
maximizes the summed value.

Two constraint modes:

``per_exchange``
    each exchange alone must fit receiver compute (``D_max * C_i``) and the
    link bandwidth. Candidates are independent.
``aggregate``
    additionally the sizes a receiver takes in must sum to at most its
    compute bound, which turns each receiver into a 0/1 knapsack.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import MissingQuality, TypeMismatch

MODES = ("per_exchange", "aggregate")


@dataclass(frozen=True)
class DataRequest:
    requester: str
    type: str
    max_size: float
    min_res: float
    max_res: float

    def __post_init__(self):
        if self.min_res > self.max_res:
            raise ValueError("min_res must not exceed max_res")
        if self.max_size <= 0:
            raise ValueError("max_size must be positive")


@dataclass(frozen=True)
class AvailableData:
    provider: str
    type: str
    max_size: float
    min_res: float
    max_res: float

    def __post_init__(self):
        if self.min_res > self.max_res:
            raise ValueError("min_res must not exceed max_res")
        if self.max_size <= 0:
            raise ValueError("max_size must be positive")


@dataclass(frozen=True)
class Exchange:
    receiver: str
    provider: str
    type: str
    request_id: int
    available_id: int
    size: float
    error: float
    term: float

    @property
    def key(self) -> tuple:
        return (self.receiver, self.provider, self.request_id, self.available_id)


@dataclass(frozen=True)
class ExchangePlan:
    exchanges: tuple
    objective_value: float
    mode: str = "per_exchange"

    @property
    def total_size(self) -> float:
        return math.fsum(x.size for x in self.exchanges)


def mismatch_error(req: DataRequest, avail) -> float:
    """1 for a perfect fit, growing with resolution gap and size shortfall.

    The resolution gap is measured in units of the mean interval width.
    """
    if req.type != avail.type:
        raise TypeMismatch(f"{req.type} request cannot be served by {avail.type} data")
    gap = max(0.0, max(req.min_res, avail.min_res) - min(req.max_res, avail.max_res))
    width = ((req.max_res - req.min_res) + (avail.max_res - avail.min_res)) / 2
    if gap == 0:
        gap_term = 0.0
    elif width > 0:
        gap_term = gap / width
    else:
        gap_term = gap / max(abs(req.max_res), abs(avail.max_res), 1.0)
    size_term = max(0.0, req.max_size - avail.max_size) / req.max_size
    return 1.0 + gap_term + size_term


def term_value(q_provider: float, error: float, alpha: float, beta: float) -> float:
    return alpha * q_provider + beta / error


def objective(plan, Q: Mapping[str, float], alpha: float, beta: float) -> float:
    exchanges = plan.exchanges if isinstance(plan, ExchangePlan) else plan
    terms = []
    for x in exchanges:
        if x.provider not in Q:
            raise MissingQuality(x.provider)
        terms.append(term_value(Q[x.provider], x.error, alpha, beta))
    return math.fsum(terms)


def link_bandwidth(bandwidth: Mapping, receiver: str, provider: str):
    bw = bandwidth.get((receiver, provider))
    if bw is None:
        bw = bandwidth.get((provider, receiver))
    return bw


def candidates(requests: Sequence[DataRequest], availables: Sequence[AvailableData], Q, c_hat, d_max,
               bandwidth, alpha, beta) -> list:
    out = []
    for ri, req in enumerate(requests):
        i = req.requester
        if i not in c_hat:
            continue
        for ai, av in enumerate(availables):
            j = av.provider
            if j == i or av.type != req.type:
                continue
            bw = link_bandwidth(bandwidth, i, j)
            if bw is None:
                continue
            size = min(req.max_size, av.max_size, d_max * c_hat[i], bw)
            if size <= 0:
                continue
            if j not in Q:
                raise MissingQuality(j)
            e = mismatch_error(req, av)
            out.append(Exchange(i, j, req.type, ri, ai, size, e, term_value(Q[j], e, alpha, beta)))
    return out


def _key(chosen: Sequence[Exchange]):
    """Sort key for a selection: larger is better."""
    return (math.fsum(x.term for x in chosen), math.fsum(x.size for x in chosen))


def _better(a: Sequence[Exchange], b: Sequence[Exchange] | None) -> bool:
    if b is None:
        return True
    ka, kb = _key(a), _key(b)
    if ka != kb:
        return ka > kb
    return sorted(x.key for x in a) < sorted(x.key for x in b)


def _exact_group(items: list, cap: float) -> list:
    """Branch and bound over one receiver's candidates under a size cap."""
    items = sorted((x for x in items if x.term >= 0), key=lambda x: (-x.term, -x.size, x.key))
    suffix = [0.0] * (len(items) + 1)
    for k in range(len(items) - 1, -1, -1):
        suffix[k] = suffix[k + 1] + items[k].term
    best = [None]
    best_obj = [-math.inf]

    def rec(k, chosen, used, obj):
        if obj + suffix[k] < best_obj[0] - 1e-9 * (1 + abs(best_obj[0])):
            return
        if k == len(items):
            if _better(chosen, best[0]):
                best[0] = list(chosen)
                best_obj[0] = _key(chosen)[0]
            return
        x = items[k]
        if used + x.size <= cap:
            chosen.append(x)
            rec(k + 1, chosen, used + x.size, obj + x.term)
            chosen.pop()
        rec(k + 1, chosen, used, obj)

    rec(0, [], 0.0, 0.0)
    return best[0] or []


def _greedy_group(items: list, cap: float) -> list:
    """Greedy fill by term value, then single add/swap moves until stable."""
    items = sorted((x for x in items if x.term >= 0), key=lambda x: (-x.term, -x.size, x.key))
    chosen, used = [], 0.0
    for x in items:
        if used + x.size <= cap:
            chosen.append(x)
            used += x.size
    improved = True
    while improved:
        improved = False
        outside = [x for x in items if x not in chosen]
        for y in outside:
            if used + y.size <= cap:
                trial = chosen + [y]
                if _better(trial, chosen):
                    chosen, used, improved = trial, used + y.size, True
                    break
            for x in chosen:
                if used - x.size + y.size <= cap:
                    trial = [c for c in chosen if c is not x] + [y]
                    if _better(trial, chosen):
                        chosen, used, improved = trial, used - x.size + y.size, True
                        break
            if improved:
                break
    return chosen


def optimize(requests, availables, Q, c_hat, d_max, bandwidth, alpha=1.0, beta=1.0, mode="per_exchange",
             exact_limit: int = 20) -> ExchangePlan:
    """Pick the exchange set with the highest objective.

    Ties go to the larger total size, then to the lexicographically smaller
    list of (receiver, provider, request, availability) keys. The result is
    a pure function of the inputs, so every replica computes the same plan.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    cands = candidates(requests, availables, Q, c_hat, d_max, bandwidth, alpha, beta)
    chosen = []
    if mode == "per_exchange":
        chosen = [x for x in cands if x.term >= 0]
    else:
        groups = {}
        for x in cands:
            groups.setdefault(x.receiver, []).append(x)
        for i in sorted(groups):
            cap = d_max * c_hat[i]
            solver = _exact_group if len(groups[i]) <= exact_limit else _greedy_group
            chosen += solver(groups[i], cap)
    chosen.sort(key=lambda x: x.key)
    return ExchangePlan(tuple(chosen), objective(chosen, Q, alpha, beta), mode)


def check_feasible(plan: ExchangePlan, c_hat, d_max, bandwidth, mode=None) -> list:
    """Every violated constraint, as readable strings. Empty means feasible."""
    mode = mode or plan.mode
    problems = []
    totals = {}
    for x in plan.exchanges:
        cap = d_max * c_hat.get(x.receiver, 0.0)
        if x.size > cap * (1 + 1e-12):
            problems.append(f"{x.key}: size {x.size} exceeds compute bound {cap}")
        bw = link_bandwidth(bandwidth, x.receiver, x.provider)
        if bw is None or x.size > bw * (1 + 1e-12):
            problems.append(f"{x.key}: size {x.size} exceeds bandwidth {bw}")
        totals[x.receiver] = totals.get(x.receiver, 0.0) + x.size
    if mode == "aggregate":
        for i, tot in totals.items():
            cap = d_max * c_hat.get(i, 0.0)
            if tot > cap * (1 + 1e-9):
                problems.append(f"{i}: total intake {tot} exceeds compute bound {cap}")
    return problems


def admit_forward(relay_view_of_chain, stamp_digest: str) -> bool:
    """Relay rule: forward only data whose sample digest is on the canonical chain.

    ``relay_view_of_chain`` is either one chain (a list of blocks) or a
    collection of competing branches.
    """
    from .chain import Block, registered_exchange_digests, select_canonical

    view = list(relay_view_of_chain)
    if not view:
        return False
    if isinstance(view[0], Block):
        chain = view
    else:
        chain = select_canonical(view)
    return stamp_digest in registered_exchange_digests(chain)


def write_plan_csv(path_or_file, rows):
    """rows: iterable of (epoch, Exchange). Columns: epoch, receiver, provider, type, size, term_value."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "receiver", "provider", "type", "size", "term_value"])
        for epoch, x in rows:
            w.writerow([epoch, x.receiver, x.provider, x.type, repr(float(x.size)), repr(x.term)])
    finally:
        if own:
            fh.close()


def load_instance(section: Mapping):
    """Build optimize() arguments from a scenario's ``[allocation]`` table."""
    reqs = [DataRequest(r["requester"], r["type"], r["max_size"], r["min_res"], r["max_res"])
            for r in section.get("requests", [])]
    avs = [AvailableData(a["provider"], a["type"], a["max_size"], a["min_res"], a["max_res"])
           for a in section.get("available", [])]
    bw = {}
    for link in section.get("bandwidth", []):
        bw[(link["a"], link["b"])] = float(link["bw"])
    return {
        "requests": reqs, "availables": avs, "Q": dict(section.get("quality", {})),
        "c_hat": dict(section.get("c_hat", {})), "d_max": float(section.get("d_max", 1.0)),
        "bandwidth": bw, "alpha": float(section.get("alpha", 1.0)), "beta": float(section.get("beta", 1.0)),
        "mode": section.get("mode", "per_exchange"),
    }
