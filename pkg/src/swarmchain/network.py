"""Deterministic discrete-event simulation of a collaborating swarm.

One call to :meth:`World.run_epoch` plays a full protocol round:

1. admission of new nodes (PoW puzzle plus link probe)
2. mining window, epoch reports with stamps, requests and offers
3. stamp comparisons by capable peers, decided by stake-weighted vote
4. compute estimation over everyone's proof history
5. exchange planning, on-chain registration, data transfer over links
6. receipt checks, then minting and demurrage inside the sealed block

Everything random is drawn from generators keyed by (seed, epoch, purpose,
node index), so a run is a pure function of scenario and seed.
"""
from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import allocation as al
from . import chain as ch
from . import estimator as est
from . import pow as pw
from . import quality as qu
from .encoding import canonical_json, sha256
from .errors import (AdmissionTimeout, Incomparable, NoEligibleNodes, NoLink, NoProof,
                     SwarmChainError, UnknownChannelCount)

BEHAVIORS = ("honest", "counterfeit_data", "lazy_miner", "data_leech")

# generator purposes
_JOIN, _MINE, _STAMP, _POS, _SHARD, _PROBE = range(6)


@dataclass(frozen=True)
class SimNode:
    node_id: str
    hash_rate: float
    position: tuple = (0.0, 0.0)
    sensors: tuple = ()       # AvailableData templates, provider field ignored
    needs: tuple = ()         # DataRequest templates, requester field ignored
    behavior: str = "honest"
    online_schedule: tuple = ()   # ((start, end), ...) half-open; empty = always
    channels: int = 16
    position_error: float = 1.0
    effort: float | None = None

    def __post_init__(self):
        if self.hash_rate <= 0:
            raise ValueError(f"{self.node_id}: hash_rate must be positive")
        if self.behavior not in BEHAVIORS:
            raise ValueError(f"{self.node_id}: unknown behavior {self.behavior!r}")

    def online(self, epoch: int) -> bool:
        if not self.online_schedule:
            return True
        return any(a <= epoch < b for a, b in self.online_schedule)

    @property
    def mining_effort(self) -> float:
        if self.effort is not None:
            return self.effort
        return 0.5 if self.behavior == "lazy_miner" else 1.0


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    bandwidth: float
    latency: float = 0.0

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError("link bandwidth must be positive")
        if self.latency < 0:
            raise ValueError("link latency must be >= 0")


@dataclass(frozen=True)
class Feature:
    feature_id: str
    feature_class: str
    position: tuple
    extent_m: float | None = None


@dataclass(frozen=True)
class Shard:
    kind: str
    members: tuple
    region: tuple | None = None


@dataclass
class SimConfig:
    pow_mode: str = "simulated"
    mining_window: float | None = None
    grid_size: float = 100.0
    random_shards: int = 1
    validator_threshold: float = 0.2
    max_validators: int = 16
    stamp_noise: float = 0.03
    location_noise: float = 0.2
    sensing_range: float = 20.0
    counterfeit_low: tuple = (0.2, 0.45)
    counterfeit_high: tuple = (1.8, 3.0)
    bytes_per_hash_unit: float = 1.0
    probe_noise: float = 0.0
    allocation_mode: str = "per_exchange"
    history_limit: int = 64
    fee_table_payloads: tuple = ()


@dataclass
class EpochTrace:
    epoch: int
    admitted: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    proofs: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)
    d_max: float = 0.0
    stamps: list = field(default_factory=list)
    comparisons: list = field(default_factory=list)
    plan: list = field(default_factory=list)
    objective: float = 0.0
    exchanges_registered: int = 0
    transfers: list = field(default_factory=list)
    negative_receipts: list = field(default_factory=list)
    minted: dict = field(default_factory=dict)
    expired: int = 0
    quality: dict = field(default_factory=dict)
    suspects: list = field(default_factory=list)
    indistinguishable: list = field(default_factory=list)
    shards: dict = field(default_factory=dict)
    tip: str = ""
    state_digest: str = ""
    destroyed: bool = False
    skips: list = field(default_factory=list)

    def to_record(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def digest(self) -> str:
        return sha256(canonical_json(self.to_record())).hex()


def deliver(send_time: float, link: Link | None, size: float) -> float:
    """Arrival time of ``size`` bytes sent over ``link``."""
    if link is None:
        raise NoLink("no link between the endpoints")
    return send_time + link.latency + size / link.bandwidth


class EventQueue:
    """Min-heap of (time, sequence, event); equal times pop in push order."""

    def __init__(self):
        self._heap = []
        self._seq = 0

    def push(self, time: float, event):
        heapq.heappush(self._heap, (time, self._seq, event))
        self._seq += 1

    def pop(self):
        t, _, ev = heapq.heappop(self._heap)
        return t, ev

    def __len__(self):
        return len(self._heap)


def assign_shards(nodes: Sequence[SimNode], grid_size: float, seed, n_random: int = 1) -> dict:
    """Spatial shards by grid cell and randomized shards by seeded shuffle."""
    spatial = {}
    for n in sorted(nodes, key=lambda n: n.node_id):
        cell = (math.floor(n.position[0] / grid_size), math.floor(n.position[1] / grid_size))
        spatial.setdefault(cell, []).append(n.node_id)
    ids = sorted(n.node_id for n in nodes)
    order = np.random.default_rng(seed).permutation(len(ids)) if ids else []
    shuffled = [ids[i] for i in order]
    k = max(1, min(n_random, len(ids))) if ids else 1
    groups = [list(g) for g in np.array_split(np.array(shuffled, dtype=object), k)] if ids else []
    return {
        "spatial": [Shard("spatial", tuple(m), cell) for cell, m in sorted(spatial.items())],
        "random": [Shard("randomized", tuple(str(x) for x in g)) for g in groups],
    }


def join(node: SimNode, epoch_seed: bytes, config: ch.ChainConfig, rng=None, live: bool = False) -> pw.Proof:
    """Admission puzzle at full difficulty within the configured timeout."""
    puzzle = pw.derive_puzzle(node.node_id, epoch_seed, config.pow_difficulty_bits)
    try:
        if live:
            budget = max(1, int(node.hash_rate * config.pow_timeout))
            proof = pw.solve(puzzle, budget, config.pow_timeout, node.hash_rate)
            if not proof.is_full:
                raise NoProof("only a partial proof")
            return proof
        return pw.simulate_first_full(puzzle, node.hash_rate, config.pow_timeout, rng)
    except NoProof as e:
        raise AdmissionTimeout(f"{node.node_id}: {e}") from e


def pos_sample(candidates: Sequence[str], stake: Mapping[str, int], k: int, rng) -> list:
    """Weighted sampling without replacement, weight 1 + confirmed stamps."""
    pool = sorted(candidates)
    chosen = []
    while pool and len(chosen) < k:
        w = np.array([1.0 + stake.get(c, 0) for c in pool])
        idx = int(rng.choice(len(pool), p=w / w.sum()))
        chosen.append(pool.pop(idx))
    return chosen


class World:
    def __init__(self, nodes, links, features, chain_config: ch.ChainConfig, sim_config: SimConfig | None = None,
                 quality_config: qu.QualityConfig | None = None, model: qu.DensityModel | None = None,
                 seed: int = 0, name: str = "scenario"):
        self.name = name
        self.nodes = {n.node_id: n for n in nodes}
        self.order = sorted(self.nodes)
        self.index = {nid: i for i, nid in enumerate(self.order)}
        self.links = {}
        for l in links:
            if l.a not in self.nodes or l.b not in self.nodes:
                raise ValueError(f"link {l.a}-{l.b} names an unknown node")
            self.links[(l.a, l.b)] = l
            self.links[(l.b, l.a)] = l
        self.features = list(features)
        self.sim = sim_config or SimConfig()
        if self.sim.pow_mode not in ("simulated", "live"):
            raise ValueError("pow_mode must be simulated or live")
        if self.sim.pow_mode == "simulated":
            chain_config.accept_simulated_proofs = True
        self.config = chain_config
        self.qconfig = quality_config or qu.QualityConfig()
        self.model = model or qu.default_model()
        self.seed = seed
        g, self.state = ch.genesis(chain_config)
        self.chain = [g]
        self.epoch = 0
        self.admitted = set(self.state.admitted)
        self.rejected = set()
        self.measured = {}
        self.histories = {}
        self.ledgers = {}
        self.own_stamps = {}
        self.pending_receipts = []
        self.estimate = None
        self.events = []
        self.traces = []
        self.destroyed = False
        self.was_active = False
        self.mint_log = []
        self.spend_log = []

    # -- helpers -------------------------------------------------------
    def rng(self, purpose: int, k: int = 0):
        return np.random.default_rng([self.seed, self.epoch, purpose, k])

    @property
    def window(self) -> float:
        return self.sim.mining_window or self.config.pow_timeout

    def confirmed(self) -> dict:
        out = {}
        for led in self.ledgers.values():
            for n, c in led.confirmed.items():
                out[n] = out.get(n, 0) + c
        return out

    def global_q(self) -> dict:
        q = qu.global_quality(self.ledgers.values(), self.qconfig)
        for n in self.admitted:
            q.setdefault(n, self.qconfig.q_min)
        return q

    def union_graph(self):
        nodes, edges = set(), set()
        for led in self.ledgers.values():
            nodes |= led.members
            edges |= led.edges
        return nodes, edges

    def cell_of(self, node_id: str):
        x, y = self.nodes[node_id].position
        g = self.sim.grid_size
        return (math.floor(x / g), math.floor(y / g))

    def ledger_for(self, node_id: str) -> qu.QualityLedger:
        cell = self.cell_of(node_id)
        return self.ledgers.setdefault(cell, qu.QualityLedger())

    def _update(self, node_id, event):
        cell = self.cell_of(node_id)
        self.ledgers[cell] = qu.update_quality(self.ledger_for(node_id), event, self.qconfig)

    def path(self, src: str, dst: str):
        """Fewest-hop route over probed links between admitted nodes."""
        if src == dst:
            return [src]
        prev = {src: None}
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for v in self.order:
                    if v in prev or v not in self.admitted or (u, v) not in self.measured:
                        continue
                    prev[v] = u
                    if v == dst:
                        route = [v]
                        while prev[route[-1]] is not None:
                            route.append(prev[route[-1]])
                        return route[::-1]
                    nxt.append(v)
            frontier = nxt
        return None

    def path_bandwidth(self) -> dict:
        bw = {}
        live = [n for n in self.order if n in self.admitted]
        for i in live:
            for j in live:
                if i == j:
                    continue
                route = self.path(j, i)
                if route:
                    bw[(i, j)] = min(self.measured[(a, b)] for a, b in zip(route, route[1:]))
        return bw

    # -- protocol steps -------------------------------------------------
    def _admissions(self, trace, txs):
        for nid in self.order:
            node = self.nodes[nid]
            if nid in self.admitted or nid in self.rejected or not node.online(self.epoch):
                continue
            try:
                proof = join(node, self.state.tip, self.config, self.rng(_JOIN, self.index[nid]),
                             live=self.sim.pow_mode == "live")
            except AdmissionTimeout:
                self.rejected.add(nid)
                trace.rejected.append(nid)
                continue
            txs.append(ch.Transaction(ch.TxKind.JOIN, nid, {"proof": proof.to_dict()}))
            self.admitted.add(nid)
            trace.admitted.append(nid)
            probe = self.rng(_PROBE, self.index[nid])
            for other in self.order:
                link = self.links.get((nid, other))
                if link is None or other not in self.admitted:
                    continue
                noise = 1.0 + self.sim.probe_noise * float(probe.standard_normal())
                cap = max(link.bandwidth * noise, 1e-9)
                self.measured[(nid, other)] = cap
                self.measured[(other, nid)] = cap

    def _observe(self, node: SimNode, rng) -> list:
        stamps = []
        for f in self.features:
            dist = math.dist(node.position, f.position)
            if dist > self.sim.sensing_range:
                continue
            loc = (f.position[0] + self.sim.location_noise * float(rng.standard_normal()),
                   f.position[1] + self.sim.location_noise * float(rng.standard_normal()))
            kw = dict(producer=node.node_id, data_type="pointcloud", feature_class=f.feature_class,
                      point_count=1, location=loc, location_error=node.position_error,
                      channels=node.channels, epoch=self.epoch)
            if f.feature_class == "planar":
                kw["extent_m"] = f.extent_m
            else:
                kw["distance_m"] = round(dist, 3)
            try:
                truth = qu.expected_point_count(self.model, qu.DataStamp(**kw))
            except UnknownChannelCount:
                continue
            factor = 1.0 + self.sim.stamp_noise * float(rng.standard_normal())
            if node.behavior == "counterfeit_data":
                lo, hi = self.sim.counterfeit_low if rng.random() < 0.5 else self.sim.counterfeit_high
                factor = float(rng.uniform(lo, hi))
            kw["point_count"] = max(1, int(round(truth * factor)))
            stamps.append(qu.DataStamp(**kw))
        return stamps

    def _mine_and_report(self, trace, txs):
        reporters = {}
        for nid in self.order:
            node = self.nodes[nid]
            if nid not in self.admitted or not node.online(self.epoch) or nid in self.config.infrastructure_nodes:
                continue
            puzzle = pw.derive_puzzle(nid, self.state.tip, self.config.pow_difficulty_bits)
            try:
                if self.sim.pow_mode == "live":
                    outcome = pw.mine_window(puzzle, node.hash_rate, self.window, node.mining_effort)
                else:
                    outcome = pw.simulate_window(puzzle, node.hash_rate, self.window,
                                                 self.rng(_MINE, self.index[nid]), node.mining_effort)
            except NoProof:
                trace.skips.append([nid, "no proof"])
                continue
            hist = self.histories.get(nid, est.ProofHistory(nid))
            hist = hist.append(est.HistoryEntry.from_outcome(self.epoch, outcome)).tail(self.sim.history_limit)
            self.histories[nid] = hist
            stamps = [] if node.behavior == "data_leech" else self._observe(node, self.rng(_STAMP, self.index[nid]))
            for s in stamps:
                self.own_stamps.setdefault(nid, []).append(s)
            self.own_stamps[nid] = self.own_stamps.get(nid, [])[-32:]
            payload = {
                "proof": outcome.proof.to_dict(), "share_bits": outcome.share_bits,
                "share_count": outcome.share_count, "window": outcome.window,
                "stamps": [s.digest for s in stamps], "stamp_records": [s.to_dict() for s in stamps],
                "requests": [[r.type, r.max_size, r.min_res, r.max_res] for r in node.needs],
                "available": [] if node.behavior == "data_leech"
                else [[a.type, a.max_size, a.min_res, a.max_res] for a in node.sensors],
                "position": list(node.position), "position_error": node.position_error,
            }
            if outcome.shares:
                payload["shares"] = list(outcome.shares)
            txs.append(ch.Transaction(ch.TxKind.EPOCH_REPORT, nid, payload))
            reporters[nid] = stamps
            trace.proofs[nid] = {"bits": outcome.proof.achieved_bits, "shares": outcome.share_count,
                                 "full": outcome.proof.is_full}
            trace.stamps += [s.digest for s in stamps]
        return reporters

    def _reference(self, validator: str, stamp: qu.DataStamp):
        best = None
        for s in reversed(self.own_stamps.get(validator, [])):
            if s.data_type == stamp.data_type and s.feature_class == stamp.feature_class \
                    and qu.locations_overlap(s, stamp):
                if best is None or s.epoch > best.epoch:
                    best = s
        return best

    def _vote(self, validator: str, stamp: qu.DataStamp, ref: qu.DataStamp):
        vnode = self.nodes[validator]
        if vnode.behavior == "counterfeit_data":
            producer_bad = self.nodes[stamp.producer].behavior == "counterfeit_data"
            outcome = qu.Outcome.MATCH if producer_bad else qu.Outcome.MISMATCH
            return qu.ComparisonResult(outcome, 1.0, validator, stamp.producer)
        return qu.compare_stamps(stamp, ref, self.model, self.config.stamp_tolerance, validator=validator)

    def _comparisons(self, trace, txs, reporters, proposer):
        stake = self.confirmed()
        est_c = self.estimate.c_hat if self.estimate else {}
        online = [n for n in self.order if n in self.admitted and self.nodes[n].online(self.epoch)]
        k = 0
        for producer in sorted(reporters):
            for stamp in reporters[producer]:
                k += 1
                cell = self.cell_of(producer)
                eligible = {}
                for v in online:
                    if v == producer or self.cell_of(v) != cell:
                        continue
                    if v in est_c and est_c[v] < self.sim.validator_threshold:
                        continue
                    ref = self._reference(v, stamp)
                    if ref is not None:
                        eligible[v] = ref
                if not eligible:
                    continue
                chosen = sorted(eligible)
                if len(chosen) > self.sim.max_validators:
                    chosen = sorted(pos_sample(chosen, stake, self.sim.max_validators, self.rng(_POS, k)))
                votes = []
                for v in chosen:
                    try:
                        res = self._vote(v, stamp, eligible[v])
                    except Incomparable:
                        continue
                    votes.append(res)
                    txs.append(ch.Transaction(ch.TxKind.STAMP_VALIDATION, v, {
                        "stamp_digest": stamp.digest, "reference_digest": eligible[v].digest,
                        "producer": producer, "outcome": res.outcome.value, "detail": res.detail,
                        "final": False}))
                if not votes:
                    continue
                weight = {}
                for r in votes:
                    weight[r.outcome] = weight.get(r.outcome, 0) + 1 + stake.get(r.validator, 0)
                priority = [qu.Outcome.MISMATCH, qu.Outcome.DENSITY_RELATION, qu.Outcome.MATCH]
                decided = max(priority, key=lambda o: (weight.get(o, -1), -priority.index(o)))
                lead = min((r for r in votes if r.outcome == decided),
                           key=lambda r: (-stake.get(r.validator, 0), r.validator))
                for r in votes:
                    if r.outcome != qu.Outcome.MISMATCH and r is not lead:
                        self.ledgers[cell] = qu.record_validation(self.ledger_for(producer), r)
                self._update(producer, lead)
                txs.append(ch.Transaction(ch.TxKind.STAMP_VALIDATION, proposer, {
                    "stamp_digest": stamp.digest, "producer": producer, "outcome": decided.value,
                    "detail": lead.detail, "final": True}))
                trace.comparisons.append({"stamp": stamp.digest, "producer": producer,
                                          "outcome": decided.value, "votes": len(votes)})

    def _plan(self, trace, reporters):
        if not self.histories:
            return None
        try:
            self.estimate = est.estimate(self.histories, self.config.window_min_proofs, self.sim.bytes_per_hash_unit)
        except NoEligibleNodes:
            return None
        trace.estimates = dict(self.estimate.c_hat)
        trace.d_max = self.estimate.d_max
        reqs, avs = [], []
        for nid in sorted(reporters):
            node = self.nodes[nid]
            reqs += [al.DataRequest(nid, r.type, r.max_size, r.min_res, r.max_res) for r in node.needs]
            if node.behavior != "data_leech":
                avs += [al.AvailableData(nid, a.type, a.max_size, a.min_res, a.max_res) for a in node.sensors]
        q = self.global_q()
        c_hat = {n: c for n, c in self.estimate.c_hat.items() if n in reporters}
        plan = al.optimize(reqs, avs, q, c_hat, self.estimate.d_max, self.path_bandwidth(),
                           self.config.alpha, self.config.beta, self.sim.allocation_mode)
        trace.plan = [[x.receiver, x.provider, x.type, x.size, x.term] for x in plan.exchanges]
        trace.objective = plan.objective_value
        return plan

    def _exchange_txs(self, plan, reporters, txs, trace):
        """DataExchange per planned exchange the provider can pay for."""
        samples = []
        balances = {n: self.state.accounts[n] for n in self.state.accounts}
        balances = ch.apply_demurrage(balances, self.epoch, self.config.demurrage_window)
        for x in plan.exchanges:
            own = [s for s in reporters.get(x.provider, []) if s.data_type == x.type]
            sample = own[0] if own else None
            registered = False
            if sample is not None:
                fee = ch.fee_for_payload(sample.payload_bytes, self.config)
                acc = balances.get(x.provider)
                if acc is not None and acc.spendable(self.epoch, self.config.demurrage_window) >= fee:
                    balances[x.provider], _ = acc.spend(fee, self.epoch, self.config.demurrage_window)
                    txs.append(ch.Transaction(ch.TxKind.DATA_EXCHANGE, x.provider, {
                        "stamp_digest": sample.digest, "recipients": [x.receiver], "size": x.size},
                        sample.payload_bytes, fee))
                    registered = True
                    trace.exchanges_registered += 1
            digest = sample.digest if sample is not None else \
                hashlib.sha256(f"{x.provider}:{x.receiver}:{self.epoch}".encode()).hexdigest()
            samples.append((x, digest, registered))
        return samples

    def _transfer(self, samples, trace):
        queue = EventQueue()
        t0 = self.window
        for x, digest, registered in samples:
            route = self.path(x.provider, x.receiver)
            if route is None:
                trace.skips.append([x.provider, f"no route to {x.receiver}"])
                continue
            queue.push(t0, (x, digest, route, 0))
        while queue:
            t, (x, digest, route, hop) = queue.pop()
            u, v = route[hop], route[hop + 1]
            relay = hop > 0
            if relay and not al.admit_forward(self.chain, digest):
                ev = {"epoch": self.epoch, "t": t, "kind": "refused", "src": x.provider, "dst": x.receiver,
                      "at": u, "bytes": 0, "digest": digest, "registered": False, "relayed": True}
                self.events.append(ev)
                trace.transfers.append([x.provider, x.receiver, 0, "refused"])
                continue
            link = self.links[(u, v)]
            measured = Link(u, v, self.measured[(u, v)], link.latency)
            arrival = deliver(t, measured, x.size)
            registered = digest in self.state.stamps
            self.events.append({"epoch": self.epoch, "t": arrival, "kind": "hop", "src": x.provider,
                                "dst": x.receiver, "at": u, "next": v, "bytes": x.size, "digest": digest,
                                "registered": registered, "relayed": relay})
            if hop + 2 < len(route):
                queue.push(arrival, (x, digest, route, hop + 1))
            else:
                trace.transfers.append([x.provider, x.receiver, x.size, "delivered"])
                if self.nodes[x.provider].behavior == "counterfeit_data":
                    receipt = qu.NegativeReceipt(x.receiver, x.provider, digest)
                    self._update(x.provider, receipt)
                    self.pending_receipts.append(receipt)
                    trace.negative_receipts.append([x.receiver, x.provider])

    def _seal(self, txs, proposer, trace):
        before = {n: {l.minted_epoch: l.amount for l in a.lots} for n, a in self.state.accounts.items()}
        expiring = sum(l.amount for a in self.state.accounts.values() for l in a.lots
                       if self.epoch - l.minted_epoch >= self.config.demurrage_window)
        block = ch.make_block(self.state.height + 1, self.state.tip, self.epoch, proposer, txs)
        self.state = ch.apply_block(self.state, block, self.config)
        self.chain.append(block)
        trace.expired = expiring
        for n, a in self.state.accounts.items():
            for l in a.lots:
                if l.minted_epoch == self.epoch and l.amount != before.get(n, {}).get(self.epoch, 0):
                    trace.minted[n] = l.amount
        trace.tip = block.digest.hex()
        trace.state_digest = self.state.digest()

    def live_count(self) -> int:
        live = {n for n in self.admitted if self.nodes[n].online(self.epoch)}
        if self.config.genesis_mode == "longevous":
            live |= set(self.config.infrastructure_nodes)
        return len(live)

    def run_epoch(self) -> EpochTrace:
        self.epoch += 1
        trace = EpochTrace(self.epoch)
        if self.destroyed:
            trace.destroyed = True
            self.traces.append(trace)
            return trace
        if self.config.genesis_mode == "ad_hoc" and self.was_active and self.live_count() < self.config.min_live_nodes:
            self.destroyed = True
            trace.destroyed = True
            self.traces.append(trace)
            return trace

        txs = []
        receipts, self.pending_receipts = self.pending_receipts, []
        self._admissions(trace, txs)
        if self.live_count() >= self.config.min_live_nodes:
            self.was_active = True
        for n in self.admitted:
            cell = self.cell_of(n) if n in self.nodes else None
            if cell is not None:
                self.ledgers[cell] = self.ledger_for(n).with_member(n, self.qconfig)
        shards = assign_shards([self.nodes[n] for n in self.order if n in self.admitted], self.sim.grid_size,
                               [self.seed, self.epoch, _SHARD], self.sim.random_shards)
        trace.shards = {"spatial": [list(s.members) for s in shards["spatial"]],
                        "random": [list(s.members) for s in shards["random"]]}

        reporters = self._mine_and_report(trace, txs)
        candidates = [n for n in self.order if n in self.admitted and self.nodes[n].online(self.epoch)]
        proposer = pos_sample(candidates, self.confirmed(), 1, self.rng(_POS, 0))[0] if candidates else "genesis"
        self._comparisons(trace, txs, reporters, proposer)
        plan = self._plan(trace, reporters)
        samples = self._exchange_txs(plan, reporters, txs, trace) if plan else []
        for r in receipts:
            if r.issuer in self.admitted:
                txs.append(ch.Transaction(ch.TxKind.NEGATIVE_RECEIPT, r.issuer,
                                          {"producer": r.producer, "stamp_digest": r.stamp_digest}))
        if proposer == "genesis":
            # nobody online to seal; the round produces no block
            trace.tip = self.state.tip.hex()
            trace.state_digest = self.state.digest()
        else:
            self._seal(txs, proposer, trace)
        self._transfer(samples, trace)

        trace.quality = {n: q for n, q in sorted(self.global_q().items())}
        report = qu.detect_coalitions(self.union_graph())
        trace.suspects = [sorted(c) for c in report.suspects]
        trace.indistinguishable = [sorted(c) for c in report.indistinguishable]
        self.traces.append(trace)
        return trace

    def run(self, epochs: int) -> list:
        return [self.run_epoch() for _ in range(epochs)]

    def relayed_unregistered_bytes(self) -> float:
        return sum(e["bytes"] for e in self.events if e.get("relayed") and not e.get("registered"))
