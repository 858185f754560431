import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swarmchain import allocation as al
from swarmchain.errors import MissingQuality, TypeMismatch

TYPES = ("pointcloud", "image")


# independent oracle ----------------------------------------------------

def oracle_error(req, av):
    lo, hi = max(req.min_res, av.min_res), min(req.max_res, av.max_res)
    gap = max(0.0, lo - hi)
    width = ((req.max_res - req.min_res) + (av.max_res - av.min_res)) / 2
    g = 0.0 if gap == 0 else gap / width
    return 1.0 + g + max(0.0, req.max_size - av.max_size) / req.max_size


def oracle_candidates(inst):
    out = []
    for ri, r in enumerate(inst["requests"]):
        if r.requester not in inst["c_hat"]:
            continue
        for ai, a in enumerate(inst["availables"]):
            if a.provider == r.requester or a.type != r.type:
                continue
            bw = inst["bandwidth"].get((r.requester, a.provider), inst["bandwidth"].get((a.provider, r.requester)))
            if bw is None:
                continue
            size = min(r.max_size, a.max_size, inst["d_max"] * inst["c_hat"][r.requester], bw)
            term = inst["alpha"] * inst["Q"][a.provider] + inst["beta"] / oracle_error(r, a)
            out.append((r.requester, size, term))
    return out


def oracle_optimum(inst, mode):
    """Exhaustive search over every subset of candidates with numpy bit masks."""
    cands = oracle_candidates(inst)
    n = len(cands)
    if n == 0:
        return 0.0
    masks = ((np.arange(2**n)[:, None] >> np.arange(n)) & 1).astype(bool)
    terms = np.array([c[2] for c in cands])
    feasible = np.ones(len(masks), dtype=bool)
    if mode == "aggregate":
        for i in {c[0] for c in cands}:
            sizes = np.array([c[1] if c[0] == i else 0.0 for c in cands])
            feasible &= masks @ sizes <= inst["d_max"] * inst["c_hat"][i]
    vals = np.where(feasible, masks @ terms, -np.inf)
    top = vals.max()
    near = np.flatnonzero(vals >= top - 1e-9 * (1 + abs(top)))
    return max(math.fsum(terms[masks[k]]) for k in near)


def random_instance(rng, max_candidates=20):
    while True:
        nodes = [f"n{k}" for k in range(int(rng.integers(2, 6)))]
        reqs, avs = [], []
        for nid in nodes:
            for _ in range(int(rng.integers(0, 3))):
                lo = float(rng.integers(1, 20))
                reqs.append(al.DataRequest(nid, TYPES[int(rng.integers(0, 2))], float(rng.integers(1, 100)) * 1000,
                                           lo, lo + float(rng.integers(1, 10))))
            for _ in range(int(rng.integers(0, 3))):
                lo = float(rng.integers(1, 20))
                avs.append(al.AvailableData(nid, TYPES[int(rng.integers(0, 2))], float(rng.integers(1, 100)) * 1000,
                                            lo, lo + float(rng.integers(1, 10))))
        bw = {}
        for i, a in enumerate(nodes):
            for b in nodes[i + 1:]:
                if rng.random() < 0.85:
                    bw[(a, b)] = float(rng.integers(5, 100)) * 1000
        inst = {
            "requests": reqs, "availables": avs, "bandwidth": bw,
            "Q": {n: float(rng.choice([-3.0, -0.5, 0.01, 0.5, 1.0, 2.5, 7.0])) for n in nodes},
            "c_hat": {n: float(rng.uniform(0.05, 1.0)) for n in nodes},
            "d_max": float(rng.integers(20, 150)) * 1000,
            "alpha": float(rng.choice([0.0, 0.5, 1.0, 2.0])), "beta": float(rng.choice([0.5, 1.0, 3.0])),
        }
        if len(oracle_candidates(inst)) <= max_candidates:
            return inst


def run(inst, mode, **kw):
    args = {k: inst[k] for k in ("requests", "availables", "Q", "c_hat", "d_max", "bandwidth", "alpha", "beta")}
    args.update(kw)
    return al.optimize(mode=mode, **args)


# formula examples ------------------------------------------------------

def test_mismatch_error_examples():
    r = al.DataRequest("i", "image", 100_000, 10, 20)
    assert al.mismatch_error(r, al.AvailableData("j", "image", 200_000, 10, 20)) == 1.0
    assert al.mismatch_error(r, al.AvailableData("j", "image", 100_000, 30, 40)) == 2.0
    assert al.mismatch_error(r, al.AvailableData("j", "image", 50_000, 15, 25)) == 1.5
    with pytest.raises(TypeMismatch):
        al.mismatch_error(r, al.AvailableData("j", "radar", 1, 1, 2))


def test_mismatch_error_point_intervals():
    # zero-width intervals: the gap is measured relative to the resolution itself
    r = al.DataRequest("i", "image", 10, 5, 5)
    assert al.mismatch_error(r, al.AvailableData("j", "image", 10, 7, 7)) == pytest.approx(1 + 2 / 7)
    assert al.mismatch_error(r, al.AvailableData("j", "image", 10, 5, 5)) == 1.0


@given(st.floats(0, 100), st.floats(0, 50), st.floats(0, 100), st.floats(0, 50),
       st.floats(1, 1e6), st.floats(1, 1e6))
def test_mismatch_error_floor(r0, rw, a0, aw, rs, as_):
    e = al.mismatch_error(al.DataRequest("i", "t", rs, r0, r0 + rw), al.AvailableData("j", "t", as_, a0, a0 + aw))
    assert e >= 1.0


def test_request_validation():
    with pytest.raises(ValueError):
        al.DataRequest("i", "t", 10, 5, 1)
    with pytest.raises(ValueError):
        al.AvailableData("j", "t", 0, 1, 5)


def _x(provider, error):
    return al.Exchange("i", provider, "t", 0, 0, 1.0, error, 0.0)


def test_objective_examples():
    assert al.objective([], {}, 1, 1) == 0
    assert al.objective([_x("j", 1.0)], {"j": 2.0}, 1, 1) == 3.0
    two = [_x("j", 1.0), _x("k", 2.0)]
    assert al.objective(two, {"j": 2.0, "k": -1.0}, 1, 1) == 3.0 + (-1.0 + 0.5)
    with pytest.raises(MissingQuality):
        al.objective([_x("z", 1.0)], {}, 1, 1)


# optimizer examples ---------------------------------------------------

def test_single_exchange_plan():
    plan = al.optimize([al.DataRequest("i", "image", 1000, 1, 2)], [al.AvailableData("j", "image", 1000, 1, 2)],
                       {"j": 1.0}, {"i": 1.0}, 1e6, {("i", "j"): 1e6})
    assert len(plan.exchanges) == 1 and plan.exchanges[0].size == 1000
    assert plan.objective_value == 2.0


def test_honest_provider_preferred():
    req = [al.DataRequest("i", "image", 1000, 1, 2)]
    av = [al.AvailableData("bad", "image", 1000, 1, 2), al.AvailableData("good", "image", 1000, 1, 2)]
    inst = {"requests": req, "availables": av, "Q": {"bad": -3.0, "good": 2.0}, "c_hat": {"i": 1.0},
            "d_max": 1000.0, "bandwidth": {("i", "bad"): 1e6, ("i", "good"): 1e6}, "alpha": 5.0, "beta": 1.0}
    for mode in al.MODES:
        plan = run(inst, mode)
        assert [x.provider for x in plan.exchanges] == ["good"]
        assert plan.objective_value == oracle_optimum(inst, mode)


def test_three_by_three_fixture():
    nodes = ["a", "b", "c"]
    reqs = [al.DataRequest(n, "pointcloud", 50_000 + 10_000 * k, 8, 16) for k, n in enumerate(nodes)]
    avs = [al.AvailableData(f"p{k}", "pointcloud", 30_000 * (k + 1), 4 + 4 * k, 12 + 4 * k) for k in range(3)]
    bw = {(n, f"p{k}"): 40_000.0 for n in nodes for k in range(3)}
    inst = {"requests": reqs, "availables": avs, "Q": {"p0": 1.0, "p1": -0.5, "p2": 2.0},
            "c_hat": {"a": 1.0, "b": 0.6, "c": 0.3}, "d_max": 100_000.0, "bandwidth": bw, "alpha": 1.0, "beta": 1.0}
    assert len(oracle_candidates(inst)) == 9
    for mode in al.MODES:
        plan = run(inst, mode)
        assert plan.objective_value == oracle_optimum(inst, mode)
        assert al.check_feasible(plan, inst["c_hat"], inst["d_max"], bw, mode) == []


def test_missing_bandwidth_and_unknown_receiver_skip():
    req = [al.DataRequest("i", "image", 10, 1, 2), al.DataRequest("ghost", "image", 10, 1, 2)]
    av = [al.AvailableData("j", "image", 10, 1, 2), al.AvailableData("k", "image", 10, 1, 2)]
    plan = al.optimize(req, av, {"j": 1.0, "k": 1.0}, {"i": 1.0}, 100, {("j", "i"): 50.0})
    assert [(x.receiver, x.provider) for x in plan.exchanges] == [("i", "j")]


def test_greedy_path_large_group():
    rng = np.random.default_rng(0)
    reqs = [al.DataRequest("i", "image", float(rng.integers(1, 50)) * 1000, 1, 5) for _ in range(6)]
    avs = [al.AvailableData(f"p{k}", "image", float(rng.integers(1, 50)) * 1000, 1, 5) for k in range(5)]
    Q = {f"p{k}": float(rng.uniform(-1, 3)) for k in range(5)}
    bw = {("i", f"p{k}"): 1e9 for k in range(5)}
    plan = al.optimize(reqs, avs, Q, {"i": 0.5}, 100_000, bw, mode="aggregate", exact_limit=10)
    assert len(al.candidates(reqs, avs, Q, {"i": 0.5}, 100_000, bw, 1, 1)) == 30
    assert al.check_feasible(plan, {"i": 0.5}, 100_000, bw, "aggregate") == []
    exact = al.optimize(reqs, avs, Q, {"i": 0.5}, 100_000, bw, mode="aggregate", exact_limit=40)
    assert plan.objective_value <= exact.objective_value + 1e-12


def test_unknown_mode():
    with pytest.raises(ValueError):
        al.optimize([], [], {}, {}, 1, {}, mode="fractional")


# properties -----------------------------------------------------------

@pytest.mark.parametrize("mode", al.MODES)
def test_oracle_equivalence_sample(mode):
    rng = np.random.default_rng(123)
    for _ in range(40):
        inst = random_instance(rng, 14)
        assert run(inst, mode).objective_value == oracle_optimum(inst, mode)


@given(st.integers(0, 2**32 - 1), st.sampled_from(al.MODES))
@settings(max_examples=60)
def test_feasible_and_deterministic(seed, mode):
    inst = random_instance(np.random.default_rng(seed), 20)
    plan = run(inst, mode)
    assert al.check_feasible(plan, inst["c_hat"], inst["d_max"], inst["bandwidth"], mode) == []
    assert run(inst, mode) == plan


@given(st.integers(0, 2**32 - 1), st.sampled_from(al.MODES), st.floats(0.1, 10))
@settings(max_examples=60)
def test_weight_scaling_keeps_plan(seed, mode, k):
    inst = random_instance(np.random.default_rng(seed), 14)
    base = run(inst, mode)
    scaled = run(inst, mode, alpha=inst["alpha"] * k, beta=inst["beta"] * k)
    assert [x.key for x in scaled.exchanges] == [x.key for x in base.exchanges] or \
        scaled.objective_value == pytest.approx(base.objective_value * k, rel=1e-9)
    assert scaled.objective_value == pytest.approx(base.objective_value * k, rel=1e-9, abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.sampled_from(al.MODES))
@settings(max_examples=60)
def test_alpha_zero_ignores_quality(seed, mode):
    inst = random_instance(np.random.default_rng(seed), 14)
    inst["alpha"] = 0.0
    base = run(inst, mode)
    flipped = run(inst, mode, Q={n: -q * 3 + 1 for n, q in inst["Q"].items()})
    assert [x.key for x in flipped.exchanges] == [x.key for x in base.exchanges]


def _raise_bw(inst, rng):
    if not inst["bandwidth"]:
        return inst
    key = list(inst["bandwidth"])[int(rng.integers(0, len(inst["bandwidth"])))]
    bw = dict(inst["bandwidth"])
    bw[key] *= float(rng.uniform(1.0, 5.0))
    return {**inst, "bandwidth": bw}


def _raise_c(inst, rng):
    nodes = sorted(inst["c_hat"])
    n = nodes[int(rng.integers(0, len(nodes)))]
    c = dict(inst["c_hat"])
    c[n] = min(1.0, c[n] * float(rng.uniform(1.0, 5.0)))
    return {**inst, "c_hat": c}


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_monotone_per_exchange(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 16)
    base = run(inst, "per_exchange").objective_value
    assert run(_raise_bw(inst, rng), "per_exchange").objective_value >= base
    assert run(_raise_c(inst, rng), "per_exchange").objective_value >= base


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50)
def test_monotone_compute_aggregate(seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 16)
    base = run(inst, "aggregate").objective_value
    assert run(_raise_c(inst, rng), "aggregate").objective_value >= base


def test_aggregate_bandwidth_counterexample():
    """In aggregate mode a faster link can enlarge one transfer and crowd out another."""
    reqs = [al.DataRequest("i", "image", 60, 1, 2), al.DataRequest("i", "image", 40, 1, 2)]
    avs = [al.AvailableData("j", "image", 60, 1, 2)]
    inst = {"requests": reqs, "availables": avs, "Q": {"j": 1.0}, "c_hat": {"i": 1.0}, "d_max": 100.0,
            "bandwidth": {("i", "j"): 40.0}, "alpha": 1.0, "beta": 1.0}
    inst["d_max"] = 90.0
    before = run(inst, "aggregate").objective_value
    after = run({**inst, "bandwidth": {("i", "j"): 60.0}}, "aggregate").objective_value
    assert after < before
    assert after == oracle_optimum({**inst, "bandwidth": {("i", "j"): 60.0}}, "aggregate")


def test_plan_csv(tmp_path):
    x = al.Exchange("i", "j", "image", 0, 0, 1000.0, 1.0, 2.0)
    p = tmp_path / "plan.csv"
    al.write_plan_csv(p, [(3, x)])
    rows = list(csv.DictReader(open(p)))
    assert rows == [{"epoch": "3", "receiver": "i", "provider": "j", "type": "image", "size": "1000.0",
                     "term_value": "2.0"}]


def test_load_instance():
    section = {"requests": [{"requester": "i", "type": "image", "max_size": 10, "min_res": 1, "max_res": 2}],
               "available": [{"provider": "j", "type": "image", "max_size": 10, "min_res": 1, "max_res": 2}],
               "bandwidth": [{"a": "i", "b": "j", "bw": 100}], "quality": {"j": 1.0}, "c_hat": {"i": 1.0},
               "d_max": 50, "mode": "aggregate"}
    plan = al.optimize(**al.load_instance(section))
    assert plan.mode == "aggregate" and plan.exchanges[0].size == 10
