"""Command line: ``swarmchain run | calibrate | bench``.

Exit codes: 0 ok, 1 runtime failure, 2 bad input.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import chain as ch
from . import estimator as est
from . import pow as pw
from . import quality as qu
from . import scenario as sc
from .encoding import canonical_json
from .errors import InsufficientCalibration, ScenarioError, SwarmChainError

OUT_ENV = "SWARMCHAIN_OUT"
DEFAULT_FEE_SIZES = (20, 1080, 2160, 4320, 8640)
FORMAT_VERSION = "1"


class InputError(Exception):
    """Bad command-line input; reported with exit code 2."""


@dataclass
class RunReport:
    scenario: str
    seed: int
    epochs: int
    chain_digest: str
    state_digest: str
    files: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(x):
    return repr(float(x)) if isinstance(x, float) else x


def cmd_run(scenario_path, seed=None, epochs=None, out=None) -> RunReport:
    try:
        scen = sc.load(scenario_path)
    except ScenarioError as e:
        raise InputError(f"{e} (key: {e.key})") from e
    seed = scen.seed if seed is None else seed
    epochs = scen.epochs if epochs is None else epochs
    if epochs < 0:
        raise InputError("--epochs must be >= 0")
    out = Path(out or os.environ.get(OUT_ENV) or "swarmchain-out")
    out.mkdir(parents=True, exist_ok=True)

    world = scen.world(seed)
    traces = world.run(epochs)

    files = {}

    def emit(name):
        files[name] = str(out / name)
        return out / name

    emit("chain.jsonl").write_text(ch.export_snapshot(world.chain))
    with open(emit("trace.jsonl"), "w") as fh:
        for t in traces:
            rec = t.to_record()
            rec["digest"] = t.digest()
            fh.write(canonical_json(rec).decode() + "\n")
    _write_csv(emit("estimates.csv"), ["epoch", "node_id", "c_hat"],
               [[t.epoch, n, _num(c)] for t in traces for n, c in sorted(t.estimates.items())])
    _write_csv(emit("plan.csv"), ["epoch", "receiver", "provider", "type", "size", "term_value"],
               [[t.epoch, *(_num(v) for v in row)] for t in traces for row in t.plan])
    _write_csv(emit("quality.csv"), ["epoch", "node_id", "q"],
               [[t.epoch, n, _num(q)] for t in traces for n, q in sorted(t.quality.items())])
    sizes = scen.outputs.get("fee_table", DEFAULT_FEE_SIZES)
    _write_csv(emit("fee_table.csv"), ["payload_bytes", "fee"],
               [[int(s), ch.fee_for_payload(int(s), scen.chain)] for s in sizes])
    cols = ["epoch", "t", "kind", "src", "dst", "at", "next", "bytes", "digest", "registered", "relayed"]
    _write_csv(emit("events.csv"), cols, [[_num(e.get(c, "")) for c in cols] for e in world.events])

    checks = {"relayed_unregistered_bytes": world.relayed_unregistered_bytes()}
    checks["relay_rule_ok"] = checks["relayed_unregistered_bytes"] == 0
    report = RunReport(scen.name, seed, epochs, world.chain[-1].digest.hex(), world.state.digest(), dict(files), checks)
    summary = {"format_version": FORMAT_VERSION, "scenario": scen.name, "seed": seed, "epochs": epochs,
               "chain_digest": report.chain_digest, "state_digest": report.state_digest,
               "height": world.state.height, "destroyed": world.destroyed, "checks": checks,
               "files": sorted(files)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    report.files["summary.json"] = str(out / "summary.json")
    return report


def cmd_calibrate(points_csv, weighting="ols", out=None, stream=None) -> qu.DensityModel:
    stream = stream or sys.stdout
    try:
        pts = qu.load_calibration_points(points_csv)
        model = qu.fit_density_models(pts, weighting, base=qu.default_model())
    except OSError as e:
        raise InputError(f"cannot read {points_csv}: {e.strerror}") from e
    except (ValueError, KeyError, InsufficientCalibration) as e:
        raise InputError(f"{points_csv}: {e}") from e
    classes = {p.feature_class for p in pts}
    for c in ("planar", "revolute"):
        if c not in classes:
            continue
        xs = [p.x for p in pts if p.feature_class == c]
        ys = [p.points for p in pts if p.feature_class == c]
        fit = qu.fit_line(xs, ys, weighting)
        print(f"{c}: slope={fit.slope:.4f} intercept={fit.intercept:.4f} r2={fit.r2:.5f} "
              f"max_rel_error={fit.max_rel_error:.4f} weighting={weighting}", file=stream)
        for x, y in zip(xs, ys):
            print(f"  x={x:g} points={y:g} fitted={fit(x):.2f} residual={y - fit(x):+.2f}", file=stream)
    if "composite" in classes:
        for chn, knots in sorted(model.composite.items()):
            print(f"composite channels={chn}: knots " + " ".join(f"({x:g},{y:g})" for x, y in knots), file=stream)
    if out:
        Path(out).write_text(json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n")
        print(f"model written to {out}", file=stream)
    return model


def cmd_bench(difficulty: int, duration: float, latencies=None, lanes: int = 1, stream=None) -> dict:
    stream = stream or sys.stdout
    if difficulty < 0:
        raise InputError("--difficulty must be >= 0")
    rate, hashes = pw.measure_hash_rate(duration, lanes)
    report = {"host": None, "ratios": []}
    print("# host measurement (wall clock, not reproducible)", file=stream)
    print("measured_hs,hashes,lanes,difficulty,expected_solve_s", file=stream)
    if hashes:
        expect = 2.0**difficulty / rate
        report["host"] = {"hash_rate": rate, "hashes": hashes, "lanes": lanes, "expected_solve_s": expect}
        print(f"{rate:.0f},{hashes},{lanes},{difficulty},{expect:.4f}", file=stream)
    if latencies:
        try:
            rows = est.load_calibration_csv(latencies)
        except OSError as e:
            raise InputError(f"cannot read {latencies}: {e.strerror}") from e
        except (ValueError, KeyError) as e:
            raise InputError(f"{latencies}: {e}") from e
        report["ratios"] = est.ratio_report(rows)
        print("# consistency ratios: hash rate x task latency (s)", file=stream)
        print("node_id,task,ratio,ratio_std,outlier", file=stream)
        for r in report["ratios"]:
            print(f"{r['node_id']},{r['task']},{r['ratio']:.6g},{r['ratio_std']:.6g},{int(r['outlier'])}", file=stream)
    return report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarmchain", description="Swarm ledger simulator and calibration tools")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario and write reports")
    r.add_argument("--scenario", required=True, help="scenario file, or the name of a bundled one")
    r.add_argument("--seed", type=int)
    r.add_argument("--epochs", type=int)
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./swarmchain-out)")
    c = sub.add_parser("calibrate", help="fit density models from calibration points")
    c.add_argument("--points", required=True)
    c.add_argument("--weighting", choices=("ols", "relative"), default="ols")
    c.add_argument("--out", help="write the fitted model as JSON")
    b = sub.add_parser("bench", help="measure host hash rate and consistency ratios")
    b.add_argument("--difficulty", type=int, required=True)
    b.add_argument("--duration", type=float, required=True)
    b.add_argument("--latencies")
    b.add_argument("--lanes", type=int, default=1)
    return p


def _resolve_scenario(arg: str) -> Path:
    path = Path(arg)
    if not path.exists() and arg in sc.bundled_names():
        return sc.bundled(arg)
    return path


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) and 2
    try:
        if args.command == "run":
            rep = cmd_run(_resolve_scenario(args.scenario), args.seed, args.epochs, args.out)
            print(f"{rep.scenario} seed={rep.seed} epochs={rep.epochs} chain={rep.chain_digest}")
            if not rep.checks["relay_rule_ok"]:
                print("relay rule violated", file=sys.stderr)
                return 1
        elif args.command == "calibrate":
            cmd_calibrate(args.points, args.weighting, args.out)
        else:
            cmd_bench(args.difficulty, args.duration, args.latencies, max(1, args.lanes))
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (SwarmChainError, OSError, ValueError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
