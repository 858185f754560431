"""Reproduce the fee table, the consistency ratios and the density fits.

    python3 scripts/reproduce_tables.py [--out DIR]

Prints each table and, with --out, writes them as CSV files.
"""
import argparse
import csv
import io
from pathlib import Path

from swarmchain import chain as ch
from swarmchain import cli
from swarmchain import quality as qu

DATA = Path(__file__).resolve().parents[1] / "src" / "swarmchain" / "data"


def fee_rows():
    return [(size, ch.fee_for_payload(size)) for size in (20, 1080, 2160, 4320, 8640)]


def ratio_rows(fixture):
    rep = cli.cmd_bench(0, 0.0, DATA / fixture, stream=io.StringIO())
    return [(r["task"], r["node_id"], r["ratio"], r["ratio_std"], int(r["outlier"])) for r in rep["ratios"]]


def density_rows():
    model = qu.default_model()
    rows = []
    for p in qu.default_calibration_points():
        stamp = qu.DataStamp("x", "pointcloud", p.feature_class, 1, (0.0, 0.0), channels=p.channels,
                             extent_m=p.x if p.feature_class == "planar" else None,
                             distance_m=None if p.feature_class == "planar" else p.x)
        fitted = qu.expected_point_count(model, stamp)
        rows.append((p.feature_class, p.channels, p.x, p.points, fitted, fitted / p.points - 1))
    return rows


def show(title, header, rows):
    print(f"\n{title}")
    print("  " + ", ".join(header))
    for r in rows:
        print("  " + ", ".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in r))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out")
    args = ap.parse_args()
    tables = {
        "fee_table": (("payload_bytes", "fee"), fee_rows()),
        "ratios_tables": (("task", "node_id", "ratio", "ratio_std", "outlier"), ratio_rows("tables_calibration.csv")),
        "ratios_figures": (("task", "node_id", "ratio", "ratio_std", "outlier"), ratio_rows("figure_pairs.csv")),
        "density": (("feature_class", "channels", "x", "points", "fitted", "rel_error"), density_rows()),
    }
    for name, (header, rows) in tables.items():
        show(name, header, rows)
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            with open(Path(args.out) / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)


if __name__ == "__main__":
    main()
