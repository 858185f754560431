"""Coalition detection as the counterfeit camp grows.

    python3 scripts/coalition_sweep.py [--nodes 10] [--seeds 20] [--epochs 10]

For k counterfeit nodes out of N, counts seeds where the counterfeit camp is
flagged, where the camps are reported indistinguishable, and where an honest
node ends up flagged.
"""
import argparse
import math

from swarmchain import scenario as sc

SENSOR = {"type": "pointcloud", "max_size": 400000, "min_res": 8, "max_res": 16}
NEED = {"type": "pointcloud", "max_size": 200000, "min_res": 8, "max_res": 32}
FEATURES = [{"id": "corner", "feature_class": "planar", "position": [14.0, 12.0], "extent_m": 2.2},
            {"id": "tree", "feature_class": "revolute", "position": [18.0, 16.0]},
            {"id": "car", "feature_class": "composite", "position": [12.0, 18.0]}]


def scenario(n, k):
    nodes = []
    for i in range(n):
        angle = 2 * math.pi * i / n
        bad = i >= n - k
        nodes.append({"id": f"c{i - (n - k)}" if bad else f"h{i}", "hash_rate": 100000 + 10000 * i,
                      "position": [15 + 6 * math.cos(angle), 15 + 6 * math.sin(angle)],
                      "behavior": "counterfeit_data" if bad else "honest"})
    return sc.parse({"name": f"sweep-{n}-{k}", "chain": {"pow_difficulty_bits": 16},
                     "sim": {"grid_size": 100.0}, "defaults": {"channels": 16, "sensors": [SENSOR], "needs": [NEED]},
                     "nodes": nodes, "features": FEATURES})


def main():
    ap = argparse.ArgumentParser(description="coalition detection sweep")
    ap.add_argument("--nodes", type=int, default=10)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=10)
    args = ap.parse_args()
    print("counterfeit,flagged,indistinguishable,honest_flagged,counterfeit_q_negative")
    for k in range(1, args.nodes // 2 + 1):
        scen = scenario(args.nodes, k)
        bad = {f"c{j}" for j in range(k)}
        flagged = indist = honest_flagged = q_neg = 0
        for seed in range(args.seeds):
            last = scen.world(seed).run(args.epochs)[-1]
            suspects = {n for group in last.suspects for n in group}
            flagged += suspects == bad
            indist += bool(last.indistinguishable)
            honest_flagged += bool(suspects - bad)
            q_neg += all(last.quality.get(c, 0.0) < 0 for c in bad)
        print(f"{k},{flagged},{indist},{honest_flagged},{q_neg}")


if __name__ == "__main__":
    main()
