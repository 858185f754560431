"""How well the simulated PoW estimator recovers relative compute capacity.

    python3 scripts/estimator_recovery.py [--seeds 10] [--epochs 50] [--difficulty 20]

Runs the bundled ``estimator`` scenario for several seeds and reports, per
epoch checkpoint, the worst pairwise deviation of C-hat ratios from the true
hash-rate ratios.
"""
import argparse
import dataclasses

import numpy as np

from swarmchain import scenario as sc


def worst_pairwise(c_hat, rates):
    ids = [n for n in rates if n in c_hat]
    return max(abs((c_hat[a] / c_hat[b]) / (rates[a] / rates[b]) - 1) for a in ids for b in ids if a != b)


def main():
    ap = argparse.ArgumentParser(description="estimator recovery sweep")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--difficulty", type=int, default=20)
    args = ap.parse_args()

    scen = sc.load(sc.bundled("estimator"))
    scen.chain = dataclasses.replace(scen.chain, pow_difficulty_bits=args.difficulty)
    rates = {n.node_id: n.hash_rate for n in scen.nodes}
    checkpoints = [e for e in (10, 20, 30, 40, 50, 75, 100) if e <= args.epochs]
    table = np.full((args.seeds, len(checkpoints)), np.nan)
    for seed in range(args.seeds):
        traces = scen.world(seed).run(args.epochs)
        for k, e in enumerate(checkpoints):
            est = traces[e - 1].estimates
            if len(est) == len(rates):
                table[seed, k] = worst_pairwise(est, rates)
    print("epoch,median_worst_dev,max_worst_dev,seeds_within_10pct")
    for k, e in enumerate(checkpoints):
        col = table[:, k]
        print(f"{e},{np.nanmedian(col):.4f},{np.nanmax(col):.4f},{int(np.sum(col <= 0.10))}/{args.seeds}")


if __name__ == "__main__":
    main()
