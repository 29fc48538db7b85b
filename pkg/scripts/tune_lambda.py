"""Pick the IA regularization weight per regime by median SHD on held-out seeds.

Usage: python3 scripts/tune_lambda.py --regimes 5,20 --methods ia-bs --runs 3 --out tune.csv
"""

import argparse
import csv
import sys
import time
from dataclasses import replace

import numpy as np

from specgraph.evaluation import ExperimentConfig, MethodSpec, cell_seed, default_methods, estimate_csd, run_method
from specgraph.graph import extract_kpcg, shd
from specgraph.synth import ground_truth_kpcg, reference_structure
from specgraph.tensor_core import FrequencyPartition, n_frequencies

GRID = (0.001, 0.01, 0.05, 0.1, 0.3, 0.5, 0.7, 1.0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--regimes", default="5,10,20,50,100,1000")
    ap.add_argument("--methods", default="ia-bs,ia-gs")
    ap.add_argument("--grid", default=",".join(map(str, GRID)))
    ap.add_argument("--runs", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1, help="held-out seed, distinct from the evaluation seed")
    ap.add_argument("--out", default="tune_lambda.csv")
    args = ap.parse_args(argv)

    cfg = ExperimentConfig(seed=args.seed, runs=args.runs)
    structure = reference_structure()
    m = n_frequencies(cfg.t)
    partition = FrequencyPartition.equal(cfg.k, m)
    truth = ground_truth_kpcg(structure, partition)
    by_kind = {ms.kind: ms for ms in default_methods()}
    methods = [by_kind[k] for k in args.methods.split(",")]
    grid = [float(x) for x in args.grid.split(",")]

    rows = []
    for regime in map(int, args.regimes.split(",")):
        for run in range(args.runs):
            smoothed = estimate_csd(structure, cfg.t, cell_seed(cfg.seed, regime, run), regime, cfg.half_size, cfg.chunk)
            for method in methods:
                for lam in grid:
                    spec = replace(method, lam={regime: lam})
                    start = time.perf_counter()
                    inv, _, iters, conv = run_method(spec, smoothed, partition, truth.cardinalities(), regime)
                    score = shd(extract_kpcg(inv, partition, cfg.threshold), truth)
                    rows.append((method.kind, regime, run, lam, score, iters, conv, time.perf_counter() - start))
                    print(*rows[-1], sep=",", flush=True)

    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "regime", "run", "lambda", "shd", "iterations", "converged", "wall_time_s"])
        w.writerows(rows)

    print("\nbest lambda (median SHD; ties resolved to the middle of the tied grid values):")
    for kind in dict.fromkeys(r[0] for r in rows):
        for regime in sorted({r[1] for r in rows}):
            med = {lam: np.median([r[4] for r in rows if r[0] == kind and r[1] == regime and r[3] == lam]) for lam in grid}
            low = min(med.values())
            tied = sorted(lam for lam in grid if med[lam] == low)
            best = tied[(len(tied) - 1) // 2]
            print(f"  {kind} N={regime}: lambda={best} median SHD={med[best]}  all={med}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
