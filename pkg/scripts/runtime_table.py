"""Median wall time of OAMP and CG-OAMP against the receive dimension M."""
import argparse
from pathlib import Path

import numpy as np

from cgoamp.harness import ExperimentConfig, loglog_slope, run_runtime_bench, write_bench_csv

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="64,128,256,512")
    ap.add_argument("--output", default="results/runtime.csv")
    args = ap.parse_args()
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    sizes = [int(s) for s in args.sizes.split(",")]
    cfg = ExperimentConfig(nr=4, L=4, bench_sizes=sizes)
    recs = run_runtime_bench(cfg)
    write_bench_csv(recs, args.output)
    print(f"{'detector':10s} {'stage':7s} " + " ".join(f"M={m:<8d}" for m in sizes) + " slope")
    for det in ("oamp", "cg-oamp"):
        for stage in ("le", "detect"):
            t = [r.median_s for r in recs if r.detector == det and r.stage == stage]
            print(f"{det:10s} {stage:7s} " + " ".join(f"{x:<10.4g}" for x in t)
                  + f" {loglog_slope(np.array(sizes), t):.2f}")
