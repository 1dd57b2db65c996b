"""BER against the number of layers for OAMP, CG-OAMP and (optionally) the trained net."""
import argparse
from pathlib import Path

from cgoamp.harness import ExperimentConfig, run_convergence, write_csv
from cgoamp.trainer import load_params

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--params", help="trained parameters for cg-oamp-net")
    ap.add_argument("--output", default="results/convergence.csv")
    args = ap.parse_args()
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    dets = ["oamp", "cg-oamp"] + (["cg-oamp-net"] if args.params else [])
    cfg = ExperimentConfig(nr=8, nt=8, snr_db=[12.0], t_grid=list(range(1, 9)), detectors=dets)
    params = {"cg-oamp-net": load_params(args.params)} if args.params else None
    recs = run_convergence(cfg, params)
    write_csv(recs, args.output)
    for r in recs:
        print(r.summary())
