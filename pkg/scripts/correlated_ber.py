"""BER under Kronecker receive/transmit correlation, T = 10."""
import argparse
from pathlib import Path
from dataclasses import replace

from cgoamp.harness import ExperimentConfig, run_ber, write_csv
from cgoamp.trainer import load_params

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--params", help="parameters trained at rho = 0.5")
    ap.add_argument("--output", default="results/correlated_ber.csv")
    args = ap.parse_args()
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    dets = ["lmmse", "oamp", "cg-oamp"] + (["oamp-net", "cg-oamp-net"] if args.params else [])
    base = ExperimentConfig(nr=8, nt=8, T=10, snr_db=[8.0, 12.0, 16.0, 20.0], detectors=dets)
    params = None
    if args.params:
        p = load_params(args.params)
        params = {"oamp-net": p, "cg-oamp-net": p}
    recs = []
    for sc, rho in (("rayleigh", 0.0), ("kronecker", 0.5), ("kronecker", 0.9)):
        recs += run_ber(replace(base, scenario=sc, rho=rho), params)
    write_csv(recs, args.output)
    for r in recs:
        print(r.summary())
