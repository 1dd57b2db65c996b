"""BER against SNR on IID Rayleigh channels for every detector."""
import argparse
from pathlib import Path

from cgoamp.harness import ExperimentConfig, run_ber, write_csv
from cgoamp.trainer import load_params

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--params", help="trained parameters for the net detectors")
    ap.add_argument("--nr", type=int, default=8)
    ap.add_argument("--nt", type=int, default=8)
    ap.add_argument("--output", default="results/rayleigh_ber.csv")
    args = ap.parse_args()
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    dets = ["lmmse", "oamp", "cg-oamp"] + (["oamp-net", "cg-oamp-net"] if args.params else [])
    if args.nt <= 4:
        dets.append("ml")
    cfg = ExperimentConfig(nr=args.nr, nt=args.nt, snr_db=[0.0, 4.0, 8.0, 12.0, 16.0], detectors=dets)
    params = None
    if args.params:
        p = load_params(args.params)
        params = {"oamp-net": p, "cg-oamp-net": p}
    recs = run_ber(cfg, params)
    write_csv(recs, args.output)
    for r in recs:
        print(r.summary())
