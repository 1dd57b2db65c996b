"""Train CG-OAMP-NET parameters for the IID and the correlated experiments."""
import argparse
import logging
from pathlib import Path

from cgoamp.channel import Scenario
from cgoamp.trainer import TrainConfig, save_params, train

RUNS = {
    "iid_8x8_T5.txt": TrainConfig(scenario=Scenario("rayleigh", 8, 8), T=5, snr_db=12.0, epochs=50,
                                  samples_per_epoch=2000, validation_samples=10_000, batch_size=500),
    "kron05_8x8_T10.txt": TrainConfig(scenario=Scenario("kronecker", 8, 8, rho=0.5), T=10, snr_db=20.0,
                                      epochs=50, samples_per_epoch=500, batch_size=100, seed=3),
}

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, cfg in RUNS.items():
        res = train(cfg)
        save_params(out / name, res.params)
        print(f"{name}: val BER {res.validation_ber_history[0]:.5f} -> "
              f"{min(res.validation_ber_history):.5f} (epoch {res.best_epoch})")
