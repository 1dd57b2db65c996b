"""Command-line entry point.

Every subcommand reads an optional flat ``key = value`` config file and then
applies ``--key value`` overrides (dashes or underscores both work).  Exit
codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .channel import ChannelRealization, TapFileError, save_taps
from .harness import (ConfigError, ExperimentConfig, build_config, load_config, loglog_slope,
                      run_ber, run_convergence, run_cpfree, run_runtime_bench, write_bench_csv,
                      write_csv, write_se_csv)
from .trainer import TrainConfig, save_params, train

SUBCOMMANDS = {
    "ber": "BER versus SNR for each detector",
    "converge": "BER versus layer count at the first SNR",
    "train": "tune the per-layer scalars and write a params file",
    "cpfree": "SCP, CP-free genie and CP-free feedback links plus spectral efficiency",
    "bench": "median wall time of the linear estimator and full detection versus M",
    "taps-convert": "convert .npy/.npz/.mat tap arrays to the CSV tap format",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _add_config_flags(p):
    p.add_argument("--config", help="flat key=value config file")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        names = [flag] if flag == "--" + f.name else [flag, "--" + f.name]
        p.add_argument(*names, dest=f.name, default=None, metavar="V", help=f.metadata.get("help") or None)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cgoamp", description="OAMP / CG-OAMP MIMO-OFDM detection experiments.")
    sub = p.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)
    for name, help_ in SUBCOMMANDS.items():
        sp = sub.add_parser(name, help=help_, description=help_)
        if name == "taps-convert":
            sp.add_argument("input", help=".npy, .npz or .mat file holding taps (count, L, nr, nt) or (L, nr, nt)")
            sp.add_argument("output", help="destination CSV tap file")
            sp.add_argument("--key", default=None, help="array name inside .npz/.mat (default: the only array)")
        else:
            _add_config_flags(sp)
    return p


def _resolve(args) -> ExperimentConfig:
    values = load_config(args.config) if args.config else {}
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name)
        if v is not None:
            values[f.name] = v
    return build_config(values)


def _emit(records, cfg: ExperimentConfig):
    for r in records:
        print(r.summary())
    if cfg.output:
        write_csv(records, cfg.output, timing=cfg.timing)
        print(f"wrote {cfg.output}")


def _cmd_ber(cfg):
    _emit(run_ber(cfg), cfg)


def _cmd_converge(cfg):
    _emit(run_convergence(cfg), cfg)


def _cmd_cpfree(cfg):
    records, se_rows = run_cpfree(cfg)
    _emit(records, cfg)
    for mode, det, snr, ber, se in se_rows:
        print(f"se {mode} {det} snr={snr:g}dB ber={ber:.4e} se={se:.4f}")
    if cfg.output:
        path = Path(cfg.output)
        se_path = path.with_name(path.stem + "_se" + path.suffix)
        write_se_csv(se_rows, se_path)
        print(f"wrote {se_path}")


def _cmd_bench(cfg):
    records = run_runtime_bench(cfg)
    for r in records:
        print(f"{r.detector} {r.stage} M={r.M} median={r.median_s:.4g}s")
    for det in sorted({r.detector for r in records}):
        for stage in ("le", "detect"):
            rs = [r for r in records if r.detector == det and r.stage == stage]
            if len(rs) > 1:
                slope = loglog_slope([r.M for r in rs], [r.median_s for r in rs])
                print(f"{det} {stage} log-log slope {slope:.2f}")
    if cfg.output:
        write_bench_csv(records, cfg.output)
        print(f"wrote {cfg.output}")


def _cmd_train(cfg):
    tcfg = TrainConfig(scenario=cfg.make_scenario(), modulation=cfg.modulation, T=cfg.T,
                       snr_db=cfg.train_snr_db if cfg.train_snr_db is not None else cfg.snr_db[0],
                       epochs=cfg.epochs, samples_per_epoch=cfg.samples_per_epoch,
                       validation_samples=cfg.validation_samples, batch_size=cfg.batch_size,
                       learning_rate=cfg.learning_rate, fd_step=cfg.fd_step,
                       mode="scp" if cfg.mode == "scp" else "cpfree", nc=cfg.nc, seed=cfg.seed)
    res = train(tcfg, progress=lambda e, loss, ber: print(f"epoch {e} loss={loss:.5g} val_ber={ber:.4e}"))
    print(f"best epoch {res.best_epoch} val_ber={res.validation_ber_history[res.best_epoch]:.4e} "
          f"(untrained {res.validation_ber_history[0]:.4e})")
    out = cfg.params_out or cfg.output
    if out:
        save_params(out, res.params)
        print(f"wrote {out}")


def _load_array(path: Path, key):
    suffix = path.suffix.lower()
    if suffix == ".npy":
        return np.load(path)
    if suffix == ".npz":
        data = dict(np.load(path))
    elif suffix == ".mat":
        from scipy.io import loadmat
        data = {k: v for k, v in loadmat(path).items() if not k.startswith("__")}
    else:
        raise ConfigError(f"{path}: unsupported extension {suffix!r} (use .npy, .npz or .mat)")
    if key is None:
        if len(data) != 1:
            raise ConfigError(f"{path}: holds {sorted(data)}; pick one with --key")
        key = next(iter(data))
    if key not in data:
        raise ConfigError(f"{path}: no array named {key!r}")
    return data[key]


def _cmd_taps_convert(args):
    path = Path(args.input)
    if not path.exists():
        raise ConfigError(f"input file not found: {path}")
    arr = np.asarray(_load_array(path, args.key))
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ConfigError(f"{path}: expected taps shaped (count, L, nr, nt) or (L, nr, nt), got {arr.shape}")
    save_taps(args.output, [ChannelRealization(a.astype(complex)) for a in arr])
    print(f"wrote {arr.shape[0]} realizations (L={arr.shape[1]}, {arr.shape[2]}x{arr.shape[3]}) to {args.output}")


COMMANDS = {"ber": _cmd_ber, "converge": _cmd_converge, "train": _cmd_train,
            "cpfree": _cmd_cpfree, "bench": _cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 2
        cfg = None if args.command == "taps-convert" else _resolve(args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (ConfigError, TapFileError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if cfg is None:
            _cmd_taps_convert(args)
        else:
            COMMANDS[args.command](cfg)
    except (ConfigError, TapFileError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
