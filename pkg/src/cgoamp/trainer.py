"""Supervised tuning of the per-layer scalars with Adam and finite differences.

Gradients are central differences over the 4T scalars, so every step costs
8T batched forward passes.  Each epoch draws fresh samples from the
``(seed, epoch)`` stream; validation uses one held-out set drawn once.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .cg import CgConfig
from .channel import (RealLinearSystem, Scenario, build_cpfree_matrices, complex_noise,
                      frequency_channels, noise_variance, realify, realify_matrix,
                      realify_vector)
from .constellation import Constellation, demap_real, make_constellation, map_bits
from .detector import DetectorConfig, NetParams, detect

log = logging.getLogger(__name__)

VALIDATION_STREAM = 2**31 - 1


@dataclass
class TrainConfig:
    scenario: Scenario = field(default_factory=Scenario)
    modulation: int = 4
    T: int = 5
    snr_db: float = 12.0
    epochs: int = 50
    samples_per_epoch: int = 500
    validation_samples: int = 2000
    batch_size: int = 100
    learning_rate: float = 1e-3
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    fd_step: float = 1e-4
    le_strategy: str = "cg"
    # tight tolerance keeps the loss smooth under finite-difference perturbations
    cg: CgConfig = field(default_factory=lambda: CgConfig(max_iters=50, tol=1e-10))
    mode: str = "scp"  # "scp" | "cpfree"
    nc: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be > 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.mode not in ("scp", "cpfree"):
            raise ValueError(f"mode must be 'scp' or 'cpfree', got {self.mode!r}")

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(le_strategy=self.le_strategy, cg=self.cg,
                              constellation=make_constellation(self.modulation))


def _random_symbols(rng, shape, c: Constellation):
    bits = rng.integers(0, 2, size=int(np.prod(shape)) * c.bits_per_symbol)
    return map_bits(bits, c).reshape(shape)


def generate_dataset(scenario: Scenario, snr_db: float, count: int, rng: np.random.Generator,
                     constellation: Constellation | None = None, mode: str = "scp",
                     nc: int = 16) -> RealLinearSystem:
    """``count`` labelled samples as one batched real system (labels in ``u_truth``).

    SCP mode: flat scenarios give one draw per sample, multipath scenarios
    contribute every subcarrier of each realization.  CP-free mode gives one
    sample per realization with the ISI already removed, i.e. ``y = C u + w``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    c = constellation or make_constellation(4)
    es = c.energy
    if mode == "cpfree":
        Cs, ys, us, s2 = [], [], [], []
        for k in range(count):
            ch = scenario.draw(rng, k)
            _, _, Cc = build_cpfree_matrices(ch, nc)
            u = _random_symbols(rng, (nc * ch.nt,), c)
            sigma2 = noise_variance(es * ch.energy, ch.nr, snr_db)
            y = Cc @ u + complex_noise(rng, (nc * ch.nr,), sigma2)
            Cs.append(realify_matrix(Cc))
            ys.append(realify_vector(y))
            us.append(realify_vector(u))
            s2.append(float(sigma2))
        return RealLinearSystem(np.stack(Cs), np.stack(ys), np.array(s2), np.stack(us))

    if scenario.flat:
        G = scenario.draw_flat(rng, count)
        energy = np.sum(np.abs(G) ** 2, axis=(1, 2)) * es
    else:
        Gs, energy = [], []
        k = 0
        while sum(len(g) for g in Gs) < count:
            ch = scenario.draw(rng, k)
            Gs.append(frequency_channels(ch, nc))
            energy.append(np.full(nc, es * ch.energy))
            k += 1
        G = np.concatenate(Gs)[:count]
        energy = np.concatenate(energy)[:count]
    u = _random_symbols(rng, (count, G.shape[2]), c)
    sigma2 = noise_variance(energy, G.shape[1], snr_db)
    y = np.einsum("bij,bj->bi", G, u) + complex_noise(rng, (count, G.shape[1]), sigma2)
    return realify(G, y, sigma2, u)


def subset(data: RealLinearSystem, idx) -> RealLinearSystem:
    return RealLinearSystem(data.C[idx], data.y[idx], np.asarray(data.sigma2)[idx],
                            None if data.u_truth is None else data.u_truth[idx])


def l2_loss(params: NetParams, batch: RealLinearSystem, cfg: DetectorConfig) -> float:
    u_hat, _ = detect(batch, params, replace(cfg, trace=False))
    err = u_hat - batch.u_truth
    return float(np.mean(np.sum(err * err, axis=-1)))


def fd_gradient(f, x, step: float = 1e-4) -> np.ndarray:
    """Central differences with step ``step * max(1, |x_k|)`` per coordinate."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for k in range(x.size):
        h = step * max(1.0, abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        fp, fm = f(xp), f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite loss when perturbing parameter {k}")
        grad[k] = (fp - fm) / (2 * h)
    return grad


def grad_fd(params: NetParams, batch: RealLinearSystem, cfg: DetectorConfig,
            fd_step: float = 1e-4) -> np.ndarray:
    """Gradient of :func:`l2_loss` over the flattened (gamma, theta, phi, xi) per layer."""
    return fd_gradient(lambda v: l2_loss(NetParams.from_vector(v), batch, cfg),
                       params.as_vector(), fd_step)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(x, grad, state: AdamState, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    b1, b2 = betas
    t = state.t + 1
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    return np.asarray(x) - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


def bit_error_rate(u_hat, data: RealLinearSystem, c: Constellation) -> float:
    return float(np.mean(demap_real(u_hat, c) != demap_real(data.u_truth, c)))


@dataclass
class TrainResult:
    params: NetParams
    loss_history: list
    validation_ber_history: list  # entry 0 is the identity (untrained) network
    best_epoch: int


def train(cfg: TrainConfig, progress=None) -> TrainResult:
    """Mini-batch Adam from identity parameters; keeps the best-validation epoch."""
    det = cfg.detector_config()
    c = det.constellation
    gen = dict(constellation=c, mode=cfg.mode, nc=cfg.nc)
    val = generate_dataset(cfg.scenario, cfg.snr_db, cfg.validation_samples,
                           np.random.default_rng([cfg.seed, VALIDATION_STREAM]), **gen)

    def val_ber(p):
        return bit_error_rate(detect(val, p, det)[0], val, c)

    params = NetParams.identity(cfg.T)
    x = params.as_vector()
    state = AdamState.zeros(x.size)
    best, best_ber, best_epoch = params, val_ber(params), 0
    losses, bers = [], [best_ber]
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.default_rng([cfg.seed, epoch])
        data = generate_dataset(cfg.scenario, cfg.snr_db, cfg.samples_per_epoch, rng, **gen)
        order = rng.permutation(cfg.samples_per_epoch)
        epoch_loss = []
        for s in range(0, cfg.samples_per_epoch, cfg.batch_size):
            batch = subset(data, order[s:s + cfg.batch_size])
            epoch_loss.append(l2_loss(NetParams.from_vector(x), batch, det))
            g = fd_gradient(lambda v: l2_loss(NetParams.from_vector(v), batch, det), x, cfg.fd_step)
            x, state = adam_step(x, g, state, cfg.learning_rate, cfg.betas, cfg.adam_eps)
        params = NetParams.from_vector(x)
        losses.append(float(np.mean(epoch_loss)))
        ber = val_ber(params)
        bers.append(ber)
        if ber < best_ber:
            best, best_ber, best_epoch = params, ber, epoch
        log.info("epoch %d loss %.6g val_ber %.4g", epoch, losses[-1], ber)
        if progress is not None:
            progress(epoch, losses[-1], ber)
    return TrainResult(best, losses, bers, best_epoch)


def save_params(path, params: NetParams) -> None:
    with open(path, "w") as fh:
        fh.write(f"T={params.T}\n")
        for t, row in enumerate(params.values, start=1):
            fh.write(f"{t}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def load_params(path) -> NetParams:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("T="):
        raise ValueError(f"{path}: missing 'T=<n>' header")
    T = int(lines[0][2:])
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        fields = ln.split(",")
        if len(fields) != 5:
            raise ValueError(f"{path}:{lineno}: expected 't,gamma,theta,phi,xi'")
        if int(fields[0]) != len(rows) + 1:
            raise ValueError(f"{path}:{lineno}: layer index {fields[0]} out of order")
        rows.append([float(v) for v in fields[1:]])
    if len(rows) != T:
        raise ValueError(f"{path}: header says T={T} but {len(rows)} layers found")
    return NetParams(np.array(rows).reshape(T, 4))
