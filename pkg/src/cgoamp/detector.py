"""OAMP-family detectors on the real-valued model ``y = C u + w``.

One layer of the (unfolded) iteration with per-layer scalars
``(gamma, theta, phi, xi)``::

    z      = (C C^T + sigma2/(2 v2) I)^{-1} (y - C u)      # direct solve or CG
    zeta   = 2Q / tr(W_hat C)                               # de-correlation
    r      = u + gamma * zeta * C^T z
    tau2   = v2 * (theta^2 zeta - 2 theta + 1)
    u_next = phi * (E[u | r, tau2] - xi * r)
    v2     <- max(beta * raw + (1 - beta) * v2, eps)

``sigma2`` is the noise variance per complex dimension, so each real noise
component has variance ``sigma2 / 2``.  All functions accept a leading batch
axis on ``C``/``y`` with ``sigma2`` and ``v2`` one per batch element.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .cg import CgConfig, cg_solve
from .channel import RealLinearSystem
from .constellation import Constellation, make_constellation, mmse_denoise_array

PARAM_NAMES = ("gamma", "theta", "phi", "xi")
TAU2_FLOOR = 1e-12
ML_SEARCH_LIMIT = 10**6


@dataclass
class NetParams:
    """Per-layer trainable scalars, stored as a (T, 4) array of gamma, theta, phi, xi."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float).reshape(-1, 4)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("network parameters must be finite")

    @classmethod
    def identity(cls, T: int) -> "NetParams":
        return cls(np.tile([1.0, 1.0, 1.0, 0.0], (T, 1)))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    def as_vector(self) -> np.ndarray:
        return self.values.reshape(-1).copy()

    @classmethod
    def from_vector(cls, v) -> "NetParams":
        return cls(np.asarray(v, dtype=float).reshape(-1, 4))

    def truncated(self, T: int) -> "NetParams":
        """First ``T`` layers, padded with identity layers if needed."""
        if T <= self.T:
            return NetParams(self.values[:T])
        pad = NetParams.identity(T - self.T).values
        return NetParams(np.vstack([self.values, pad]))


@dataclass
class DetectorConfig:
    le_strategy: str = "cg"  # "cg" | "direct"
    cg: CgConfig = field(default_factory=CgConfig)
    beta: float = 0.5
    epsilon: float = 1e-10
    constellation: Constellation = field(default_factory=lambda: make_constellation(4))
    trace: bool = False

    def __post_init__(self):
        if self.le_strategy not in ("cg", "direct"):
            raise ValueError(f"le_strategy must be 'cg' or 'direct', got {self.le_strategy!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class LayerTrace:
    zeta: np.ndarray
    tau2: np.ndarray  # before flooring
    v2: np.ndarray  # v_t^2 entering the layer
    le_residual: np.ndarray  # final CG residual norm (nan for direct solves)
    cg_iters: np.ndarray
    r: np.ndarray


def _batch(C, *vecs):
    C = np.asarray(C, dtype=float)
    single = C.ndim == 2
    if single:
        C = C[None]
        vecs = tuple(None if v is None else np.asarray(v, dtype=float)[None] for v in vecs)
    else:
        vecs = tuple(None if v is None else np.asarray(v, dtype=float) for v in vecs)
    return single, C, vecs


def _per_batch(x, B):
    return np.broadcast_to(np.asarray(x, dtype=float), (B,)).copy()


def _matvec(C, v):
    return np.matmul(C, v[..., None])[..., 0]


def _rmatvec(C, v):
    return np.matmul(v[..., None, :], C)[..., 0, :]


def eigen_precompute(C) -> np.ndarray:
    """Eigenvalues of ``C C^T`` (length = rows of C) from the singular values of C."""
    C = np.asarray(C, dtype=float)
    s = np.linalg.svd(C, compute_uv=False)
    lam = s**2
    missing = C.shape[-2] - lam.shape[-1]
    if missing > 0:
        lam = np.concatenate([lam, np.zeros(lam.shape[:-1] + (missing,))], axis=-1)
    return np.clip(lam, 0.0, None)


def zeta(lambdas, sigma2, v2, q_dim: int):
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(np.all(lambdas <= 0, axis=-1)):
        raise ValueError("zero channel: all eigenvalues of C C^T vanish")
    v2 = np.asarray(v2, dtype=float)
    if np.any(v2 <= 0):
        raise ValueError("v2 must be positive")
    shift = np.asarray(sigma2, dtype=float) / (2.0 * v2)
    inv = np.sum(lambdas / (lambdas + shift[..., None]), axis=-1) / q_dim
    return 1.0 / inv


def lmmse_matrix(C, sigma2, v2):
    """``W_hat = C^T (C C^T + sigma2/(2 v2) I)^{-1}`` by a dense solve."""
    single, Cb, _ = _batch(C)
    B, m, _ = Cb.shape
    shift = _per_batch(sigma2, B) / (2.0 * _per_batch(v2, B))
    Xi = Cb @ Cb.transpose(0, 2, 1) + shift[:, None, None] * np.eye(m)
    W = np.linalg.solve(Xi, Cb).transpose(0, 2, 1)
    return W[0] if single else W


def le_direct(C, y, u_hat, sigma2, v2):
    """Correction direction ``W_hat (y - C u_hat)`` and ``zeta = 2Q / tr(W_hat C)``."""
    single, Cb, (yb, ub) = _batch(C, y, u_hat)
    B, _, q = Cb.shape
    if np.any(_per_batch(v2, B) <= 0):
        raise ValueError("v2 must be positive")
    W = lmmse_matrix(Cb, _per_batch(sigma2, B), _per_batch(v2, B))
    d = _matvec(W, yb - _matvec(Cb, ub))
    z = q / np.einsum("bij,bji->b", W, Cb)
    return (d[0], float(z[0])) if single else (d, z)


def le_cg(C, y, u_hat, sigma2, v2, lambdas, cfg: CgConfig = CgConfig()):
    """CG variant of :func:`le_direct`; also returns iterations and final residual."""
    if np.ndim(C) == 2:
        # single system: apply the operator on 2-D arrays directly
        C = np.asarray(C, dtype=float)
        if not v2 > 0:
            raise ValueError("v2 must be positive")
        shift = sigma2 / (2.0 * v2)
        g = np.asarray(y, dtype=float) - C @ np.asarray(u_hat, dtype=float)
        Ct = C.T
        zsol, iters, res = cg_solve(lambda v: C @ (Ct @ v) + shift * v, g, cfg)
        return Ct @ zsol, float(zeta(lambdas, sigma2, v2, C.shape[1])), iters, res
    single, Cb, (yb, ub, lb) = _batch(C, y, u_hat, lambdas)
    B, _, q = Cb.shape
    v2 = _per_batch(v2, B)
    if np.any(v2 <= 0):
        raise ValueError("v2 must be positive")
    sigma2 = _per_batch(sigma2, B)
    shift = sigma2 / (2.0 * v2)
    g = yb - _matvec(Cb, ub)

    def apply_xi(v):
        return _matvec(Cb, _rmatvec(Cb, v)) + shift[:, None] * v

    zsol, iters, res = cg_solve(apply_xi, g, cfg)
    d = _rmatvec(Cb, zsol)
    z = zeta(lb, sigma2, v2, q)
    if single:
        return d[0], float(z[0]), int(iters[0]), float(res[0])
    return d, z, iters, res


def tau2_closed(v2, zeta_, theta):
    return v2 * (theta**2 * zeta_ - 2.0 * theta + 1.0)


def tau2_trace(W, C, v2, sigma2, theta):
    """Trace-form error variance with ``B = I - theta W C`` (W already de-correlated)."""
    W = np.asarray(W, dtype=float)
    C = np.asarray(C, dtype=float)
    q = C.shape[-1]
    Bm = np.eye(q) - theta * W @ C
    return (v2 / q) * np.sum(Bm * Bm) + (theta**2 * sigma2 / (2 * q)) * np.sum(W * W)


def v2_update(y, C, u_next, sigma2, v2_prev, beta, epsilon, c_gram_trace):
    single, Cb, (yb, ub) = _batch(C, y, u_next)
    B = Cb.shape[0]
    M = Cb.shape[1] // 2
    resid = yb - _matvec(Cb, ub)
    raw = (np.einsum("bi,bi->b", resid, resid) - M * _per_batch(sigma2, B)) / _per_batch(c_gram_trace, B)
    damped = beta * raw + (1.0 - beta) * _per_batch(v2_prev, B)
    out = np.maximum(damped, epsilon)
    return float(out[0]) if single else out


def nle(r, tau2, phi, xi, constellation: Constellation):
    r = np.asarray(r, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    if tau2.ndim:
        tau2 = tau2.reshape(tau2.shape + (1,) * (r.ndim - tau2.ndim))
    mean, _ = mmse_denoise_array(r, np.broadcast_to(tau2, r.shape), constellation.real_set)
    return phi * (mean - xi * r)


def detect(sys: RealLinearSystem, params: NetParams, cfg: DetectorConfig, lambdas=None):
    """Run ``params.T`` layers; returns ``(u_hat, traces)``.

    ``lambdas`` (eigenvalues of C C^T) may be passed in to reuse them across
    calls on the same channel.  ``traces`` is empty unless ``cfg.trace``.
    """
    single, C, (y,) = _batch(sys.C, sys.y)
    B, m, q = C.shape
    sigma2 = _per_batch(sys.sigma2, B)
    if np.any(~(sigma2 > 0)):
        raise ValueError("detect requires sigma2 > 0")
    if cfg.le_strategy == "cg":
        if lambdas is None:
            lambdas = eigen_precompute(C)
        elif single:
            lambdas = np.asarray(lambdas)[None]
    gram_trace = np.einsum("bij,bij->b", C, C)
    const = cfg.constellation

    u = np.zeros((B, q))
    v2 = np.ones(B)
    traces = []
    for t, (gamma, theta, phi, xi) in enumerate(params.values, start=1):
        if cfg.le_strategy == "direct":
            d, z = le_direct(C, y, u, sigma2, v2)
            iters = np.zeros(B, dtype=int)
            res = np.full(B, np.nan)
        else:
            d, z, iters, res = le_cg(C, y, u, sigma2, v2, lambdas, cfg.cg)
        r = u + (gamma * z)[:, None] * d
        tau2 = tau2_closed(v2, z, theta)
        u_next = nle(r, np.maximum(tau2, TAU2_FLOOR), phi, xi, const)
        v2_next = v2_update(y, C, u_next, sigma2, v2, cfg.beta, cfg.epsilon, gram_trace)
        if not (np.all(np.isfinite(u_next)) and np.all(np.isfinite(v2_next))):
            raise FloatingPointError(f"non-finite value in detector layer {t}")
        if cfg.trace:
            pick = (lambda a: a[0]) if single else (lambda a: a)
            traces.append(LayerTrace(pick(z), pick(tau2), pick(v2), pick(res), pick(iters), pick(r)))
        u, v2 = u_next, v2_next
    return (u[0] if single else u), traces


def lmmse_detect(sys: RealLinearSystem, symbol_energy: float = 1.0):
    """Linear MMSE estimate with per-real-dimension prior variance symbol_energy/2."""
    single, C, (y,) = _batch(sys.C, sys.y)
    B, m, _ = C.shape
    shift = _per_batch(sys.sigma2, B) / symbol_energy
    Xi = C @ C.transpose(0, 2, 1) + shift[:, None, None] * np.eye(m)
    u = _rmatvec(C, np.linalg.solve(Xi, y[..., None])[..., 0])
    return u[0] if single else u


def _ml_candidates(constellation: Constellation, n_tx: int):
    size = constellation.order**n_tx
    if size > ML_SEARCH_LIMIT:
        raise ValueError(f"ML search space {constellation.order}^{n_tx} exceeds {ML_SEARCH_LIMIT}")
    idx = np.array(list(itertools.product(range(constellation.order), repeat=n_tx)), dtype=int)
    sym = constellation.points[idx]
    return idx, np.concatenate([sym.real, sym.imag], axis=1)


def ml_bruteforce(sys: RealLinearSystem, constellation: Constellation):
    """Exhaustive search over constellation vectors; returns complex symbols.

    Candidates are enumerated in lexicographic order of point indices, so the
    first minimizer wins ties.
    """
    single, C, (y,) = _batch(sys.C, sys.y)
    B, m, q = C.shape
    idx, cand = _ml_candidates(constellation, q // 2)
    K = cand.shape[0]
    best = np.empty(B, dtype=int)
    chunk = max(1, 4_000_000 // (K * m))
    for s in range(0, B, chunk):
        proj = np.einsum("bij,kj->bki", C[s:s + chunk], cand)
        d = np.sum((y[s:s + chunk, None, :] - proj) ** 2, axis=-1)
        best[s:s + chunk] = np.argmin(d, axis=1)
    out = constellation.points[idx[best]]
    return out[0] if single else out


DETECTOR_NAMES = ("oamp", "cg-oamp", "oamp-net", "cg-oamp-net", "lmmse", "ml")


@dataclass
class Detector:
    """Named detector returning real estimates for a (batched) real system."""

    name: str
    cfg: DetectorConfig
    params: NetParams | None = None

    @property
    def uses_eigenvalues(self) -> bool:
        return self.name in ("cg-oamp", "cg-oamp-net")

    def __call__(self, sys: RealLinearSystem, lambdas=None):
        if self.name == "lmmse":
            return lmmse_detect(sys, self.cfg.constellation.energy)
        if self.name == "ml":
            sym = ml_bruteforce(sys, self.cfg.constellation)
            return np.concatenate([sym.real, sym.imag], axis=-1)
        return detect(sys, self.params, self.cfg, lambdas)[0]


def make_detector(name: str, cfg: DetectorConfig, T: int = 5, params: NetParams | None = None) -> Detector:
    """Build one of :data:`DETECTOR_NAMES`.

    ``oamp*`` use the direct solve, ``cg-*`` use CG; the ``-net`` variants need
    trained ``params`` while the plain ones run identity parameters.
    """
    if name not in DETECTOR_NAMES:
        raise ValueError(f"unknown detector {name!r}; choose from {DETECTOR_NAMES}")
    if name in ("lmmse", "ml"):
        return Detector(name, cfg)
    strategy = "cg" if name.startswith("cg-") else "direct"
    if name.endswith("-net"):
        if params is None:
            raise ValueError(f"detector {name} needs trained parameters")
        params = params.truncated(T)
    else:
        params = NetParams.identity(T)
    return Detector(name, replace(cfg, le_strategy=strategy, trace=False), params)
