"""Square Gray-coded QAM, bit mapping, and the per-rail MMSE denoiser.

Labeling convention
-------------------
Each symbol carries ``bits_per_symbol`` bits.  The first half of the group
selects the in-phase level, the second half the quadrature level, MSB first.
Within a rail, the level at position ``j`` counted from the *largest*
amplitude downwards carries the Gray label ``j ^ (j >> 1)``.  For QPSK this
gives ``0 -> +1/sqrt(2)`` and ``1 -> -1/sqrt(2)`` on each rail.

Points are indexed by their integer bit label, so ``points[m]`` is the symbol
whose bits read ``m`` in binary (MSB first).  Hard demapping breaks distance
ties toward the smaller index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SUPPORTED_ORDERS = (4, 16, 64)


@dataclass(frozen=True)
class Constellation:
    order: int
    points: np.ndarray  # complex, indexed by bit label
    real_set: np.ndarray  # ascending real levels of one rail
    bits_per_symbol: int
    # rail label -> level value
    rail_levels: np.ndarray

    @property
    def rail_bits(self) -> int:
        return self.bits_per_symbol // 2

    @property
    def energy(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))


def _gray(j):
    return j ^ (j >> 1)


def make_constellation(order: int) -> Constellation:
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported QAM order {order}; supported orders are {SUPPORTED_ORDERS}")
    k = int(np.log2(order))
    side = int(round(np.sqrt(order)))
    # sum over the square grid of a^2 + b^2 is 2 * side * sum(levels^2)
    raw = np.arange(-(side - 1), side, 2, dtype=float)
    scale = np.sqrt(2.0 * np.mean(raw**2))
    real_set = raw / scale

    descending = real_set[::-1]
    rail_levels = np.empty(side)
    for j in range(side):
        rail_levels[_gray(j)] = descending[j]

    half = k // 2
    labels = np.arange(order)
    i_label = labels >> half
    q_label = labels & ((1 << half) - 1)
    points = rail_levels[i_label] + 1j * rail_levels[q_label]
    return Constellation(order, points, real_set, k, rail_levels)


def _bits_to_ints(bits, width):
    bits = np.asarray(bits, dtype=np.int64).reshape(-1, width)
    weights = 1 << np.arange(width - 1, -1, -1)
    return bits @ weights


def _ints_to_bits(values, width):
    values = np.asarray(values, dtype=np.int64).reshape(-1, 1)
    shifts = np.arange(width - 1, -1, -1)
    return ((values >> shifts) & 1).astype(np.uint8).reshape(-1)


def map_bits(bits, c: Constellation) -> np.ndarray:
    bits = np.asarray(bits).reshape(-1)
    if bits.size % c.bits_per_symbol:
        raise ValueError(
            f"bit count {bits.size} is not a multiple of bits_per_symbol={c.bits_per_symbol}"
        )
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise ValueError("bits must be 0 or 1")
    return c.points[_bits_to_ints(bits, c.bits_per_symbol)]


def hard_decision_index(symbols, c: Constellation) -> np.ndarray:
    """Index of the nearest constellation point; first index wins on ties."""
    symbols = np.asarray(symbols, dtype=complex).reshape(-1)
    d = np.abs(symbols[:, None] - c.points[None, :]) ** 2
    return np.argmin(d, axis=1)


def demap_hard(symbols, c: Constellation) -> np.ndarray:
    return _ints_to_bits(hard_decision_index(symbols, c), c.bits_per_symbol)


def real_to_complex(u_real) -> np.ndarray:
    """Undo the [Re; Im] stacking along the last axis."""
    u_real = np.asarray(u_real)
    n = u_real.shape[-1] // 2
    return u_real[..., :n] + 1j * u_real[..., n:]


def demap_real(u_real, c: Constellation) -> np.ndarray:
    """Hard bits from a stacked real estimate (or a batch of them), row-major."""
    return demap_hard(real_to_complex(u_real).reshape(-1), c)


def mmse_denoise_array(r, tau2, real_set):
    """Posterior mean and second moment for a uniform prior over ``real_set``.

    ``r`` may be any shape; ``tau2`` broadcasts against ``r``.
    """
    r = np.asarray(r, dtype=float)
    tau2 = np.asarray(tau2, dtype=float)
    if np.any(tau2 <= 0):
        raise ValueError("tau2 must be positive")
    a = np.asarray(real_set, dtype=float)
    logits = -((a - r[..., None]) ** 2) / (2.0 * tau2[..., None])
    logits -= logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=-1, keepdims=True)
    return w @ a, w @ (a * a)


def mmse_denoise(r: float, tau2: float, c: Constellation) -> tuple[float, float]:
    if tau2 <= 0:
        raise ValueError(f"tau2 must be positive, got {tau2}")
    mean, second = mmse_denoise_array(r, tau2, c.real_set)
    return float(mean), float(second)
