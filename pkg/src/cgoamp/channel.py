"""Channel draws, OFDM system matrices, real decomposition and AWGN.

Conventions: the DFT matrix is unitary, ``F[m, n] = exp(-2j*pi*m*n/N)/sqrt(N)``.
Stacked OFDM vectors are subcarrier-major (or time-sample-major), antenna
minor: ``u_tilde = [u_0; u_1; ...; u_{Nc-1}]``.

Per-trial random streams come from ``trial_rng(seed, trial)``, which seeds a
``numpy.random.Generator`` with the entropy pair ``[seed, trial]``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_CPFREE_DIM = 4096


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(trial)])


@dataclass
class ChannelRealization:
    taps: np.ndarray  # (L, nr, nt) complex

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=complex)
        if self.taps.ndim == 2:
            self.taps = self.taps[None]
        if self.taps.ndim != 3 or self.taps.shape[0] < 1:
            raise ValueError("taps must have shape (L, nr, nt) with L >= 1")

    @property
    def L(self) -> int:
        return self.taps.shape[0]

    @property
    def nr(self) -> int:
        return self.taps.shape[1]

    @property
    def nt(self) -> int:
        return self.taps.shape[2]

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.taps) ** 2))


@dataclass
class ComplexLinearSystem:
    G: np.ndarray
    label: str = ""

    @property
    def u_dim(self) -> int:
        return self.G.shape[-1]

    @property
    def y_dim(self) -> int:
        return self.G.shape[-2]


@dataclass
class RealLinearSystem:
    """``y = C u + w``; ``sigma2`` is the noise variance per complex dimension.

    Arrays may carry a leading batch axis, in which case ``sigma2`` has one
    entry per batch element.
    """

    C: np.ndarray
    y: np.ndarray
    sigma2: np.ndarray | float
    u_truth: np.ndarray | None = field(default=None)

    @property
    def batched(self) -> bool:
        return self.C.ndim == 3


# --- random channels -------------------------------------------------------

def sample_rayleigh(nr: int, nt: int, rng: np.random.Generator, size=None) -> np.ndarray:
    """IID CN(0, 1/nr) entries; ``size`` prepends batch axes."""
    if nr < 1 or nt < 1:
        raise ValueError("nr and nt must be positive")
    shape = (() if size is None else tuple(np.atleast_1d(size))) + (nr, nt)
    scale = np.sqrt(0.5 / nr)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def exponential_correlation(n: int, rho: float) -> np.ndarray:
    idx = np.arange(n)
    diff = idx[None, :] - idx[:, None]
    return np.where(diff >= 0, rho ** np.abs(diff), np.conj(rho ** np.abs(diff)))


def psd_sqrt(R: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(R)
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.conj().T


def apply_kronecker(U: np.ndarray, rho: float) -> np.ndarray:
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    nr, nt = U.shape[-2:]
    if rho == 0.0:
        return np.array(U, copy=True)
    Rr = psd_sqrt(exponential_correlation(nr, rho))
    Rt = psd_sqrt(exponential_correlation(nt, rho))
    return Rr @ U @ Rt


def sample_multipath(nr: int, nt: int, L: int, rng: np.random.Generator) -> ChannelRealization:
    """Uniform power-delay profile; total average gain matches a flat CN(0, 1/nr) channel."""
    taps = sample_rayleigh(nr, nt, rng, size=L) / np.sqrt(L)
    return ChannelRealization(taps)


@dataclass
class Scenario:
    """Channel model used to draw one realization per call.

    kind: ``rayleigh`` | ``kronecker`` | ``multipath`` | ``taps``.
    Flat kinds return single-tap realizations.
    """

    kind: str = "rayleigh"
    nr: int = 8
    nt: int = 8
    rho: float = 0.0
    L: int = 1
    taps_file: str | None = None
    _bank: list = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("rayleigh", "kronecker", "multipath", "taps"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "kronecker" and not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if self.kind == "taps":
            if not self.taps_file:
                raise ValueError("taps scenario needs taps_file")
            self._bank = load_taps(self.taps_file)
            if not self._bank:
                raise ValueError(f"taps file {self.taps_file} holds no realizations")
            self.nr, self.nt, self.L = self._bank[0].nr, self._bank[0].nt, self._bank[0].L

    @property
    def flat(self) -> bool:
        return self.kind in ("rayleigh", "kronecker")

    @property
    def tag(self) -> str:
        if self.kind == "kronecker":
            return f"kronecker(rho={self.rho:g})-{self.nr}x{self.nt}"
        if self.kind == "multipath":
            return f"multipath(L={self.L})-{self.nr}x{self.nt}"
        if self.kind == "taps":
            return f"taps({Path(self.taps_file).name})-{self.nr}x{self.nt}"
        return f"rayleigh-{self.nr}x{self.nt}"

    def draw_flat(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Batch of ``size`` flat nr x nt matrices."""
        G = sample_rayleigh(self.nr, self.nt, rng, size=size)
        if self.kind == "kronecker" and self.rho > 0:
            G = apply_kronecker(G, self.rho)
        elif not self.flat:
            raise ValueError(f"scenario {self.kind} is not flat")
        return G

    def draw(self, rng: np.random.Generator, index: int = 0) -> ChannelRealization:
        if self.flat:
            return ChannelRealization(self.draw_flat(rng, 1))
        if self.kind == "multipath":
            return sample_multipath(self.nr, self.nt, self.L, rng)
        return self._bank[index % len(self._bank)]


# --- OFDM matrices ---------------------------------------------------------

def dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def frequency_channels(ch: ChannelRealization, nc: int) -> np.ndarray:
    """Per-subcarrier matrices ``G_n = sum_l H_l exp(-2j pi n l / nc)``, shape (nc, nr, nt)."""
    if nc < ch.L:
        raise ValueError(f"nc={nc} must be at least the tap count L={ch.L}")
    return np.fft.fft(ch.taps, n=nc, axis=0)


def _block_tap_index(nc: int):
    m = np.arange(nc)
    return (m[:, None] - m[None, :]) % nc


def _assemble(blocks: np.ndarray) -> np.ndarray:
    # blocks: (nc, nc, nr, nt) -> (nc*nr, nc*nt)
    nc, _, nr, nt = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(nc * nr, nc * nt)


def build_cpfree_matrices(ch: ChannelRealization, nc: int, max_dim: int = MAX_CPFREE_DIM):
    """Blocked-circulant channel, interference matrix and detection matrix.

    Returns ``(H_tilde, A, C)`` with ``C = (H_tilde - A) (F^H kron I_nt)``.
    """
    if nc < ch.L:
        raise ValueError(f"nc={nc} must be at least the tap count L={ch.L}")
    if nc * max(ch.nt, ch.nr) > max_dim:
        raise ValueError(f"system dimension nc*n={nc * max(ch.nt, ch.nr)} exceeds cap {max_dim}")
    L, nr, nt = ch.taps.shape
    lag = _block_tap_index(nc)
    padded = np.concatenate([ch.taps, np.zeros((nc - L, nr, nt), complex)])
    H_tilde = _assemble(padded[lag])
    # wrap-around part: block column j > row m with tap l = m - j + nc in [1, L-1]
    wrap = (lag >= 1) & (lag <= L - 1) & (np.arange(nc)[None, :] > np.arange(nc)[:, None])
    A = _assemble(np.where(wrap[:, :, None, None], padded[lag], 0))
    C = ifft_right(H_tilde - A, nc, nt)
    return H_tilde, A, C


def ifft_right(M: np.ndarray, nc: int, nt: int) -> np.ndarray:
    """``M @ (F^H kron I_nt)`` without forming the Kronecker product."""
    rows = M.shape[0]
    Mb = M.reshape(rows, nc, nt)
    # (M (F^H kron I))[:, (n, p)] = sum_m M[:, (m, p)] conj(F)[m, n]; conj(F) is symmetric
    out = np.einsum("rmp,mn->rnp", Mb, dft_matrix(nc).conj())
    return out.reshape(rows, nc * nt)


def ofdm_modulate(u_tilde: np.ndarray, nc: int, nt: int) -> np.ndarray:
    """Time-domain block ``(F^H kron I_nt) u_tilde``."""
    return np.fft.ifft(np.asarray(u_tilde).reshape(nc, nt), axis=0, norm="ortho").reshape(-1)


def ofdm_demodulate(y_tilde: np.ndarray, nc: int, nr: int) -> np.ndarray:
    """Frequency-domain block ``(F kron I_nr) y_tilde``."""
    return np.fft.fft(np.asarray(y_tilde).reshape(nc, nr), axis=0, norm="ortho").reshape(-1)


# --- real decomposition and noise -----------------------------------------

def realify_matrix(G: np.ndarray) -> np.ndarray:
    G = np.asarray(G)
    top = np.concatenate([G.real, -G.imag], axis=-1)
    bot = np.concatenate([G.imag, G.real], axis=-1)
    return np.concatenate([top, bot], axis=-2)


def realify_vector(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    return np.concatenate([v.real, v.imag], axis=-1)


def realify(sys: ComplexLinearSystem | np.ndarray, y, sigma2, u=None) -> RealLinearSystem:
    G = sys.G if isinstance(sys, ComplexLinearSystem) else np.asarray(sys)
    y = np.asarray(y)
    if y.shape[-1] != G.shape[-2] or y.shape[:-1] != G.shape[:-2]:
        raise ValueError(f"received vector shape {y.shape} does not match matrix shape {G.shape}")
    if u is not None:
        u = np.asarray(u)
        if u.shape[-1] != G.shape[-1]:
            raise ValueError(f"symbol vector shape {u.shape} does not match matrix shape {G.shape}")
        u = realify_vector(u)
    return RealLinearSystem(realify_matrix(G), realify_vector(y), sigma2, u)


def noise_variance(signal_energy, n_rx: int, snr_db: float):
    """Complex noise variance such that signal_energy / (n_rx * sigma2) hits the SNR."""
    return np.asarray(signal_energy) / (n_rx * 10.0 ** (snr_db / 10.0))


def complex_noise(rng: np.random.Generator, shape, sigma2) -> np.ndarray:
    sigma2 = np.asarray(sigma2, dtype=float)
    scale = np.sqrt(sigma2 / 2.0)
    w = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return w * scale.reshape(sigma2.shape + (1,) * (len(shape) - sigma2.ndim))


def transmit(G: np.ndarray, u: np.ndarray, snr_db: float, rng: np.random.Generator,
             symbol_energy: float = 1.0):
    """Noisy observation ``G u + nu`` and the complex noise variance used.

    The noise level follows from ``E||G u||^2 = ||G||_F^2 * symbol_energy``
    with IID symbols.  ``G`` may be batched along leading axes.
    """
    G = np.asarray(G)
    energy = np.sum(np.abs(G) ** 2, axis=(-2, -1)) * symbol_energy
    sigma2 = noise_variance(energy, G.shape[-2], snr_db)
    clean = np.einsum("...ij,...j->...i", G, u)
    return clean + complex_noise(rng, clean.shape, sigma2), sigma2


# --- tap files -------------------------------------------------------------

class TapFileError(ValueError):
    pass


def save_taps(path, realizations) -> None:
    realizations = list(realizations)
    if realizations:
        nr, nt, L = realizations[0].nr, realizations[0].nt, realizations[0].L
    else:
        nr = nt = L = 0
    with open(path, "w", newline="") as fh:
        fh.write(f"{nr},{nt},{L},{len(realizations)}\n")
        for k, ch in enumerate(realizations):
            if (ch.nr, ch.nt, ch.L) != (nr, nt, L):
                raise ValueError("all realizations must share nr, nt and L")
            for l in range(L):
                for q in range(nr):
                    for p in range(nt):
                        h = ch.taps[l, q, p]
                        fh.write(f"{k},{l},{q},{p},{h.real:.17g},{h.imag:.17g}\n")


def load_taps(path) -> list[ChannelRealization]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TapFileError(f"{path}: empty file, expected header 'nr,nt,L,count'") from None
        try:
            nr, nt, L, count = (int(v) for v in header)
        except ValueError:
            raise TapFileError(f"{path}:1: malformed header {header!r}, expected 'nr,nt,L,count'") from None
        if count and min(nr, nt, L) < 1:
            raise TapFileError(f"{path}:1: dimensions must be positive")
        taps = np.zeros((count, L, nr, nt), complex)
        expected = ((k, l, q, p) for k in range(count) for l in range(L)
                    for q in range(nr) for p in range(nt))
        n_rows = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise TapFileError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            try:
                k, l, q, p = (int(v) for v in row[:4])
                re, im = float(row[4]), float(row[5])
            except ValueError:
                raise TapFileError(f"{path}:{lineno}: malformed row {row!r}") from None
            for name, val, lim in (("realization", k, count), ("l", l, L), ("q", q, nr), ("p", p, nt)):
                if not 0 <= val < lim:
                    raise TapFileError(f"{path}:{lineno}: {name}={val} out of range [0, {lim})")
            want = next(expected, None)
            if want != (k, l, q, p):
                raise TapFileError(f"{path}:{lineno}: row index {(k, l, q, p)} out of order, expected {want}")
            taps[k, l, q, p] = complex(re, im)
            n_rows += 1
        if n_rows != count * L * nr * nt:
            raise TapFileError(f"{path}: expected {count * L * nr * nt} rows, found {n_rows}")
    return [ChannelRealization(t) for t in taps]
