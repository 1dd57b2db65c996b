"""CP-free MIMO-OFDM reception with buffered decision feedback.

Frame ``k`` arrives as ``y_k = (H - A) q_k + A q_{k-1} + w_k``.  The receiver
subtracts ``A q_hat_{k-1}`` rebuilt from the previous frame's decisions (or
from the true previous block in genie mode) and detects ``u_k`` through
``C = (H - A) (F^H kron I)``.  The block before frame 0 is all zeros on both
ends of the link.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import (ChannelRealization, RealLinearSystem, build_cpfree_matrices,
                      frequency_channels, ifft_right, ofdm_demodulate, ofdm_modulate, realify,
                      realify_matrix, realify_vector)
from .constellation import Constellation, demap_real, map_bits
from .detector import Detector, eigen_precompute

MODES = ("feedback", "genie")


@dataclass
class ReceiverState:
    prev_q_hat: np.ndarray
    frame_index: int = 0
    mode: str = "feedback"

    @classmethod
    def initial(cls, nc: int, nt: int, mode: str = "feedback") -> "ReceiverState":
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        return cls(np.zeros(nc * nt, complex), 0, mode)


def rebuild_feedback(bits_prev, constellation: Constellation, nc: int, nt: int) -> np.ndarray:
    """Time-domain block ``(F^H kron I_nt) map(bits)``."""
    bits_prev = np.asarray(bits_prev).reshape(-1)
    need = nc * nt * constellation.bits_per_symbol
    if bits_prev.size != need:
        raise ValueError(f"expected {need} feedback bits, got {bits_prev.size}")
    return ofdm_modulate(map_bits(bits_prev, constellation), nc, nt)


def cancel_isi(y_k, A_prev, q_hat_prev) -> np.ndarray:
    return np.asarray(y_k) - np.asarray(A_prev) @ np.asarray(q_hat_prev)


# --- link simulation ---------------------------------------------------------

def convolve_frames(ch: ChannelRealization, nc: int, symbols, cyclic: bool = False) -> np.ndarray:
    """Noise-free received blocks, one row per frame (subcarrier-major symbols).

    Back-to-back CP-free frames by default: each block sees the tail of the
    previous one (zeros before frame 0).  ``cyclic=True`` models a CP of at
    least ``L - 1`` samples, so each block sees its own tail instead.  Both
    cases run the same direct convolution, so with ``L = 1`` they agree
    bit for bit.
    """
    symbols = np.atleast_2d(symbols)
    K, L = symbols.shape[0], ch.L
    q = np.stack([ofdm_modulate(s, nc, ch.nt).reshape(nc, ch.nt) for s in symbols])
    if cyclic:
        prefix = q[:, nc - (L - 1):] if L > 1 else q[:, :0]
    else:
        prev = np.concatenate([np.zeros((1, nc, ch.nt), complex), q[:-1]])
        prefix = prev[:, nc - (L - 1):] if L > 1 else prev[:, :0]
    stream = np.concatenate([prefix, q], axis=1)
    out = np.zeros((K, nc, ch.nr), complex)
    for l in range(L):
        out += stream[:, L - 1 - l: L - 1 - l + nc] @ ch.taps[l].T
    return out.reshape(K, nc * ch.nr)


def scp_observations(ch: ChannelRealization, nc: int, symbols, time_noise) -> np.ndarray:
    """Per-subcarrier observations with an adequate CP, shape (K, nc, nr).

    The CP absorbs the channel memory; the data part of the time-domain noise
    is shared with the CP-free link so both see the same realization.
    """
    symbols = np.atleast_2d(symbols)
    G = frequency_channels(ch, nc)
    u = symbols.reshape(symbols.shape[0], nc, ch.nt)
    clean = np.einsum("nij,knj->kni", G, u)
    noise = np.stack([ofdm_demodulate(w, nc, ch.nr).reshape(nc, ch.nr) for w in np.atleast_2d(time_noise)])
    return clean + noise


# --- receivers ---------------------------------------------------------------

@dataclass
class ReceiveResult:
    bits: np.ndarray  # (K, bits per frame)
    frame_ber: np.ndarray | None = None
    states: list = field(default_factory=list)


def receive_frames(frames, ch: ChannelRealization, nc: int, detector: Detector, sigma2: float,
                   mode: str = "feedback", true_bits=None, cyclic: bool = False) -> ReceiveResult:
    """Sequential ISI cancellation and detection over frames sharing one channel.

    Genie mode needs ``true_bits`` (one row per frame) and feeds back the true
    previous block instead of the decisions.  ``cyclic=True`` is the receiver
    for CP-protected blocks (``A = 0``, circulant channel): the same joint
    detector with nothing to cancel.
    """
    frames = np.atleast_2d(frames)
    c = detector.cfg.constellation
    state = ReceiverState.initial(nc, ch.nt, mode)
    if mode == "genie" and true_bits is None:
        raise ValueError("genie mode needs the transmitted bits")
    H, A, C = build_cpfree_matrices(ch, nc)
    if cyclic:
        A = np.zeros_like(A)
        C = ifft_right(H, nc, ch.nt)
    Cr = realify_matrix(C)
    lambdas = eigen_precompute(Cr) if detector.uses_eigenvalues else None
    out = []
    for k, y in enumerate(frames):
        y_hat = cancel_isi(y, A, state.prev_q_hat)
        u_hat = detector(RealLinearSystem(Cr, realify_vector(y_hat), sigma2), lambdas)
        bits = demap_real(u_hat, c)
        out.append(bits)
        fb = true_bits[k] if mode == "genie" else bits
        state = ReceiverState(rebuild_feedback(fb, c, nc, ch.nt), k + 1, mode)
    bits = np.array(out)
    ber = None
    if true_bits is not None:
        ber = np.mean(bits != np.asarray(true_bits).reshape(bits.shape), axis=1)
    return ReceiveResult(bits, ber)


def receive_scp(observations, ch: ChannelRealization, nc: int, detector: Detector, sigma2: float):
    """Independent per-subcarrier detection; returns bits with one row per frame."""
    obs = np.asarray(observations)
    K = obs.shape[0]
    G = np.broadcast_to(frequency_channels(ch, nc), (K, nc, ch.nr, ch.nt)).reshape(K * nc, ch.nr, ch.nt)
    sys = realify(G, obs.reshape(K * nc, ch.nr), np.full(K * nc, float(sigma2)))
    u_hat = detector(sys)
    return demap_real(u_hat, detector.cfg.constellation).reshape(K, -1)
