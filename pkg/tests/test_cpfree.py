import numpy as np
import pytest

from cgoamp.cg import CgConfig
from cgoamp.channel import (build_cpfree_matrices, complex_noise, frequency_channels, noise_variance,
                            ofdm_modulate, sample_multipath)
from cgoamp.constellation import make_constellation, map_bits
from cgoamp.cpfree import (ReceiverState, cancel_isi, convolve_frames, rebuild_feedback,
                           receive_frames, receive_scp, scp_observations)
from cgoamp.detector import DetectorConfig, make_detector

NC, NT, NR = 8, 2, 2


def _link(seed, L, K=4, snr_db=15.0, order=4):
    rng = np.random.default_rng(seed)
    c = make_constellation(order)
    ch = sample_multipath(NR, NT, L, rng)
    bits = rng.integers(0, 2, size=(K, NC * NT * c.bits_per_symbol), dtype=np.uint8)
    sym = map_bits(bits, c).reshape(K, -1)
    sigma2 = float(noise_variance(c.energy * ch.energy, NR, snr_db))
    w = complex_noise(rng, (K, NC * NR), sigma2)
    return ch, c, bits, sym, sigma2, w


def _detector(name="cg-oamp", c=None):
    cfg = DetectorConfig(cg=CgConfig(100, 1e-10), constellation=c or make_constellation(4))
    return make_detector(name, cfg, T=5)


def test_initial_state():
    s = ReceiverState.initial(NC, NT)
    assert s.frame_index == 0 and not s.prev_q_hat.any() and s.prev_q_hat.size == NC * NT
    with pytest.raises(ValueError):
        ReceiverState.initial(NC, NT, mode="oracle")


def test_rebuild_feedback():
    c = make_constellation(16)
    bits = np.random.default_rng(0).integers(0, 2, NC * NT * 4)
    q = rebuild_feedback(bits, c, NC, NT)
    u = map_bits(bits, c)
    np.testing.assert_allclose(q, ofdm_modulate(u, NC, NT), atol=1e-15)
    assert np.vdot(q, q).real == pytest.approx(np.vdot(u, u).real, rel=1e-12)
    with pytest.raises(ValueError, match="feedback bits"):
        rebuild_feedback(bits[:-1], c, NC, NT)


def test_transmitter_matches_matrix_model():
    ch, c, bits, sym, _, _ = _link(1, L=3)
    H, A, C = build_cpfree_matrices(ch, NC)
    y = convolve_frames(ch, NC, sym)
    prev = np.zeros(NC * NT, complex)
    for k in range(len(sym)):
        np.testing.assert_allclose(y[k], C @ sym[k] + A @ prev, atol=1e-12)
        prev = ofdm_modulate(sym[k], NC, NT)
    cyc = convolve_frames(ch, NC, sym, cyclic=True)
    for k in range(len(sym)):
        np.testing.assert_allclose(cyc[k], H @ ofdm_modulate(sym[k], NC, NT), atol=1e-12)


def test_cancel_isi_cases():
    ch, c, bits, sym, _, w = _link(2, L=3)
    H, A, C = build_cpfree_matrices(ch, NC)
    y = convolve_frames(ch, NC, sym) + w
    q_prev = ofdm_modulate(sym[0], NC, NT)
    np.testing.assert_allclose(cancel_isi(y[1], A, q_prev), C @ sym[1] + w[1], atol=1e-12)
    wrong = sym[0].copy()
    wrong[3] = -wrong[3]
    dq = ofdm_modulate(wrong, NC, NT) - q_prev
    err = np.linalg.norm(cancel_isi(y[1], A, q_prev + dq) - (C @ sym[1] + w[1]))
    assert 0 < err <= np.linalg.norm(A, 2) * np.linalg.norm(dq) + 1e-12
    flat = sample_multipath(NR, NT, 1, np.random.default_rng(0))
    _, A1, _ = build_cpfree_matrices(flat, NC)
    np.testing.assert_array_equal(cancel_isi(y[1], A1, q_prev), y[1])


@pytest.mark.parametrize("name", ["oamp", "cg-oamp", "lmmse"])
def test_single_tap_cpfree_equals_cp_receiver(name):
    ch, c, bits, sym, sigma2, w = _link(3, L=1, snr_db=8.0)
    det = _detector(name)
    frames = convolve_frames(ch, NC, sym) + w
    free = receive_frames(frames, ch, NC, det, sigma2, "feedback", bits)
    cyc = receive_frames(convolve_frames(ch, NC, sym, cyclic=True) + w, ch, NC, det, sigma2, cyclic=True)
    np.testing.assert_array_equal(free.bits, cyc.bits)
    genie = receive_frames(frames, ch, NC, det, sigma2, "genie", bits)
    np.testing.assert_array_equal(free.bits, genie.bits)


def test_single_tap_lmmse_matches_per_subcarrier():
    ch, c, bits, sym, sigma2, w = _link(4, L=1, snr_db=6.0, K=6)
    det = _detector("lmmse")
    free = receive_frames(convolve_frames(ch, NC, sym) + w, ch, NC, det, sigma2)
    scp = receive_scp(scp_observations(ch, NC, sym, w), ch, NC, det, sigma2)
    np.testing.assert_array_equal(free.bits, scp)


def test_scp_observations_model():
    ch, c, bits, sym, sigma2, w = _link(5, L=3)
    obs = scp_observations(ch, NC, sym, np.zeros_like(w))
    G = frequency_channels(ch, NC)
    np.testing.assert_allclose(obs[2], np.einsum("nij,nj->ni", G, sym[2].reshape(NC, NT)), atol=1e-12)


def test_genie_and_feedback_agree_on_first_frame_and_noise_free():
    ch, c, bits, sym, sigma2, w = _link(6, L=3, snr_db=5.0)
    det = _detector()
    frames = convolve_frames(ch, NC, sym) + w
    fb = receive_frames(frames, ch, NC, det, sigma2, "feedback", bits)
    ge = receive_frames(frames, ch, NC, det, sigma2, "genie", bits)
    np.testing.assert_array_equal(fb.bits[0], ge.bits[0])
    clean = receive_frames(convolve_frames(ch, NC, sym), ch, NC, det, 1e-10, "feedback", bits)
    assert not clean.frame_ber.any()


def test_causality():
    ch, c, bits, sym, sigma2, w = _link(7, L=3, K=5, snr_db=8.0)
    det = _detector()
    frames = convolve_frames(ch, NC, sym) + w
    full = receive_frames(frames, ch, NC, det, sigma2)
    part = receive_frames(frames[:3], ch, NC, det, sigma2)
    np.testing.assert_array_equal(full.bits[:3], part.bits)


def test_genie_requires_truth():
    ch, c, bits, sym, sigma2, w = _link(8, L=2)
    with pytest.raises(ValueError, match="genie"):
        receive_frames(convolve_frames(ch, NC, sym), ch, NC, _detector(), sigma2, "genie")
