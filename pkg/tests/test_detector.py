import itertools

import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from cgoamp.cg import CgConfig
from cgoamp.channel import RealLinearSystem, realify_matrix
from cgoamp.constellation import demap_real, make_constellation
from cgoamp.detector import (DetectorConfig, NetParams, detect, eigen_precompute, le_cg, le_direct,
                             lmmse_detect, lmmse_matrix, make_detector, ml_bruteforce, nle, tau2_closed,
                             tau2_trace, v2_update, zeta)

from conftest import random_system

TIGHT = CgConfig(max_iters=200, tol=1e-10)


def test_params_identity_and_count():
    p = NetParams.identity(5)
    assert p.values.shape == (5, 4) and p.as_vector().size == 20
    np.testing.assert_array_equal(p.values[:, 3], 0.0)
    np.testing.assert_array_equal(p.values[:, :3], 1.0)
    np.testing.assert_array_equal(NetParams.from_vector(p.as_vector()).values, p.values)
    assert p.truncated(7).T == 7 and p.truncated(2).T == 2
    with pytest.raises(ValueError):
        NetParams([1.0, np.nan, 1.0, 0.0])


@pytest.mark.parametrize("kw", [dict(beta=1.5), dict(epsilon=0.0), dict(le_strategy="qr")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        DetectorConfig(**kw)


def test_eigenvalues():
    np.testing.assert_allclose(eigen_precompute(np.eye(4)), 1.0)
    np.testing.assert_allclose(np.sort(eigen_precompute(np.diag([1.0, 2.0]))), [1.0, 4.0])
    C = np.random.default_rng(0).standard_normal((6, 4))
    lam = eigen_precompute(C)
    assert lam.size == 6 and np.all(lam >= 0)
    assert lam.sum() == pytest.approx(np.sum(C * C), rel=1e-9)


def test_zeta_special_cases():
    n = 8
    assert zeta(np.ones(n), 0.6, 0.5, n) == pytest.approx(1 + 0.6 / (2 * 0.5))
    assert zeta(np.ones(n), 0.0, 0.5, n) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="zero channel"):
        zeta(np.zeros(n), 0.1, 1.0, n)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 16), st.integers(0, 2**31), st.floats(1e-3, 3.0), st.floats(1e-3, 3.0))
def test_zeta_two_routes_and_bound(n, seed, sigma2, v2):
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((n, n))
    _, z_direct = le_direct(C, np.zeros(n), np.zeros(n), sigma2, v2)
    z_eig = zeta(eigen_precompute(C), sigma2, v2, n)
    assert z_direct == pytest.approx(z_eig, rel=1e-9)
    assert z_eig >= 1.0


def test_le_direct_trivial_cases(rng):
    y = rng.standard_normal(6)
    d, z = le_direct(np.eye(6), y, np.zeros(6), 1e-14, 1.0)
    np.testing.assert_allclose(np.zeros(6) + z * d, y, atol=1e-12)
    sys = random_system(rng, 4, 4, snr_db=300)
    d, _ = le_direct(sys.C, sys.C @ sys.u_truth, sys.u_truth, 0.1, 1.0)
    np.testing.assert_allclose(d, 0.0, atol=1e-14)


def test_le_cg_identity_channel(rng):
    g = rng.standard_normal(6)
    d, z, iters, _ = le_cg(np.eye(6), g, np.zeros(6), 0.4, 0.5, np.ones(6), TIGHT)
    np.testing.assert_allclose(d, g / (1 + 0.4 / (2 * 0.5)), atol=1e-14)
    assert iters == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_le_cg_matches_direct(seed):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, 8, 8)
    u = rng.standard_normal(16) * 0.3
    v2 = float(rng.uniform(0.01, 1.0))
    d1, z1 = le_direct(sys.C, sys.y, u, sys.sigma2, v2)
    d2, z2, iters, _ = le_cg(sys.C, sys.y, u, sys.sigma2, v2, eigen_precompute(sys.C), TIGHT)
    assert np.linalg.norm(d2 - d1) <= 1e-6 * np.linalg.norm(d1)
    assert z2 == pytest.approx(z1, rel=1e-9)
    assert iters <= 16


def test_tau2_closed_cases():
    assert tau2_closed(0.7, 1.0, 1.0) == 0.0
    assert tau2_closed(0.7, 1.9, 0.0) == 0.7
    assert tau2_closed(0.7, 1.9, 1.0) == pytest.approx(0.7 * 0.9)


def test_tau2_trace_degenerate_cases():
    C = np.random.default_rng(2).standard_normal((4, 4))
    assert tau2_trace(np.zeros((4, 4)), C, 0.3, 0.1, 1.2) == pytest.approx(0.3)
    assert tau2_trace(np.ones((4, 4)), C, 0.3, 0.1, 0.0) == pytest.approx(0.3)


def _appendix_case(rng, n, theta):
    C = rng.standard_normal((n, n)) / np.sqrt(n)
    sigma2, v2 = rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0)
    W_hat = lmmse_matrix(C, sigma2, v2)
    z = n / np.trace(W_hat @ C)
    return tau2_trace(z * W_hat, C, v2, sigma2, theta), tau2_closed(v2, z, theta)


@pytest.mark.parametrize("n,theta", list(itertools.product((4, 8), (0.5, 1.0, 1.3))))
def test_appendix_identity_examples(n, theta):
    rng = np.random.default_rng(n * 10 + int(theta * 10))
    for _ in range(5):
        trace, closed = _appendix_case(rng, n, theta)
        assert trace == pytest.approx(closed, rel=1e-9)


def test_v2_update_rules(rng):
    sys = random_system(rng, 4, 4)
    y = sys.C @ sys.u_truth
    tr = np.sum(sys.C * sys.C)
    assert v2_update(y, sys.C, sys.u_truth, 0.0, 0.8, 0.5, 1e-10, tr) == pytest.approx(0.4)
    assert v2_update(y, sys.C, sys.u_truth, 1.0, 1e-12, 0.5, 1e-10, tr) == 1e-10
    u = sys.u_truth + 0.1
    raw = (np.sum((y - sys.C @ u) ** 2) - 4 * 0.01) / tr
    assert v2_update(y, sys.C, u, 0.01, 5.0, 1.0, 1e-10, tr) == pytest.approx(raw)


def test_nle_cases():
    c = make_constellation(4)
    r = np.array([0.9, -0.2, 0.05, -1.4])
    plain = nle(r, 0.3, 1.0, 0.0, c)
    a = 1 / np.sqrt(2)
    np.testing.assert_allclose(plain, a * np.tanh(a * r / 0.3), atol=1e-14)
    np.testing.assert_array_equal(nle(r, 0.3, 0.0, 0.4, c), 0.0)
    np.testing.assert_allclose(nle(r, 1e-12, 1.0, 0.0, c), np.sign(r) * a, atol=1e-12)
    np.testing.assert_allclose(nle(r, 0.3, 2.0, 0.5, c), 2.0 * (plain - 0.5 * r), atol=1e-14)


def test_detect_noise_free_identity():
    c = make_constellation(16)
    u = np.concatenate([c.real_set, c.real_set[::-1]])
    sys = RealLinearSystem(np.eye(8), u.copy(), 1e-12)
    u_hat, _ = detect(sys, NetParams.identity(1), DetectorConfig(le_strategy="direct", constellation=c))
    np.testing.assert_array_equal(demap_real(u_hat, c), demap_real(u, c))


def test_detect_traces_and_tau_nonnegative(rng):
    sys = random_system(rng, 8, 8, batch=50)
    cfg = DetectorConfig(le_strategy="cg", cg=TIGHT, trace=True)
    _, traces = detect(sys, NetParams.identity(6), cfg)
    assert len(traces) == 6
    for tr in traces:
        assert np.all(tr.tau2 >= -1e-12) and np.all(tr.v2 >= cfg.epsilon) and np.all(tr.zeta >= 1.0)
        assert np.all(tr.cg_iters <= 32)


def test_detect_is_deterministic(rng):
    sys = random_system(rng, 8, 8, batch=20)
    p = NetParams(np.random.default_rng(1).uniform(0.5, 1.5, (4, 4)))
    a, _ = detect(sys, p, DetectorConfig())
    b, _ = detect(sys, p, DetectorConfig())
    np.testing.assert_array_equal(a, b)


def test_detect_batched_equals_single(rng):
    sys = random_system(rng, 4, 4, batch=5)
    cfg = DetectorConfig(le_strategy="direct")
    batch, _ = detect(sys, NetParams.identity(3), cfg)
    for b in range(5):
        one, _ = detect(RealLinearSystem(sys.C[b], sys.y[b], sys.sigma2[b]), NetParams.identity(3), cfg)
        np.testing.assert_allclose(batch[b], one, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 16), st.integers(0, 2**31))
def test_layerwise_cg_direct_equivalence(n, seed):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, n, n)
    base = DetectorConfig(cg=TIGHT, trace=True)
    _, td = detect(sys, NetParams.identity(5), replace(base, le_strategy="direct"))
    _, tc = detect(sys, NetParams.identity(5), base)
    for a, b in zip(td, tc):
        assert np.linalg.norm(b.r - a.r) <= 1e-6 * np.linalg.norm(a.r)


def test_detect_rejects_nonpositive_noise(rng):
    sys = random_system(rng, 4, 4)
    with pytest.raises(ValueError, match="sigma2"):
        detect(RealLinearSystem(sys.C, sys.y, 0.0), NetParams.identity(2), DetectorConfig())


def test_detect_names_failing_layer(rng):
    sys = random_system(rng, 4, 4)
    bad = NetParams([[1.0, 1.0, 1.0, 0.0], [1e308, 1.0, 1e308, 0.0]])
    with pytest.raises(FloatingPointError, match="layer 2"):
        with np.errstate(all="ignore"):
            detect(sys, bad, DetectorConfig(le_strategy="direct"))


def test_lmmse_cases():
    u = np.array([1.0, -1.0, -1.0, 1.0]) / np.sqrt(2)
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)))
    est = lmmse_detect(RealLinearSystem(Q, Q @ u, 1e-12))
    np.testing.assert_allclose(est, u, atol=1e-9)
    c, y, s2 = 0.8, np.array([0.3, -0.5]), 0.2
    est = lmmse_detect(RealLinearSystem(realify_matrix(np.array([[c + 0j]])), y, s2))
    np.testing.assert_allclose(est, y * c / (c * c + s2 / 2 * 2))


def _nested_loop_ml(C, y, points):
    best, arg = np.inf, None
    for a in points:
        for b in points:
            s = np.array([a.real, b.real, a.imag, b.imag])
            d = np.sum((y - C @ s) ** 2)
            if d < best:
                best, arg = d, (a, b)
    return np.array(arg)


def test_ml_matches_independent_search(rng):
    c = make_constellation(4)
    for _ in range(100):
        sys = random_system(rng, 2, 2, snr_db=4)
        np.testing.assert_array_equal(ml_bruteforce(sys, c), _nested_loop_ml(sys.C, sys.y, c.points))


def test_ml_noise_free_and_guard(rng):
    c = make_constellation(16)
    sys = random_system(rng, 3, 3, snr_db=300, order=16)
    sym = ml_bruteforce(RealLinearSystem(sys.C, sys.C @ sys.u_truth, 0.0), c)
    np.testing.assert_allclose(np.concatenate([sym.real, sym.imag]), sys.u_truth, atol=1e-12)
    big = random_system(rng, 6, 6, order=16)
    with pytest.raises(ValueError, match="exceeds"):
        ml_bruteforce(big, c)


def test_detector_factory(rng):
    cfg = DetectorConfig()
    assert make_detector("oamp", cfg).cfg.le_strategy == "direct"
    assert make_detector("cg-oamp", cfg).cfg.le_strategy == "cg"
    with pytest.raises(ValueError, match="parameters"):
        make_detector("cg-oamp-net", cfg)
    with pytest.raises(ValueError, match="unknown"):
        make_detector("zf", cfg)
    sys = random_system(rng, 2, 2, batch=4)
    for name in ("oamp", "cg-oamp", "lmmse", "ml"):
        assert make_detector(name, cfg)(sys).shape == (4, 4)
