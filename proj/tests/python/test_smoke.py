import itertools
import math

import numpy as np
import pytest

import weightcorr as wc


def brute_wc(w):
    cols = w.T
    total = 0.0
    for i, j in itertools.permutations(range(len(cols)), 2):
        a, b = cols[i], cols[j]
        total += abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
    return total / (len(cols) * (len(cols) - 1))


def test_wc_fcn_identity_and_parallel():
    assert wc.wc_fcn(np.eye(3)) == 0.0
    assert wc.wc_fcn(np.array([[1.0, 2.0], [1.0, 2.0]])) == pytest.approx(1.0, abs=1e-15)


def test_wc_fcn_matches_numpy():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(5, 4))
    assert wc.wc_fcn(w) == pytest.approx(brute_wc(w), rel=1e-12)


def test_wc_cnn_one_channel_is_dense():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(4, 1, 3, 3))
    assert wc.wc_cnn(w) == pytest.approx(brute_wc(w.reshape(4, 9).T), rel=1e-12)


def test_g_term_and_bracket():
    assert wc.g_term(0.0, 4, 3) == 0.0
    rho, h = 0.3, 1e-6
    fd = (wc.g_term(rho + h, 4, 3) - wc.g_term(rho - h, 4, 3)) / (2 * h)
    assert wc.g_gradient_bracket(rho, 4, 3) == pytest.approx(fd, rel=1e-6)


def test_kl_layer_against_numpy_gaussian():
    rng = np.random.default_rng(2)
    w0, wf = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    b0, bf = rng.normal(size=2), rng.normal(size=2)
    k = wc.kl_layer(wf, bf, w0, b0, 1.0)
    rho = wc.wc_fcn(wf)
    cov = np.eye(8)
    cov[:6, :6] = np.kron(np.array([[1.0, rho], [rho, 1.0]]), np.eye(3))
    mu_q = np.concatenate([wf.T.ravel(), bf])
    mu_p = np.concatenate([w0.T.ravel(), b0])
    d = mu_q - mu_p
    ref = 0.5 * (np.trace(cov) + d @ d - 8 - np.log(np.linalg.det(cov)))
    assert k["total"] == pytest.approx(ref, rel=1e-10)


def test_spectral_norm_and_gaussian_kl():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(6, 4))
    assert wc.spectral_norm(m) == pytest.approx(np.linalg.norm(m, 2), rel=1e-8)
    assert wc.gaussian_kl(np.zeros(2), np.eye(2), np.zeros(2), np.eye(2)) == pytest.approx(0.0, abs=1e-15)


def test_kendall_and_bound():
    tau, c, d, t = wc.kendall_tau([1, 2, 3, 4, 5], [5, 4, 3, 2, 1])
    assert (tau, c, d, t) == (-1.0, 0, 10, 0)
    assert wc.pac_bayes_bound(0.0, 2, 1.0, 0.3) == pytest.approx(0.3 + math.sqrt(math.log(2) / 2))
    with pytest.raises(ValueError):
        wc.kendall_tau([1.0], [1.0])


def test_heatmap_offdiag_mean_is_wc():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(5, 3, 3, 3))
    pairwise, per_filter = wc.filter_heatmap(w)
    off = pairwise[~np.eye(5, dtype=bool)]
    assert off.mean() == pytest.approx(wc.wc_cnn(w), abs=1e-12)
    assert np.allclose(np.diag(pairwise), 1.0)
    assert len(per_filter) == 5


def test_wcd_gradient_shape():
    rng = np.random.default_rng(5)
    w = rng.normal(size=(4, 2, 3, 3))
    assert wc.wcd_gradient(w).shape == w.shape
    assert wc.rho_gradient(rng.normal(size=(3, 4))).shape == (3, 4)


def test_selftest_passes():
    results = wc.selftest(cases=5)
    assert results and all(r["passed"] for r in results)


def test_missing_checkpoint_raises():
    with pytest.raises(OSError):
        wc.measure_checkpoint("/nonexistent/final.ckpt")
