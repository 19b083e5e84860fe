import numpy as np
import pytest

from skim.calibration import (
    CalibSample, accumulate_hessian_proxy, accumulate_row_fisher_full, accumulate_sensitivity,
    err_l_diag, err_l_full, err_matrix_l_full, err_s_diag, err_s_full,
)


def _sample(rng, n, m, k):
    return CalibSample(rng.standard_normal((m, k)), rng.standard_normal((n, k)))


def test_sensitivity_zero_gradient(rng):
    s = CalibSample(rng.standard_normal((4, 5)), np.zeros((3, 5)))
    assert np.all(accumulate_sensitivity([s]) == 0)


def test_sensitivity_unit_vectors():
    X = np.zeros((4, 1)); X[2, 0] = 1
    Gy = np.zeros((3, 1)); Gy[1, 0] = 1
    G = accumulate_sensitivity([CalibSample(X, Gy)])
    expected = np.zeros((3, 4)); expected[1, 2] = 1.0
    assert np.array_equal(G, expected)


def test_sensitivity_matches_per_sample_loop(rng):
    samples = [_sample(rng, 3, 4, 5) for _ in range(2)]
    ref = np.zeros((3, 4))
    for s in samples:
        for i in range(3):
            for j in range(4):
                ref[i, j] += sum(s.Gy[i, t] * s.X[j, t] for t in range(5)) ** 2
    np.testing.assert_allclose(accumulate_sensitivity(samples), ref / 2, rtol=1e-12)


def test_sensitivity_errors(rng):
    with pytest.raises(ValueError):
        accumulate_sensitivity([])
    with pytest.raises(ValueError):
        accumulate_sensitivity([_sample(rng, 3, 4, 5), _sample(rng, 3, 5, 5)])
    with pytest.raises(ValueError):
        CalibSample(np.ones((4, 5)), np.ones((3, 6)))


def test_hessian_identity_and_sign():
    hp = accumulate_hessian_proxy([CalibSample(np.eye(4), np.ones((2, 4)))])
    assert np.array_equal(hp.H, np.eye(4))
    X = np.random.default_rng(0).standard_normal((3, 6))
    a = accumulate_hessian_proxy([CalibSample(X, np.ones((1, 6))), CalibSample(-X, np.ones((1, 6)))])
    b = accumulate_hessian_proxy([CalibSample(X, np.ones((1, 6)))])
    np.testing.assert_allclose(a.H, b.H, rtol=1e-15)


def test_hessian_triple_loop(rng):
    X = rng.standard_normal((4, 7))
    hp = accumulate_hessian_proxy([CalibSample(X, np.zeros((1, 7)))])
    ref = np.array([[sum(X[a, t] * X[b, t] for t in range(7)) for b in range(4)] for a in range(4)])
    np.testing.assert_allclose(hp.H, ref, rtol=0, atol=1e-12)
    assert np.array_equal(hp.diagH, np.diag(hp.H))
    for _ in range(20):
        v = rng.standard_normal(4)
        assert v @ hp.H @ v >= -1e-9 * (v @ v)


def test_row_fisher(rng):
    zero = accumulate_row_fisher_full([CalibSample(rng.standard_normal((3, 4)), np.zeros((2, 4)))])
    assert np.all(zero == 0)
    s = _sample(rng, 2, 3, 1)
    F = accumulate_row_fisher_full([s])
    g = s.Gy @ s.X.T
    for i in range(2):
        np.testing.assert_allclose(F[i], np.outer(g[i], g[i]), rtol=1e-14)
        assert np.linalg.matrix_rank(F[i]) == 1
    samples = [_sample(rng, 2, 3, 4) for _ in range(2)]
    F = accumulate_row_fisher_full(samples)
    ref = np.zeros((2, 3, 3))
    for s in samples:
        g = s.Gy @ s.X.T
        for i in range(2):
            ref[i] += np.outer(g[i], g[i]) / 2
    np.testing.assert_allclose(F, ref, rtol=1e-13)


def test_row_fisher_guard():
    s = CalibSample(np.zeros((1024, 1)), np.zeros((128, 1)))
    with pytest.raises(MemoryError):
        accumulate_row_fisher_full([s])


def test_homogeneity(rng):
    s = _sample(rng, 3, 4, 5)
    scaled = CalibSample(s.X, 3.0 * s.Gy)
    np.testing.assert_allclose(accumulate_sensitivity([scaled]), 9 * accumulate_sensitivity([s]), rtol=1e-13)
    np.testing.assert_allclose(accumulate_row_fisher_full([scaled]), 9 * accumulate_row_fisher_full([s]),
                               rtol=1e-12, atol=1e-12)


def test_evaluators_basic(rng):
    w = rng.standard_normal(5)
    wq = w + rng.standard_normal(5)
    r = w - wq
    for f, arg in [(err_l_full, np.eye(5)), (err_l_diag, np.ones(5)), (err_s_diag, np.ones(5)),
                   (err_s_full, np.eye(5))]:
        assert f(w, w, arg) == 0.0
        assert f(w, wq, arg) == pytest.approx(r @ r, rel=1e-14)


def test_l_full_matches_frobenius(rng):
    X = rng.standard_normal((6, 9))
    r = rng.standard_normal(6)
    H = X @ X.T
    assert err_l_full(r, np.zeros(6), H) == pytest.approx(np.sum((r @ X) ** 2), rel=1e-10)


def test_l_diag_is_l_full_without_offdiagonal(rng):
    X = rng.standard_normal((6, 9))
    H = X @ X.T
    w, wq = rng.standard_normal(6), rng.standard_normal(6)
    assert err_l_diag(w, wq, np.diag(H)) == pytest.approx(err_l_full(w, wq, np.diag(np.diag(H))), rel=1e-12)


def test_s_diag_loop(rng):
    w, wq, g = rng.standard_normal(7), rng.standard_normal(7), rng.exponential(size=7)
    ref = 0.0
    for j in range(7):
        ref += g[j] * (w[j] - wq[j]) ** 2
    assert err_s_diag(w, wq, g) == pytest.approx(ref, rel=1e-13)


def test_s_full_forms(rng):
    s = _sample(rng, 2, 5, 3)
    F = accumulate_row_fisher_full([s])
    w, wq = rng.standard_normal(5), rng.standard_normal(5)
    assert err_s_full(w, wq, F[0]) == pytest.approx(((w - wq) @ s.X @ s.Gy[0]) ** 2, rel=1e-9)
    diag_only = np.diag(np.diag(F[1]))
    assert err_s_full(w, wq, diag_only) == pytest.approx(err_s_diag(w, wq, np.diag(F[1])), rel=1e-12)


def test_matrix_l_full(rng):
    W = rng.standard_normal((4, 6))
    Wq = W + 0.1 * rng.standard_normal((4, 6))
    X = rng.standard_normal((6, 8))
    H = X @ X.T
    assert err_matrix_l_full(W, W, H) == 0.0
    rows = sum(err_l_full(W[i], Wq[i], H) for i in range(4))
    assert err_matrix_l_full(W, Wq, H) == pytest.approx(rows, rel=1e-12)
    assert err_matrix_l_full(W, Wq, H) == pytest.approx(np.sum(((W - Wq) @ X) ** 2), rel=1e-10)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        err_l_full(np.ones(3), np.ones(4), np.eye(3))
    with pytest.raises(ValueError):
        err_l_full(np.ones(3), np.ones(3), np.eye(4))
