import math

import numpy as np
import pytest

from helpers import random_kernel
from oracles import brute_gram, condition, mvn_logpdf
from windgp.dataset import AffineTransform, Dataset
from windgp.errors import DimensionMismatch, NegativeVariance, SingularGram
from windgp.gp import fit, fit_xy, log_marginal_likelihood, predict
from windgp.kernels import KernelModel, RbfParams, gram
from windgp.metrics import nlpd_arrays

LOG_2PI = math.log(2 * math.pi)


def _unit_rbf(noise):
    return KernelModel(RbfParams(1.0, [1.0]), noise)


def test_scalar_fit_weights():
    m = fit_xy([[0.0]], [3.0], _unit_rbf(0.5))
    np.testing.assert_allclose(m.weights, [2.0], rtol=1e-15)


def test_lml_univariate_cases():
    # A = [[1]]: unit kernel variance, zero noise
    assert log_marginal_likelihood(fit_xy([[0.0]], [0.0], _unit_rbf(0.0))) == pytest.approx(
        -0.5 * LOG_2PI, abs=1e-12)
    assert log_marginal_likelihood(fit_xy([[0.0]], [1.0], _unit_rbf(0.0))) == pytest.approx(
        -0.5 - 0.5 * LOG_2PI, abs=1e-12)


@pytest.mark.parametrize("family", ["rbf", "sm", "gsm"])
def test_fit_reconstruction_and_weights(family, rng):
    X = rng.uniform(-1, 1, (12, 1))
    y = rng.standard_normal(12)
    kern = random_kernel(rng, family, X)
    m = fit_xy(X, y, kern)
    A = gram(kern, X, include_noise=True)
    rec = m.chol @ m.chol.T
    assert np.linalg.norm(rec - A) <= 1e-8 * np.linalg.norm(A)
    assert np.linalg.norm(A @ m.weights - y) <= 1e-8 * np.linalg.norm(y)


def test_duplicate_inputs_without_noise_are_singular():
    with pytest.raises(SingularGram):
        fit_xy([[0.0], [0.0], [1.0]], [1.0, 1.0, 2.0], _unit_rbf(0.0))


@pytest.mark.parametrize("family", ["rbf", "sm", "gsm"])
def test_lml_matches_brute_force(family, rng):
    for _ in range(5):
        N = int(rng.integers(1, 9))
        X = rng.uniform(-1.5, 1.5, (N, 2))
        y = rng.standard_normal(N)
        kern = random_kernel(rng, family, X)
        m = fit_xy(X, y, kern)
        A = gram(kern, X, include_noise=True)
        assert log_marginal_likelihood(m) == pytest.approx(mvn_logpdf(y, 0.0, A), abs=1e-8)


@pytest.mark.parametrize("family", ["rbf", "sm"])
def test_predict_matches_joint_conditioning(family, rng):
    for _ in range(5):
        N, M = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        X = rng.uniform(-1.5, 1.5, (N, 1))
        Xs = rng.uniform(-2, 2, (M, 1))
        y = rng.standard_normal(N)
        kern = random_kernel(rng, family, X)
        allX = np.vstack([X, Xs])
        joint = brute_gram(kern, allX, allX) + kern.noise_variance * np.eye(N + M)
        joint[N:, N:] -= kern.noise_variance * np.eye(M)  # latent f* block
        mean, var = condition(joint, y, N)
        p = predict(fit_xy(X, y, kern), Xs, include_noise=False)
        np.testing.assert_allclose(p.mean, mean, atol=1e-8)
        np.testing.assert_allclose(p.variance, var, atol=1e-8)
        pn = predict(fit_xy(X, y, kern), Xs, include_noise=True)
        np.testing.assert_allclose(pn.variance, var + kern.noise_variance, atol=1e-8)


def test_noiseless_interpolation():
    X = np.array([[0.0], [0.7], [1.9]])
    y = np.array([0.3, -1.0, 2.0])
    p = predict(fit_xy(X, y, _unit_rbf(0.0)), X[1:2], include_noise=False)
    assert p.mean[0] == pytest.approx(-1.0, abs=1e-8)
    assert abs(p.variance[0]) <= 1e-8


def test_prior_reversion_far_away():
    kern = KernelModel(RbfParams(1.7, [0.5]), 0.1)
    p = predict(fit_xy([[0.0], [0.3]], [1.0, 2.0], kern), [[10.0]], include_noise=False)
    assert abs(p.mean[0]) <= 1e-6
    assert p.variance[0] == pytest.approx(1.7, abs=1e-6)


@pytest.mark.parametrize("family", ["rbf", "sm", "gsm"])
def test_posterior_variance_bounded_by_prior(family, rng):
    X = rng.uniform(-1, 1, (15, 1))
    kern = random_kernel(rng, family, X)
    m = fit_xy(X, rng.standard_normal(15), kern)
    Xs = rng.uniform(-2, 2, (20, 1))
    prior = np.diag(gram(kern, Xs))
    for inc in (False, True):
        p = predict(m, Xs, include_noise=inc)
        assert np.all(p.variance <= prior + (kern.noise_variance if inc else 0) + 1e-8)
        assert np.all(p.variance >= 0)


def test_train_set_nlpd_matches_closed_form(rng):
    X = rng.uniform(-1, 1, (8, 1))
    y = rng.standard_normal(8)
    kern = random_kernel(rng, "rbf", X)
    p = predict(fit_xy(X, y, kern), X, include_noise=True)
    K = brute_gram(kern, X, X)
    Ainv = np.linalg.inv(K + kern.noise_variance * np.eye(8))
    mean = K @ Ainv @ y
    var = np.diag(K - K @ Ainv @ K) + kern.noise_variance
    assert nlpd_arrays(y, p.mean, p.variance) == pytest.approx(nlpd_arrays(y, mean, var), abs=1e-8)


def test_lml_decreases_along_shift_ray(rng):
    X = rng.uniform(-1, 1, (10, 1))
    y = rng.standard_normal(10)
    kern = random_kernel(rng, "rbf", X)
    vals = [log_marginal_likelihood(fit_xy(X, y + c * 1e3, kern)) for c in (1, 10, 100)]
    assert vals[0] > vals[1] > vals[2]


def test_deterministic(rng):
    X = rng.uniform(-1, 1, (20, 1))
    y = rng.standard_normal(20)
    kern = random_kernel(rng, "sm", X)
    a = predict(fit_xy(X, y, kern), X[:5] + 0.1)
    b = predict(fit_xy(X, y, kern), X[:5] + 0.1)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.variance, b.variance)


def test_original_units_and_dimension_check():
    tt = AffineTransform(np.array([1000.0]), np.array([50.0]))
    d = Dataset([0, 600], np.array([[0.0], [1.0]]), [0.5, -0.5], target_transform=tt)
    m = fit(d, _unit_rbf(0.1))
    z = predict(m, [[0.5]], original_units=False)
    kw = predict(m, [[0.5]])
    assert kw.mean[0] == pytest.approx(1000 + 50 * z.mean[0])
    assert kw.variance[0] == pytest.approx(2500 * z.variance[0])
    with pytest.raises(DimensionMismatch):
        predict(m, np.zeros((2, 3)))


def test_negative_variance_clamp_and_error(monkeypatch):
    import windgp.gp as gpmod

    m = fit_xy([[0.0]], [1.0], _unit_rbf(0.1))
    monkeypatch.setattr(gpmod, "gram_diag", lambda k, X: np.full(len(X), 1.0 / 1.1 - 5e-9))
    p = predict(m, [[0.0]], include_noise=False)
    assert p.clamped == 1 and p.variance[0] == 0.0
    monkeypatch.setattr(gpmod, "gram_diag", lambda k, X: np.full(len(X), 0.5))
    with pytest.raises(NegativeVariance):
        predict(m, [[0.0]])
