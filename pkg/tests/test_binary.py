import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize, special, stats

from ivkit.binary import fit_binary, hessian, loglik, score
from ivkit.errors import DataError, SeparationError


def binary_data(seed, n=800, link="logit"):
    r = np.random.default_rng(seed)
    X = np.column_stack([r.normal(size=n), r.binomial(1, 0.4, n), np.ones(n)])
    beta = np.array([0.8, -0.5, 0.3])
    xb = X @ beta
    p = special.expit(xb) if link == "logit" else stats.norm.cdf(xb)
    y = (r.random(n) < p).astype(float)
    return y, X


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("link", ["logit", "probit"])
@given(seed=st.integers(0, 10_000), b=st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3))
@settings(max_examples=20, deadline=None)
def test_score_matches_finite_differences(link, seed, b):
    y, X = binary_data(seed, n=200, link=link)
    beta = np.array(b)
    num = central_diff(lambda v: loglik(v, y, X, link), beta)
    ana = score(beta, y, X, link)
    assert np.max(np.abs(ana - num)) / max(1.0, np.max(np.abs(ana))) < 1e-6


@pytest.mark.parametrize("link", ["logit", "probit"])
def test_hessian_matches_finite_differences_of_score(link):
    y, X = binary_data(1, link=link)
    beta = np.array([0.5, -0.2, 0.1])
    H = hessian(beta, y, X, link)
    num = np.column_stack([
        central_diff(lambda v: score(v, y, X, link)[j], beta) for j in range(3)
    ])
    np.testing.assert_allclose(H, num, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("link", ["logit", "probit"])
def test_newton_matches_generic_optimizer(link):
    y, X = binary_data(2, link=link)
    fit = fit_binary(y, X, ["x", "d", "_cons"], link)
    if link == "logit":
        nll = lambda b: -np.sum(y * (X @ b) - np.log1p(np.exp(X @ b)))
    else:
        nll = lambda b: -np.sum(stats.norm.logcdf((2 * y - 1) * (X @ b)))
    opt = optimize.minimize(nll, np.zeros(3), method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000,
                                     "maxfev": 40000})
    np.testing.assert_allclose(fit.coef, opt.x, atol=1e-6)
    assert fit.info["max_abs_score"] < 1e-8
    assert fit.info["loglik"] == pytest.approx(-opt.fun, rel=1e-10)


def test_vcov_is_inverse_information():
    y, X = binary_data(3, link="probit")
    fit = fit_binary(y, X, ["x", "d", "_cons"], "probit")
    np.testing.assert_allclose(fit.vcov, np.linalg.inv(-hessian(fit.coef, y, X, "probit")),
                               rtol=1e-10)
    assert fit.method == "Probit"
    assert 0 < fit.r2 < 1


def test_perfect_separation_is_reported():
    x = np.r_[np.linspace(-2, -0.1, 20), np.linspace(0.1, 2, 20)]
    y = (x > 0).astype(float)
    X = np.column_stack([x, np.ones_like(x)])
    for link in ("logit", "probit"):
        with pytest.raises(SeparationError):
            fit_binary(y, X, ["x", "_cons"], link)


def test_bad_response_rejected():
    X = np.ones((4, 1))
    with pytest.raises(DataError):
        fit_binary(np.array([0, 1, 2, 1.0]), X, ["_cons"], "logit")
    with pytest.raises(DataError):
        fit_binary(np.ones(4), X, ["_cons"], "logit")
    with pytest.raises(DataError):
        fit_binary(np.array([0, 1, 0, 1.0]), X, ["_cons"], "cloglog")
