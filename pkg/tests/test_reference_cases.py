"""Small closed-form and Monte Carlo reference cases for each module."""

import math

import numpy as np
import pytest
from scipy import stats

from ivkit import (
    DGPConfig, Dataset, ModelSpec, PropensityModel, SelectionLayer, balance_table,
    common_support, dwh_endogeneity_test, estimate_propensity, fit_gmm, fit_liml, fit_ols,
    fit_tsls, generate, heckman_two_step, inverse_mills, lr_test, match_att, replicate,
    significance_stars,
)
from ivkit.binary import fit_binary
from ivkit.errors import IVKitError, RankError
from ivkit.estimators import _gmm_step, _moment_cov, build_design, gmm_arrays, robust_covariance

CONTROLS = ["gender", "edu", "lnincome"]
SPEC = ModelSpec("stay", ["hukou"], ["family", "child"], CONTROLS)


# ------------------------------------------------------------------ OLS

def test_exact_linear_fit():
    x = np.arange(5.0)
    fit = fit_ols(ModelSpec("y", exogenous=["x"]), Dataset({"y": 2 + 3 * x, "x": x}))
    assert fit.coef_of("_cons") == pytest.approx(2.0, abs=1e-12)
    assert fit.coef_of("x") == pytest.approx(3.0, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)


def test_orthogonal_regressor_has_zero_slope():
    x = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    fit = fit_ols(ModelSpec("y", exogenous=["x"]), Dataset({"y": np.full(5, 4.0), "x": x}))
    assert fit.coef_of("x") == pytest.approx(0.0, abs=1e-12)


def test_hc0_close_to_classical_under_homoskedasticity():
    r = np.random.default_rng(1)
    n = 10_000
    X = np.column_stack([r.normal(size=n), r.normal(size=n), np.ones(n)])
    e = r.normal(size=n)
    hc0 = np.diag(robust_covariance(X, e, "HC0"))
    cls = np.diag(robust_covariance(X, e, "classical", n - 3))
    np.testing.assert_allclose(hc0, cls, rtol=0.10)


@pytest.fixture(scope="module")
def big_strong():
    return generate(DGPConfig.strong(n=50_000, seed=31))[0]


def test_ols_biased_where_tsls_recovers_beta(big_strong):
    d = big_strong
    ols = fit_ols(ModelSpec("stay", exogenous=["hukou", *CONTROLS]), d)
    iv = fit_tsls(SPEC, d)
    assert abs(ols.coef_of("hukou") + 0.2) > 2 * ols.se_of("hukou")
    assert abs(iv.coef_of("hukou") + 0.2) < 2 * iv.se_of("hukou")
    assert abs(fit_liml(SPEC, d).coef_of("hukou") - iv.coef_of("hukou")) <= 0.005


def test_instrument_collinear_with_control_is_named():
    d, _ = generate(DGPConfig(n=2000, seed=2))
    d = d.with_columns({"edu2": 2 * d["edu"]})
    with pytest.raises(RankError) as exc:
        fit_tsls(ModelSpec("stay", ["hukou"], ["family", "edu2"], CONTROLS), d)
    assert {"edu", "edu2"} & set(exc.value.columns)


@pytest.mark.parametrize("seed", range(5))
def test_liml_kappa_at_least_one(seed):
    d, _ = generate(DGPConfig(n=3000, seed=seed))
    assert fit_liml(SPEC, d).info["kappa"] >= 1 - 1e-10


def test_igmm_fixed_point():
    d, _ = generate(DGPConfig.strong(n=5000, seed=3, heteroskedasticity=0.5))
    design = build_design(SPEC, d)
    out = gmm_arrays(design, "iterated", tol=1e-8)
    e = design.y - design.X @ out["beta"]
    again = _gmm_step(design, _moment_cov(design.Z, e))
    assert np.max(np.abs(again - out["beta"])) < 1e-8


def test_two_step_gmm_efficiency_under_heteroskedasticity():
    cfg = DGPConfig.strong(n=5000, seed=4, heteroskedasticity=1.0)

    def one(d, t):
        g, s = fit_gmm(SPEC, d, "two_step"), fit_tsls(SPEC, d)
        return g.coef_of("hukou"), s.coef_of("hukou"), g.se_of("hukou"), s.se_of("hukou")

    a = np.array(replicate(one, cfg, 200))
    assert abs(a[:, 0].mean() - a[:, 1].mean()) < 0.01
    assert a[:, 2].mean() <= a[:, 3].mean()


def test_single_group_absorption_equals_demeaning():
    d, _ = generate(DGPConfig(n=1000, seed=5))
    d = d.with_columns({"one": np.zeros(d.n_rows)}, {"one": "categorical:1"})
    fe = fit_ols(ModelSpec("stay", exogenous=["hukou", *CONTROLS], fixed_effect="one"), d)
    ols = fit_ols(ModelSpec("stay", exogenous=["hukou", *CONTROLS]), d)
    np.testing.assert_allclose(fe.coef, ols.coef[:-1], rtol=1e-10)


# ------------------------------------------------------------------ diagnostics

def test_dwh_power_under_endogeneity():
    cfg = DGPConfig.strong(n=50_000, seed=6, rho_endog=0.3)
    p = replicate(lambda d, t: dwh_endogeneity_test(SPEC, d).p_value, cfg, 40)
    assert np.mean(np.array(p) < 0.01) >= 0.95


def test_lr_boundaries():
    r = lr_test(-10.0, -10.0)
    assert (r.statistic, r.p_value) == (0.0, 1.0)
    big = lr_test(0.0, 173.63 / 2)
    assert big.p_value < 1e-30


def test_reported_p_values_to_stars():
    assert significance_stars(0.1872) == ""
    assert significance_stars(0.004) == "***"
    assert significance_stars(0.05) == "*"


# ------------------------------------------------------------------ binary models

def test_logit_intercept_only_is_log_odds():
    y = np.r_[np.ones(25), np.zeros(75)]
    fit = fit_binary(y, np.ones((100, 1)), ["_cons"], "logit")
    assert fit.coef[0] == pytest.approx(math.log(0.25 / 0.75), abs=1e-10)


def test_probit_intercept_only_half_share_is_zero():
    y = np.r_[np.ones(50), np.zeros(50)]
    fit = fit_binary(y, np.ones((100, 1)), ["_cons"], "probit")
    assert fit.coef[0] == pytest.approx(0.0, abs=1e-12)


# ------------------------------------------------------------------ matching

@pytest.fixture(scope="module")
def obs_data():
    d, _ = generate(DGPConfig(n=3000, seed=7, assignment="observables"))
    return d, estimate_propensity("hukou", CONTROLS, d)


def test_constant_outcome_gives_zero_att(obs_data):
    d, pm = obs_data
    d2 = d.with_columns({"flat": np.full(d.n_rows, 3.0)})
    for m in ("nn1", "nn2", "radius", "kernel"):
        assert match_att(pm, "flat", m, d2).att == pytest.approx(0.0, abs=1e-12)


def test_exact_duplicates_recover_shift():
    r = np.random.default_rng(8)
    x = r.normal(size=(60, 2))
    delta = 0.37
    y0 = x @ [1.0, -0.5] + r.normal(size=60)
    X = np.vstack([x, x])
    d = Dataset({"x1": X[:, 0], "x2": X[:, 1], "y": np.r_[y0 + delta, y0]})
    # each treated row shares a distinct score with its own duplicate control
    s = np.tile(np.linspace(0.1, 0.9, 60), 2)
    pm = PropensityModel(None, s, "t", ["x1", "x2"], np.r_[np.ones(60, bool), np.zeros(60, bool)])
    mr = match_att(pm, "y", "nn1", d)
    assert mr.att == pytest.approx(delta, abs=1e-12)
    bt = balance_table(pm, mr, ["x1", "x2"], d)
    assert bt.max_abs_post() == pytest.approx(0.0, abs=1e-10)


def test_support_boundary_cases():
    same = PropensityModel(None, np.r_[np.linspace(0.2, 0.8, 10), np.linspace(0.2, 0.8, 10)],
                           "t", [], np.r_[np.ones(10, bool), np.zeros(10, bool)])
    sup = common_support(same)
    assert sup.off_support_treated == sup.off_support_control == 0
    assert sup.counts_treated.sum() + sup.counts_control.sum() == 20
    high = PropensityModel(None, np.r_[0.3, 0.5, 0.95, 0.2, 0.6, 0.7], "t", [],
                           np.r_[np.ones(3, bool), np.zeros(3, bool)])
    assert common_support(high).off_support_treated == 1


# ------------------------------------------------------------------ selection

def test_mills_reference_values():
    assert inverse_mills(10.0) < 1e-20
    exact = stats.norm.pdf(-3) / stats.norm.cdf(-3)
    assert inverse_mills(-3.0) == pytest.approx(3.28310, abs=1e-4)
    assert inverse_mills(-3.0) == pytest.approx(exact, rel=1e-12)


REG = ["hukou", "gender", "edu", "lnincome"]
SEL = ["hukou", "lnhoscost", "lnincome", "edu"]


def test_independent_selection_matches_plain_ols():
    d, _ = generate(DGPConfig(n=20_000, seed=9, selection=SelectionLayer(rho_sel=0.0)))
    res = heckman_two_step("employ", REG, "selected", SEL, d)
    ols = fit_ols(ModelSpec("employ", exogenous=REG), d.subset(d["selected"] == 1))
    for c in REG:
        assert abs(res.outcome_fit.coef_of(c) - ols.coef_of(c)) < ols.se_of(c)


def test_everyone_selected_is_an_explicit_error():
    d, _ = generate(DGPConfig(n=2000, seed=10, selection=SelectionLayer()))
    d = d.with_columns({"all_in": np.ones(d.n_rows)}, {"all_in": "binary"})
    with pytest.raises(IVKitError):
        heckman_two_step("employ", REG, "all_in", SEL, d)
