import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ivkit import (
    Dataset, ModelSpec, dwh_endogeneity_test, first_stage_f, fit_ols, fit_tsls, lr_test,
    overid_test, significance_stars,
)
from ivkit.diagnostics import TestResult, control_function_fit, hansen_j, sargan, score_overid
from ivkit.errors import DataError, NumericalError, SpecError


def iv_data(seed, n=500, rho=0.5, direct=0.0, hetero=0.0):
    r = np.random.default_rng(seed)
    z1, z2, z3, w = r.normal(size=(4, n))
    u = r.normal(size=n) * (1 + hetero * np.abs(z1))
    v = rho * u + r.normal(size=n)
    x = 0.6 * z1 + 0.4 * z2 + 0.3 * z3 + 0.3 * w + v
    y = 1.0 - 0.5 * x + 0.7 * w + direct * z2 + u
    return Dataset({"y": y, "x": x, "z1": z1, "z2": z2, "z3": z3, "w": w})


SPEC = ModelSpec("y", ["x"], ["z1", "z2"], ["w"])


def test_first_stage_f_is_wald_on_excluded_instruments():
    d = iv_data(1)
    fit = fit_tsls(SPEC, d)
    res = first_stage_f(fit)
    fs = fit_ols(ModelSpec("x", exogenous=["w", "z1", "z2"]), d)
    idx = [fs.index("z1"), fs.index("z2")]
    b = fs.coef[idx]
    V = fs.vcov[np.ix_(idx, idx)]
    F = b @ np.linalg.solve(V, b) / 2
    assert res.statistic == pytest.approx(F, rel=1e-9)
    assert res.df == (2, d.n_rows - 4)
    assert res.p_value == pytest.approx(stats.f.sf(F, 2, d.n_rows - 4))
    assert res.summary().startswith("F=")


def test_sargan_is_n_times_uncentered_r2():
    d = iv_data(2)
    fit = fit_tsls(SPEC, d)
    e = fit.resid
    Z = np.column_stack([d["w"], np.ones(d.n_rows), d["z1"], d["z2"]])
    fitted = Z @ np.linalg.lstsq(Z, e, rcond=None)[0]
    expected = d.n_rows * (fitted @ fitted) / (e @ e)
    res = sargan(fit)
    assert res.statistic == pytest.approx(expected, rel=1e-10)
    assert res.df == (1,)


def test_score_equals_hansen_j_with_one_restriction():
    d = iv_data(3, hetero=1.0)
    fit = fit_tsls(SPEC, d)
    assert score_overid(fit).statistic == pytest.approx(hansen_j(fit).statistic, rel=1e-8)


def test_score_and_j_agree_asymptotically_with_two_restrictions():
    d = iv_data(4, n=20000)
    fit = fit_tsls(ModelSpec("y", ["x"], ["z1", "z2", "z3"], ["w"]), d)
    s, j = score_overid(fit), hansen_j(fit)
    assert s.df == j.df == (2,)
    assert s.statistic == pytest.approx(j.statistic, rel=0.05, abs=0.05)


@given(st.floats(0.2, 5.0), st.floats(-3.0, 3.0), st.floats(0.2, 5.0))
@settings(max_examples=30, deadline=None)
def test_sargan_invariant_to_instrument_reparameterisation(a, b, c):
    d = iv_data(5, n=200)
    base = sargan(fit_tsls(SPEC, d)).statistic
    d2 = d.with_columns({"q1": a * d["z1"] + b * d["z2"], "q2": c * d["z2"] - b * d["z1"]})
    alt = sargan(fit_tsls(ModelSpec("y", ["x"], ["q1", "q2"], ["w"]), d2)).statistic
    assert alt == pytest.approx(base, rel=1e-7, abs=1e-10)


def test_overid_detects_direct_effect():
    d = iv_data(6, n=5000, direct=0.3)
    for m in ("score", "sargan", "hansen_j"):
        assert overid_test(fit_tsls(SPEC, d), m).p_value < 0.001


def test_just_identified_overid_is_undefined():
    fit = fit_tsls(ModelSpec("y", ["x"], ["z1"], ["w"]), iv_data(7))
    with pytest.raises(SpecError, match="df=0"):
        overid_test(fit)


def test_overid_needs_iv_fit():
    fit = fit_ols(ModelSpec("y", exogenous=["x"]), iv_data(8))
    with pytest.raises(SpecError):
        sargan(fit)
    with pytest.raises(SpecError):
        overid_test(fit_tsls(SPEC, iv_data(8)), "bogus")


def test_summary_footer_format():
    r = TestResult(1.73991, (1,), 0.1872, "Score", "valid")
    assert r.summary() == "Score chi2(1) = 1.73991 (p = 0.1872)"
    f = TestResult(1365.2, (2, 1000), 0.0, "Wald F", "zero", "F")
    assert f.summary() == "F=1365, p=0.000"


def test_control_function_coefficients_equal_tsls():
    d = iv_data(9)
    cf = control_function_fit(SPEC, d)
    ts = fit_tsls(SPEC, d)
    for nm in ts.names:
        assert cf.coef_of(nm) == pytest.approx(ts.coef_of(nm), rel=1e-9)


def test_dwh_size_and_power():
    assert dwh_endogeneity_test(SPEC, iv_data(10, n=5000, rho=0.5)).p_value < 1e-6
    exog = [dwh_endogeneity_test(SPEC, iv_data(s, n=300, rho=0.0)).p_value for s in range(200)]
    assert 0.02 <= np.mean(np.array(exog) < 0.05) <= 0.09


def test_lr_test_values_and_guard():
    r = lr_test(-100.0, -98.0, 1)
    assert r.statistic == pytest.approx(4.0)
    assert r.p_value == pytest.approx(stats.chi2.sf(4.0, 1))
    assert lr_test(-5.0, -5.0 - 1e-12).statistic == 0.0
    with pytest.raises(NumericalError):
        lr_test(-5.0, -6.0)
    with pytest.raises(DataError):
        lr_test(-5.0, -4.0, 0)


@pytest.mark.parametrize("p,stars", [
    (0.0, "***"), (0.0099, "***"), (0.01, "**"), (0.0499, "**"), (0.05, "*"),
    (0.0999, "*"), (0.10, ""), (1.0, ""),
])
def test_star_boundaries_are_strict(p, stars):
    assert significance_stars(p) == stars


@given(st.floats(0, 1), st.floats(0, 1))
def test_stars_monotone(p, q):
    lo, hi = sorted((p, q))
    assert len(significance_stars(lo)) >= len(significance_stars(hi))


def test_stars_reject_invalid():
    with pytest.raises(DataError):
        significance_stars(1.5)
    with pytest.raises(DataError):
        significance_stars(float("nan"))
