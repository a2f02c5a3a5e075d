"""Instrument-validity and model-comparison tests."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import distributions as dist
from .data import Dataset
from .errors import DataError, NumericalError, SpecError
from .estimators import (
    FitResult, IVDesign, ModelSpec, _first_stages, _ols_design, _qr, _resid_on, build_design,
    gmm_arrays,
)


@dataclass(frozen=True)
class TestResult:
    """A scalar test statistic with its reference distribution.

    ``family`` is ``"chi2"`` or ``"F"``; ``df`` is ``(q,)`` or ``(q, df_resid)``.
    """

    __test__ = False  # not a pytest class

    statistic: float
    df: tuple[int, ...]
    p_value: float
    method: str
    null: str
    family: str = "chi2"

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise NumericalError(f"p-value {self.p_value} outside [0, 1]")

    def summary(self) -> str:
        """One-line footer, e.g. ``Score chi2(1) = 1.73991 (p = 0.1872)``."""
        if self.family == "F":
            stat = f"{self.statistic:.0f}" if self.statistic >= 100 else f"{self.statistic:.2f}"
            return f"F={stat}, p={self.p_value:.3f}"
        dfs = ",".join(str(x) for x in self.df)
        return f"{self.method} chi2({dfs}) = {self.statistic:.6g} (p = {self.p_value:.4f})"

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic, "df": list(self.df), "p_value": self.p_value,
            "method": self.method, "null": self.null, "family": self.family,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _chi2(stat: float, df: int, method: str, null: str) -> TestResult:
    stat = max(float(stat), 0.0)
    return TestResult(stat, (int(df),), float(dist.chi2_sf(stat, df)), method, null)


def wald_f(fit: FitResult, names) -> TestResult:
    """F test that the named coefficients are jointly zero, using ``fit.vcov``."""
    idx = [fit.index(c) for c in names]
    if not idx:
        raise SpecError("no coefficients to test")
    b = fit.coef[idx]
    V = fit.vcov[np.ix_(idx, idx)]
    try:
        stat = float(b @ linalg.solve(V, b, assume_a="sym")) / len(idx)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"singular covariance block: {exc}") from exc
    q, df = len(idx), fit.df_resid
    return TestResult(stat, (q, df), float(dist.f_sf(stat, q, df)), "Wald F",
                      f"coefficients on {', '.join(names)} are all zero", "F")


def first_stage_f(fit: FitResult, endogenous: str | None = None):
    """Wald F on the excluded instruments in the first-stage regression.

    Returns a single :class:`TestResult` when the model has one endogenous
    regressor (or ``endogenous`` is given), else a dict keyed by regressor.
    """
    if not fit.first_stage:
        raise SpecError("fit carries no first-stage regressions")
    excluded = fit.design.excluded if fit.design else []
    if not excluded:
        raise SpecError("no excluded instruments")
    if endogenous is None and len(fit.first_stage) == 1:
        endogenous = next(iter(fit.first_stage))
    if endogenous is not None:
        return wald_f(fit.first_stage[endogenous], excluded)
    return {k: wald_f(fs, excluded) for k, fs in fit.first_stage.items()}


def _iv_design(fit: FitResult) -> IVDesign:
    design = fit.design
    if design is None or not design.endog:
        raise SpecError("over-identification tests need an IV fit")
    q = len(design.excluded) - len(design.endog)
    if q <= 0:
        raise SpecError("model is just-identified: df=0, test undefined")
    return design


def sargan(fit: FitResult) -> TestResult:
    design = _iv_design(fit)
    e = fit.resid
    pe = _qr(design.Z, design.z_names).project(e)
    stat = design.n * float(e @ pe) / float(e @ e)
    return _chi2(stat, len(design.excluded) - len(design.endog), "Sargan",
                 "all instruments are valid (uncorrelated with the error)")


def score_overid(fit: FitResult) -> TestResult:
    """Heteroskedasticity-robust score (regression-based) over-id test.

    Take ``q`` of the excluded instruments, residualise them on the
    first-stage fitted regressors, and regress a vector of ones on
    ``e * r_j`` without a constant; ``n - SSR`` is chi2(q).
    """
    design = _iv_design(fit)
    q = len(design.excluded) - len(design.endog)
    qz = _qr(design.Z, design.z_names)
    Xhat = qz.project(design.X)
    extra = [design.z_names.index(c) for c in design.excluded[-q:]]
    R = _resid_on(Xhat, design.Z[:, extra], design.x_names, "fitted regressors")
    U = R * fit.resid[:, None]
    ones = np.ones(design.n)
    fitted = _qr(U, what="score matrix").project(ones)
    stat = float(ones @ fitted)
    return _chi2(stat, q, "Score", "all instruments are valid (uncorrelated with the error)")


def hansen_j(fit: FitResult) -> TestResult:
    """Minimised two-step efficient GMM criterion."""
    design = _iv_design(fit)
    out = gmm_arrays(design, "two_step")
    e = design.y - design.X @ out["beta"]
    g = design.Z.T @ e
    stat = float(g @ linalg.solve(out["S"], g, assume_a="pos"))
    return _chi2(stat, len(design.excluded) - len(design.endog), "Hansen J",
                 "all instruments are valid (uncorrelated with the error)")


def overid_test(fit: FitResult, method: str = "score") -> TestResult:
    """Over-identifying restrictions test; ``method`` is sargan, score or hansen_j.

    The null hypothesis is that every instrument is valid, so a small
    p-value is evidence against instrument exogeneity.
    """
    tests = {"sargan": sargan, "score": score_overid, "hansen_j": hansen_j}
    if method not in tests:
        raise SpecError(f"unknown over-identification test {method!r}")
    return tests[method](fit)


def control_function_fit(spec: ModelSpec, d: Dataset) -> FitResult:
    """OLS of the outcome on the regressors plus first-stage residuals.

    The coefficients on the original regressors equal the 2SLS estimates;
    the residual terms are named ``_v_<endogenous>``.
    """
    if not spec.endogenous:
        raise SpecError("endogeneity test needs endogenous regressors")
    design = build_design(spec, d)
    fs = _first_stages(design, spec.cov)
    names = [f"_v_{c}" for c in design.endog]
    V = np.column_stack([fs[c].resid for c in design.endog])
    X = np.hstack([design.X, V])
    aug = IVDesign(
        y=design.y, X=X, Z=X, x_names=design.x_names + names,
        z_names=design.x_names + names, endog=[], excluded=[],
        absorbed=design.absorbed, sst=design.sst,
    )
    return _ols_design(aug, spec.cov)


def dwh_endogeneity_test(spec: ModelSpec, d: Dataset) -> TestResult:
    """Durbin-Wu-Hausman test in control-function form.

    Joint F test (covariance per ``spec.cov``) on the first-stage residual
    terms of :func:`control_function_fit`.
    """
    cf = control_function_fit(spec, d)
    res = wald_f(cf, [c for c in cf.names if c.startswith("_v_")])
    return TestResult(res.statistic, res.df, res.p_value, "Durbin-Wu-Hausman",
                      "regressors are exogenous", "F")


def lr_test(loglik_restricted: float, loglik_unrestricted: float, df: int = 1) -> TestResult:
    """Likelihood-ratio test ``2 (llu - llr) ~ chi2(df)``."""
    if df < 1:
        raise DataError("LR test needs df >= 1")
    stat = 2.0 * (loglik_unrestricted - loglik_restricted)
    if stat < -2e-8:
        raise NumericalError(
            f"unrestricted log-likelihood below restricted by {-stat / 2:.3g}; "
            "the unrestricted optimizer probably failed"
        )
    return _chi2(stat, df, "LR", "restricted model is adequate")


def significance_stars(p: float) -> str:
    """``***`` below 0.01, ``**`` below 0.05, ``*`` below 0.10 (strict)."""
    if not 0.0 <= p <= 1.0 or p != p:
        raise DataError(f"p-value {p} outside [0, 1]")
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""
