"""Probit and Heckman two-step sample-selection estimation."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, special

from . import distributions as dist
from .binary import fit_binary
from .data import Dataset
from .diagnostics import TestResult, lr_test
from .errors import DataError
from .estimators import CONST, FitResult, _qr, _sandwich

__all__ = ["HeckmanResult", "fit_probit", "heckman_two_step", "inverse_mills", "selection_lr_test"]


def fit_probit(outcome: str, covariates: Sequence[str], d: Dataset, intercept: bool = True,
               max_iter: int = 100) -> FitResult:
    """Probit MLE of a 0/1 column on ``covariates`` (plus a constant)."""
    d.require([outcome, *covariates])
    X = d.matrix(list(covariates))
    names = list(covariates)
    if intercept:
        X = np.hstack([X, np.ones((d.n_rows, 1))])
        names.append(CONST)
    return fit_binary(d[outcome], X, names, "probit", max_iter=max_iter)


def inverse_mills(z):
    """Inverse Mills ratio ``phi(z) / Phi(z)``; accepts scalars or arrays."""
    z_arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z_arr)):
        raise DataError("inverse Mills ratio needs finite input")
    return dist.mills_ratio(z)


@dataclass
class HeckmanResult:
    """Outcome of :func:`heckman_two_step`.

    ``outcome_fit`` carries the corrected covariance; ``naive_vcov`` is the
    plain OLS covariance of the second step, kept for comparison. ``lam`` is
    the coefficient on the inverse Mills ratio (``rho * sigma``).
    """

    selection_fit: FitResult
    outcome_fit: FitResult
    lam: float
    lam_se: float
    rho: float
    sigma: float
    n_selected: int
    n_total: int
    naive_vcov: np.ndarray = field(repr=False)
    lr: TestResult | None = None

    @property
    def lam_t(self) -> float:
        return self.lam / self.lam_se

    def to_dict(self) -> dict:
        return {
            "selection": self.selection_fit.to_dict(),
            "outcome": self.outcome_fit.to_dict(),
            "naive_se": [float(s) for s in np.sqrt(np.diag(self.naive_vcov))],
            "lambda": self.lam, "lambda_se": self.lam_se, "rho": self.rho,
            "sigma": self.sigma, "n_selected": self.n_selected, "n_total": self.n_total,
            "lr_test": self.lr.to_dict() if self.lr else None,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


MILLS = "_lambda"


def heckman_two_step(outcome: str, regressors: Sequence[str], selected: str,
                     selection_covariates: Sequence[str], d: Dataset,
                     lr: bool = False) -> HeckmanResult:
    """Heckman's two-step estimator.

    Step 1 fits a probit of ``selected`` on ``selection_covariates`` over all
    rows. Step 2 runs OLS of ``outcome`` on ``regressors`` and the inverse
    Mills ratio of the probit index over the selected rows; ``outcome``
    values on unselected rows are ignored (any placeholder). The reported
    covariance accounts for the estimated Mills regressor (Heckman 1979,
    in the form given by Greene); ``rho`` is clipped to [-1, 1].

    With ``lr=True`` the likelihood-ratio test of independent equations
    (``rho = 0``) is attached; see :func:`selection_lr_test`.
    """
    regressors = list(regressors)
    selection_covariates = list(selection_covariates)
    d.require([outcome, selected, *regressors, *selection_covariates])
    if set(selection_covariates) <= set(regressors):
        warnings.warn(
            "no exclusion restriction: every selection covariate is also an outcome "
            "regressor; identification rests on the probit functional form",
            stacklevel=2,
        )
    sel = d[selected]
    if not np.isin(sel, (0.0, 1.0)).all():
        raise DataError(f"selection flag {selected!r} must be 0/1")
    probit = fit_probit(selected, selection_covariates, d)
    W_all = np.hstack([d.matrix(selection_covariates), np.ones((d.n_rows, 1))])
    mask = sel == 1.0
    y = d[outcome][mask]
    if not np.all(np.isfinite(y)):
        raise DataError("outcome must be observed for every selected row")
    W = W_all[mask]
    xb = W @ probit.coef
    lam_i = dist.mills_ratio(xb)
    names = regressors + [CONST, MILLS]
    X = np.hstack([d.matrix(regressors)[mask], np.ones((mask.sum(), 1)), lam_i[:, None]])
    qr = _qr(X, names, "second-step design (Mills ratio collinear?)")
    beta = qr.solve(y)
    e = y - X @ beta
    n_s, k = X.shape
    bread = qr.bread()
    naive = _sandwich(bread, X, e, "classical", n_s - k)

    b_lam = float(beta[-1])
    delta = lam_i * (lam_i + xb)
    sigma2 = float(e @ e / n_s + b_lam**2 * delta.mean())
    sigma = math.sqrt(sigma2)
    rho = max(-1.0, min(1.0, b_lam / sigma))
    r2 = rho * rho
    Xd = X * delta[:, None]
    inner = X.T @ X - r2 * (Xd.T @ X)
    Q = r2 * (Xd.T @ W) @ probit.vcov @ (W.T @ Xd)
    vcov = sigma2 * bread @ (inner + Q) @ bread
    vcov = (vcov + vcov.T) / 2
    sst = float(np.sum((y - y.mean()) ** 2))
    fit = FitResult(
        names=names, coef=beta, vcov=vcov, sigma2=sigma2, r2=float(1 - e @ e / sst),
        n=n_s, df_resid=n_s - k, method="Heckman two-step", cov_type="heckman",
        dist="normal", resid=e,
    )
    res = HeckmanResult(
        selection_fit=probit, outcome_fit=fit, lam=b_lam, lam_se=fit.se_of(MILLS),
        rho=rho, sigma=sigma, n_selected=int(n_s), n_total=d.n_rows, naive_vcov=naive,
    )
    if lr:
        res.lr = selection_lr_test(res, outcome, regressors, selected, selection_covariates, d)
    return res


def _selection_loglik(theta, y, X, W, sel, kx):
    beta = theta[:kx]
    gamma = theta[kx:-2]
    sigma = math.exp(theta[-2])
    rho = math.tanh(theta[-1])
    wg = W @ gamma
    ll = np.sum(special.log_ndtr(-wg[~sel]))
    e = (y - X @ beta) / sigma
    a = (wg[sel] + rho * e) / math.sqrt(1.0 - rho * rho)
    ll += np.sum(special.log_ndtr(a) + dist.norm_logpdf(e)) - sel.sum() * theta[-2]
    return float(ll)


def selection_lr_test(res: HeckmanResult, outcome: str, regressors: Sequence[str],
                      selected: str, selection_covariates: Sequence[str],
                      d: Dataset) -> TestResult:
    """LR test of ``rho = 0`` in the bivariate-normal selection model.

    The restricted likelihood (independent equations) is the probit
    log-likelihood plus the Gaussian OLS log-likelihood of the selected rows.
    The unrestricted likelihood is maximised numerically, starting from the
    two-step estimates; it is used only for this statistic. df = 1.
    """
    sel = d[selected] == 1.0
    X_all = np.hstack([d.matrix(list(regressors)), np.ones((d.n_rows, 1))])
    W = np.hstack([d.matrix(list(selection_covariates)), np.ones((d.n_rows, 1))])
    X = X_all[sel]
    y = d[outcome][sel]
    kx = X.shape[1]
    qr = _qr(X, list(regressors) + [CONST])
    b_ols = qr.solve(y)
    e = y - X @ b_ols
    s_ml = math.sqrt(float(e @ e) / y.size)
    gamma = res.selection_fit.coef
    ll_r = res.selection_fit.info["loglik"] + float(
        np.sum(dist.norm_logpdf(e / s_ml)) - y.size * math.log(s_ml)
    )
    starts = [
        np.concatenate([res.outcome_fit.coef[:-1], gamma,
                        [math.log(res.sigma), math.atanh(np.clip(res.rho, -0.95, 0.95))]]),
        np.concatenate([b_ols, gamma, [math.log(s_ml), 0.0]]),
    ]
    best = ll_r
    for theta0 in starts:
        opt = optimize.minimize(
            lambda th: -_selection_loglik(th, y, X, W, sel, kx), theta0, method="BFGS",
            options={"gtol": 1e-6, "maxiter": 2000},
        )
        if np.isfinite(opt.fun):
            best = max(best, -float(opt.fun))
    return lr_test(ll_r, best, 1)
