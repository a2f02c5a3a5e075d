"""Newton-Raphson maximum likelihood for logit and probit models."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import linalg, special

from . import distributions as dist
from .errors import ConvergenceError, DataError, NumericalError, SeparationError
from .estimators import CONST, FitResult, _qr

DIVERGENCE = 1e3


def loglik(beta: np.ndarray, y: np.ndarray, X: np.ndarray, link: str) -> float:
    xb = X @ beta
    if link == "logit":
        return float(np.sum(y * xb - np.logaddexp(0.0, xb)))
    q = 2.0 * y - 1.0
    return float(np.sum(special.log_ndtr(q * xb)))


def score(beta: np.ndarray, y: np.ndarray, X: np.ndarray, link: str) -> np.ndarray:
    """Analytic gradient of :func:`loglik`."""
    xb = X @ beta
    if link == "logit":
        return X.T @ (y - special.expit(xb))
    q = 2.0 * y - 1.0
    return X.T @ (q * dist.mills_ratio(q * xb))


def hessian(beta: np.ndarray, y: np.ndarray, X: np.ndarray, link: str) -> np.ndarray:
    xb = X @ beta
    if link == "logit":
        p = special.expit(xb)
        w = p * (1.0 - p)
    else:
        q = 2.0 * y - 1.0
        lam = q * dist.mills_ratio(q * xb)
        w = lam * (lam + xb)
    return -(X * w[:, None]).T @ X


def _start(y: np.ndarray, X: np.ndarray, names: Sequence[str], link: str) -> np.ndarray:
    beta = np.zeros(X.shape[1])
    if CONST in names:
        share = y.mean()
        beta[list(names).index(CONST)] = (
            special.logit(share) if link == "logit" else special.ndtri(share)
        )
    return beta


def fit_binary(y, X, names: Sequence[str], link: str, max_iter: int = 100,
               tol: float = 1e-8) -> FitResult:
    """Maximise the ``link`` log-likelihood by damped Newton-Raphson.

    Converged when the largest absolute score component is below ``tol``.
    Coefficients growing beyond 1e3 in absolute value, or a fit that
    predicts some observation with probability within 1e-10 of certainty,
    are reported as separation.
    """
    if link not in ("logit", "probit"):
        raise DataError(f"unknown link {link!r}")
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    names = list(names)
    if not np.isin(y, (0.0, 1.0)).all():
        raise DataError("binary response must be coded 0/1")
    if y.min() == y.max():
        raise DataError("binary response has a single class; both outcomes are required")
    _qr(X, names, "binary-response design")
    beta = _start(y, X, names, link)
    ll = loglik(beta, y, X, link)
    converged = False
    for it in range(1, max_iter + 1):
        g = score(beta, y, X, link)
        if np.max(np.abs(g)) < tol:
            converged = True
            it -= 1
            break
        H = hessian(beta, y, X, link)
        try:
            step = linalg.solve(-H, g, assume_a="pos")
        except linalg.LinAlgError:
            step = linalg.lstsq(-H, g)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = loglik(cand, y, X, link)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t /= 2
        beta, ll = cand, ll_new
        if np.max(np.abs(beta)) > DIVERGENCE:
            raise SeparationError(
                f"{link} coefficients diverge (|b| > {DIVERGENCE:g}): perfect separation"
            )
    # saturated fits drive the score below tol without a finite maximiser
    qxb = -(2.0 * y - 1.0) * (X @ beta)
    miss = special.expit(qxb) if link == "logit" else special.ndtr(qxb)
    if np.any(miss < 1e-10):
        raise SeparationError(
            f"{link} fit predicts {int(np.sum(miss < 1e-10))} observation(s) perfectly: "
            "(quasi-)complete separation"
        )
    if not converged:
        raise ConvergenceError(f"{link} did not converge in {max_iter} iterations")
    H = hessian(beta, y, X, link)
    try:
        vcov = linalg.inv(-H)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"singular information matrix: {exc}") from exc
    vcov = (vcov + vcov.T) / 2
    share = y.mean()
    ll0 = float(y.size * (share * np.log(share) + (1 - share) * np.log1p(-share)))
    n, k = X.shape
    return FitResult(
        names=names, coef=beta, vcov=vcov, sigma2=1.0, r2=1.0 - ll / ll0, n=n,
        df_resid=n - k, method=link.capitalize(), cov_type="MLE", dist="normal",
        info={"loglik": ll, "loglik_null": ll0, "iterations": it, "converged": True,
              "max_abs_score": float(np.max(np.abs(score(beta, y, X, link))))},
    )
