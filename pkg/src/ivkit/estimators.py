"""Linear regression kernels: OLS/LPM, 2SLS, LIML, GMM and one-way FE absorption.

Every fit is a pure function of ``(spec, dataset)``. Least squares is solved
through a column-pivoted QR decomposition; a rank-deficient design raises
:class:`~ivkit.errors.RankError` naming the dependent columns instead of
silently dropping them.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from . import distributions as dist
from .data import Dataset
from .errors import DataError, NumericalError, RankError, SpecError

COV_TYPES = ("classical", "HC0", "HC1")
CONST = "_cons"


@dataclass(frozen=True)
class ModelSpec:
    """Declarative linear (IV) model.

    ``outcome = endogenous*b + exogenous*g (+ const | + FE) + e``, with the
    ``instruments`` excluded from the outcome equation.
    """

    outcome: str
    endogenous: tuple[str, ...] = ()
    instruments: tuple[str, ...] = ()
    exogenous: tuple[str, ...] = ()
    fixed_effect: str | None = None
    cov: str = "HC1"
    intercept: bool = True

    def __post_init__(self):
        for name in ("endogenous", "instruments", "exogenous"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.cov not in COV_TYPES:
            raise SpecError(f"cov must be one of {COV_TYPES}, got {self.cov!r}")
        overlap = set(self.instruments) & set(self.endogenous)
        if overlap:
            raise SpecError(f"instruments and endogenous overlap: {sorted(overlap)}")
        overlap = set(self.instruments) & set(self.exogenous)
        if overlap:
            raise SpecError(f"instruments also listed as exogenous: {sorted(overlap)}")
        if self.endogenous and len(self.instruments) < len(self.endogenous):
            raise SpecError(
                f"under-identified: {len(self.instruments)} instrument(s) for "
                f"{len(self.endogenous)} endogenous regressor(s)"
            )
        regs = self.regressors
        if self.outcome in regs or self.outcome in self.instruments:
            raise SpecError(f"outcome {self.outcome!r} also used as a regressor")
        if len(set(regs)) != len(regs):
            raise SpecError("duplicate regressor names")
        if self.fixed_effect is not None and self.fixed_effect in regs + self.instruments:
            raise SpecError("fixed-effect factor cannot also be a regressor")

    @property
    def regressors(self) -> tuple[str, ...]:
        return self.endogenous + self.exogenous

    @property
    def columns(self) -> list[str]:
        cols = [self.outcome, *self.endogenous, *self.exogenous, *self.instruments]
        if self.fixed_effect:
            cols.append(self.fixed_effect)
        return cols


@dataclass
class IVDesign:
    """Arrays behind a fit, after any fixed-effect absorption."""

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    x_names: list[str]
    z_names: list[str]
    endog: list[str]
    excluded: list[str]
    absorbed: int = 0
    sst: float = 0.0

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def exog_idx(self) -> list[int]:
        return [i for i, c in enumerate(self.x_names) if c not in self.endog]


@dataclass
class FitResult:
    """Estimates, covariance and attached diagnostics of one fitted model."""

    names: list[str]
    coef: np.ndarray
    vcov: np.ndarray
    sigma2: float
    r2: float
    n: int
    df_resid: int
    method: str
    cov_type: str = "HC1"
    dist: str = "t"
    first_stage: dict[str, "FitResult"] | None = None
    diagnostics: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    resid: np.ndarray | None = field(default=None, repr=False)
    design: IVDesign | None = field(default=None, repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    @property
    def t(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.coef / self.se

    @property
    def p(self) -> np.ndarray:
        if self.dist == "normal":
            return dist.norm_two_sided(self.t)
        return dist.t_two_sided(self.t, self.df_resid)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"{name!r} is not a coefficient of this fit") from None

    def coef_of(self, name: str) -> float:
        return float(self.coef[self.index(name)])

    def se_of(self, name: str) -> float:
        return float(self.se[self.index(name)])

    def params(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.coef)))

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "cov_type": self.cov_type,
            "n": self.n,
            "df_resid": self.df_resid,
            "sigma2": self.sigma2,
            "r2": self.r2,
            "coefficients": [
                {"name": nm, "coef": float(b), "se": float(s), "stat": float(t), "p": float(p)}
                for nm, b, s, t, p in zip(self.names, self.coef, self.se, self.t, self.p)
            ],
            "info": {k: _jsonable(v) for k, v in self.info.items()},
            "diagnostics": {k: v.to_dict() for k, v in self.diagnostics.items()},
        }
        if self.first_stage:
            out["first_stage"] = {k: v.to_dict() for k, v in self.first_stage.items()}
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


# --------------------------------------------------------------------------
# least-squares kernels


@dataclass
class _QR:
    Q: np.ndarray
    R: np.ndarray
    piv: np.ndarray

    def solve(self, y: np.ndarray) -> np.ndarray:
        bp = linalg.solve_triangular(self.R, self.Q.T @ y)
        b = np.empty_like(bp)
        b[self.piv] = bp
        return b

    def project(self, y: np.ndarray) -> np.ndarray:
        return self.Q @ (self.Q.T @ y)

    def bread(self) -> np.ndarray:
        """``(X'X)^{-1}`` from the triangular factor."""
        k = self.R.shape[1]
        rinv = linalg.solve_triangular(self.R, np.eye(k))
        inv_p = rinv @ rinv.T
        out = np.empty_like(inv_p)
        out[np.ix_(self.piv, self.piv)] = inv_p
        return out


def _qr(X: np.ndarray, names: Sequence[str] | None = None, what: str = "design") -> _QR:
    n, k = X.shape
    if k == 0:
        return _QR(np.empty((n, 0)), np.empty((0, 0)), np.empty(0, dtype=int))
    if n <= k:
        raise RankError(f"{what}: {n} rows for {k} columns")
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, k) * np.finfo(float).eps * diag[0]
    rank = int(np.sum(diag > tol))
    if rank < k:
        bad = [names[j] if names else f"x{j}" for j in piv[rank:]]
        raise RankError(
            f"{what} is rank deficient (rank {rank} < {k}); collinear column(s): "
            + ", ".join(bad),
            bad,
        )
    return _QR(Q, R, piv)


def _meat(X: np.ndarray, e: np.ndarray) -> np.ndarray:
    Xe = X * e[:, None]
    return Xe.T @ Xe


def _sandwich(bread: np.ndarray, X: np.ndarray, e: np.ndarray, kind: str, df_resid: int):
    n = X.shape[0]
    if kind == "classical":
        v = bread * (e @ e / df_resid)
    elif kind in ("HC0", "HC1"):
        v = bread @ _meat(X, e) @ bread
        if kind == "HC1":
            v = v * (n / df_resid)
    else:
        raise SpecError(f"unknown covariance kind {kind!r}")
    return (v + v.T) / 2


def robust_covariance(X, e, kind: str = "HC1", df_resid: int | None = None) -> np.ndarray:
    """Coefficient covariance for least squares on ``X`` with residuals ``e``.

    ``classical`` is ``s2 (X'X)^-1`` with ``s2 = e'e / df_resid``; ``HC0`` is
    the White sandwich; ``HC1`` scales HC0 by ``n / df_resid``.
    """
    X = np.asarray(X, dtype=float)
    e = np.asarray(e, dtype=float)
    if X.ndim != 2 or e.shape != (X.shape[0],):
        raise DataError("X must be (n, k) and e must be (n,)")
    if df_resid is None:
        df_resid = X.shape[0] - X.shape[1]
    if df_resid <= 0:
        raise DataError("df_resid must be positive")
    bread = _qr(X, what="X'X").bread()
    return _sandwich(bread, X, e, kind, df_resid)


def _r2(e: np.ndarray, sst: float) -> float:
    return float(1.0 - (e @ e) / sst) if sst > 0 else float("nan")


# --------------------------------------------------------------------------
# fixed effects


class AbsorbedDataset(Dataset):
    """Dataset whose listed columns were demeaned within ``factor`` levels.

    ``absorbed_levels`` is the number of group means removed, i.e. the
    degrees of freedom a downstream fit must give up.
    """

    __slots__ = ("factor", "absorbed_levels", "absorbed_vars")


def _group_demean(x: np.ndarray, codes: np.ndarray, counts: np.ndarray) -> np.ndarray:
    out = x - (np.bincount(codes, weights=x, minlength=counts.size) / counts)[codes]
    # second sweep removes the rounding left by the first
    return out - (np.bincount(codes, weights=out, minlength=counts.size) / counts)[codes]


def absorb_fixed_effects(d: Dataset, factor: str, vars: Sequence[str]) -> AbsorbedDataset:
    """Replace ``vars`` by their deviations from ``factor``-level means."""
    d.require([factor, *vars])
    m = d.meta[factor]
    if m.kind not in ("categorical", "binary"):
        raise DataError(f"fixed-effect factor {factor!r} must be categorical")
    _, codes = np.unique(d[factor], return_inverse=True)
    counts = np.bincount(codes).astype(float)
    if np.all(counts == 1):
        raise DataError(f"factor {factor!r} has only singleton levels; absorption removes all variation")
    new = {v: _group_demean(d[v], codes, counts) for v in vars}
    base = d.with_columns(new)
    out = AbsorbedDataset.__new__(AbsorbedDataset)
    for slot in ("_columns", "_meta", "n_rows", "dropped"):
        object.__setattr__(out, slot, getattr(base, slot))
    object.__setattr__(out, "factor", factor)
    object.__setattr__(out, "absorbed_levels", int(counts.size))
    object.__setattr__(out, "absorbed_vars", tuple(vars))
    return out


# --------------------------------------------------------------------------
# designs


def build_design(spec: ModelSpec, d: Dataset) -> IVDesign:
    d.require(spec.columns)
    y_raw = d[spec.outcome]
    absorbed = 0
    if spec.fixed_effect:
        d = absorb_fixed_effects(
            d, spec.fixed_effect,
            [spec.outcome, *spec.endogenous, *spec.exogenous, *spec.instruments],
        )
        absorbed = d.absorbed_levels
    x_names = list(spec.regressors)
    X = d.matrix(x_names)
    z_names = list(spec.instruments) + list(spec.exogenous)
    Z = d.matrix(z_names)
    if spec.intercept and not spec.fixed_effect:
        one = np.ones((d.n_rows, 1))
        X = np.hstack([X, one])
        Z = np.hstack([Z, one])
        x_names.append(CONST)
        z_names.append(CONST)
    if spec.intercept or spec.fixed_effect:
        sst = float(np.sum((y_raw - y_raw.mean()) ** 2))
    else:
        sst = float(y_raw @ y_raw)
    return IVDesign(
        y=np.array(d[spec.outcome]), X=X, Z=Z, x_names=x_names, z_names=z_names,
        endog=list(spec.endogenous), excluded=list(spec.instruments),
        absorbed=absorbed, sst=sst,
    )


def _df_resid(design: IVDesign) -> int:
    df = design.n - design.X.shape[1] - design.absorbed
    if df <= 0:
        raise RankError(f"no residual degrees of freedom (n={design.n})")
    return df


def _ols_design(design: IVDesign, cov: str) -> FitResult:
    qr = _qr(design.X, design.x_names)
    beta = qr.solve(design.y)
    e = design.y - design.X @ beta
    df = _df_resid(design)
    vcov = _sandwich(qr.bread(), design.X, e, cov, df)
    return FitResult(
        names=list(design.x_names), coef=beta, vcov=vcov, sigma2=float(e @ e / df),
        r2=_r2(e, design.sst), n=design.n, df_resid=df, method="OLS", cov_type=cov,
        resid=e, design=design,
    )


def fit_ols(spec: ModelSpec, d: Dataset) -> FitResult:
    """Least squares of the outcome on all regressors (instruments ignored).

    Endogenous columns, if any, enter as ordinary regressors; this is the
    naive OLS/LPM comparison fit.
    """
    design = build_design(spec, d)
    design.Z = design.X
    design.z_names = list(design.x_names)
    design.excluded = []
    design.endog = []
    return _ols_design(design, spec.cov)


def _first_stages(design: IVDesign, cov: str) -> dict[str, FitResult]:
    out = {}
    for name in design.endog:
        j = design.x_names.index(name)
        sub = IVDesign(
            y=design.X[:, j], X=design.Z, Z=design.Z, x_names=list(design.z_names),
            z_names=list(design.z_names), endog=[], excluded=[], absorbed=design.absorbed,
            sst=float(np.sum((design.X[:, j] - design.X[:, j].mean()) ** 2)),
        )
        out[name] = _ols_design(sub, cov)
    return out


def _require_iv(spec: ModelSpec):
    if not spec.endogenous:
        raise SpecError("IV estimator needs at least one endogenous regressor")


def _tsls_design(design: IVDesign, cov: str) -> FitResult:
    qz = _qr(design.Z, design.z_names, what="instrument matrix")
    Xhat = qz.project(design.X)
    # exogenous columns lie in the span of Z; keep them exact
    for j in design.exog_idx:
        Xhat[:, j] = design.X[:, j]
    qx = _qr(Xhat, design.x_names, what="projected regressors (under-identified?)")
    beta = qx.solve(design.y)
    e = design.y - design.X @ beta
    df = _df_resid(design)
    vcov = _sandwich(qx.bread(), Xhat, e, cov, df)
    return FitResult(
        names=list(design.x_names), coef=beta, vcov=vcov, sigma2=float(e @ e / df),
        r2=_r2(e, design.sst), n=design.n, df_resid=df, method="TSLS", cov_type=cov,
        resid=e, design=design,
    )


def fit_tsls(spec: ModelSpec, d: Dataset) -> FitResult:
    """Two-stage least squares.

    Residuals (and hence ``sigma2`` and the covariance) are formed with the
    original endogenous columns, not their first-stage fitted values.
    """
    _require_iv(spec)
    design = build_design(spec, d)
    fs = _first_stages(design, spec.cov)
    fit = _tsls_design(design, spec.cov)
    fit.first_stage = fs
    return fit


def _resid_on(W: np.ndarray, Y: np.ndarray, names=None, what="exogenous block") -> np.ndarray:
    if W.shape[1] == 0:
        return Y.copy()
    return Y - _qr(W, names, what).project(Y)


def liml_kappa(design: IVDesign) -> float:
    """Smallest root of ``|Y'M_W Y - k Y'M_Z Y| = 0`` with ``Y = [y, endog]``."""
    idx = [design.x_names.index(c) for c in design.endog]
    Y = np.column_stack([design.y, design.X[:, idx]])
    exog = [j for j, c in enumerate(design.z_names) if c not in design.excluded]
    W = design.Z[:, exog]
    mw = _resid_on(W, Y, [design.z_names[j] for j in exog])
    mz = _resid_on(design.Z, Y, design.z_names, "instrument matrix")
    A = mw.T @ mw
    B = mz.T @ mz
    try:
        vals = linalg.eigh(A, B, eigvals_only=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"LIML eigenproblem failed: {exc}") from exc
    return float(vals.min())


def _kclass_design(design: IVDesign, kappa: float, cov: str) -> FitResult:
    qz = _qr(design.Z, design.z_names, what="instrument matrix")
    X, y = design.X, design.y
    mzx = X - qz.project(X)
    for j in design.exog_idx:
        mzx[:, j] = 0.0
    mzy = y - qz.project(y)
    A = X.T @ X - kappa * (mzx.T @ mzx)
    b = X.T @ y - kappa * (mzx.T @ mzy)
    try:
        beta = linalg.solve(A, b, assume_a="sym")
        bread = linalg.inv(A)
    except linalg.LinAlgError as exc:
        raise RankError(f"k-class normal matrix is singular: {exc}") from exc
    e = y - X @ beta
    df = _df_resid(design)
    Xt = X - kappa * mzx
    vcov = _sandwich(bread, Xt, e, cov, df)
    return FitResult(
        names=list(design.x_names), coef=beta, vcov=vcov, sigma2=float(e @ e / df),
        r2=_r2(e, design.sst), n=design.n, df_resid=df,
        method=f"LIML(kappa={kappa:.6g})", cov_type=cov, resid=e, design=design,
        info={"kappa": kappa},
    )


def fit_liml(spec: ModelSpec, d: Dataset) -> FitResult:
    """Limited-information maximum likelihood as a k-class estimator."""
    _require_iv(spec)
    design = build_design(spec, d)
    kappa = liml_kappa(design)
    fit = _kclass_design(design, kappa, spec.cov)
    fit.first_stage = _first_stages(design, spec.cov)
    return fit


def _moment_cov(Z: np.ndarray, e: np.ndarray) -> np.ndarray:
    return _meat(Z, e)


def _gmm_step(design: IVDesign, S: np.ndarray) -> np.ndarray:
    """Coefficients minimising ``g' S^-1 g`` with ``g = Z'(y - Xb)``."""
    try:
        L = linalg.cholesky(S, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"GMM weight matrix is singular: {exc}") from exc
    zx = linalg.solve_triangular(L, design.Z.T @ design.X, lower=True)
    zy = linalg.solve_triangular(L, design.Z.T @ design.y, lower=True)
    return _qr(zx, design.x_names, "weighted moment Jacobian").solve(zy)


def gmm_arrays(design: IVDesign, iterate: str = "two_step", max_iter: int = 500,
               tol: float = 1e-8) -> dict:
    """Run the GMM recursion and return coefficients plus the last weight."""
    if iterate not in ("one_step", "two_step", "iterated"):
        raise SpecError(f"unknown GMM mode {iterate!r}")
    _qr(design.Z, design.z_names, what="instrument matrix")
    S = design.Z.T @ design.Z
    beta = _gmm_step(design, S)
    iters, converged = 0, True
    if iterate != "one_step":
        limit = 1 if iterate == "two_step" else max_iter
        converged = iterate == "two_step"
        while iters < limit:
            e = design.y - design.X @ beta
            S = _moment_cov(design.Z, e)
            new = _gmm_step(design, S)
            iters += 1
            change = float(np.max(np.abs(new - beta)))
            beta = new
            if iterate == "iterated" and change < tol:
                converged = True
                break
    return {"beta": beta, "S": S, "iterations": iters, "converged": converged}


def fit_gmm(spec: ModelSpec, d: Dataset, iterate: str = "two_step", max_iter: int = 500,
            tol: float = 1e-8) -> FitResult:
    """Linear IV GMM.

    ``iterate`` is ``"one_step"`` (weight ``(Z'Z)^-1``, identical to 2SLS),
    ``"two_step"`` (re-weighted by the inverse robust moment covariance
    ``sum e_i^2 z_i z_i'``), or ``"iterated"`` (re-weight until the largest
    coefficient change falls below ``tol``). A non-converged iterated fit is
    returned with ``info["converged"] = False`` and a warning.
    """
    _require_iv(spec)
    design = build_design(spec, d)
    out = gmm_arrays(design, iterate, max_iter, tol)
    beta, S = out["beta"], out["S"]
    e = design.y - design.X @ beta
    df = _df_resid(design)
    G = design.Z.T @ design.X
    Sinv_G = linalg.solve(S, G, assume_a="pos")
    bread = linalg.inv(G.T @ Sinv_G)
    if spec.cov == "classical":
        meat_S = (e @ e / df) * (design.Z.T @ design.Z)
    else:
        meat_S = _moment_cov(design.Z, e)
        if spec.cov == "HC1":
            meat_S = meat_S * (design.n / df)
    vcov = bread @ (Sinv_G.T @ meat_S @ Sinv_G) @ bread
    vcov = (vcov + vcov.T) / 2
    g = design.Z.T @ e
    j_stat = float(g @ linalg.solve(S, g, assume_a="pos")) if iterate != "one_step" else None
    if iterate == "iterated":
        method = f"IGMM(iters={out['iterations']})"
        if not out["converged"]:
            warnings.warn(f"iterated GMM did not converge in {max_iter} iterations", stacklevel=2)
    else:
        method = "GMM(steps=1)" if iterate == "one_step" else "GMM(steps=2)"
    return FitResult(
        names=list(design.x_names), coef=beta, vcov=vcov, sigma2=float(e @ e / df),
        r2=_r2(e, design.sst), n=design.n, df_resid=df, method=method, cov_type=spec.cov,
        dist="normal", first_stage=_first_stages(design, spec.cov), resid=e, design=design,
        info={"iterations": out["iterations"], "converged": out["converged"], "j_stat": j_stat},
    )


def fit_iv(spec: ModelSpec, d: Dataset, estimator: str, **kw) -> FitResult:
    """Dispatch by name: ``tsls``, ``liml``, ``gmm`` or ``igmm``."""
    if estimator == "tsls":
        return fit_tsls(spec, d)
    if estimator == "liml":
        return fit_liml(spec, d)
    if estimator == "gmm":
        return fit_gmm(spec, d, "two_step")
    if estimator == "igmm":
        return fit_gmm(spec, d, "iterated", **kw)
    raise SpecError(f"unknown IV estimator {estimator!r}")
