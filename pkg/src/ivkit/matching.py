"""Propensity-score matching estimators of the ATT.

Four schemes are supported: k-nearest-neighbour (1:1, 1:k, with or without
replacement), radius (caliper) and Epanechnikov kernel matching. Matching is
restricted to the common support of the scores, and neighbour ties are
broken by the lower row index so results never depend on evaluation order.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .binary import fit_binary
from .data import Dataset
from .errors import DataError, SpecError
from .estimators import CONST, FitResult

N_BINS = 40


@dataclass
class PropensityModel:
    """Logit fit plus the fitted P(treatment = 1 | x) of every row."""

    fit: FitResult
    scores: np.ndarray
    treatment: str
    covariates: list[str]
    treated: np.ndarray = field(repr=False)  # boolean mask


def estimate_propensity(treatment: str, covariates: Sequence[str], d: Dataset) -> PropensityModel:
    d.require([treatment, *covariates])
    covariates = list(covariates)
    X = np.hstack([d.matrix(covariates), np.ones((d.n_rows, 1))])
    fit = fit_binary(d[treatment], X, covariates + [CONST], "logit")
    scores = 1.0 / (1.0 + np.exp(-(X @ fit.coef)))
    return PropensityModel(fit, scores, treatment, covariates, d[treatment] == 1.0)


@dataclass(frozen=True)
class NearestNeighbor:
    k: int = 1
    replace: bool = True

    @property
    def label(self) -> str:
        return f"nn(k={self.k}, replace={self.replace})"


@dataclass(frozen=True)
class Radius:
    caliper: float = 0.05

    @property
    def label(self) -> str:
        return f"radius(caliper={self.caliper:g})"


@dataclass(frozen=True)
class Kernel:
    bandwidth: float = 0.06

    @property
    def label(self) -> str:
        return f"kernel(epanechnikov, bandwidth={self.bandwidth:g})"


def parse_method(spec) -> NearestNeighbor | Radius | Kernel:
    """Build a method from a short name (``nn1``, ``nn2``, ``radius``, ``kernel``) or dict."""
    if isinstance(spec, (NearestNeighbor, Radius, Kernel)):
        return spec
    if isinstance(spec, str):
        spec = {"method": spec}
    spec = dict(spec)
    name = spec.pop("method")
    if name.startswith("nn"):
        k = int(name[2:] or spec.pop("k", 1))
        return NearestNeighbor(k=int(spec.pop("k", k)), replace=bool(spec.pop("replace", True)))
    if name == "radius":
        return Radius(**spec)
    if name == "kernel":
        return Kernel(**spec)
    raise SpecError(f"unknown matching method {name!r}")


class MatchResult:
    """Matched sample and the ATT.

    ``pairs`` maps each matched treated row to ``[(control_row, weight), ...]``
    with weights summing to one; it is built on first access because radius
    and kernel matching can link every treated unit to thousands of controls.
    ``control_weight`` holds the total weight each row receives as a control.

    The standard error treats treated and matched-control outcomes as
    independent samples, counting how often each control is reused; it
    ignores the estimation error of the scores.
    """

    def __init__(self, att, se, treated_rows, control_weight, unmatched_treated, method,
                 n_treated, pairs_fn):
        self.att = float(att)
        self.se = float(se)
        self.treated_rows = treated_rows
        self.control_weight = control_weight
        self.unmatched_treated = int(unmatched_treated)
        self.method = method
        self.n_treated = int(n_treated)
        self._pairs_fn = pairs_fn
        self._pairs = None

    def __repr__(self):
        return (f"MatchResult(method={self.method!r}, att={self.att:.6g}, se={self.se:.6g}, "
                f"matched={self.treated_rows.size}, unmatched={self.unmatched_treated})")

    @property
    def pairs(self) -> dict[int, list[tuple[int, float]]]:
        if self._pairs is None:
            self._pairs = self._pairs_fn()
        return self._pairs

    @property
    def t(self) -> float:
        return self.att / self.se if self.se > 0 else float("nan")

    @property
    def n_controls_used(self) -> int:
        return int(np.sum(self.control_weight > 0))

    def to_dict(self) -> dict:
        return {
            "method": self.method, "att": self.att, "se": self.se, "t": self.t,
            "n_treated_matched": int(self.treated_rows.size),
            "unmatched_treated": self.unmatched_treated,
            "n_controls_used": self.n_controls_used,
        }


@dataclass(frozen=True)
class SupportReport:
    lower: float
    upper: float
    off_support_treated: int
    off_support_control: int
    bin_edges: np.ndarray
    counts_treated: np.ndarray
    counts_control: np.ndarray

    @property
    def disjoint(self) -> bool:
        return self.lower > self.upper

    def to_dict(self) -> dict:
        return {
            "lower": self.lower, "upper": self.upper, "disjoint": self.disjoint,
            "off_support_treated": self.off_support_treated,
            "off_support_control": self.off_support_control,
            "histogram": [
                {"bin_lo": float(lo), "bin_hi": float(hi), "treated": int(t), "control": int(c)}
                for lo, hi, t, c in zip(self.bin_edges[:-1], self.bin_edges[1:],
                                        self.counts_treated, self.counts_control)
            ],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["bin_lo", "bin_hi", "treated", "control"])
        for row in self.to_dict()["histogram"]:
            w.writerow([repr(row["bin_lo"]), repr(row["bin_hi"]), row["treated"], row["control"]])
        return buf.getvalue()


def common_support(pm: PropensityModel) -> SupportReport:
    """Overlap interval of treated and control scores plus a 40-bin histogram."""
    s, t = pm.scores, pm.treated
    st, sc = s[t], s[~t]
    lower = max(st.min(), sc.min())
    upper = min(st.max(), sc.max())
    off_t = int(np.sum((st < lower) | (st > upper)))
    off_c = int(np.sum((sc < lower) | (sc > upper)))
    edges = np.linspace(0.0, 1.0, N_BINS + 1)
    ht, _ = np.histogram(st, bins=edges)
    hc, _ = np.histogram(sc, bins=edges)
    return SupportReport(float(lower), float(upper), off_t, off_c, edges, ht, hc)


def _nn_with_replacement(ts, cs, c_rows, k):
    """Positions (into the sorted controls) of the k nearest controls per treated unit.

    Ties in distance go to the lower row index.
    """
    nc = cs.size
    out = []
    for s in ts:
        pos = np.searchsorted(cs, s)
        lo, hi = max(0, pos - k), min(nc, pos + k)
        dk = np.sort(np.abs(cs[lo:hi] - s))[k - 1]
        # all controls within dk of s, including tie blocks outside the window
        a = np.searchsorted(cs, s - dk * (1 + 1e-12) - 1e-300, side="left")
        b = np.searchsorted(cs, s + dk * (1 + 1e-12) + 1e-300, side="right")
        pick = np.lexsort((c_rows[a:b], np.abs(cs[a:b] - s)))[:k]
        out.append(a + pick)
    return out


def _nn_without_replacement(ts, t_rows, cs, c_rows, k):
    # greedy in treated row order
    available = np.ones(cs.size, dtype=bool)
    out = [None] * ts.size
    for i in np.argsort(t_rows, kind="stable"):
        idx = np.flatnonzero(available)
        pick = idx[np.lexsort((c_rows[idx], np.abs(cs[idx] - ts[i])))[:k]]
        available[pick] = False
        out[i] = pick
    return out


def _epanechnikov(h):
    return lambda u: np.where(u < h, 0.75 * (1.0 - (u / h) ** 2), 0.0)


def _uniform(u):
    return np.ones_like(u)


def match_att(pm: PropensityModel, outcome: str, method, d: Dataset) -> MatchResult:
    """ATT by matching on the propensity score.

    Treated units off the common support, or with no control inside the
    radius / kernel window, are dropped and counted in ``unmatched_treated``.
    Controls outside the common support are never used.
    """
    method = parse_method(method)
    d.require([outcome])
    if d.n_rows != pm.scores.size:
        raise DataError("propensity model and dataset have different row counts")
    y = d[outcome]
    sup = common_support(pm)
    s, t = pm.scores, pm.treated
    rows = np.arange(d.n_rows)
    in_sup = (s >= sup.lower) & (s <= sup.upper)
    t_mask, c_mask = t & in_sup, ~t & in_sup
    n_treated = int(t.sum())
    if not c_mask.any() or not t_mask.any():
        raise DataError("no controls in support")
    ts, t_rows = s[t_mask], rows[t_mask]
    order = np.lexsort((rows[c_mask], s[c_mask]))
    cs, c_rows = s[c_mask][order], rows[c_mask][order]
    yc = y[c_rows]
    wc = np.zeros(cs.size)
    keep = np.zeros(ts.size, dtype=bool)
    diffs = np.zeros(ts.size)

    if isinstance(method, NearestNeighbor):
        k = method.k
        if k < 1:
            raise SpecError("k must be >= 1")
        if method.replace:
            if k > cs.size:
                raise SpecError(f"k={k} exceeds the {cs.size} controls in support")
            picks = _nn_with_replacement(ts, cs, c_rows, k)
        else:
            if k * ts.size > cs.size:
                raise SpecError(
                    f"k={k} without replacement needs {k * ts.size} controls, "
                    f"only {cs.size} in support"
                )
            picks = _nn_without_replacement(ts, t_rows, cs, c_rows, k)
        for i, pick in enumerate(picks):
            diffs[i] = y[t_rows[i]] - yc[pick].mean()
            np.add.at(wc, pick, 1.0 / k)
        keep[:] = True

        def pairs_fn():
            return {int(t_rows[i]): [(int(c_rows[j]), 1.0 / k) for j in picks[i]]
                    for i in np.argsort(t_rows, kind="stable")}
    else:
        if isinstance(method, Radius):
            width, kern = method.caliper, _uniform
        else:
            width, kern = method.bandwidth, _epanechnikov(method.bandwidth)
        if width <= 0:
            raise SpecError("caliper / bandwidth must be positive")
        lo = np.searchsorted(cs, ts - width, side="left")
        hi = np.searchsorted(cs, ts + width, side="right")
        for i in range(ts.size):
            a, b = lo[i], hi[i]
            w = kern(np.abs(cs[a:b] - ts[i]))
            tot = w.sum()
            if tot <= 0:
                continue
            w = w / tot
            keep[i] = True
            diffs[i] = y[t_rows[i]] - w @ yc[a:b]
            wc[a:b] += w

        def pairs_fn():
            out = {}
            for i in np.argsort(t_rows, kind="stable"):
                if not keep[i]:
                    continue
                a, b = lo[i], hi[i]
                w = kern(np.abs(cs[a:b] - ts[i]))
                w = w / w.sum()
                out[int(t_rows[i])] = [(int(j), float(x)) for j, x in zip(c_rows[a:b], w) if x > 0]
            return out

    if not keep.any():
        raise DataError("no controls in support: no treated unit could be matched")
    matched = t_rows[keep]
    att = float(diffs[keep].mean())
    n1 = matched.size
    used = wc > 0
    var_t = float(np.var(y[matched], ddof=1)) if n1 > 1 else 0.0
    var_c = float(np.var(yc[used], ddof=1)) if used.sum() > 1 else 0.0
    se = math.sqrt(var_t / n1 + float(np.sum(wc[used] ** 2)) * var_c / n1**2)
    weight = np.zeros(d.n_rows)
    weight[c_rows] = wc
    return MatchResult(att, se, np.sort(matched), weight, n_treated - n1, method.label,
                       n_treated, pairs_fn)


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    bias_pre_pct: float
    bias_post_pct: float
    reduction_pct: float


@dataclass(frozen=True)
class BalanceTable:
    rows: list[BalanceRow]

    def max_abs_post(self) -> float:
        return max(abs(r.bias_post_pct) for r in self.rows)

    def to_dict(self) -> dict:
        return {"rows": [r.__dict__.copy() for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["covariate", "bias_pre_pct", "bias_post_pct", "reduction_pct"])
        for r in self.rows:
            w.writerow([r.covariate, repr(r.bias_pre_pct), repr(r.bias_post_pct),
                        repr(r.reduction_pct)])
        return buf.getvalue()


def standardized_bias(x_t_mean, x_c_mean, var_t, var_c) -> float:
    pooled = math.sqrt((var_t + var_c) / 2.0)
    if pooled == 0:
        raise DataError("zero pooled variance")
    return 100.0 * (x_t_mean - x_c_mean) / pooled


def balance_table(pm: PropensityModel, mr: MatchResult, covariates: Sequence[str],
                  d: Dataset) -> BalanceTable:
    """Standardized bias (%) of each covariate before and after matching.

    Both use the pre-matching variances in the denominator. After matching,
    the treated mean is over matched treated units and the control mean is
    weighted by the matching weights.
    """
    d.require(covariates)
    t = pm.treated
    treated_rows = mr.treated_rows
    W = mr.control_weight
    rows = []
    for c in covariates:
        x = d[c]
        vt, vc = np.var(x[t], ddof=1), np.var(x[~t], ddof=1)
        if vt + vc == 0:
            raise DataError(f"covariate {c!r} has zero pooled variance")
        pre = standardized_bias(x[t].mean(), x[~t].mean(), vt, vc)
        post = standardized_bias(x[treated_rows].mean(), float(W @ x) / W.sum(), vt, vc)
        red = 100.0 * (1.0 - abs(post) / abs(pre)) if pre != 0 else float("nan")
        rows.append(BalanceRow(c, float(pre), float(post), float(red)))
    return BalanceTable(rows)
