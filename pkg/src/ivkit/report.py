"""Plain-text, CSV and JSON rendering of fitted models and test results.

Rendering is pure: identical inputs give byte-identical output.
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Sequence

from .diagnostics import TestResult, significance_stars
from .distributions import norm_two_sided
from .estimators import FitResult

STAR_LEGEND = "*** p<0.01, ** p<0.05, * p<0.10"


def fmt_num(x: float) -> str:
    """Three significant figures, keeping trailing zeros (``0.170``, ``-0.0306``)."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "."
    s = f"{x:#.3g}"
    if "e" in s:
        mant, exp = s.split("e")
        s = f"{mant.rstrip('.')}e{exp}"
    return s.rstrip(".")


def coef_cell(b: float, p: float) -> str:
    stars = significance_stars(float(p)) if p == p else ""
    return f"{fmt_num(b)} {stars}".rstrip()


def _align(rows: list[list[str]], rule_after: Sequence[int] = ()) -> str:
    widths = [max(len(r[i]) for r in rows if i < len(r)) for i in range(len(rows[0]))]
    lines = []
    for k, r in enumerate(rows):
        cells = [r[0].ljust(widths[0])] + [c.ljust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if k in rule_after:
            lines.append("-" * sum(widths) + "-" * 2 * (len(widths) - 1))
    return "\n".join(lines)


def regression_table(columns: Sequence[tuple[str, FitResult]], title: str = "",
                     footer: Sequence[tuple[str, str]] = (),
                     extra_rows: Sequence[tuple[str, Sequence[str]]] = ()) -> str:
    """Multi-model coefficient table: coefficient with stars over (SE)."""
    names: list[str] = []
    for _, fit in columns:
        for nm in fit.names:
            if nm not in names:
                names.append(nm)
    # constant last, as in the usual published layout
    names.sort(key=lambda nm: nm == "_cons")
    rows = [[""] + [f"({i + 1})" for i in range(len(columns))],
            [""] + [label for label, _ in columns]]
    for nm in names:
        top, bottom = [nm], [""]
        for _, fit in columns:
            if nm in fit.names:
                j = fit.index(nm)
                top.append(coef_cell(fit.coef[j], fit.p[j]))
                bottom.append(f"({fmt_num(fit.se[j])})")
            else:
                top += ["-"]
                bottom += ["-"]
        rows += [top, bottom]
    body_end = len(rows) - 1
    for label, cells in extra_rows:
        rows.append([label, *cells])
    rows.append(["N"] + [str(fit.n) for _, fit in columns])
    rows.append(["R2"] + [f"{fit.r2:.3f}" for _, fit in columns])
    text = _align(rows, rule_after=(1, body_end))
    out = [title] if title else []
    out.append(text)
    width = max(len(line) for line in text.splitlines())
    if footer:
        out.append("-" * width)
        lab = max(len(k) for k, _ in footer)
        out += [f"{k.ljust(lab)}  {v}" for k, v in footer]
    out.append(STAR_LEGEND)
    return "\n".join(out) + "\n"


def regression_csv(columns: Sequence[tuple[str, FitResult]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["model", "method", "variable", "coef", "se", "stat", "p", "n", "r2"])
    for label, fit in columns:
        for nm, b, s, t, p in zip(fit.names, fit.coef, fit.se, fit.t, fit.p):
            w.writerow([label, fit.method, nm, repr(float(b)), repr(float(s)), repr(float(t)),
                        repr(float(p)), fit.n, repr(float(fit.r2))])
    return buf.getvalue()


def test_line(label: str, res: TestResult) -> tuple[str, str]:
    return label, res.summary()


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def psm_table(raw: tuple[float, float], results: Sequence) -> str:
    """Pre- and post-match ATT with t-statistics, one column pair per method."""
    head = ["Matching status"]
    sub = [""]
    pre = ["pre-match"]
    post = ["post-match"]
    for mr in results:
        head += [mr.method, ""]
        sub += ["ATT", "t"]
        pre += [fmt_num(raw[0]), f"{raw[1]:.2f}"]
        post += [coef_cell(mr.att, norm_two_sided(mr.t)), f"{mr.t:.2f}"]
    text = _align([head, sub, pre, post], rule_after=(1,))
    return text + "\n" + STAR_LEGEND + "\n"


def psm_csv(raw: tuple[float, float], results: Sequence) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["method", "status", "att", "se", "t", "n_treated_matched", "unmatched_treated"])
    for mr in results:
        w.writerow([mr.method, "pre-match", repr(raw[0]), "", repr(raw[1]), "", ""])
        d = mr.to_dict()
        w.writerow([mr.method, "post-match", repr(d["att"]), repr(d["se"]), repr(d["t"]),
                    d["n_treated_matched"], d["unmatched_treated"]])
    return buf.getvalue()


def heckman_table(res) -> str:
    """Selection and outcome equations, then LR-test and Lambda footer lines."""
    footer = []
    if res.lr is not None:
        footer.append(("LR test", res.lr.summary()))
    footer.append(("Lambda", f"{res.lam:.7g} ({fmt_num(res.lam_se)})"))
    footer.append(("rho / sigma", f"{res.rho:.4f} / {res.sigma:.4f}"))
    footer.append(("Selected / total", f"{res.n_selected} / {res.n_total}"))
    return regression_table(
        [("Selection (probit)", res.selection_fit), ("Heckman two-step", res.outcome_fit)],
        footer=footer,
    )
