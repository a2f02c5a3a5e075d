"""Config-driven command line: ``ivkit run|simulate|validate <config>``.

Exit status: 0 success, 2 configuration error, 3 numerical failure (the
failing step is named on stderr). ``THREADS`` caps worker threads (default 1).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import report
from .data import Dataset, derive_columns, group_describe, load_csv
from .diagnostics import first_stage_f, overid_test
from .errors import DataError, IVKitError, SpecError
from .estimators import ModelSpec, fit_iv, fit_ols
from .matching import balance_table, common_support, estimate_propensity, match_att, parse_method
from .selection import heckman_two_step
from .simulate import DGPConfig, generate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
Cov = Literal["classical", "HC0", "HC1"]


class ConfigError(Exception):
    """Invalid or inconsistent configuration (exit status 2)."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class InputConfig(_Strict):
    csv: str | None = None
    schema_: dict[str, str] | None = Field(default=None, alias="schema")
    derive: list[Union[str, dict]] = []
    simulate: dict | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.csv is None) == (self.simulate is None):
            raise ValueError("input needs exactly one of 'csv' or 'simulate'")
        if self.csv is not None and not self.schema_:
            raise ValueError("csv input needs a 'schema'")
        return self


class DescribeStep(_Strict):
    step: Literal["describe"]
    name: str | None = None
    vars: list[str] = Field(min_length=1)
    group: str | None = None


class OLSModel(_Strict):
    exogenous: list[str] = Field(min_length=1)
    fixed_effect: str | None = None
    label: str | None = None


class OLSStep(_Strict):
    step: Literal["ols"]
    name: str | None = None
    outcome: str
    models: list[OLSModel] = Field(min_length=1)
    cov: Cov = "HC1"


class IVStep(_Strict):
    step: Literal["iv"]
    name: str | None = None
    outcome: str
    endogenous: list[str] = Field(min_length=1)
    instruments: list[str] = Field(min_length=1)
    exogenous: list[str] = []
    fixed_effect: str | None = None
    cov: Cov = "HC1"
    estimators: list[Literal["ols", "tsls", "liml", "gmm", "igmm"]] = Field(
        default=["tsls", "liml", "gmm", "igmm"], min_length=1)
    overid: Literal["score", "sargan", "hansen_j"] | None = "score"
    igmm_max_iter: int = Field(default=500, gt=0)
    igmm_tol: float = Field(default=1e-8, gt=0)


class PSMStep(_Strict):
    step: Literal["psm"]
    name: str | None = None
    treatment: str
    outcome: str
    covariates: list[str] = Field(min_length=1)
    methods: list[Union[str, dict]] = Field(default=["nn1", "nn2", "radius", "kernel"],
                                            min_length=1)
    caliper: float | None = Field(default=None, gt=0)
    bandwidth: float | None = Field(default=None, gt=0)
    replace: bool = True


class HeckmanStep(_Strict):
    step: Literal["heckman"]
    name: str | None = None
    outcome: str
    regressors: list[str] = Field(min_length=1)
    selected: str
    selection_covariates: list[str] = Field(min_length=1)
    lr: bool = True


Step = Annotated[Union[DescribeStep, OLSStep, IVStep, PSMStep, HeckmanStep],
                 Field(discriminator="step")]


class OutputConfig(_Strict):
    dir: str = "out"
    formats: list[Literal["text", "csv", "json"]] = Field(default=["text"], min_length=1)


class PipelineConfig(_Strict):
    input: InputConfig
    steps: list[Step] = Field(min_length=1)
    output: OutputConfig = OutputConfig()


# ---------------------------------------------------------------- loading

def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    try:
        cfg = PipelineConfig.model_validate(raw)
    except ValidationError as exc:
        lines = [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines)) from None
    # relative paths resolve against the config file's directory
    base = path.resolve().parent
    if cfg.input.csv is not None and not Path(cfg.input.csv).is_absolute():
        cfg.input.csv = str(base / cfg.input.csv)
    if not Path(cfg.output.dir).is_absolute():
        cfg.output.dir = str(base / cfg.output.dir)
    return cfg


def _dgp(cfg: PipelineConfig) -> DGPConfig:
    try:
        return DGPConfig.from_dict(cfg.input.simulate)
    except (SpecError, TypeError, ValueError) as exc:
        raise ConfigError(f"input.simulate: {exc}") from exc


def resolve_dataset(cfg: PipelineConfig) -> Dataset:
    try:
        if cfg.input.simulate is not None:
            d, _ = generate(_dgp(cfg))
        else:
            d = load_csv(cfg.input.csv, cfg.input.schema_)
        if cfg.input.derive:
            d = derive_columns(d, cfg.input.derive)
    except (DataError, SpecError, KeyError) as exc:
        raise ConfigError(f"input: {exc}") from exc
    return d


def step_label(i: int, step) -> str:
    return f"{i + 1:02d}_{step.name or step.step}"


def _step_specs(step) -> list[ModelSpec]:
    if isinstance(step, OLSStep):
        return [ModelSpec(step.outcome, exogenous=m.exogenous, fixed_effect=m.fixed_effect,
                          cov=step.cov) for m in step.models]
    if isinstance(step, IVStep):
        return [ModelSpec(step.outcome, step.endogenous, step.instruments, step.exogenous,
                          step.fixed_effect, step.cov)]
    return []


def _step_columns(step) -> list[str]:
    if isinstance(step, DescribeStep):
        return [*step.vars, *([step.group] if step.group else [])]
    if isinstance(step, PSMStep):
        return [step.treatment, step.outcome, *step.covariates]
    if isinstance(step, HeckmanStep):
        return [step.outcome, step.selected, *step.regressors, *step.selection_covariates]
    return [c for spec in _step_specs(step) for c in spec.columns]


def _check_output_dir(path: str) -> None:
    p = Path(path)
    while not p.exists():
        p = p.parent
    if not p.is_dir() or not os.access(p, os.W_OK | os.X_OK):
        raise ConfigError(f"output directory {path} is not writable")


def validate(cfg: PipelineConfig, d: Dataset) -> None:
    """Check every referenced column and step parameter against ``d``."""
    for i, step in enumerate(cfg.steps):
        where = f"step {step_label(i, step)}"
        try:
            missing = [c for c in dict.fromkeys(_step_columns(step)) if c not in d]
            if missing:
                raise ConfigError(f"{where}: unknown column(s) {', '.join(missing)}")
            if isinstance(step, PSMStep):
                _psm_methods(step)
        except SpecError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    _check_output_dir(cfg.output.dir)


def threads_from_env() -> int:
    raw = os.environ.get("THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"THREADS must be a positive integer, got {raw!r}")
    return n


# ---------------------------------------------------------------- steps

def _run_describe(step: DescribeStep, d: Dataset, threads: int) -> dict[str, str]:
    tab = group_describe(d, step.group, step.vars)
    return {"text": tab.to_text(), "csv": tab.to_csv(), "json": report.dumps(tab.to_dict())}


def _regression_outputs(cols, footer=(), extra_rows=(), extra_json=None) -> dict[str, str]:
    payload = {label: fit.to_dict() for label, fit in cols}
    if extra_json:
        payload = {"models": payload, **extra_json}
    return {
        "text": report.regression_table(cols, footer=footer, extra_rows=extra_rows),
        "csv": report.regression_csv(cols),
        "json": report.dumps(payload),
    }


def _run_ols(step: OLSStep, d: Dataset, threads: int) -> dict[str, str]:
    cols = []
    for i, (m, spec) in enumerate(zip(step.models, _step_specs(step))):
        cols.append((m.label or f"OLS {i + 1}", fit_ols(spec, d)))
    extra = []
    if any(m.fixed_effect for m in step.models):
        extra.append(("Fixed effect", [m.fixed_effect or "no" for m in step.models]))
    return _regression_outputs(cols, extra_rows=extra)


_IV_LABELS = {"ols": "OLS", "tsls": "TSLS", "liml": "LIML", "gmm": "GMM", "igmm": "IGMM"}


def _run_iv(step: IVStep, d: Dataset, threads: int) -> dict[str, str]:
    (spec,) = _step_specs(step)
    cols, fits = [], {}
    for est in step.estimators:
        if est == "ols":
            fit = fit_ols(spec, d)
        elif est == "igmm":
            fit = fit_iv(spec, d, "igmm", max_iter=step.igmm_max_iter, tol=step.igmm_tol)
        else:
            fit = fit_iv(spec, d, est)
        fits[est] = fit
        cols.append((_IV_LABELS[est], fit))
    ref = fits.get("tsls") or fit_iv(spec, d, "tsls")
    footer, tests = [], {}
    for endog in spec.endogenous:
        fs = first_stage_f(ref, endog)
        tag = "" if len(spec.endogenous) == 1 else f" ({endog})"
        footer.append((f"One-stage regression results{tag}", fs.summary()))
        tests[f"first_stage_f:{endog}"] = fs.to_dict()
    if step.overid is not None:
        if len(spec.instruments) > len(spec.endogenous):
            ov = overid_test(ref, step.overid)
            footer.append(("Over-identification test", ov.summary()))
            tests["overid"] = ov.to_dict()
        else:
            footer.append(("Over-identification test", "just-identified, df=0, test undefined"))
            tests["overid"] = None
    return _regression_outputs(cols, footer=footer, extra_json={"tests": tests})


def _psm_methods(step: PSMStep) -> list:
    out = []
    for m in step.methods:
        spec = {"method": m} if isinstance(m, str) else dict(m)
        name = spec.get("method", "")
        if name == "radius" and step.caliper is not None:
            spec.setdefault("caliper", step.caliper)
        if name == "kernel" and step.bandwidth is not None:
            spec.setdefault("bandwidth", step.bandwidth)
        if str(name).startswith("nn"):
            spec.setdefault("replace", step.replace)
        try:
            out.append(parse_method(spec))
        except (TypeError, KeyError, ValueError) as exc:
            raise SpecError(f"bad matching method {m!r}: {exc}") from exc
    return out


def _run_psm(step: PSMStep, d: Dataset, threads: int) -> dict[str, str]:
    pm = estimate_propensity(step.treatment, step.covariates, d)
    methods = _psm_methods(step)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda m: match_att(pm, step.outcome, m, d), methods))
    else:
        results = [match_att(pm, step.outcome, m, d) for m in methods]
    y, t = d[step.outcome], pm.treated
    diff = float(y[t].mean() - y[~t].mean())
    se = float(np.sqrt(np.var(y[t], ddof=1) / t.sum() + np.var(y[~t], ddof=1) / (~t).sum()))
    raw = (diff, diff / se)
    support = common_support(pm)
    balances = [balance_table(pm, mr, step.covariates, d) for mr in results]
    text = [report.psm_table(raw, results)]
    for mr, bt in zip(results, balances):
        rows = [["covariate", "bias pre (%)", "bias post (%)", "reduction (%)"]]
        rows += [[r.covariate, f"{r.bias_pre_pct:.2f}", f"{r.bias_post_pct:.2f}",
                  f"{r.reduction_pct:.1f}"]
                 for r in bt.rows]
        text.append(f"\nBalance, {mr.method}\n" + report._align(rows, rule_after=(0,)) + "\n")
    text.append(
        f"\nCommon support [{support.lower:.4f}, {support.upper:.4f}]: "
        f"{support.off_support_treated} treated and {support.off_support_control} control rows "
        "off support\n"
    )
    payload = {
        "raw_difference": {"att": raw[0], "t": raw[1]},
        "results": [mr.to_dict() for mr in results],
        "balance": {mr.method: bt.to_dict() for mr, bt in zip(results, balances)},
        "support": support.to_dict(),
    }
    return {"text": "".join(text), "csv": report.psm_csv(raw, results),
            "json": report.dumps(payload)}


def _run_heckman(step: HeckmanStep, d: Dataset, threads: int) -> dict[str, str]:
    res = heckman_two_step(step.outcome, step.regressors, step.selected,
                           step.selection_covariates, d, lr=step.lr)
    cols = [("selection", res.selection_fit), ("outcome", res.outcome_fit)]
    return {"text": report.heckman_table(res), "csv": report.regression_csv(cols),
            "json": report.dumps(res.to_dict())}


_RUNNERS = {"describe": _run_describe, "ols": _run_ols, "iv": _run_iv, "psm": _run_psm,
            "heckman": _run_heckman}
_EXT = {"text": "txt", "csv": "csv", "json": "json"}


class StepFailure(Exception):
    def __init__(self, label: str, exc: Exception, code: int):
        super().__init__(f"step {label} failed: {type(exc).__name__}: {exc}")
        self.code = code


def run_pipeline(cfg: PipelineConfig, threads: int = 1, log=print) -> list[Path]:
    """Execute the steps in order and write one file per step and format."""
    d = resolve_dataset(cfg)
    validate(cfg, d)
    out = Path(cfg.output.dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc.strerror}") from exc
    written = []
    for i, step in enumerate(cfg.steps):
        label = step_label(i, step)
        try:
            rendered = _RUNNERS[step.step](step, d, threads)
        except SpecError as exc:
            raise StepFailure(label, exc, EXIT_CONFIG) from exc
        except (IVKitError, ArithmeticError, np.linalg.LinAlgError) as exc:
            raise StepFailure(label, exc, EXIT_NUMERIC) from exc
        for fmt in cfg.output.formats:
            path = out / f"{label}.{_EXT[fmt]}"
            newline = "" if fmt == "csv" else None
            with path.open("w", encoding="utf-8", newline=newline) as fh:
                fh.write(rendered[fmt])
            written.append(path)
            log(f"wrote {path}")
    return written


def run_simulate(cfg: PipelineConfig, log=print) -> list[Path]:
    """Write the simulated dataset and its truth record to the output directory."""
    if cfg.input.simulate is None:
        raise ConfigError("simulate needs an 'input.simulate' section")
    _check_output_dir(cfg.output.dir)
    try:
        d, truth = generate(_dgp(cfg))
    except DataError as exc:
        raise ConfigError(f"input.simulate: {exc}") from exc
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    d.to_csv(out / "dataset.csv")
    (out / "truth.json").write_text(truth.to_json(indent=2) + "\n", encoding="utf-8")
    paths = [out / "dataset.csv", out / "truth.json"]
    for p in paths:
        log(f"wrote {p}")
    return paths


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="ivkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run every pipeline step and write reports"),
                        ("simulate", "write the simulated dataset and truth record"),
                        ("validate", "check the config and referenced columns only")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="pipeline config (JSON or YAML)")
    args = parser.parse_args(argv)
    try:
        threads = threads_from_env()
        cfg = load_config(args.config)
        if args.command == "run":
            run_pipeline(cfg, threads)
        elif args.command == "simulate":
            run_simulate(cfg)
        else:
            validate(cfg, resolve_dataset(cfg))
            print(f"config OK: {len(cfg.steps)} step(s)")
    except ConfigError as exc:
        print(f"ivkit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StepFailure as exc:
        kind = "config error" if exc.code == EXIT_CONFIG else "numerical failure"
        print(f"ivkit: {kind}: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
