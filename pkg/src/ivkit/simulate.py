"""Synthetic survey data with known causal structure.

Rows mimic a migrant-survey layout: an outcome ``stay``, a binary
registration status ``hukou`` (1 = non-agricultural), household size
``family`` and number of children ``child`` (the instruments), individual
controls, a city factor, and optional selection-model columns.

Random numbers come from numpy's PCG64 bit generator seeded through
:class:`numpy.random.SeedSequence`; replication batches use
``SeedSequence(seed).spawn(reps)`` so every replicate has an independent,
reproducible stream regardless of how batches are scheduled.

The default first stage has a tiny R^2 but a large F once n is large;
:meth:`DGPConfig.strong` gives a high-relevance variant.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .data import ColumnMeta, Dataset
from .errors import DataError, SpecError

CONTROL_NAMES = ("gender", "edu", "lnincome")


@dataclass(frozen=True)
class SelectionLayer:
    """Heckman-style selection: ``employ`` is observed only when ``selected == 1``.

    ``effects`` are probit coefficients on (hukou, lnhoscost, lnincome, edu),
    the continuous ones centred at their population means.
    """

    rho_sel: float = -0.5
    outcome_slope: float = -0.08
    sigma: float = 0.4
    intercept: float = 0.3
    effects: tuple[float, float, float, float] = (1.0, -0.15, 0.3, 0.05)
    outcome_controls: tuple[float, float, float] = (0.1, 0.01, 0.05)

    def __post_init__(self):
        if not -1 < self.rho_sel < 1:
            raise SpecError("rho_sel must lie in (-1, 1)")


@dataclass(frozen=True)
class DGPConfig:
    """Parameters of the synthetic data-generating process.

    ``assignment="iv"`` draws hukou from a linear-probability first stage in
    (family, child) whose latent noise has correlation ``rho_endog`` with the
    outcome error. ``assignment="observables"`` draws hukou from a logit in
    the controls only (selection on observables, for matching), so the
    constant effect ``beta_true`` is also the ATT.

    ``group_means`` are the (family, child) means of the agricultural and
    non-agricultural origin types; the realised hukou arms inherit their
    ordering through the negative instrument coefficients.
    """

    n: int = 5000
    beta_true: float = -0.2
    rho_endog: float = 0.3
    instrument_strength: tuple[float, float] = (-0.0103, -0.0388)
    first_stage_intercept: float = 0.261
    group_means: tuple[tuple[float, float], tuple[float, float]] = ((3.18, 1.31), (2.91, 1.06))
    rural_share: float = 0.8
    count_sd: tuple[float, float] = (1.2, 0.9)
    count_corr: float = 0.6
    intercept: float = -0.37
    controls: tuple[float, float, float] = (-0.0306, 0.0363, 0.0622)
    sigma: float = 0.46
    heteroskedasticity: float = 0.0
    invalid_instrument_effect: float = 0.0
    n_cities: int = 20
    city_sd: float = 0.05
    assignment: str = "iv"
    propensity: tuple[float, float, float, float] = (-1.5, 0.2, 0.35, 0.4)
    selection: SelectionLayer | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 100:
            raise SpecError("n must be at least 100")
        if not -1 < self.rho_endog < 1:
            raise SpecError("rho_endog must lie in (-1, 1)")
        if self.assignment not in ("iv", "observables"):
            raise SpecError(f"unknown assignment {self.assignment!r}")
        if not 0 < self.rural_share < 1:
            raise SpecError("rural_share must lie in (0, 1)")
        if self.sigma <= 0:
            raise SpecError("sigma must be positive")
        if not 0 <= self.seed < 2**64:
            raise SpecError("seed must be a 64-bit unsigned integer")

    @classmethod
    def strong(cls, **kw) -> "DGPConfig":
        """High-relevance instruments (first-stage R^2 around 10%)."""
        base = dict(instrument_strength=(-0.05, -0.1), first_stage_intercept=0.58, count_corr=0.3)
        base.update(kw)
        return cls(**base)

    @classmethod
    def from_dict(cls, raw: dict) -> "DGPConfig":
        raw = dict(raw)
        if raw.get("selection") is not None:
            sel = dict(raw["selection"])
            for k in ("effects", "outcome_controls"):
                if k in sel:
                    sel[k] = tuple(sel[k])
            raw["selection"] = SelectionLayer(**sel)
        for k in ("instrument_strength", "count_sd", "controls", "propensity"):
            if k in raw:
                raw[k] = tuple(raw[k])
        if "group_means" in raw:
            raw["group_means"] = tuple(tuple(g) for g in raw["group_means"])
        try:
            return cls(**raw)
        except TypeError as exc:
            raise SpecError(f"bad DGP configuration: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TruthRecord:
    """Ground truth behind a generated dataset."""

    beta_true: float
    att: float
    rho_endog: float
    instrument_strength: tuple[float, float]
    invalid_instrument_effect: float
    assignment: str
    seed: int
    n: int
    rho_sel: float | None = None
    selection_outcome_slope: float | None = None
    config: dict = field(default_factory=dict)

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def spawn_seeds(seed: int, reps: int) -> list[int]:
    """Independent child seeds for ``reps`` replications of a base seed."""
    return [int(c.generate_state(1, np.uint64)[0]) for c in np.random.SeedSequence(seed).spawn(reps)]


def _counts(rng, origin, cfg):
    means = np.asarray(cfg.group_means)[origin]  # (n, 2)
    c = cfg.count_corr
    z1 = rng.standard_normal(cfg.n)
    z2 = c * z1 + np.sqrt(1 - c * c) * rng.standard_normal(cfg.n)
    family = np.clip(np.rint(means[:, 0] + cfg.count_sd[0] * z1), 1, 12) + 0.0
    child = np.clip(np.rint(means[:, 1] + cfg.count_sd[1] * z2), 0, 9) + 0.0
    return family, child


def generate(cfg: DGPConfig) -> tuple[Dataset, TruthRecord]:
    """Draw one dataset; identical configs (seed included) give identical output."""
    rng = rng_for(cfg.seed)
    n = cfg.n
    # fixed draw order keeps streams stable across assignment modes
    origin = (rng.random(n) >= cfg.rural_share).astype(int)  # 0 agricultural, 1 not
    family, child = _counts(rng, origin, cfg)
    gender = (rng.random(n) < 0.513).astype(float)
    edu = np.clip(np.rint(10.38 + 3.43 * rng.standard_normal(n)), 0, 19)
    lnincome = 8.76 + 0.69 * rng.standard_normal(n)
    hos = 6.0 + 2.0 * rng.standard_normal(n)
    lnhoscost = np.where(rng.random(n) < 0.2, 0.0, np.clip(hos, 0.0, None))
    city = rng.integers(0, cfg.n_cities, n)
    city_fx = cfg.city_sd * rng.standard_normal(cfg.n_cities)
    eps_std = rng.standard_normal(n)
    eta = rng.standard_normal(n)
    logistic = rng.logistic(size=n)

    if cfg.assignment == "iv":
        p = cfg.first_stage_intercept + cfg.instrument_strength[0] * family \
            + cfg.instrument_strength[1] * child
        p = np.clip(p, 1e-3, 1 - 1e-3)
        v = cfg.rho_endog * eps_std + np.sqrt(1 - cfg.rho_endog**2) * eta
        hukou = (special.ndtr(v) > 1.0 - p).astype(float)
    else:
        a0, a_g, a_e, a_i = cfg.propensity
        idx = a0 + a_g * gender + a_e * (edu - 10.38) / 3.43 + a_i * (lnincome - 8.76) / 0.69
        hukou = (idx + logistic > 0).astype(float)
    if hukou.min() == hukou.max():
        raise DataError("degenerate treatment arms: hukou is constant")

    scale = cfg.sigma * (1.0 + cfg.heteroskedasticity * child)
    g_gender, g_edu, g_inc = cfg.controls
    stay = (
        cfg.intercept + cfg.beta_true * hukou + g_gender * gender + g_edu * edu
        + g_inc * lnincome + cfg.invalid_instrument_effect * child + city_fx[city]
        + scale * eps_std
    )
    cols = {
        "stay": stay, "hukou": hukou, "family": family, "child": child, "gender": gender,
        "edu": edu, "lnincome": lnincome, "lnhoscost": lnhoscost, "city": city.astype(float),
    }
    meta = {
        "hukou": "binary", "gender": "binary",
        "city": ColumnMeta("categorical", cfg.n_cities),
    }
    truth = dict(
        beta_true=cfg.beta_true, att=cfg.beta_true, rho_endog=cfg.rho_endog,
        instrument_strength=tuple(cfg.instrument_strength),
        invalid_instrument_effect=cfg.invalid_instrument_effect,
        assignment=cfg.assignment, seed=cfg.seed, n=n,
    )
    sel = cfg.selection
    if sel is not None:
        r = sel.rho_sel
        e_out = rng.standard_normal(n)
        u = r * e_out + np.sqrt(1 - r * r) * rng.standard_normal(n)
        b_h, b_hc, b_i, b_e = sel.effects
        s_star = (sel.intercept + b_h * hukou + b_hc * (lnhoscost - 4.8)
                  + b_i * (lnincome - 8.76) + b_e * (edu - 10.38) + u)
        selected = (s_star > 0).astype(float)
        if selected.min() == selected.max():
            raise DataError("degenerate selection: every row has the same selection status")
        c_g, c_e, c_i = sel.outcome_controls
        employ = (0.5 + sel.outcome_slope * hukou + c_g * gender + c_e * edu
                  + c_i * (lnincome - 8.76) + sel.sigma * e_out)
        cols["selected"] = selected
        cols["employ"] = np.where(selected == 1.0, employ, 0.0)
        meta["selected"] = "binary"
        truth.update(rho_sel=r, selection_outcome_slope=sel.outcome_slope)
    truth["config"] = cfg.to_dict()
    return Dataset(cols, meta), TruthRecord(**truth)


def replicate(fn: Callable[[Dataset, TruthRecord], object], cfg: DGPConfig, reps: int,
              threads: int | None = None) -> list:
    """Apply ``fn`` to ``reps`` independent datasets drawn from ``cfg``.

    Seeds are spawned from ``cfg.seed``; results come back in replication
    order whatever the thread count (``THREADS`` env var, default 1).
    """
    seeds = spawn_seeds(cfg.seed, reps)
    if threads is None:
        threads = int(os.environ.get("THREADS", "1"))

    def one(s):
        return fn(*generate(replace(cfg, seed=s)))

    if threads <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, seeds))


def coverage(estimates: Sequence[float], ses: Sequence[float], truth: float,
             z: float = 1.959963984540054) -> float:
    """Share of ``estimate +/- z*se`` intervals containing ``truth``."""
    est = np.asarray(estimates)
    se = np.asarray(ses)
    return float(np.mean(np.abs(est - truth) <= z * se))
