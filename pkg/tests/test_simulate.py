import numpy as np
import pytest

from ivkit import DGPConfig, ModelSpec, SelectionLayer, fit_ols, generate, replicate
from ivkit.errors import DataError, SpecError
from ivkit.simulate import coverage, spawn_seeds


def test_same_seed_gives_identical_bytes():
    cfg = DGPConfig(n=2000, seed=42, selection=SelectionLayer())
    a, ta = generate(cfg)
    b, tb = generate(cfg)
    assert a.to_csv_string() == b.to_csv_string()
    assert ta.to_json() == tb.to_json()
    c, _ = generate(DGPConfig(n=2000, seed=43, selection=SelectionLayer()))
    assert c.to_csv_string() != a.to_csv_string()


def test_truth_record_echoes_config():
    d, t = generate(DGPConfig(n=500, seed=1, beta_true=-0.3, rho_endog=0.1))
    assert (t.beta_true, t.att, t.rho_endog, t.n) == (-0.3, -0.3, 0.1, 500)
    assert t.config["seed"] == 1
    assert t.rho_sel is None


def test_columns_and_domains():
    d, _ = generate(DGPConfig(n=3000, seed=2, selection=SelectionLayer()))
    for c in ("stay", "hukou", "family", "child", "gender", "edu", "lnincome", "lnhoscost",
              "city", "selected", "employ"):
        assert c in d
    assert set(np.unique(d["hukou"])) == {0.0, 1.0}
    assert d["family"].min() >= 1 and d["family"].max() <= 12
    assert d["child"].min() >= 0 and d["child"].max() <= 9
    assert d.meta["city"].kind == "categorical"
    assert np.all(d["employ"][d["selected"] == 0] == 0.0)


def test_config_validation():
    with pytest.raises(SpecError):
        DGPConfig(n=50)
    with pytest.raises(SpecError):
        DGPConfig(rho_endog=1.0)
    with pytest.raises(SpecError):
        SelectionLayer(rho_sel=-1.0)
    with pytest.raises(SpecError):
        DGPConfig.from_dict({"n": 1000, "bogus": 1})


def test_from_dict_round_trip():
    cfg = DGPConfig(n=1000, seed=3, selection=SelectionLayer(rho_sel=0.2))
    assert DGPConfig.from_dict(cfg.to_dict()) == cfg


def test_degenerate_arms_raise():
    with pytest.raises(DataError, match="degenerate"):
        generate(DGPConfig(n=200, first_stage_intercept=5.0, instrument_strength=(0.0, 0.0)))


def test_spawned_seeds_are_distinct_and_stable():
    s = spawn_seeds(7, 50)
    assert len(set(s)) == 50
    assert s == spawn_seeds(7, 50)


def test_replicate_order_independent_of_threads():
    cfg = DGPConfig(n=500, seed=9)
    f = lambda d, t: float(d["stay"].sum())
    assert replicate(f, cfg, 12, threads=1) == replicate(f, cfg, 12, threads=4)


def test_replicate_reads_threads_env(monkeypatch):
    monkeypatch.setenv("THREADS", "3")
    cfg = DGPConfig(n=300, seed=1)
    assert replicate(lambda d, t: d.n_rows, cfg, 4) == [300] * 4


def test_coverage_helper():
    assert coverage([0.0, 1.0, 3.0], [1.0, 1.0, 1.0], 0.0) == pytest.approx(2 / 3)


def test_ols_unbiased_without_endogeneity():
    cfg = DGPConfig(n=3000, seed=5, rho_endog=0.0)
    spec = ModelSpec("stay", exogenous=["hukou", "gender", "edu", "lnincome"])

    def one(d, t):
        f = fit_ols(spec, d)
        return f.coef_of("hukou"), f.se_of("hukou")

    out = np.array(replicate(one, cfg, 200))
    assert np.mean(np.abs(out[:, 0] + 0.2) <= 2 * out[:, 1]) >= 0.93


def test_first_stage_recovers_instrument_strength():
    cfg = DGPConfig(n=1_000_000, seed=6)
    d, _ = generate(cfg)
    fs = fit_ols(ModelSpec("hukou", exogenous=["family", "child"]), d)
    for name, target in zip(("family", "child"), cfg.instrument_strength):
        assert abs(fs.coef_of(name) - target) < 3 * fs.se_of(name)
    assert abs(fs.coef_of("_cons") - cfg.first_stage_intercept) < 3 * fs.se_of("_cons")
