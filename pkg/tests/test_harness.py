import csv
import io
import json
import math

import numpy as np
import pytest

from helpers import SOURCE_DR_DESIGN, WELL_POSED_DESIGN
from sourcedr.experiments import (CURVE_COLUMNS, ExperimentConfig, curve_rows, emit_curves, fit_rate,
                                  load_experiment, make_scenario, oracle_check, records_to_csv,
                                  replication_seed, run_coverage, run_experiment, run_rate_study,
                                  run_source_dr_study, swap_sides)

IDENTITY_DESIGN = dict(kind="spectral", sigma=[1.0] * 6, beta_h=1.0, w_h=[0, .1, .1, .1, .1, .1], beta_q=1.0,
                       w_q=[.3] * 6, noise=0.2, confounding=0.1)
BETA1_DESIGN = dict(kind="spectral", sigma=[1, .8, .6, .4, .2, .1], beta_h=1.0, w_h=[0, .2, .2, .2, .2, .2],
                    beta_q=1.0, w_q=[.5, .5, .4, .3, .3, .3], noise=0.2, confounding=0.3)
AUTO = dict(schedule="auto", beta_assumed=1.0)


# --- curves ---------------------------------------------------------------------

def test_curve_rows_examples():
    row = curve_rows([1.0])[0]
    assert row["alpha_unknown"] == pytest.approx(1 / 3, abs=1e-12)
    assert row["kappa"] == pytest.approx(1.0, abs=1e-12)
    assert abs(curve_rows([0.01])[0]["alpha_unknown"] - 0.5) <= 1e-2


@pytest.mark.parametrize("beta", [0.05, 0.5, 1.0, 2.5, 7.0])
def test_curve_smooth_alpha_formula(beta):
    assert curve_rows([beta], 1.0)[0]["alpha_smooth"] == pytest.approx((1 + beta) / (2 + 4 * beta), abs=1e-12)


def test_curve_baselines():
    lo, hi = curve_rows([0.5, 3.0])
    assert (lo["kappa_constrained_baseline"], hi["kappa_constrained_baseline"]) == (0.0, 1.0)
    assert lo["kappa_tikhonov_baseline"] == pytest.approx(0.5 / 2.5)
    assert hi["kappa_tikhonov_baseline"] == pytest.approx(0.5)
    assert lo["kappa_well_posed_regression"] == 2.0


def test_emit_curves_csv(tmp_path):
    path = tmp_path / "c" / "curves.csv"
    text = emit_curves([0.5, 1.0, 2.0], 1.0, path)
    assert path.read_bytes() == text.encode()
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == CURVE_COLUMNS
    assert [float(r["beta"]) for r in rows] == [0.5, 1.0, 2.0]
    # full double precision round trip
    assert float(rows[1]["alpha_unknown"]) == curve_rows([1.0])[0]["alpha_unknown"]
    assert len(emit_curves().splitlines()) == 201


def test_curves_reject_nonpositive_beta():
    with pytest.raises(ValueError):
        curve_rows([0.0])


# --- rate fitting ---------------------------------------------------------------

def test_fit_rate_exact_power_law():
    ns = [100, 400, 1600, 6400]
    r = fit_rate(ns, [3.0 * n ** -0.7 for n in ns])
    assert r.slope == pytest.approx(-0.7, abs=1e-12)
    assert r.intercept == pytest.approx(math.log(3.0), abs=1e-10)
    assert r.r_squared == pytest.approx(1.0, abs=1e-12)
    assert not r.degenerate


def test_fit_rate_degenerate_and_too_few():
    r = fit_rate([1, 2, 3], [0.5, 0.5, 0.5])
    assert r.degenerate and r.slope == 0.0 and r.r_squared == 0.0
    with pytest.raises(ValueError):
        fit_rate([1, 2], [1.0, 0.5])


def test_rate_weak_identity_operator():
    cfg = ExperimentConfig(kind="rate_weak", dgp=IDENTITY_DESIGN, primal=AUTO, n_grid=[500, 2000, 8000],
                           replications=20)
    r = run_rate_study(cfg)
    assert -1.4 <= r.slope <= -0.6
    assert 0.0 <= r.r_squared <= 1.0 and len(r.points) == 3


def test_rate_strong_beta_one_decreases():
    cfg = ExperimentConfig(kind="rate_strong", dgp=BETA1_DESIGN, primal=AUTO, n_grid=[500, 2000, 8000],
                           replications=20)
    assert run_rate_study(cfg, "strong", "primal").slope <= -0.25


def test_rate_strong_bias_floor_negative_control():
    cfg = ExperimentConfig(kind="rate_strong", dgp=BETA1_DESIGN, primal={"lam": 0.9}, n_grid=[500, 2000, 8000],
                           replications=20)
    assert run_rate_study(cfg, "strong", "primal").slope >= -0.1


def test_rate_study_dual_side_and_bad_metric():
    cfg = ExperimentConfig(kind="rate_weak", dgp=IDENTITY_DESIGN, primal=AUTO, n_grid=[500, 2000, 8000],
                           replications=3, side="dual")
    r = run_rate_study(cfg)
    assert r.slope < 0
    with pytest.raises(ValueError):
        run_rate_study(cfg, "medium")


# --- coverage -------------------------------------------------------------------

def test_single_replication_is_well_formed(tmp_path):
    cfg = ExperimentConfig(dgp=WELL_POSED_DESIGN, primal=AUTO, n_grid=[500], replications=1,
                           outputs=str(tmp_path))
    s = run_coverage(cfg)
    assert s["replications"] == 1 and s["failures"] == 0
    assert s["coverage"] in (0.0, 1.0)
    assert s["mean_width"] > 0
    assert {p.name for p in tmp_path.iterdir()} == {"config.resolved.json", "replications.csv", "summary.json"}


def test_halved_interval_loses_coverage():
    cfg = ExperimentConfig(dgp=WELL_POSED_DESIGN, primal=AUTO, n_grid=[2000], replications=200, ci_scale=0.5)
    assert run_coverage(cfg)["coverage"] < 0.90


def test_summary_consistency_with_records(tmp_path):
    cfg = ExperimentConfig(dgp=WELL_POSED_DESIGN, primal=AUTO, n_grid=[300, 600], replications=6,
                           outputs=str(tmp_path))
    s = run_coverage(cfg)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "replications.csv").read_text())))
    assert len(rows) == 12
    for n in (300, 600):
        mine = [r for r in rows if int(r["n"]) == n]
        cov = np.mean([r["covered"] == "true" for r in mine])
        width = np.mean([float(r["width"]) for r in mine])
        assert s["by_n"][str(n)]["coverage"] == cov
        assert s["by_n"][str(n)]["mean_width"] == pytest.approx(width, rel=1e-15)
    assert s["width_ratios"][0] == pytest.approx(s["by_n"]["300"]["mean_width"] / s["by_n"]["600"]["mean_width"])
    assert json.loads((tmp_path / "summary.json").read_text())["by_n"]["300"]["coverage"] == s["by_n"]["300"][
        "coverage"]


def test_failures_are_counted_and_run_continues():
    cfg = ExperimentConfig(dgp=WELL_POSED_DESIGN, primal={"lam": 0.1, "max_alternations": 1}, n_grid=[200],
                           replications=3)
    s = run_coverage(cfg)
    assert s["failures"] == 3 and "coverage" not in s


# --- determinism and seeding ----------------------------------------------------

def test_outputs_are_byte_identical(tmp_path):
    def run():
        cfg = ExperimentConfig(dgp=WELL_POSED_DESIGN, primal=AUTO, n_grid=[400], replications=4, base_seed=9,
                               outputs=str(tmp_path))
        run_coverage(cfg)
        return {p.name: p.read_bytes() for p in tmp_path.iterdir()}

    assert run() == run()


def test_parallel_matches_serial(tmp_path):
    base = dict(dgp=WELL_POSED_DESIGN, primal=AUTO, n_grid=[300], replications=4, base_seed=3)
    run_coverage(ExperimentConfig(**base, outputs=str(tmp_path / "s")))
    run_coverage(ExperimentConfig(**base, jobs=2, outputs=str(tmp_path / "p")))
    for name in ("replications.csv", "summary.json"):
        assert (tmp_path / "s" / name).read_bytes() == (tmp_path / "p" / name).read_bytes()


def test_replication_depends_only_on_base_seed_and_index(tmp_path):
    def rows(base_seed, reps, sub):
        cfg = ExperimentConfig(dgp=WELL_POSED_DESIGN, primal=AUTO, n_grid=[300], replications=reps,
                               base_seed=base_seed, outputs=str(tmp_path / sub))
        run_coverage(cfg)
        return list(csv.DictReader(io.StringIO((tmp_path / sub / "replications.csv").read_text())))

    a = rows(5, 3, "a")
    b = rows(6, 2, "b")
    # replication r of base 5 equals replication r-1 of base 6
    for ra, rb in zip(a[1:], b):
        assert ra["seed"] == rb["seed"]
        assert ra["theta_hat"] == rb["theta_hat"] and ra["ci_low"] == rb["ci_low"]
    assert replication_seed(2 ** 64 - 1, 1) == 0


# --- config and helpers ---------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(replications=0)
    with pytest.raises(ValueError):
        ExperimentConfig(n_grid=[100, 100])
    with pytest.raises(ValueError):
        ExperimentConfig(kind="bootstrap")
    with pytest.raises(ValueError):
        ExperimentConfig(base_seed=-1)
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"reps": 3})


def test_load_experiment_toml_and_json(tmp_path):
    (tmp_path / "c.toml").write_text('kind = "coverage"\nreplications = 3\n[dgp]\nkind = "spectral"\n')
    cfg = load_experiment(tmp_path / "c.toml", base_seed=4)
    assert cfg.replications == 3 and cfg.base_seed == 4
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert load_experiment(tmp_path / "c.json") == cfg


def test_swap_sides_exchanges_degrees_only():
    spec = dict(WELL_POSED_DESIGN, beta_h=2.0, beta_q=0.25)
    out = swap_sides(spec)
    assert (out["beta_h"], out["beta_q"]) == (0.25, 2.0)
    assert out["w_h"] == spec["w_h"] and spec["beta_h"] == 2.0


def test_records_to_csv_quoting():
    text = records_to_csv([{"a": 1.5, "b": 'x,"y"', "c": None, "d": True}])
    assert text == 'a,b,c,d\r\n1.5,"x,""y""",,true\r\n'


def test_make_scenario_kinds():
    assert make_scenario(WELL_POSED_DESIGN).truth.theta0 == make_scenario(dict(WELL_POSED_DESIGN)).truth.theta0
    prox = make_scenario({"kind": "proximal"})
    assert prox.sample(50, 0).x.shape == (50, 3)
    gp = make_scenario({"kind": "gaussian_pair", "rho": 0.5, "beta": 1.0})
    assert gp.sample(60, 1).n == 60
    with pytest.raises(ValueError):
        make_scenario({"kind": "tabular"})


def test_oracle_check_passes():
    s = oracle_check(0, instances=20)
    assert s["passed"] and s["bias_bound_violations"] == 0 and s["filter_max_abs_diff"] <= 1e-12


def test_run_experiment_dispatch(tmp_path):
    out = run_experiment(ExperimentConfig(kind="curves", beta_grid=[1.0, 2.0], outputs=str(tmp_path)))
    assert out == {"kind": "curves", "rows": 2}
    assert (tmp_path / "curves.csv").exists()


def test_source_dr_study_structure(tmp_path):
    cfg = ExperimentConfig(kind="source_dr", dgp=SOURCE_DR_DESIGN,
                           primal=dict(mode="constrained", schedule="auto", beta_assumed=1.0),
                           control=AUTO, n_grid=[400], replications=2, outputs=str(tmp_path))
    s = run_source_dr_study(cfg)
    for scen in ("primal_well_posed", "dual_well_posed"):
        assert set(s[scen]) == {"constrained", "control"}
        assert s[scen]["constrained"]["replications"] == 2
    assert set(s["control_strictly_worse"]) == {"primal_well_posed", "dual_well_posed"}
    rows = list(csv.DictReader(io.StringIO((tmp_path / "replications.csv").read_text())))
    assert len(rows) == 8 and {r["estimator"] for r in rows} == {"constrained", "control"}
