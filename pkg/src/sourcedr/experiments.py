"""Monte Carlo experiment runner: coverage, rate studies, source-condition robustness, curves."""
from __future__ import annotations

import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import spectral
from .data import Dataset
from .dgp import (GroundTruth, ProximalConfig, discrete_ground_truth, gaussian_pair_dgp, proximal_model,
                  spectral_discrete_dgp)
from .estimator import EstimatorConfig, dualize, fit, primal_problem
from .inference import InferenceConfig, cross_fit_infer, nuisance_error_report
from .rkhs import MomentFunctional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("coverage", "rate_strong", "rate_weak", "curves", "oracle_check", "source_dr")


# --- configuration ---------------------------------------------------------------

@dataclass
class ExperimentConfig:
    kind: str = "coverage"
    dgp: dict = field(default_factory=lambda: {"kind": "spectral"})
    primal: dict = field(default_factory=dict)
    dual: dict | None = None
    control: dict | None = None
    n_grid: list = field(default_factory=lambda: [2000])
    replications: int = 100
    base_seed: int = 0
    outputs: str | None = None
    folds: int = 2
    ci_scale: float = 1.0
    side: str = "primal"
    beta_grid: list | None = None
    gamma: float = 1.0
    jobs: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ValueError("n_grid must be strictly increasing")
        if not 0 <= self.base_seed < 2 ** 64:
            raise ValueError("base_seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return json.loads(text)
    return tomllib.loads(text)


def load_experiment(path, **overrides) -> ExperimentConfig:
    doc = load_config_file(path)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(doc)


def replication_seed(base_seed: int, r: int) -> int:
    return (int(base_seed) + int(r)) % 2 ** 64


# --- scenarios ------------------------------------------------------------------

@dataclass
class Scenario:
    spec: dict
    truth: GroundTruth
    m: MomentFunctional
    m_tilde: MomentFunctional
    _model: object = None

    def sample(self, n: int, seed: int) -> Dataset:
        if self.spec["kind"] == "gaussian_pair":
            args = {k: v for k, v in self.spec.items() if k not in ("kind", "rho", "beta")}
            return gaussian_pair_dgp(self.spec["rho"], self.spec["beta"], n, seed, **args)[0]
        return self._model.sample(n, seed)


def _build_scenario(spec: dict) -> Scenario:
    spec = dict(spec)
    kind = spec.get("kind", "spectral")
    m = MomentFunctional("outcome_product", {"column": "y"})
    if kind == "spectral":
        args = {k: v for k, v in spec.items() if k not in ("kind", "sigma", "beta_h", "w_h", "beta_q", "w_q")}
        model = spectral_discrete_dgp(spec["sigma"], spec["beta_h"], spec["w_h"], spec["beta_q"], spec["w_q"], **args)
    elif kind == "proximal":
        model = proximal_model(ProximalConfig(**{k: v for k, v in spec.items() if k != "kind"}))
    elif kind == "gaussian_pair":
        args = {k: v for k, v in spec.items() if k not in ("kind", "rho", "beta")}
        _, truth = gaussian_pair_dgp(spec["rho"], spec["beta"], 50, 0, **args)
        return Scenario(spec, truth, m, truth.m_tilde)
    else:
        raise ValueError(f"unknown dgp kind {kind!r}")
    truth = discrete_ground_truth(model)
    return Scenario(spec, truth, m, truth.m_tilde, model)


@lru_cache(maxsize=32)
def _scenario_cached(key: str) -> Scenario:
    return _build_scenario(json.loads(key))


def make_scenario(spec: dict) -> Scenario:
    return _scenario_cached(json.dumps(spec, sort_keys=True))


def swap_sides(spec: dict) -> dict:
    """Spectral spec with the primal and dual source degrees exchanged (loadings kept)."""
    out = dict(spec)
    out["beta_h"], out["beta_q"] = spec["beta_q"], spec["beta_h"]
    return out


# --- output helpers -------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def records_to_csv(records: list[dict], columns: list[str] | None = None) -> str:
    if columns is None:
        columns = []
        for r in records:
            columns += [k for k in r if k not in columns]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(columns)
    for r in records:
        writer.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def write_outputs(outdir, config: ExperimentConfig, records: list[dict], summary: dict):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(dumps_json(config.to_dict()))
    (out / "replications.csv").write_text(records_to_csv(records), newline="")
    (out / "summary.json").write_text(dumps_json(summary))


def _map(func, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, tasks))


# --- coverage -------------------------------------------------------------------

def _inference_config(primal: dict, dual: dict | None, folds: int, ci_scale: float, seed: int) -> InferenceConfig:
    return InferenceConfig(EstimatorConfig(**primal), EstimatorConfig(**dual) if dual else None,
                           folds=folds, seed=seed, ci_scale=ci_scale)


def _coverage_task(task: tuple) -> dict:
    spec, primal, dual, folds, ci_scale, n, r, base_seed, tags = task
    seed = replication_seed(base_seed, r)
    scen = make_scenario(spec)
    rec = {**tags, "rep": r, "seed": seed, "n": n, "theta0": scen.truth.theta0}
    try:
        data = scen.sample(n, seed)
        rep = cross_fit_infer(data, scen.m, scen.m_tilde, _inference_config(primal, dual, folds, ci_scale, seed),
                              truth=scen.truth)
    except Exception as exc:  # a failed replication is recorded, the run continues
        rec.update(error=f"{type(exc).__name__}: {exc}")
        return rec
    rec.update(theta_hat=rep.theta_hat, sigma_hat=rep.sigma_hat, ci_low=rep.ci_low, ci_high=rep.ci_high,
               width=rep.ci_high - rep.ci_low, covered=rep.covered, abs_error=abs(rep.theta_hat - scen.truth.theta0),
               **rep.nuisance_errors, error=None)
    return rec


def summarize_coverage(records: list[dict]) -> dict:
    ok = [r for r in records if not r.get("error")]
    out = {"replications": len(records), "failures": len(records) - len(ok)}
    if ok:
        out.update(coverage=float(np.mean([r["covered"] for r in ok])),
                   mean_width=float(np.mean([r["width"] for r in ok])),
                   mean_abs_error=float(np.mean([r["abs_error"] for r in ok])))
    return out


def coverage_records(config: ExperimentConfig, spec=None, primal=None, tags=None) -> list[dict]:
    spec = config.dgp if spec is None else spec
    primal = config.primal if primal is None else primal
    dual = config.dual if primal is config.primal else None
    tasks = [(spec, primal, dual, config.folds, config.ci_scale, n, r, config.base_seed, tags or {})
             for n in config.n_grid for r in range(config.replications)]
    return _map(_coverage_task, tasks, config.jobs)


def run_coverage(config: ExperimentConfig) -> dict:
    records = coverage_records(config)
    by_n = {str(n): summarize_coverage([r for r in records if r["n"] == n]) for n in config.n_grid}
    summary = {"kind": "coverage", "by_n": by_n}
    widths = [by_n[str(n)].get("mean_width") for n in config.n_grid]
    if len(widths) > 1 and all(w is not None for w in widths):
        summary["width_ratios"] = [a / b for a, b in zip(widths, widths[1:])]
    if len(config.n_grid) == 1:
        summary.update(by_n[str(config.n_grid[0])])
    if config.outputs:
        write_outputs(config.outputs, config, records, summary)
    return summary


# --- rate studies ---------------------------------------------------------------

@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: list
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def fit_rate(ns, errors) -> RateFit:
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if ns.size < 3:
        raise ValueError("a rate fit needs at least 3 sample sizes")
    points = [(int(n), float(e)) for n, e in zip(ns, errors)]
    if np.any(errors <= 0) or np.ptp(np.log(errors)) == 0:
        return RateFit(0.0, float(np.log(max(errors.mean(), 1e-300))), 0.0, points, True)
    x, y = np.log(ns), np.log(errors)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 0.0
    return RateFit(float(slope), float(intercept), min(max(r2, 0.0), 1.0), points)


def _rate_task(task: tuple) -> dict:
    spec, primal, side, n, r, base_seed = task
    seed = replication_seed(base_seed, r)
    scen = make_scenario(spec)
    rec = {"rep": r, "seed": seed, "n": n}
    try:
        data = scen.sample(n, seed)
        cfg = EstimatorConfig(**primal)
        if side == "primal":
            prob = primal_problem(data, B=cfg.norm_bound_B, max_anchors=cfg.max_anchors, seed=seed)
        else:
            prob = dualize(data, (None, None), scen.m_tilde, B=cfg.norm_bound_B, max_anchors=cfg.max_anchors,
                           seed=seed)
        strong, weak = nuisance_error_report(fit(prob, cfg), scen.truth, side)
    except Exception as exc:
        rec.update(error=f"{type(exc).__name__}: {exc}")
        return rec
    rec.update(strong=strong, weak=weak, error=None)
    return rec


def rate_records(config: ExperimentConfig, side: str) -> list[dict]:
    tasks = [(config.dgp, config.primal, side, n, r, config.base_seed)
             for n in config.n_grid for r in range(config.replications)]
    return _map(_rate_task, tasks, config.jobs)


def run_rate_study(config: ExperimentConfig, metric: str | None = None, side: str | None = None) -> RateFit:
    metric = metric or ("weak" if config.kind == "rate_weak" else "strong")
    side = side or config.side
    if metric not in ("strong", "weak"):
        raise ValueError("metric must be 'strong' or 'weak'")
    records = rate_records(config, side)
    means = []
    for n in config.n_grid:
        vals = [r[metric] for r in records if r["n"] == n and not r.get("error")]
        means.append(float(np.mean(vals)) if vals else math.nan)
    rate = fit_rate(config.n_grid, means)
    if config.outputs:
        summary = {"kind": f"rate_{metric}", "side": side, **rate.to_dict(),
                   "failures": sum(1 for r in records if r.get("error"))}
        write_outputs(config.outputs, config, records, summary)
    return rate


# --- source-condition double robustness ----------------------------------------

def run_source_dr_study(config: ExperimentConfig) -> dict:
    """Coverage for the primal-well-posed spec and its mirror, with identical estimator configs.

    ``config.primal`` is used for both nuisances in both scenarios; ``config.control``
    (an unconstrained configuration) is run on the same seeds as a negative control.
    """
    scenarios = {"primal_well_posed": config.dgp, "dual_well_posed": swap_sides(config.dgp)}
    estimators = {"constrained": config.primal}
    if config.control:
        estimators["control"] = config.control
    records, summary = [], {"kind": "source_dr"}
    for sname, spec in scenarios.items():
        summary[sname] = {}
        for ename, est in estimators.items():
            recs = coverage_records(config, spec, est, {"scenario": sname, "estimator": ename})
            records += recs
            summary[sname][ename] = summarize_coverage(recs)
    if config.control:
        summary["control_strictly_worse"] = {
            s: summary[s]["control"].get("coverage", 0.0) < summary[s]["constrained"].get("coverage", 0.0)
            for s in scenarios}
    if config.outputs:
        write_outputs(config.outputs, config, records, summary)
    return summary


# --- curves and oracle checks ---------------------------------------------------

CURVE_COLUMNS = ["beta", "alpha_unknown", "alpha_known", "alpha_smooth", "kappa", "kappa_smooth",
                 "alpha_prior_baseline", "alpha_well_posed_dml", "kappa_constrained_baseline",
                 "kappa_tikhonov_baseline", "kappa_well_posed_regression"]


def curve_rows(beta_grid, gamma: float = 1.0) -> list[dict]:
    rows = []
    for b in beta_grid:
        b = float(b)
        if not b > 0:
            raise ValueError("beta grid must be positive")
        r = spectral.rate_exponents(b, gamma)
        rows.append({
            "beta": b, "alpha_unknown": r.alpha_unknown_side, "alpha_known": r.alpha_known_side,
            "alpha_smooth": r.alpha_smooth, "kappa": r.kappa_strong, "kappa_smooth": r.kappa_smooth,
            "alpha_prior_baseline": 1.0 if b < 1 else 1.0 / 3.0, "alpha_well_posed_dml": 0.25,
            "kappa_constrained_baseline": 0.0 if b < 1 else 1.0,
            "kappa_tikhonov_baseline": min(b, 2.0) / (2.0 + min(b, 2.0)),
            "kappa_well_posed_regression": 2.0,
        })
    return rows


def default_beta_grid() -> list[float]:
    return [round(0.05 * k, 10) for k in range(1, 201)]


def emit_curves(beta_grid=None, gamma: float = 1.0, path=None) -> str:
    text = records_to_csv(curve_rows(beta_grid or default_beta_grid(), gamma), CURVE_COLUMNS)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, newline="")
    return text


def oracle_check(seed: int = 0, instances: int = 100) -> dict:
    """Filter exactness against the coordinatewise recursion and bias-bound soundness."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        K = int(rng.integers(1, 201))
        op = spectral.SpectralOperator(np.sort(rng.uniform(0, 1, K))[::-1])
        src = spectral.SourceFunction(rng.standard_normal(K), 1.0, 1.0)
        lam = float(rng.uniform(1e-3, 1.0))
        t = int(rng.integers(1, 9))
        a = np.zeros(K)
        for _ in range(t):
            a = spectral.tikhonov_step(op, src, lam, a)
        worst = max(worst, float(np.max(np.abs(a - spectral.iterated_tikhonov_coefficients(op, src, lam, t)))))
    sigma = spectral.SpectralOperator.power_law(200, 0.5)
    violations, checked = 0, 0
    for beta in (0.25, 0.5, 1.0, 2.0, 4.0):
        for lam in np.logspace(-4, 0, 9):
            for t in (1, 2, 4, 8):
                for _ in range(5):
                    w = rng.standard_normal(sigma.K)
                    w /= np.linalg.norm(w)
                    src = spectral.make_source_solution(sigma, beta, w)
                    coef = spectral.iterated_tikhonov_coefficients(sigma, src, float(lam), t)
                    strong, weak = spectral.bias_norms(sigma, src, coef)
                    bs, bw = spectral.bias_bounds(src, float(lam), t)
                    violations += int(strong > bs * (1 + 1e-12) or weak > bw * (1 + 1e-12))
                    checked += 1
    return {"filter_max_abs_diff": worst, "filter_instances": instances,
            "bias_bound_checks": checked, "bias_bound_violations": violations,
            "passed": worst <= 1e-12 and violations == 0}


def run_experiment(config: ExperimentConfig):
    if config.kind == "coverage":
        return run_coverage(config)
    if config.kind in ("rate_strong", "rate_weak"):
        return run_rate_study(config).to_dict()
    if config.kind == "source_dr":
        return run_source_dr_study(config)
    if config.kind == "curves":
        text = emit_curves(config.beta_grid, config.gamma,
                           Path(config.outputs) / "curves.csv" if config.outputs else None)
        return {"kind": "curves", "rows": text.count("\n") - 1}
    summary = oracle_check(config.base_seed)
    if config.outputs:
        Path(config.outputs).mkdir(parents=True, exist_ok=True)
        (Path(config.outputs) / "summary.json").write_text(dumps_json(summary))
    return summary
