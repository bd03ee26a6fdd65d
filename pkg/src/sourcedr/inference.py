"""Cross-fitted doubly robust estimation of a linear functional with confidence intervals."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .dgp import GroundTruth
from .estimator import EstimatorConfig, FitResult, build_problem, dualize, fit
from .rkhs import MomentFunctional

SCHEMA_VERSION = "1"
Z_95 = 1.96


class InferenceError(RuntimeError):
    pass


def dr_scores(h, q, data: Dataset, m: MomentFunctional, m_tilde: MomentFunctional) -> np.ndarray:
    """Per-row score m~(W; h) + m(W; q) - q(Z) h(X)."""
    return (m_tilde.evaluate(h, data.x, data) + m.evaluate(q, data.z, data)
            - q(data.z) * h(data.x))


def theta_plugin(h, q, data: Dataset, m: MomentFunctional, m_tilde: MomentFunctional) -> float:
    """Weighted average of the doubly robust score; exact under a population dataset."""
    return data.mean(dr_scores(h, q, data, m, m_tilde))


def nuisance_error_report(fit_or_fn, truth: GroundTruth, side: str = "primal") -> tuple[float, float]:
    """(strong, weak) squared errors: ||h - h0||^2, ||T(h - h0)||^2 or the dual analogues."""
    fn = fit_or_fn.h_hat if isinstance(fit_or_fn, FitResult) else fit_or_fn
    if side == "primal":
        target = truth.h0_eval
        strong, weak = truth.metric_eval.strong_x, truth.metric_eval.weak_x
    elif side == "dual":
        target = truth.q0_eval
        strong, weak = truth.metric_eval.strong_z, truth.metric_eval.weak_z
    else:
        raise ValueError("side must be 'primal' or 'dual'")

    def diff(pts):
        return fn(pts) - target(pts)

    return strong(diff), weak(diff)


@dataclass
class InferenceConfig:
    primal: EstimatorConfig = field(default_factory=EstimatorConfig)
    dual: EstimatorConfig | None = None
    folds: int = 2
    seed: int = 0
    x_kernel: object = None
    z_kernel: object = None
    ci_scale: float = 1.0
    outcome: str = "y"

    @property
    def dual_config(self) -> EstimatorConfig:
        return self.primal if self.dual is None else self.dual


@dataclass
class InferenceReport:
    theta_hat: float
    sigma_hat: float
    ci_low: float
    ci_high: float
    n: int
    folds: int
    per_fold: list
    covered: bool | None = None
    nuisance_errors: dict | None = None
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def fit_nuisances(train: Dataset, m: MomentFunctional, m_tilde: MomentFunctional,
                  config: InferenceConfig) -> tuple[FitResult, FitResult]:
    pc, dc = config.primal, config.dual_config
    primal = build_problem(train, train.x, train.z, m, hyp_kernel=config.x_kernel, adv_kernel=config.z_kernel,
                           B=pc.norm_bound_B, max_anchors=pc.max_anchors, seed=config.seed)
    dual = dualize(train, (config.z_kernel, config.x_kernel), m_tilde,
                   B=dc.norm_bound_B, max_anchors=dc.max_anchors, seed=config.seed)
    return fit(primal, pc), fit(dual, dc)


def cross_fit_infer(data: Dataset, m: MomentFunctional, m_tilde: MomentFunctional,
                    config: InferenceConfig | None = None, folds: int | None = None,
                    truth: GroundTruth | None = None) -> InferenceReport:
    """Fit (h, q) off-fold, score on-fold, pool, and report a 95% interval.

    ``config.ci_scale`` multiplies the half-width (1 for the nominal interval).
    """
    config = config or InferenceConfig()
    K = config.folds if folds is None else folds
    if K < 2:
        raise ValueError("cross-fitting needs at least 2 folds (a separate sample)")
    if data.n < 10 * K:
        raise ValueError("need at least 10 samples per fold")
    parts = fold_indices(data.n, K, config.seed)
    scores = np.empty(data.n)
    per_fold, errs = [], []
    for k, test_idx in enumerate(parts):
        train_idx = np.setdiff1d(np.arange(data.n), test_idx)
        train, test = data.subset(train_idx), data.subset(test_idx)
        try:
            fh, fq = fit_nuisances(train, m, m_tilde, config)
        except Exception as exc:
            raise InferenceError(f"nuisance fit failed on fold {k}: {exc}") from exc
        s = dr_scores(fh.h_hat, fq.h_hat, test, m, m_tilde)
        scores[test_idx] = s
        entry = {"fold": k, "n_test": int(test.n), "theta": float(s.mean()),
                 "primal_iterations": fh.diagnostics["iterations"],
                 "dual_iterations": fq.diagnostics["iterations"],
                 "primal_lambda": fh.diagnostics["lambda_effective"],
                 "dual_lambda": fq.diagnostics["lambda_effective"]}
        if truth is not None:
            hs, hw = nuisance_error_report(fh, truth, "primal")
            qs, qw = nuisance_error_report(fq, truth, "dual")
            entry.update(h_strong=hs, h_weak=hw, q_strong=qs, q_weak=qw)
            errs.append((hs, hw, qs, qw))
        per_fold.append(entry)
    theta = float(scores.mean())
    sigma = math.sqrt(float(np.mean((scores - theta) ** 2)))
    half = config.ci_scale * Z_95 * sigma / math.sqrt(data.n)
    report = InferenceReport(theta, sigma, theta - half, theta + half, data.n, K, per_fold)
    if truth is not None:
        report.covered = bool(report.ci_low <= truth.theta0 <= report.ci_high)
        e = np.mean(np.array(errs), axis=0)
        report.nuisance_errors = {"h_strong": e[0], "h_weak": e[1], "q_strong": e[2], "q_weak": e[3]}
        report.nuisance_errors = {k: float(v) for k, v in report.nuisance_errors.items()}
    return report
