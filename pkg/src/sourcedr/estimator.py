"""Adversarial Tikhonov estimation over RKHS balls.

Problem in coefficients.  The hypothesis is ``h = Phi @ beta`` on hypothesis
anchors, the adversary ``f = Psi @ gamma`` on adversary anchors, and with
sample weights ``W``

    c1 = v - C beta,   C = Psi' W Phi,   M = Psi' W Psi,   G = Phi' W Phi,

so the empirical loss is ``L_n(beta) = max_{gamma' K_F gamma <= B} 2 gamma' c1 - gamma' M gamma``.
By strong duality ``L_n(beta) = min_{mu >= 0} c1' (M + mu K_F)^{-1} c1 + mu B``,
which is jointly convex in (beta, mu).  The Tikhonov fit minimizes
``L_n(beta) + lam (beta - beta_bar)' G (beta - beta_bar)`` subject to
``beta' K_H beta <= B`` by exact block minimization in beta and mu.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from .data import Dataset, _as_matrix
from .rkhs import (JITTER, KernelSpec, MomentFunctional, RepresentedFunction, add_jitter, gram,
                   median_bandwidth, unique_rows)

MODES = ("plain", "iterated", "constrained", "constrained_iterated")
MU_GRID = np.geomspace(1e-8, 1e4, 25)
BISECTION_STEPS = 40
MAX_BRACKET = 1e16
AUTO_DELTA_STATES = 64


class EstimationError(RuntimeError):
    pass


class IllConditionedError(EstimationError):
    pass


class NonConvergenceError(EstimationError):
    def __init__(self, message: str, last=None):
        super().__init__(message)
        self.last = last


class InfeasibleError(EstimationError):
    pass


@dataclass
class EstimatorConfig:
    lam: float = 0.1
    t_iters: int = 1
    mu_mult: float = 2.0
    norm_bound_B: float = 100.0
    delta_proxy: float | None = None
    beta_assumed: float = 1.0
    gamma_smooth: float = 1.0
    mode: str = "plain"
    schedule: str = "manual"
    halved_iterated_exponent: bool = False
    max_anchors: int | None = None
    init_coeffs: list | None = None
    max_alternations: int = 200
    tol: float = 1e-8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.schedule not in ("auto", "manual"):
            raise ValueError("schedule must be 'auto' or 'manual'")
        for name in ("lam", "mu_mult", "norm_bound_B"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.delta_proxy is not None and not self.delta_proxy > 0:
            raise ValueError("delta_proxy must be positive")
        if int(self.t_iters) != self.t_iters or self.t_iters < 1:
            raise ValueError("t_iters must be a positive integer")
        if not 0 <= self.gamma_smooth <= 1:
            raise ValueError("gamma_smooth must lie in [0, 1]")
        if self.beta_assumed < 0:
            raise ValueError("beta_assumed must be nonnegative")
        if self.schedule == "manual":
            self._check_lambda(self.lam)

    def _check_lambda(self, lam: float):
        if self.mode in ("plain", "constrained") and not lam < 2:
            raise ValueError("lambda must be below 2 for the non-iterated modes")
        if self.mode in ("iterated", "constrained_iterated") and lam > 1:
            raise ValueError("lambda must be at most 1 for the iterated modes")

    def resolved(self, n: int) -> "EstimatorConfig":
        """Copy with lambda / t filled from the schedule when ``schedule == 'auto'``."""
        doc = asdict(self)
        if doc["delta_proxy"] is None:
            doc["delta_proxy"] = n ** -0.5
        if self.schedule == "auto":
            lam, t, _ = schedule_hyperparams(n, self.beta_assumed, self.gamma_smooth, self.mode,
                                             delta=doc["delta_proxy"], mu_mult=self.mu_mult,
                                             halved=self.halved_iterated_exponent)
            doc.update(lam=lam, t_iters=t, schedule="manual")
        return EstimatorConfig(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def schedule_hyperparams(n: int, beta_assumed: float, gamma_smooth: float = 1.0, mode: str = "plain", *,
                         delta: float | None = None, mu_mult: float = 2.0,
                         halved: bool = False) -> tuple[float, int, float]:
    """(lambda, t, mu_n) from the theory-driven schedules with delta_n = n^{-1/2} by default.

    ``gamma_smooth`` is accepted for interface symmetry; the schedules do not depend on it.
    """
    if n < 8:
        raise ValueError("n must be at least 8")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    d = n ** -0.5 if delta is None else float(delta)
    b = float(beta_assumed)
    loglog = math.log(math.log(1.0 / d)) if d < 1 / math.e else 0.0
    cap = max(1.0, loglog)
    if mode in ("plain", "constrained"):
        lam, t = d ** (2.0 / (1.0 + min(b, 1.0))), 1
    elif mode == "iterated":
        t = max(1, math.ceil(min(b / 2.0, cap)))
        bt = min(b, 2 * t)
        lam = d ** ((1.0 if halved else 2.0) / (bt + 2.0))
    else:
        t = max(1, min(math.ceil((b + 1.0) / 2.0), math.ceil(cap)))
        lam = d ** (2.0 / (b + 1.0))
    lam = min(lam, 1.0)
    return lam, t, version_space_slack(mu_mult, d, lam, b, t)


def version_space_slack(mu_mult: float, delta: float, lam: float, beta: float, t: int) -> float:
    return mu_mult * max(delta ** 2, lam ** min(beta + 1.0, 2.0 * t))


# --- problem assembly -------------------------------------------------------------

def resolve_kernel(kernel, pts) -> KernelSpec:
    """``None``/'auto' picks the delta kernel for at most 64 distinct rows, else gaussian."""
    pts = _as_matrix(pts)
    d = pts.shape[1]
    if isinstance(kernel, KernelSpec):
        return kernel
    if kernel in (None, "auto"):
        kernel = "discrete_delta" if unique_rows(pts).shape[0] <= AUTO_DELTA_STATES else "gaussian"
    if kernel == "gaussian":
        return KernelSpec("gaussian", median_bandwidth(pts), input_dim=d)
    if isinstance(kernel, dict):
        return KernelSpec.from_dict({"input_dim": d, **kernel})
    return KernelSpec(kernel, input_dim=d)


def choose_anchors(kernel: KernelSpec, pts, max_anchors: int | None, seed: int = 0):
    """Distinct rows for the delta kernel; otherwise the full sample or a uniform subsample."""
    pts = _as_matrix(pts)
    if kernel.family == "discrete_delta":
        return unique_rows(pts), False
    if max_anchors is None or pts.shape[0] <= max_anchors:
        return pts, False
    idx = np.sort(np.random.default_rng(seed).choice(pts.shape[0], max_anchors, replace=False))
    return pts[idx], True


@dataclass
class SaddleProblem:
    hyp_kernel: KernelSpec
    adv_kernel: KernelSpec
    hyp_anchors: np.ndarray
    adv_anchors: np.ndarray
    hyp_gram: np.ndarray
    adv_gram: np.ndarray
    moment_vec: np.ndarray
    cross_eval: np.ndarray
    adv_second: np.ndarray
    hyp_second: np.ndarray
    center_coeffs: np.ndarray
    n: int
    B: float = 100.0
    subsampled: bool = False
    _eig: tuple | None = field(default=None, repr=False)

    @property
    def m_hyp(self) -> int:
        return self.hyp_anchors.shape[0]

    @property
    def m_adv(self) -> int:
        return self.adv_anchors.shape[0]

    def with_center(self, center) -> "SaddleProblem":
        c = np.zeros(self.m_hyp) if center is None else np.asarray(center, dtype=float).reshape(-1)
        if c.size != self.m_hyp:
            raise ValueError("center has the wrong number of coefficients")
        out = SaddleProblem(**{k: getattr(self, k) for k in self.__dataclass_fields__ if k != "_eig"})
        out.center_coeffs = c
        out._eig = self._eig
        return out

    def eig(self):
        """(P, Lam) with K_F ~ L L', P = L^{-T} Q and Q Lam Q' = L^{-1} M L^{-T}."""
        if self._eig is None:
            self._eig = _adversary_eig(self.adv_gram, self.adv_second)
        return self._eig

    def function(self, coeffs) -> RepresentedFunction:
        return RepresentedFunction(self.hyp_anchors, coeffs, self.hyp_kernel)

    def adversary(self, coeffs) -> RepresentedFunction:
        return RepresentedFunction(self.adv_anchors, coeffs, self.adv_kernel)


def _adversary_eig(K_F, M):
    scale = JITTER
    for _ in range(3):
        try:
            L = linalg.cholesky(add_jitter(K_F, scale), lower=True)
            break
        except linalg.LinAlgError:
            scale *= 10.0
    else:
        raise IllConditionedError("ill-conditioned adversary system: Cholesky failed after jitter escalation")
    Linv = linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    Mt = Linv @ add_jitter(M, JITTER) @ Linv.T
    lam, Q = linalg.eigh((Mt + Mt.T) / 2.0)
    if not np.all(np.isfinite(lam)):
        raise IllConditionedError("ill-conditioned adversary system: non-finite spectrum")
    lam = np.maximum(lam, 0.0)
    return Linv.T @ Q, lam


def build_problem(data: Dataset, hyp_inputs, adv_inputs, moment: MomentFunctional, *,
                  hyp_kernel=None, adv_kernel=None, B: float = 100.0, max_anchors: int | None = None,
                  hyp_anchors=None, adv_anchors=None, center=None, seed: int = 0) -> SaddleProblem:
    hyp_inputs = _as_matrix(hyp_inputs)
    adv_inputs = _as_matrix(adv_inputs)
    kh = resolve_kernel(hyp_kernel, hyp_inputs)
    kf = resolve_kernel(adv_kernel, adv_inputs)
    sub = False
    if hyp_anchors is None:
        hyp_anchors, s1 = choose_anchors(kh, hyp_inputs, max_anchors, seed)
        sub |= s1
    if adv_anchors is None:
        adv_anchors, s2 = choose_anchors(kf, adv_inputs, max_anchors, seed + 1)
        sub |= s2
    w = data.w
    Phi = gram(kh, hyp_inputs, hyp_anchors)
    Psi = gram(kf, adv_inputs, adv_anchors)
    S = moment.section_matrix(kf, adv_anchors, adv_inputs, data)
    Psi_w = Psi * w[:, None]
    prob = SaddleProblem(
        hyp_kernel=kh, adv_kernel=kf,
        hyp_anchors=_as_matrix(hyp_anchors), adv_anchors=_as_matrix(adv_anchors),
        hyp_gram=gram(kh, hyp_anchors), adv_gram=gram(kf, adv_anchors),
        moment_vec=w @ S, cross_eval=Psi_w.T @ Phi, adv_second=Psi_w.T @ Psi,
        hyp_second=(Phi * w[:, None]).T @ Phi,
        center_coeffs=np.zeros(len(hyp_anchors)), n=data.n, B=float(B), subsampled=sub)
    return prob.with_center(center) if center is not None else prob


def primal_problem(data: Dataset, *, hyp_kernel=None, adv_kernel=None, outcome: str = "y", **kw) -> SaddleProblem:
    """Problem for h0: moment m(W; f) = Y f(Z), hypothesis on X, adversary on Z."""
    return build_problem(data, data.x, data.z, MomentFunctional("outcome_product", {"column": outcome}),
                         hyp_kernel=hyp_kernel, adv_kernel=adv_kernel, **kw)


def dualize(data: Dataset, kernels: tuple = (None, None), m_tilde: MomentFunctional | None = None,
            **kw) -> SaddleProblem:
    """Problem for q0: hypothesis on Z, adversary on X, moment m~ paired with X-sections.

    ``kernels`` is ``(z_kernel, x_kernel)``: the hypothesis kernel first.
    """
    if m_tilde is None:
        raise ValueError("the dual problem needs the functional m~")
    return build_problem(data, data.z, data.x, m_tilde, hyp_kernel=kernels[0], adv_kernel=kernels[1], **kw)


# --- inner maximization ---------------------------------------------------------

def _smallest_feasible(feasible):
    """Smallest multiplier mu >= 0 with ``feasible(mu)`` for a predicate monotone in mu.

    Scans {0} and a geometric grid, extends the bracket by factors of 100 if
    needed (flagged as a boundary hit), then refines by geometric bisection.
    Returns (mu, boundary_hit).
    """
    if feasible(0.0):
        return 0.0, False
    lo, hi, boundary = 0.0, None, False
    for mu in MU_GRID:
        if feasible(mu):
            hi = float(mu)
            break
        lo = float(mu)
    while hi is None:
        boundary = True
        mu = lo * 100.0
        if mu > MAX_BRACKET:
            raise EstimationError("multiplier search exhausted its bracket")
        if feasible(mu):
            hi = mu
        else:
            lo = mu
    for _ in range(BISECTION_STEPS):
        mid = math.sqrt(lo * hi) if lo > 0 else hi / 2.0
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi, boundary


@dataclass
class InnerSolution:
    adv_coeffs: np.ndarray
    value: float
    mu: float
    boundary: bool


def inner_solve(problem: SaddleProblem, h_coeffs) -> InnerSolution:
    P, lam = problem.eig()
    c1 = problem.moment_vec - problem.cross_eval @ np.asarray(h_coeffs, dtype=float)
    ct = P.T @ c1

    def norm_sq(mu):
        with np.errstate(divide="ignore"):
            return float(np.sum(np.where(ct == 0, 0.0, ct ** 2 / (lam + mu) ** 2)))

    mu, boundary = _smallest_feasible(lambda mu: norm_sq(mu) <= problem.B)
    g = np.where(ct == 0, 0.0, ct / np.where(lam + mu > 0, lam + mu, 1.0))
    gamma = P @ g
    value = float(2.0 * gamma @ c1 - gamma @ problem.adv_second @ gamma)
    return InnerSolution(gamma, max(value, 0.0), mu, boundary)


def inner_max(problem: SaddleProblem, h_coeffs) -> tuple[np.ndarray, float]:
    """Adversary coefficients and value of max_f E_n[2(m(W;f) - h f) - f^2] over the ball."""
    sol = inner_solve(problem, h_coeffs)
    return sol.adv_coeffs, sol.value


def empirical_loss(problem: SaddleProblem, h_coeffs) -> float:
    return inner_solve(problem, h_coeffs).value


# --- outer minimization --------------------------------------------------------

def _psd_solve(H, rhs) -> np.ndarray:
    """Minimum-norm solution of the symmetric PSD system H x = rhs."""
    ev, U = linalg.eigh((H + H.T) / 2.0)
    cut = max(ev.max(), 0.0) * 1e-13
    inv = np.where(ev > cut, 1.0 / np.where(ev > cut, ev, 1.0), 0.0)
    return U @ (inv * (U.T @ rhs))


def _outer_solve(problem: SaddleProblem, lam: float, mu: float):
    """argmin_beta c1' A_mu^{-1} c1 + lam R(beta) s.t. beta' K_H beta <= B; returns (beta, nu, boundary)."""
    P, ev = problem.eig()
    d = 1.0 / (ev + mu)
    Ct = P.T @ problem.cross_eval
    vt = P.T @ problem.moment_vec
    G = problem.hyp_second
    H0 = Ct.T @ (d[:, None] * Ct) + lam * G
    rhs = Ct.T @ (d * vt) + lam * (G @ problem.center_coeffs)
    K_H = problem.hyp_gram
    cache = {}

    def beta(nu):
        if nu not in cache:
            cache[nu] = _psd_solve(H0 + nu * K_H, rhs)
        return cache[nu]

    nu, boundary = _smallest_feasible(lambda nu: float(beta(nu) @ K_H @ beta(nu)) <= problem.B)
    return beta(nu), nu, boundary


def regularization(problem: SaddleProblem, coeffs) -> float:
    diff = np.asarray(coeffs, dtype=float) - problem.center_coeffs
    return float(diff @ problem.hyp_second @ diff)


def objective(problem: SaddleProblem, coeffs, lam: float) -> float:
    return empirical_loss(problem, coeffs) + lam * regularization(problem, coeffs)


@dataclass
class FitResult:
    h_hat: RepresentedFunction
    adv_coeffs: np.ndarray
    inner_history: list
    loss_empirical: float
    loss_min: float
    objective: float
    diagnostics: dict

    @property
    def coeffs(self) -> np.ndarray:
        return self.h_hat.coeffs

    def to_dict(self) -> dict:
        return {"h_hat": self.h_hat.to_dict(), "adv_coeffs": self.adv_coeffs.tolist(),
                "inner_history": [list(map(float, r)) for r in self.inner_history],
                "loss_empirical": self.loss_empirical, "loss_min": self.loss_min,
                "objective": self.objective, "diagnostics": _jsonable(self.diagnostics)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _saddle_solve(problem: SaddleProblem, lam: float, max_iter: int = 200, tol: float = 1e-8) -> FitResult:
    mu, history, prev = 0.0, [], math.inf
    outer_boundary = inner_boundary = False
    beta = nu = inner = None
    for it in range(1, max_iter + 1):
        beta, nu, ob = _outer_solve(problem, lam, mu)
        inner = inner_solve(problem, beta)
        mu = inner.mu
        outer_boundary |= ob
        inner_boundary |= inner.boundary
        J = inner.value + lam * regularization(problem, beta)
        history.append((inner.value, mu, J))
        if abs(prev - J) < tol:
            break
        prev = J
    else:
        last = _result(problem, beta, inner, history, lam, nu, it, outer_boundary, inner_boundary)
        raise NonConvergenceError("saddle solve did not converge", last)
    return _result(problem, beta, inner, history, lam, nu, it, outer_boundary, inner_boundary)


def _result(problem, beta, inner, history, lam, nu, iters, ob, ib) -> FitResult:
    _, ev = problem.eig()
    diag = {
        "iterations": iters, "lambda": lam, "lambda_effective": lam,
        "inner_multiplier": inner.mu, "outer_multiplier": nu,
        "inner_ball_active": inner.mu > 0, "outer_ball_active": nu > 0,
        "multiplier_boundary": bool(ob or ib),
        "adversary_condition": float(ev.max() / ev.min()) if ev.min() > 0 else math.inf,
        "hyp_bandwidth": problem.hyp_kernel.bandwidth if problem.hyp_kernel.family == "gaussian" else None,
        "adv_bandwidth": problem.adv_kernel.bandwidth if problem.adv_kernel.family == "gaussian" else None,
        "anchors_subsampled": problem.subsampled,
    }
    return FitResult(problem.function(beta), inner.adv_coeffs, history, inner.value, math.nan,
                     history[-1][2], diag)


def fit_tikhonov(problem: SaddleProblem, config: EstimatorConfig) -> FitResult:
    cfg = config.resolved(problem.n)
    return _saddle_solve(problem, cfg.lam, cfg.max_alternations, cfg.tol)


def _initial_center(problem: SaddleProblem, cfg: EstimatorConfig) -> np.ndarray:
    if cfg.init_coeffs is None:
        return np.zeros(problem.m_hyp)
    c = np.asarray(cfg.init_coeffs, dtype=float)
    if c.size != problem.m_hyp:
        raise ValueError("init_coeffs has the wrong number of coefficients")
    return c


def fit_iterated(problem: SaddleProblem, config: EstimatorConfig) -> FitResult:
    cfg = config.resolved(problem.n)
    center = _initial_center(problem, cfg)
    iterates, fit = [], None
    for k in range(1, int(cfg.t_iters) + 1):
        try:
            fit = _saddle_solve(problem.with_center(center), cfg.lam, cfg.max_alternations, cfg.tol)
        except NonConvergenceError as exc:
            raise NonConvergenceError(f"{exc} (iterate {k})", exc.last) from None
        iterates.append(fit.coeffs.copy())
        center = fit.coeffs
    fit.diagnostics["iterates"] = iterates
    fit.diagnostics["t_iters"] = int(cfg.t_iters)
    return fit


def loss_minimizer(problem: SaddleProblem, config: EstimatorConfig | None = None) -> FitResult:
    """Unregularized saddle solve (lambda = 0) within the norm ball."""
    cfg = config or EstimatorConfig()
    return _saddle_solve(problem.with_center(None), 0.0, cfg.max_alternations, cfg.tol)


def _constrained_step(problem: SaddleProblem, cfg: EstimatorConfig, target: float, fallback: FitResult) -> FitResult:
    """Tikhonov within {L_n <= target}: the largest effective lambda lam/(1+kappa) that is feasible."""
    tik = _saddle_solve(problem, cfg.lam, cfg.max_alternations, cfg.tol)
    if tik.loss_empirical <= target:
        tik.diagnostics.update(version_space_active=False, kappa=0.0)
        return tik
    cache = {}

    def fit_at(kappa):
        if kappa not in cache:
            cache[kappa] = _saddle_solve(problem, cfg.lam / (1.0 + kappa), cfg.max_alternations, cfg.tol)
        return cache[kappa]

    try:
        kappa, boundary = _smallest_feasible(lambda k: k > 0 and fit_at(k).loss_empirical <= target)
        out = fit_at(kappa)
    except EstimationError:
        out, kappa, boundary = fallback, math.inf, True
    out.diagnostics.update(version_space_active=True, kappa=kappa,
                           lambda_effective=cfg.lam / (1.0 + kappa) if math.isfinite(kappa) else 0.0,
                           multiplier_boundary=bool(boundary or out.diagnostics["multiplier_boundary"]))
    return out


def fit_constrained(problem: SaddleProblem, config: EstimatorConfig, *, mu_n_override: float | None = None) -> FitResult:
    cfg = config.resolved(problem.n)
    if cfg.mode not in ("constrained", "constrained_iterated"):
        raise ValueError("fit_constrained needs a constrained mode")
    base = loss_minimizer(problem, cfg)
    loss_min = base.loss_empirical
    T = int(cfg.t_iters) if cfg.mode == "constrained_iterated" else 1
    center = _initial_center(problem, cfg)
    iterates, slacks, fit = [], [], None
    for k in range(1, T + 1):
        mu_n = (version_space_slack(cfg.mu_mult, cfg.delta_proxy, cfg.lam, cfg.beta_assumed, k)
                if mu_n_override is None else float(mu_n_override))
        slacks.append(mu_n)
        sub = problem.with_center(center)
        if mu_n <= 0:
            fit = _saddle_solve(sub, 0.0, cfg.max_alternations, cfg.tol)
            fit.diagnostics.update(version_space_active=True, kappa=math.inf, lambda_effective=0.0)
            fit.objective = fit.loss_empirical + cfg.lam * regularization(sub, fit.coeffs)
        else:
            fit = _constrained_step(sub, cfg, loss_min + mu_n, base)
        if fit.loss_empirical > (loss_min + mu_n) * (1 + 1e-6) + 1e-12:
            raise InfeasibleError("version space empty; increase mu_mult")
        iterates.append(fit.coeffs.copy())
        center = fit.coeffs
    fit.loss_min = loss_min
    fit.diagnostics.update(iterates=iterates, mu_n=slacks, loss_min=loss_min, t_iters=T)
    return fit


def fit(problem: SaddleProblem, config: EstimatorConfig) -> FitResult:
    cfg = config.resolved(problem.n)
    if cfg.mode == "plain":
        if cfg.init_coeffs is not None:
            problem = problem.with_center(cfg.init_coeffs)
        return fit_tikhonov(problem, cfg)
    if cfg.mode == "iterated":
        return fit_iterated(problem, cfg)
    return fit_constrained(problem, cfg)


def saddle_certificate(problem: SaddleProblem, result: FitResult, lam: float | None = None, *,
                       eps: float = 1e-3, directions: int = 10, seed: int = 0) -> tuple[float, float]:
    """First-order saddle checks at (h_hat, f_hat).

    Returns (largest decrease of the regularized outer objective, largest
    increase of the inner objective) over random feasible perturbations of
    size ``eps``; both are <= 1e-6 at a solved saddle point.
    """
    lam = result.diagnostics.get("lambda_effective", 0.0) if lam is None else lam
    rng = np.random.default_rng(seed)
    beta = result.coeffs
    gamma = result.adv_coeffs
    K_H, K_F = problem.hyp_gram, problem.adv_gram
    base_outer = objective(problem, beta, lam)
    c1 = problem.moment_vec - problem.cross_eval @ beta

    def inner_obj(g):
        return float(2.0 * g @ c1 - g @ problem.adv_second @ g)

    base_inner = inner_obj(gamma)
    worst_outer = worst_inner = 0.0
    for _ in range(directions):
        for sign in (1.0, -1.0):
            d = rng.standard_normal(beta.size)
            b2 = beta + sign * eps * d / max(np.linalg.norm(d), 1e-300)
            nb = float(b2 @ K_H @ b2)
            if nb > problem.B:
                b2 = b2 * math.sqrt(problem.B / nb)
            worst_outer = max(worst_outer, base_outer - objective(problem, b2, lam))
            e = rng.standard_normal(gamma.size)
            g2 = gamma + sign * eps * e / max(np.linalg.norm(e), 1e-300)
            ng = float(g2 @ add_jitter(K_F) @ g2)
            if ng > problem.B:
                g2 = g2 * math.sqrt(problem.B / ng)
            worst_inner = max(worst_inner, inner_obj(g2) - base_inner)
    return worst_outer, worst_inner
