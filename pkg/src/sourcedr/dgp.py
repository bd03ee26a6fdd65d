"""Synthetic data-generating processes with exactly known ground truth.

Discrete models are handled in weighted coordinates: a function g on the X
support is stored as ``g~ = diag(sqrt(p_x)) g`` so that the Euclidean norm of
``g~`` is the L2(P_X) norm of ``g``.  The conditional expectation operator
becomes ``A~ = D_z C D_x^{-1}`` with ``C[z, x] = P(x | z)``, and its
Euclidean pseudo-inverse yields the L2(P_X)-minimum-norm solution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import eval_hermitenorm, factorial
from scipy.stats import norm

from .data import Dataset, TabularFunction, _as_matrix
from .rkhs import MomentFunctional, unsquash

RANGE_TOL = 1e-8
ZERO_SV = 1e-10
BETA_GRID = np.round(np.arange(0.0, 8.0 + 1e-9, 0.05), 10)
BETA_THRESHOLD = 1e6


class SolutionError(ValueError):
    """Raised when the primal or dual linear inverse problem has no solution."""


def reported_beta(sigma, coeffs) -> float:
    """Largest grid beta with sum_{sigma_i != 0} c_i^2 / sigma_i^(2 beta) <= 1e6."""
    sigma = np.asarray(sigma, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    nz = sigma > ZERO_SV
    best = 0.0
    with np.errstate(over="ignore", divide="ignore"):
        for b in BETA_GRID:
            if np.sum(coeffs[nz] ** 2 / sigma[nz] ** (2 * b)) <= BETA_THRESHOLD:
                best = float(b)
            else:
                break
    return best


class DiscreteMetrics:
    """Exact L2 norms under a finite joint distribution P(x, z)."""

    def __init__(self, x_support, z_support, p_xz):
        self.x_support = _as_matrix(x_support)
        self.z_support = _as_matrix(z_support)
        self.p_xz = np.asarray(p_xz, dtype=float)
        self.p_x = self.p_xz.sum(axis=1)
        self.p_z = self.p_xz.sum(axis=0)
        self.cond_x_given_z = self.p_xz / np.where(self.p_z > 0, self.p_z, 1.0)[None, :]
        self.cond_z_given_x = self.p_xz / np.where(self.p_x > 0, self.p_x, 1.0)[:, None]

    def _vals(self, g, support) -> np.ndarray:
        if callable(g):
            return np.asarray(g(support), dtype=float).reshape(-1)
        return np.asarray(g, dtype=float).reshape(-1)

    def strong_x(self, g) -> float:
        return float(self.p_x @ self._vals(g, self.x_support) ** 2)

    def strong_z(self, f) -> float:
        return float(self.p_z @ self._vals(f, self.z_support) ** 2)

    def apply_T(self, g) -> np.ndarray:
        """(T g)(z) = E[g(X) | Z = z] on the z support."""
        return self.cond_x_given_z.T @ self._vals(g, self.x_support)

    def apply_T_adj(self, f) -> np.ndarray:
        """(T* f)(x) = E[f(Z) | X = x] on the x support."""
        return self.cond_z_given_x @ self._vals(f, self.z_support)

    def weak_x(self, g) -> float:
        return float(self.p_z @ self.apply_T(g) ** 2)

    def weak_z(self, f) -> float:
        return float(self.p_x @ self.apply_T_adj(f) ** 2)


class GaussianMetrics:
    """Gauss-Hermite evaluation of L2 norms for the squashed Gaussian pair."""

    def __init__(self, rho: float, nodes: int = 80):
        if nodes < 64:
            raise ValueError("at least 64 quadrature nodes are required")
        t, w = np.polynomial.hermite_e.hermegauss(nodes)
        self.t, self.wts = t, w / math.sqrt(2.0 * math.pi)
        self.rho = rho
        s = math.sqrt(1.0 - rho ** 2)
        # inner[k, j]: latent value of the conditioned variable at outer node k, inner node j
        self.inner = rho * t[:, None] + s * t[None, :]

    @staticmethod
    def squash(latent):
        return 2.0 * norm.cdf(latent) - 1.0

    def _on(self, g, latent) -> np.ndarray:
        shape = np.shape(latent)
        return np.asarray(g(self.squash(np.reshape(latent, (-1, 1)))), dtype=float).reshape(shape)

    def strong_x(self, g) -> float:
        return float(self.wts @ self._on(g, self.t) ** 2)

    strong_z = strong_x

    def weak_x(self, g) -> float:
        cond = self._on(g, self.inner) @ self.wts
        return float(self.wts @ cond ** 2)

    weak_z = weak_x

    def inner_x(self, g, h) -> float:
        return float(self.wts @ (self._on(g, self.t) * self._on(h, self.t)))


@dataclass
class GroundTruth:
    h0_eval: Callable
    q0_eval: Callable
    a0_eval: Callable
    r0_eval: Callable
    theta0: float
    beta_h: float
    beta_q: float
    metric_eval: object
    m_tilde: MomentFunctional | None = None
    singular_values: np.ndarray | None = None
    h0_coeffs: np.ndarray | None = None
    q0_coeffs: np.ndarray | None = None
    population: Dataset | None = None
    right_basis: np.ndarray | None = None
    left_basis: np.ndarray | None = None

    def project_x(self, g) -> np.ndarray:
        """Coordinates <g, v_i>_{L2(P_X)} in the right singular basis (discrete models)."""
        if self.right_basis is None:
            raise ValueError("no singular basis attached to this ground truth")
        m = self.metric_eval
        return (m.p_x * m._vals(g, m.x_support)) @ self.right_basis

    def project_z(self, f) -> np.ndarray:
        if self.left_basis is None:
            raise ValueError("no singular basis attached to this ground truth")
        m = self.metric_eval
        return (m.p_z * m._vals(f, m.z_support)) @ self.left_basis


@dataclass
class DiscreteDGP:
    """Finite-support NPIV model.

    ``cond_xz[x, z] = P(X = x | Z = z)``.  The outcome satisfies
    ``E[Y | x, z] = outcome_mean[x] + outcome_shift[x, z]`` and carries
    independent uniform noise on ``[-noise_halfwidth, noise_halfwidth]``.
    ``functional`` is the moment m~ acting on functions of X.
    """

    x_support: np.ndarray
    z_support: np.ndarray
    pz: np.ndarray
    cond_xz: np.ndarray
    outcome_mean: np.ndarray
    functional: MomentFunctional
    noise_halfwidth: float = 0.1
    outcome_shift: np.ndarray | None = None
    basis: tuple | None = None
    extra_from_x: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x_support = _as_matrix(self.x_support)
        self.z_support = _as_matrix(self.z_support)
        self.pz = np.asarray(self.pz, dtype=float)
        self.cond_xz = np.asarray(self.cond_xz, dtype=float)
        self.outcome_mean = np.asarray(self.outcome_mean, dtype=float)
        kx, kz = self.x_support.shape[0], self.z_support.shape[0]
        if self.cond_xz.shape != (kx, kz):
            raise ValueError("cond_xz must have shape (K_x, K_z)")
        if self.pz.shape != (kz,) or self.outcome_mean.shape != (kx,):
            raise ValueError("pz / outcome_mean have the wrong length")
        if np.any(self.pz < 0) or not np.isclose(self.pz.sum(), 1.0, atol=1e-12):
            raise ValueError("pz must be a probability vector")
        if np.any(self.cond_xz < -1e-15) or not np.allclose(self.cond_xz.sum(axis=0), 1.0, atol=1e-12):
            raise ValueError("columns of cond_xz must be probability vectors")
        self.cond_xz = np.clip(self.cond_xz, 0.0, None)
        if self.outcome_shift is None:
            self.outcome_shift = np.zeros((kx, kz))
        self.outcome_shift = np.asarray(self.outcome_shift, dtype=float)
        if np.any(self.p_x <= 0):
            raise ValueError("every X state needs positive probability")
        if np.abs(self.y_mean).max() + self.noise_halfwidth > 1.0 + 1e-12:
            raise ValueError("outcome is not bounded by 1; shrink the outcome function or the noise")
        if np.abs(self.x_support).max() > 1 or np.abs(self.z_support).max() > 1:
            raise ValueError("support points must lie in [-1, 1]")

    @property
    def p_xz(self) -> np.ndarray:
        return self.cond_xz * self.pz[None, :]

    @property
    def p_x(self) -> np.ndarray:
        return self.p_xz.sum(axis=1)

    @property
    def y_mean(self) -> np.ndarray:
        return self.outcome_mean[:, None] + self.outcome_shift

    def population(self) -> Dataset:
        """Weighted dataset over support pairs; averages over it are exact expectations."""
        p = self.p_xz
        xi, zi = np.nonzero(p > 0)
        extra = {"y": self.y_mean[xi, zi]}
        for name, col in self.extra_from_x.items():
            extra[name] = self.x_support[xi, col]
        return Dataset(self.x_support[xi], self.z_support[zi], extra, None, p[xi, zi] / p[xi, zi].sum())

    def sample(self, n: int, seed: int) -> Dataset:
        rng = np.random.default_rng(seed)
        p = self.p_xz.ravel()
        idx = rng.choice(p.size, size=n, p=p / p.sum())
        xi, zi = np.divmod(idx, self.z_support.shape[0])
        y = self.y_mean[xi, zi] + rng.uniform(-self.noise_halfwidth, self.noise_halfwidth, size=n)
        extra = {"y": y}
        for name, col in self.extra_from_x.items():
            extra[name] = self.x_support[xi, col]
        return Dataset(self.x_support[xi], self.z_support[zi], extra, seed)


def _riesz_on_support(dgp: DiscreteDGP, pop: Dataset) -> np.ndarray:
    """a0(x') = E[m~(W; 1{X = x'})] / P(x'), by applying m~ to indicator functions."""
    kx = dgp.x_support.shape[0]
    p_x = dgp.p_x
    a0 = np.empty(kx)
    for j in range(kx):
        ind = TabularFunction(dgp.x_support, np.eye(kx)[j])
        a0[j] = pop.mean(dgp.functional.evaluate(ind, pop.x, pop)) / p_x[j]
    return a0


def discrete_ground_truth(dgp: DiscreteDGP) -> GroundTruth:
    p_xz = dgp.p_xz
    p_x, p_z = p_xz.sum(axis=1), p_xz.sum(axis=0)
    sx, sz = np.sqrt(p_x), np.sqrt(p_z)
    cond_x_given_z = p_xz / np.where(p_z > 0, p_z, 1.0)[None, :]
    A = sz[:, None] * cond_x_given_z.T / sx[None, :]
    r0 = np.einsum("xz,xz->z", cond_x_given_z, dgp.y_mean)
    pop = dgp.population()
    a0 = _riesz_on_support(dgp, pop)

    A_pinv = np.linalg.pinv(A, rcond=ZERO_SV)
    h_t = A_pinv @ (sz * r0)
    if np.linalg.norm(A @ h_t - sz * r0) > RANGE_TOL * max(1.0, np.linalg.norm(sz * r0)):
        raise SolutionError("primal solution does not exist: r0 is not in the range of T")
    q_t = A_pinv.T @ (sx * a0)
    if np.linalg.norm(A.T @ q_t - sx * a0) > RANGE_TOL * max(1.0, np.linalg.norm(sx * a0)):
        raise SolutionError("dual solution does not exist: a0 is not in the range of T*")
    h0 = h_t / sx
    q0 = np.where(p_z > 0, q_t / np.where(sz > 0, sz, 1.0), 0.0)

    if dgp.basis is not None:
        U, sigma, V = dgp.basis
    else:
        U, sigma, Vt = np.linalg.svd(A, full_matrices=False)
        V = Vt.T
    sigma = np.where(sigma > ZERO_SV, sigma, 0.0)
    h_coef = V.T @ h_t
    q_coef = U.T @ q_t
    metrics = DiscreteMetrics(dgp.x_support, dgp.z_support, p_xz)
    return GroundTruth(
        h0_eval=TabularFunction(dgp.x_support, h0),
        q0_eval=TabularFunction(dgp.z_support, q0),
        a0_eval=TabularFunction(dgp.x_support, a0),
        r0_eval=TabularFunction(dgp.z_support, r0),
        theta0=float(p_x @ (a0 * h0)),
        beta_h=reported_beta(sigma, h_coef),
        beta_q=reported_beta(sigma, q_coef),
        metric_eval=metrics,
        m_tilde=dgp.functional,
        singular_values=sigma,
        h0_coeffs=h_coef,
        q0_coeffs=q_coef,
        population=pop,
        right_basis=V / sx[:, None],
        left_basis=U / np.where(sz > 0, sz, 1.0)[:, None],
    )


def orthonormal_basis(p, kind: str = "cosine") -> np.ndarray:
    """Orthonormal K x K matrix whose first column is sqrt(p).

    ``cosine`` orthonormalizes sqrt(p) followed by the DCT-II vectors of
    frequency 1..K-1; ``coordinate`` uses the standard basis instead.
    """
    p = np.asarray(p, dtype=float)
    K = p.size
    if kind == "cosine":
        j = np.arange(K)
        raw = np.cos(np.pi * np.outer(j + 0.5, np.arange(K)) / K)
    elif kind == "coordinate":
        raw = np.eye(K)
    else:
        raise ValueError(f"unknown basis {kind!r}")
    cols = [np.sqrt(p)] + [raw[:, k] for k in range(K) if not (kind == "cosine" and k == 0)]
    Q, R = np.linalg.qr(np.column_stack(cols)[:, :K])
    Q = Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))[None, :]
    if np.min(np.abs(np.diag(R))) < 1e-10:
        raise ValueError("basis construction degenerated; sqrt(p) is collinear with the raw basis")
    return Q


def state_codes(K: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, K) if K > 1 else np.zeros(1)


def spectral_discrete_dgp(sigma, beta_h: float, w_h, beta_q: float, w_q, *, px=None, pz=None,
                          noise: float = 0.1, confounding: float = 0.5, basis: str = "cosine") -> DiscreteDGP:
    """Discrete NPIV model whose weighted operator has the prescribed singular values.

    h0 = sum_i sigma_i^beta_h w_h[i] v_i and q0 = sum_i sigma_i^beta_q w_q[i] u_i, so
    both sides satisfy their source conditions exactly.  The functional is the
    weighted average with weights a0 = T* q0.  The outcome has an endogenous
    component ``confounding * (h0(x) - r0(z))`` that is mean zero given Z.
    """
    sigma = np.asarray(sigma, dtype=float)
    K = sigma.size
    if np.any(sigma < 0) or np.any(sigma > 1) or np.any(np.diff(sigma) > 0):
        raise ValueError("sigma must be descending in [0, 1]")
    if sigma[0] != 1.0:
        raise ValueError("the leading singular value must be 1 (constants map to constants)")
    px = np.full(K, 1.0 / K) if px is None else np.asarray(px, dtype=float)
    pz = px if pz is None else np.asarray(pz, dtype=float)
    V = orthonormal_basis(px, basis)
    U = orthonormal_basis(pz, basis)
    A = U @ np.diag(sigma) @ V.T
    p_xz = (np.sqrt(pz)[:, None] * A * np.sqrt(px)[None, :]).T
    if np.any(p_xz < -1e-14):
        raise ValueError("prescribed spectrum does not define a probability table; "
                         "shrink the trailing singular values")
    p_xz = np.clip(p_xz, 0.0, None)
    null = sigma == 0
    coef_h = np.where(null, 0.0, sigma ** beta_h * np.asarray(w_h, dtype=float))
    coef_a = np.where(null, 0.0, sigma ** (beta_q + 1) * np.asarray(w_q, dtype=float))
    h0 = V @ coef_h / np.sqrt(px)
    omega = V @ coef_a / np.sqrt(px)
    cond = p_xz / p_xz.sum(axis=0, keepdims=True)
    r0 = cond.T @ h0
    shift = confounding * (h0[:, None] - r0[None, :])
    codes = state_codes(K)
    functional = MomentFunctional("weighted_average", {"weights": TabularFunction(codes, omega)})
    return DiscreteDGP(codes, codes, p_xz.sum(axis=0), cond, h0, functional, noise, shift,
                       basis=(U, sigma, V))


# --- Gaussian pair -------------------------------------------------------------

def _hermite_features(latent, K: int) -> np.ndarray:
    latent = np.asarray(latent, dtype=float).reshape(-1)
    return np.column_stack([eval_hermitenorm(i, latent) / math.sqrt(factorial(i)) for i in range(K)])


class HermiteSeries:
    """g(x_obs) = sum_i c_i He_i(X) / sqrt(i!) with X the latent Gaussian coordinate."""

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)

    def __call__(self, pts) -> np.ndarray:
        pts = _as_matrix(pts)
        return _hermite_features(unsquash(pts[:, 0].reshape(-1)), self.coeffs.size) @ self.coeffs


def gaussian_pair_dgp(rho: float, beta_target: float, n: int, seed: int, *, w=(0.0, 1.0, 0.5, 0.25),
                      noise: float = 0.1, confounding: float = 0.2) -> tuple[Dataset, GroundTruth]:
    """Jointly Gaussian (X, Z) with correlation rho, observed as 2 Phi(.) - 1.

    The conditional expectation operator is diagonal in the normalized
    Hermite basis with sigma_i = rho^i.  The functional is the average
    derivative with respect to the latent X (m~ acts through the squash
    chain rule); its Riesz representer is He_1(X) and q0 = He_1(Z) / rho.
    """
    if not 0.1 < rho < 0.95:
        raise ValueError("rho must lie in (0.1, 0.95)")
    if n < 50:
        raise ValueError("n must be at least 50")
    if beta_target < 0:
        raise ValueError("beta must be nonnegative")
    w = np.asarray(w, dtype=float)
    K = max(w.size, 2)
    w = np.pad(w, (0, K - w.size))
    sigma = rho ** np.arange(K, dtype=float)
    a = sigma ** beta_target * w if beta_target > 0 else w.copy()
    rng = np.random.default_rng(seed)
    zl = rng.standard_normal(n)
    xl = rho * zl + math.sqrt(1 - rho ** 2) * rng.standard_normal(n)
    h0 = HermiteSeries(a)
    x_obs = GaussianMetrics.squash(xl)[:, None]
    z_obs = GaussianMetrics.squash(zl)[:, None]
    y = h0(x_obs) + confounding * (xl - rho * zl) + rng.uniform(-noise, noise, n)
    data = Dataset(x_obs, z_obs, {"y": y}, seed)

    e1 = np.eye(K)[1]
    q_coef = e1 / rho
    truth = GroundTruth(
        h0_eval=h0,
        q0_eval=HermiteSeries(q_coef),
        a0_eval=HermiteSeries(e1),
        r0_eval=HermiteSeries(sigma * a),
        theta0=float(a[1]),
        beta_h=float(beta_target),
        beta_q=reported_beta(sigma, q_coef),
        metric_eval=GaussianMetrics(rho),
        m_tilde=MomentFunctional("avg_derivative", {"coord": 0, "chain": "gauss_squash"}),
        singular_values=sigma,
        h0_coeffs=a,
        q0_coeffs=q_coef,
    )
    return data, truth


# --- proximal causal model ----------------------------------------------------

@dataclass
class ProximalConfig:
    """Finite proximal model with covariate X, latent U, treatment proxy Z,
    outcome proxy Q and binary treatment D."""

    K_x: int = 2
    K_u: int = 2
    K_z: int = 2
    n: int = 1000
    seed: int = 3
    model_seed: int = 3
    effect: float = 0.2
    bridge_slope: float = 0.3
    propensity: float | None = None
    propensity_range: tuple = (0.2, 0.8)
    noise: float = 0.1
    confounding: float = 0.3


def _random_conditional(rng, rows: int, cols: int) -> np.ndarray:
    """rows x cols table whose columns are well-separated probability vectors."""
    t = rng.uniform(0.2, 1.0, size=(rows, cols)) + 1.5 * np.eye(rows, cols)
    return t / t.sum(axis=0, keepdims=True)


def proximal_model(cfg: ProximalConfig) -> DiscreteDGP:
    rng = np.random.default_rng(cfg.model_seed)
    Kx, Ku, Kz = cfg.K_x, cfg.K_u, cfg.K_z
    Kq = Kz
    p_x = rng.uniform(0.5, 1.0, Kx)
    p_x /= p_x.sum()
    p_u_x = _random_conditional(rng, Ku, Kx)                       # [u, x]
    p_z_xu = np.stack([_random_conditional(rng, Kz, Ku) for _ in range(Kx)])  # [x, z, u]
    p_q_xu = np.stack([_random_conditional(rng, Kq, Ku)[::-1] for _ in range(Kx)])  # [x, q, u]
    if cfg.propensity is None:
        lo, hi = cfg.propensity_range
        pd1 = rng.uniform(lo, hi, size=(Kx, Ku, Kz))
    else:
        pd1 = np.full((Kx, Ku, Kz), float(cfg.propensity))
    # joint[x, u, z, q, d]
    pd = np.stack([1 - pd1, pd1], axis=-1)
    joint = (p_x[:, None, None, None, None] * p_u_x.T[:, :, None, None, None]
             * np.transpose(p_z_xu, (0, 2, 1))[:, :, :, None, None]
             * np.transpose(p_q_xu, (0, 2, 1))[:, :, None, :, None]
             * pd[:, :, :, None, :])
    p_xzqd = joint.sum(axis=1)                                       # [x, z, q, d]
    p_xqd = p_xzqd.sum(axis=1)
    overlap = p_xqd[..., 1] / p_xqd.sum(axis=-1)
    if overlap.min() < 0.1 or overlap.max() > 0.9:
        raise ValueError(f"overlap violation: P(D=1|X,Q) ranges over "
                         f"[{overlap.min():.3f}, {overlap.max():.3f}], outside [0.1, 0.9]")

    cx, cq, cz = state_codes(Kx), state_codes(Kq), state_codes(Kz)
    hyp = [(x, q, d) for x in range(Kx) for q in range(Kq) for d in range(2)]
    ins = [(x, z, d) for x in range(Kx) for z in range(Kz) for d in range(2)]
    x_support = np.array([[cx[x], cq[q], d] for x, q, d in hyp])
    z_support = np.array([[cx[x], cz[z], d] for x, z, d in ins])
    pz = np.array([p_xzqd[x, z, :, d].sum() for x, z, d in ins])
    cond = np.zeros((len(hyp), len(ins)))
    for j, (x, z, d) in enumerate(ins):
        for i, (x2, q, d2) in enumerate(hyp):
            if x2 == x and d2 == d:
                cond[i, j] = p_xzqd[x, z, q, d] / pz[j]
    bridge = np.array([cfg.bridge_slope * (cq[q] - 0.5) + 0.2 * (cx[x] - 0.5) + cfg.effect * d
                       for x, q, d in hyp])
    r0 = cond.T @ bridge
    shift = cfg.confounding * (bridge[:, None] - r0[None, :])
    functional = MomentFunctional("eval_difference", {"coord": 2, "v1": 1.0, "v0": 0.0})
    return DiscreteDGP(x_support, z_support, pz, cond, bridge, functional, cfg.noise, shift,
                       extra_from_x={"d": 2})


def proximal_propensity(dgp: DiscreteDGP) -> TabularFunction:
    """P(D = 1 | X, Q) as a function of the hypothesis block (X, Q, D)."""
    p_x = dgp.p_x
    keys = {}
    for i, row in enumerate(dgp.x_support):
        keys.setdefault((row[0], row[1]), [0.0, 0.0])[int(row[2])] += p_x[i]
    vals = [keys[(r[0], r[1])][1] / sum(keys[(r[0], r[1])]) for r in dgp.x_support]
    return TabularFunction(dgp.x_support, vals)


def proximal_discrete_dgp(cfg: ProximalConfig) -> tuple[Dataset, GroundTruth]:
    dgp = proximal_model(cfg)
    return dgp.sample(cfg.n, cfg.seed), discrete_ground_truth(dgp)
