"""Exact finite-dimensional spectral model of a linear inverse problem.

Every function here works in the coordinates of a truncated singular system
``{sigma_i, u_i, v_i}``: a function ``h = sum_i a_i v_i`` is represented by its
coefficient vector ``a`` and the operator acts as ``a -> sigma * a``.  In these
coordinates Tikhonov and iterated-Tikhonov solutions are diagonal filters, so
the bias of every regularization path can be computed in closed form.  The
module is the reference against which the sample-based estimators are checked.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

BASES = ("coordinate", "cosine", "hermite")

# beta = 0 is only reachable as a limit in (1 + beta) / (4 beta)
BETA_FLOOR = 1e-6


@dataclass(frozen=True)
class SpectralOperator:
    singular_values: np.ndarray
    basis_id: str = "coordinate"

    def __post_init__(self):
        s = np.asarray(self.singular_values, dtype=float).reshape(-1)
        if s.size == 0:
            raise ValueError("operator needs at least one singular value")
        if not np.all(np.isfinite(s)):
            raise ValueError("singular values must be finite")
        if np.any(s < 0) or np.any(s > 1):
            raise ValueError("singular values must lie in [0, 1]")
        if np.any(np.diff(s) > 0):
            raise ValueError("singular values must be sorted in descending order")
        if self.basis_id not in BASES:
            raise ValueError(f"unknown basis {self.basis_id!r}; expected one of {BASES}")
        s.setflags(write=False)
        object.__setattr__(self, "singular_values", s)

    @property
    def K(self) -> int:
        return int(self.singular_values.size)

    @property
    def support(self) -> np.ndarray:
        return self.singular_values > 0

    def apply(self, coeffs) -> np.ndarray:
        coeffs = _as_vector(coeffs, self.K)
        return self.singular_values * coeffs

    def strong_norm_sq(self, coeffs) -> float:
        return float(np.sum(_as_vector(coeffs, self.K) ** 2))

    def weak_norm_sq(self, coeffs) -> float:
        return float(np.sum(self.apply(coeffs) ** 2))

    @classmethod
    def power_law(cls, K: int = 200, exponent: float = 0.5, basis_id: str = "coordinate"):
        """sigma_i = i^(-exponent), i = 1..K."""
        return cls(np.arange(1, K + 1, dtype=float) ** (-exponent), basis_id)

    @classmethod
    def geometric(cls, rho: float, K: int = 200, basis_id: str = "hermite"):
        """sigma_i = rho^i, i = 0..K-1 (Gaussian-pair spectrum)."""
        return cls(rho ** np.arange(K, dtype=float), basis_id)


@dataclass(frozen=True)
class SourceFunction:
    coefficients: np.ndarray
    beta: float
    w_norm_sq: float

    def __post_init__(self):
        a = np.asarray(self.coefficients, dtype=float).reshape(-1)
        a.setflags(write=False)
        object.__setattr__(self, "coefficients", a)


@dataclass(frozen=True)
class RateExponents:
    alpha_unknown_side: float
    alpha_known_side: float
    alpha_smooth: float
    kappa_strong: float
    beta: float
    gamma: float
    kappa_smooth: float = field(default=float("nan"))


def _as_vector(x, K: int | None = None) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if K is not None and v.size != K:
        raise ValueError(f"dimension mismatch: expected length {K}, got {v.size}")
    return v


def make_source_solution(operator: SpectralOperator, beta: float, w) -> SourceFunction:
    """Build ``h0 = (T*T)^{beta/2} w0``, i.e. ``a_i = sigma_i^beta * w_i``."""
    if beta < 0 or not math.isfinite(beta):
        raise ValueError("beta must be a finite nonnegative real")
    w = _as_vector(w, operator.K)
    s = operator.singular_values
    null = s == 0
    if np.any(w[null] != 0):
        raise ValueError("w has weight on a zero singular value; "
                         "the minimum-norm solution cannot load there")
    if beta == 0:
        a = w.copy()
    else:
        a = np.where(null, 0.0, s ** beta * w)
    return SourceFunction(a, float(beta), float(np.sum(w ** 2)))


def source_norm_sq(operator: SpectralOperator, coeffs, beta: float) -> float:
    """sum_i 1{sigma_i != 0} a_i^2 / sigma_i^(2 beta); inf if mass sits on the null space."""
    a = _as_vector(coeffs, operator.K)
    s = operator.singular_values
    if np.any(a[s == 0] != 0):
        return math.inf
    nz = s > 0
    with np.errstate(over="ignore"):
        return float(np.sum(a[nz] ** 2 / s[nz] ** (2 * beta)))


def _check_lambda(lam: float):
    if not (lam > 0) or not math.isfinite(lam):
        raise ValueError("lambda must be a positive finite real")


def tikhonov_coefficients(operator: SpectralOperator, source: SourceFunction, lam: float) -> np.ndarray:
    """Coordinates of argmin ||T(h0 - h)||^2 + lam ||h||^2."""
    _check_lambda(lam)
    s2 = operator.singular_values ** 2
    a0 = _as_vector(source.coefficients, operator.K)
    return np.where(operator.support, s2 / (s2 + lam) * a0, 0.0)


def iterated_tikhonov_coefficients(operator: SpectralOperator, source: SourceFunction,
                                   lam: float, t: int) -> np.ndarray:
    """Coordinates of the t-th iterated Tikhonov solution started at zero.

    The filter is ``[(s^2 + lam)^t - lam^t] / (s^2 + lam)^t``, evaluated as
    ``1 - (lam / (s^2 + lam))^t`` to avoid overflow for large t.
    """
    _check_lambda(lam)
    if int(t) != t or t < 1:
        raise ValueError("t must be a positive integer")
    if t == 1:
        return tikhonov_coefficients(operator, source, lam)
    s2 = operator.singular_values ** 2
    a0 = _as_vector(source.coefficients, operator.K)
    ratio = lam / (s2 + lam)
    filt = 1.0 - ratio ** int(t)
    return np.where(operator.support, filt * a0, 0.0)


def tikhonov_step(operator: SpectralOperator, source: SourceFunction, lam: float, center) -> np.ndarray:
    """One recentered Tikhonov update solved from its first-order condition.

    argmin_a sum_i s_i^2 (a0_i - a_i)^2 + lam (a_i - c_i)^2
        => a_i = (s_i^2 a0_i + lam c_i) / (s_i^2 + lam)
    """
    _check_lambda(lam)
    s2 = operator.singular_values ** 2
    a0 = _as_vector(source.coefficients, operator.K)
    c = _as_vector(center, operator.K)
    return (s2 * a0 + lam * c) / (s2 + lam)


def bias_norms(operator: SpectralOperator, source: SourceFunction, reg_coeffs) -> tuple[float, float]:
    """(||h_* - h0||^2, ||T(h_* - h0)||^2) for regularized coordinates ``reg_coeffs``."""
    diff = _as_vector(reg_coeffs, operator.K) - _as_vector(source.coefficients, operator.K)
    strong = float(np.sum(diff ** 2))
    weak = float(np.sum(operator.singular_values ** 2 * diff ** 2))
    return strong, weak


def bias_bounds(source: SourceFunction, lam: float, t: int = 1) -> tuple[float, float]:
    """Upper bounds ||w0||^2 lam^min(beta, 2t) and ||w0||^2 lam^min(beta + 1, 2t)."""
    b = source.beta
    return (source.w_norm_sq * lam ** min(b, 2 * t),
            source.w_norm_sq * lam ** min(b + 1, 2 * t))


def rate_exponents(beta: float, gamma: float = 1.0) -> RateExponents:
    """Required-rate exponents alpha and strong-metric exponent kappa.

    ``alpha_smooth`` uses ``(1 + beta) / (2 gamma + 4 beta)``, which is the
    unknown-side curve at gamma = 0 and ``(1 + beta) / (2 + 4 beta)`` at gamma = 1.
    """
    if not (0.0 <= gamma <= 1.0):
        raise ValueError("gamma must lie in [0, 1]")
    if beta < 0 or math.isnan(beta):
        raise ValueError("beta must be nonnegative")
    b1 = min(beta, 1.0)
    first = (1 + b1) / (2 + 4 * b1)
    bf = max(beta, BETA_FLOOR) if beta < math.inf else beta
    if math.isinf(beta):
        unknown_tail, known_tail, smooth_tail = 0.25, 0.25, 0.25
        kappa_tail = kappa_smooth_tail = 1.0
    else:
        unknown_tail = (1 + bf) / (4 * bf)
        known_tail = (2 + beta) / (4 + 4 * beta)
        smooth_tail = (1 + bf) / (2 * gamma + 4 * bf)
        kappa_tail = beta / (2 + beta)
        kappa_smooth_tail = beta / (2 - gamma + beta)
    return RateExponents(
        alpha_unknown_side=min(first, unknown_tail),
        alpha_known_side=min(first, known_tail),
        alpha_smooth=min(first, smooth_tail),
        kappa_strong=2 * max(b1 / (1 + b1), kappa_tail),
        beta=float(beta),
        gamma=float(gamma),
        kappa_smooth=2 * max(b1 / (1 + b1), kappa_smooth_tail),
    )


def operator_to_json(operator: SpectralOperator, source: SourceFunction | None = None,
                     w=None) -> str:
    doc = {"singular_values": operator.singular_values.tolist(), "basis": operator.basis_id}
    if source is not None:
        doc["beta"] = source.beta
        if w is None:
            s = operator.singular_values
            a = source.coefficients
            w = np.where(s > 0, a / np.where(s > 0, s, 1.0) ** source.beta, 0.0)
        doc["w"] = np.asarray(w, dtype=float).tolist()
    return json.dumps(doc)


def operator_from_json(text: str) -> tuple[SpectralOperator, SourceFunction | None]:
    doc = json.loads(text)
    op = SpectralOperator(np.asarray(doc["singular_values"], dtype=float), doc.get("basis", "coordinate"))
    src = None
    if "beta" in doc and "w" in doc:
        src = make_source_solution(op, float(doc["beta"]), doc["w"])
    return op, src
