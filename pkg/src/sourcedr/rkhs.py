"""Kernels, Gram matrices, represented RKHS functions and linear moment functionals."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.stats import norm

from .data import Dataset, TabularFunction, _as_matrix

FAMILIES = ("gaussian", "polynomial", "discrete_delta")
JITTER = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    bandwidth: float = 1.0
    degree: int = 2
    input_dim: int = 1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "gaussian" and not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.family == "polynomial" and (int(self.degree) != self.degree or self.degree < 1):
            raise ValueError("degree must be a positive integer")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")

    def to_dict(self) -> dict:
        return {"family": self.family, "bandwidth": self.bandwidth,
                "degree": self.degree, "input_dim": self.input_dim}

    @classmethod
    def from_dict(cls, doc: dict) -> "KernelSpec":
        return cls(doc["family"], float(doc.get("bandwidth", 1.0)),
                   int(doc.get("degree", 2)), int(doc.get("input_dim", 1)))


def _check_points(kernel: KernelSpec, pts) -> np.ndarray:
    pts = _as_matrix(pts)
    if pts.shape[1] != kernel.input_dim:
        raise ValueError(f"dimension mismatch: kernel expects {kernel.input_dim} columns, "
                         f"got {pts.shape[1]}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("kernel inputs must be finite")
    return pts


def gram(kernel: KernelSpec, pts_a, pts_b=None) -> np.ndarray:
    """Exact kernel matrix ``M[i, j] = k(a_i, b_j)``; no jitter is added here."""
    a = _check_points(kernel, pts_a)
    b = a if pts_b is None else _check_points(kernel, pts_b)
    if kernel.family == "gaussian":
        return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * kernel.bandwidth ** 2))
    if kernel.family == "polynomial":
        return (1.0 + a @ b.T) ** int(kernel.degree)
    return (cdist(a, b, "cityblock") == 0).astype(float)


def add_jitter(mat: np.ndarray, scale: float = JITTER) -> np.ndarray:
    """Return ``mat + scale * trace/n * I`` (relative diagonal jitter)."""
    n = mat.shape[0]
    tr = float(np.trace(mat))
    eps = scale * (tr / n if tr > 0 else 1.0)
    return mat + eps * np.eye(n)


def gaussian_gradient(kernel: KernelSpec, pts, anchors, coord: int) -> np.ndarray:
    """Matrix of d/dp_coord k(anchor_j, p) at p = pts_i for the gaussian kernel."""
    if kernel.family != "gaussian":
        raise ValueError(f"no analytic gradient for the {kernel.family} kernel; only gaussian is supported")
    pts = _check_points(kernel, pts)
    anchors = _check_points(kernel, anchors)
    k = gram(kernel, pts, anchors)
    diff = pts[:, coord][:, None] - anchors[:, coord][None, :]
    return -diff / kernel.bandwidth ** 2 * k


def median_bandwidth(pts, max_points: int = 1000) -> float:
    """Median pairwise distance over the first ``max_points`` rows (1.0 if degenerate)."""
    pts = _as_matrix(pts)[:max_points]
    if pts.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(pts)))
    return med if med > 0 else 1.0


def unique_rows(pts) -> np.ndarray:
    return np.unique(_as_matrix(pts), axis=0)


@dataclass
class RepresentedFunction:
    """f(p) = sum_j coeffs_j k(anchors_j, p) + offset."""

    anchors: np.ndarray
    coeffs: np.ndarray
    kernel: KernelSpec
    offset: float = 0.0

    def __post_init__(self):
        self.anchors = _check_points(self.kernel, self.anchors)
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if self.coeffs.size != self.anchors.shape[0]:
            raise ValueError("one coefficient per anchor is required")

    def __call__(self, pts) -> np.ndarray:
        return gram(self.kernel, pts, self.anchors) @ self.coeffs + self.offset

    def gradient(self, pts, coord: int = 0) -> np.ndarray:
        return gaussian_gradient(self.kernel, pts, self.anchors, coord) @ self.coeffs

    def rkhs_norm_sq(self) -> float:
        return float(self.coeffs @ gram(self.kernel, self.anchors) @ self.coeffs)

    def to_dict(self) -> dict:
        return {"kernel": self.kernel.to_dict(), "anchors": self.anchors.tolist(),
                "coeffs": self.coeffs.tolist(), "offset": self.offset}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "RepresentedFunction":
        return cls(np.asarray(doc["anchors"], dtype=float), np.asarray(doc["coeffs"], dtype=float),
                   KernelSpec.from_dict(doc["kernel"]), float(doc.get("offset", 0.0)))

    @classmethod
    def from_json(cls, text: str) -> "RepresentedFunction":
        return cls.from_dict(json.loads(text))


_EDGE = np.nextafter(1.0, 0.0)


def unsquash(x_obs) -> np.ndarray:
    """Inverse of x_obs = 2 Phi(X) - 1, via the upper tail so that values near +-1 stay finite."""
    x = np.clip(np.asarray(x_obs, dtype=float), -_EDGE, _EDGE)
    return np.sign(x) * norm.isf((1.0 - np.abs(x)) / 2.0)


def squash_chain(x_obs) -> np.ndarray:
    """dx_obs/dX for x_obs = 2 Phi(X) - 1, expressed in the observed coordinate."""
    return 2.0 * norm.pdf(unsquash(x_obs))


CHAINS = {"none": lambda v: np.ones_like(np.asarray(v, dtype=float)), "gauss_squash": squash_chain}
KINDS = ("outcome_product", "weighted_average", "eval_difference", "avg_derivative")


@dataclass
class MomentFunctional:
    """Per-sample linear functional m(W; f) of a function f of one input block.

    kinds and parameters:

    * ``outcome_product``: ``column`` (default ``"y"``); m = W[column] * f(input)
    * ``weighted_average``: ``weights`` (a ``TabularFunction``, a callable or a
      constant); m = weights(input) * f(input)
    * ``eval_difference``: ``coord``, ``v1``, ``v0``; m = f(input with coord=v1)
      - f(input with coord=v0)
    * ``avg_derivative``: ``coord``, ``chain`` (``none`` or ``gauss_squash``);
      m = d f / d input[coord] * chain(input[coord])
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown moment kind {self.kind!r}")
        if self.kind == "avg_derivative" and self.params.get("chain", "none") not in CHAINS:
            raise ValueError(f"unknown chain {self.params.get('chain')!r}")

    def _weights(self, inputs) -> np.ndarray:
        w = self.params.get("weights", 1.0)
        if callable(w):
            return np.asarray(w(inputs), dtype=float).reshape(-1)
        return np.full(inputs.shape[0], float(w))

    def _shifted(self, inputs, value) -> np.ndarray:
        out = inputs.copy()
        out[:, int(self.params["coord"])] = float(value)
        return out

    def _chain(self, inputs) -> np.ndarray:
        coord = int(self.params.get("coord", 0))
        return CHAINS[self.params.get("chain", "none")](inputs[:, coord])

    def evaluate(self, fn, inputs, data: Dataset) -> np.ndarray:
        """Vector of m(W_i; fn) over the rows of ``data``; ``inputs`` is the block fn acts on."""
        inputs = _as_matrix(inputs)
        if self.kind == "outcome_product":
            return data.column(self.params.get("column", "y")) * fn(inputs)
        if self.kind == "weighted_average":
            return self._weights(inputs) * fn(inputs)
        if self.kind == "eval_difference":
            return fn(self._shifted(inputs, self.params["v1"])) - fn(self._shifted(inputs, self.params["v0"]))
        if not hasattr(fn, "gradient"):
            raise ValueError("avg_derivative needs a function with an analytic gradient")
        return fn.gradient(inputs, int(self.params.get("coord", 0))) * self._chain(inputs)

    def section_matrix(self, kernel: KernelSpec, anchors, inputs, data: Dataset) -> np.ndarray:
        """S[i, j] = m(W_i; k(anchors_j, .))."""
        inputs = _as_matrix(inputs)
        if self.kind == "outcome_product":
            return data.column(self.params.get("column", "y"))[:, None] * gram(kernel, inputs, anchors)
        if self.kind == "weighted_average":
            return self._weights(inputs)[:, None] * gram(kernel, inputs, anchors)
        if self.kind == "eval_difference":
            return (gram(kernel, self._shifted(inputs, self.params["v1"]), anchors)
                    - gram(kernel, self._shifted(inputs, self.params["v0"]), anchors))
        coord = int(self.params.get("coord", 0))
        return gaussian_gradient(kernel, inputs, anchors, coord) * self._chain(inputs)[:, None]

    def constant_response(self, inputs, data: Dataset) -> np.ndarray:
        """m(W_i; 1), used for the offset of a represented function."""
        inputs = _as_matrix(inputs)
        if self.kind == "outcome_product":
            return data.column(self.params.get("column", "y")).copy()
        if self.kind == "weighted_average":
            return self._weights(inputs)
        return np.zeros(inputs.shape[0])

    def is_zero(self) -> bool:
        if self.kind == "eval_difference":
            return float(self.params["v1"]) == float(self.params["v0"])
        if self.kind == "weighted_average":
            w = self.params.get("weights", 1.0)
            if isinstance(w, TabularFunction):
                return bool(np.all(w.values == 0))
            return not callable(w) and float(w) == 0.0
        return False

    def to_dict(self) -> dict:
        params = dict(self.params)
        w = params.get("weights")
        if isinstance(w, TabularFunction):
            params["weights"] = {"table": w.to_dict()}
        elif callable(w):
            raise ValueError("callable weights cannot be serialized; use a TabularFunction")
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_dict(cls, doc: dict) -> "MomentFunctional":
        params = dict(doc.get("params", {}))
        w = params.get("weights")
        if isinstance(w, dict) and "table" in w:
            params["weights"] = TabularFunction.from_dict(w["table"])
        return cls(doc["kind"], params)


def moment_vector(mf: MomentFunctional, data: Dataset, kernel: KernelSpec, anchors, inputs=None) -> np.ndarray:
    """v_j = E_n[m(W; k(anchors_j, .))], so that E_n[m(W; f)] = v @ coeffs.

    ``inputs`` defaults to ``data.z`` for ``outcome_product`` and to ``data.x``
    otherwise.
    """
    if inputs is None:
        inputs = data.z if mf.kind == "outcome_product" else data.x
    return data.w @ mf.section_matrix(kernel, anchors, inputs, data)
