"""Sample containers and tabular functions on finite supports."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError("expected a vector or a matrix of input points")
    return a


@dataclass
class Dataset:
    """Rows of i.i.d. draws of W = (X, Z, extra observables).

    ``weights`` is ``None`` for an ordinary sample (each row weighs 1/n).  A
    weighted dataset with rows over a finite support and weights equal to the
    population probabilities turns every empirical average into an exact
    population expectation.
    """

    x: np.ndarray
    z: np.ndarray
    extra: dict = field(default_factory=dict)
    seed: int | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.x = _as_matrix(self.x)
        self.z = _as_matrix(self.z)
        if self.x.shape[0] != self.z.shape[0]:
            raise ValueError("x and z must have the same number of rows")
        self.extra = {k: np.asarray(v, dtype=float).reshape(-1) for k, v in self.extra.items()}
        for k, v in self.extra.items():
            if v.size != self.n:
                raise ValueError(f"column {k!r} has {v.size} rows, expected {self.n}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.size != self.n or np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-12):
                raise ValueError("weights must be a probability vector over rows")
            self.weights = w

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def w(self) -> np.ndarray:
        """Row weights of the empirical average."""
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self.weights

    def mean(self, values) -> float:
        return float(self.w @ np.asarray(values, dtype=float))

    def column(self, name: str) -> np.ndarray:
        try:
            return self.extra[name]
        except KeyError:
            raise KeyError(f"dataset has no column {name!r}") from None

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        w = None
        if self.weights is not None:
            w = self.weights[idx] / self.weights[idx].sum()
        return Dataset(self.x[idx], self.z[idx], {k: v[idx] for k, v in self.extra.items()},
                       self.seed, w)

    def to_csv(self, path, metadata: dict | None = None) -> Path:
        """Write RFC 4180 CSV plus a ``.meta.json`` sidecar; returns the sidecar path."""
        path = Path(path)
        header = ([f"x_{j}" for j in range(self.x.shape[1])]
                  + [f"z_{j}" for j in range(self.z.shape[1])] + list(self.extra))
        cols = [self.x[:, j] for j in range(self.x.shape[1])]
        cols += [self.z[:, j] for j in range(self.z.shape[1])]
        cols += list(self.extra.values())
        if self.weights is not None:
            header.append("weight")
            cols.append(self.weights)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\r\n")
            writer.writerow(header)
            for row in zip(*cols):
                writer.writerow([repr(float(v)) for v in row])
        meta = {"n": self.n, "seed": self.seed, "sha256": file_sha256(path)}
        meta.update(metadata or {})
        sidecar = path.with_suffix(".meta.json")
        sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return sidecar

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float).reshape(len(rows) - 1, len(rows[0]))
        xs = [i for i, h in enumerate(header) if h.startswith("x_")]
        zs = [i for i, h in enumerate(header) if h.startswith("z_")]
        rest = [i for i in range(len(header)) if i not in xs and i not in zs and header[i] != "weight"]
        weights = body[:, header.index("weight")] if "weight" in header else None
        seed = None
        sidecar = path.with_suffix(".meta.json")
        if sidecar.exists():
            seed = json.loads(sidecar.read_text()).get("seed")
        return cls(body[:, xs], body[:, zs], {header[i]: body[:, i] for i in rest}, seed, weights)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


class TabularFunction:
    """A function on a finite set of input points, looked up by exact row match."""

    def __init__(self, support, values):
        self.support = _as_matrix(support)
        self.values = np.asarray(values, dtype=float).reshape(-1)
        if self.values.size != self.support.shape[0]:
            raise ValueError("one value per support point is required")
        self._index = {tuple(r): i for i, r in enumerate(self.support.tolist())}

    def indices(self, pts) -> np.ndarray:
        pts = _as_matrix(pts)
        try:
            return np.array([self._index[tuple(r)] for r in pts.tolist()], dtype=int)
        except KeyError as exc:
            raise KeyError(f"point {exc.args[0]} is outside the function's support") from None

    def __call__(self, pts) -> np.ndarray:
        return self.values[self.indices(pts)]

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularFunction":
        return cls(doc["support"], doc["values"])
