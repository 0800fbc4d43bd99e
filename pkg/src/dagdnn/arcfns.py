"""The base set of functions a network arc may carry.

Every variant knows its input/output dimension, evaluates vectors, and
(where meaningful) exposes a vector-Jacobian product for reverse-mode
differentiation plus its trainable parameters.  Instances are immutable;
graphs holding them can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cpwl import CPWLSpec, cpwl_derivative, cpwl_from_json, cpwl_to_json, eval_cpwl
from .errors import DimMismatch, DimensionMismatch, NonDifferentiableArc

__all__ = [
    "Identity",
    "Linear",
    "Affine",
    "Activation",
    "ActAffine",
    "Sigma",
    "RestrictedIdentity",
    "Zero",
    "ArcFunction",
    "register_sigma",
    "fn_to_json",
    "fn_from_json",
    "fn_equal",
    "fn_fingerprint",
]


def _as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2 or not np.all(np.isfinite(arr)):
        raise DimensionMismatch("matrix must be 2-d with finite entries")
    arr.setflags(write=False)
    return arr


def _as_vector(v, n: int) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (n,) or not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"bias must be a finite vector of length {n}")
    arr.setflags(write=False)
    return arr


def _check_input(fn, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (fn.in_dim,):
        raise DimMismatch(f"{type(fn).__name__} expects dim {fn.in_dim}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Identity:
    dim: int

    @property
    def in_dim(self):
        return self.dim

    @property
    def out_dim(self):
        return self.dim

    def apply(self, x):
        return _check_input(self, x)

    def forward(self, x):
        return self.apply(x), None

    def vjp(self, cache, g):
        return np.asarray(g, dtype=float), {}

    def params(self):
        return {}

    def with_params(self, p):
        return self


@dataclass(frozen=True, eq=False)
class Linear:
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _as_matrix(self.matrix))

    @property
    def in_dim(self):
        return self.matrix.shape[1]

    @property
    def out_dim(self):
        return self.matrix.shape[0]

    def apply(self, x):
        return self.matrix @ _check_input(self, x)

    def forward(self, x):
        x = _check_input(self, x)
        return self.matrix @ x, x

    def vjp(self, cache, g):
        return self.matrix.T @ g, {"matrix": np.outer(g, cache)}

    def params(self):
        return {"matrix": self.matrix}

    def with_params(self, p):
        return Linear(p["matrix"])


@dataclass(frozen=True, eq=False)
class Affine:
    matrix: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        m = _as_matrix(self.matrix)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "bias", _as_vector(self.bias, m.shape[0]))

    @property
    def in_dim(self):
        return self.matrix.shape[1]

    @property
    def out_dim(self):
        return self.matrix.shape[0]

    def apply(self, x):
        return self.matrix @ _check_input(self, x) + self.bias

    def forward(self, x):
        x = _check_input(self, x)
        return self.matrix @ x + self.bias, x

    def vjp(self, cache, g):
        return self.matrix.T @ g, {"matrix": np.outer(g, cache), "bias": np.asarray(g, float)}

    def params(self):
        return {"matrix": self.matrix, "bias": self.bias}

    def with_params(self, p):
        return Affine(p["matrix"], p["bias"])


@dataclass(frozen=True, eq=False)
class Activation:
    """Pointwise continuous piecewise-linear activation on a vector."""

    cpwl: CPWLSpec
    dim: int

    @property
    def in_dim(self):
        return self.dim

    @property
    def out_dim(self):
        return self.dim

    def apply(self, x):
        return eval_cpwl(self.cpwl, _check_input(self, x))

    def forward(self, x):
        x = _check_input(self, x)
        return eval_cpwl(self.cpwl, x), x

    def vjp(self, cache, g):
        return cpwl_derivative(self.cpwl, cache) * g, {}

    def params(self):
        return {}

    def with_params(self, p):
        return self


@dataclass(frozen=True, eq=False)
class ActAffine:
    """Pointwise CPWL activation composed after an affine map."""

    cpwl: CPWLSpec
    matrix: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        m = _as_matrix(self.matrix)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "bias", _as_vector(self.bias, m.shape[0]))

    @property
    def in_dim(self):
        return self.matrix.shape[1]

    @property
    def out_dim(self):
        return self.matrix.shape[0]

    def apply(self, x):
        return eval_cpwl(self.cpwl, self.matrix @ _check_input(self, x) + self.bias)

    def forward(self, x):
        x = _check_input(self, x)
        z = self.matrix @ x + self.bias
        return eval_cpwl(self.cpwl, z), (x, z)

    def vjp(self, cache, g):
        x, z = cache
        dz = cpwl_derivative(self.cpwl, z) * g
        return self.matrix.T @ dz, {"matrix": np.outer(dz, x), "bias": dz}

    def params(self):
        return {"matrix": self.matrix, "bias": self.bias}

    def with_params(self, p):
        return ActAffine(self.cpwl, p["matrix"], p["bias"])


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _sigmoid_vjp(z, y, g):
    return y * (1.0 - y) * g


def _softmax(z):
    e = np.exp(z - np.max(z))
    return e / e.sum()


def _softmax_vjp(z, y, g):
    return y * (g - np.dot(y, g))


# kind -> (apply(z) -> y, vjp(z, y, g) -> dz or None if non-differentiable)
_SIGMA_REGISTRY: dict[str, tuple] = {
    "sigmoid": (_sigmoid, _sigmoid_vjp),
    "softmax": (_softmax, _softmax_vjp),
}


def register_sigma(kind: str, fn, vjp=None):
    """Add a smooth transformation usable on arcs; vjp may be omitted."""
    _SIGMA_REGISTRY[kind] = (fn, vjp)


@dataclass(frozen=True, eq=False)
class Sigma:
    """Registered smooth transformation, optionally after an affine map.

    With matrix/bias present the arc computes kind(Mx + b); otherwise the
    transformation is applied directly and ``dim`` fixes the width.
    """

    kind: str
    matrix: np.ndarray | None = None
    bias: np.ndarray | None = None
    dim: int | None = None

    def __post_init__(self):
        if self.kind not in _SIGMA_REGISTRY:
            raise KeyError(f"unregistered sigma kind {self.kind!r}")
        if self.matrix is not None:
            m = _as_matrix(self.matrix)
            object.__setattr__(self, "matrix", m)
            b = self.bias if self.bias is not None else np.zeros(m.shape[0])
            object.__setattr__(self, "bias", _as_vector(b, m.shape[0]))
        elif self.dim is None:
            raise DimensionMismatch("sigma without an affine part needs an explicit dim")

    @property
    def in_dim(self):
        return self.dim if self.matrix is None else self.matrix.shape[1]

    @property
    def out_dim(self):
        return self.dim if self.matrix is None else self.matrix.shape[0]

    def apply(self, x):
        x = _check_input(self, x)
        z = x if self.matrix is None else self.matrix @ x + self.bias
        return _SIGMA_REGISTRY[self.kind][0](z)

    def forward(self, x):
        x = _check_input(self, x)
        z = x if self.matrix is None else self.matrix @ x + self.bias
        y = _SIGMA_REGISTRY[self.kind][0](z)
        return y, (x, z, y)

    def vjp(self, cache, g):
        vjp_z = _SIGMA_REGISTRY[self.kind][1]
        if vjp_z is None:
            raise NonDifferentiableArc(f"sigma kind {self.kind!r} has no registered derivative")
        x, z, y = cache
        dz = vjp_z(z, y, g)
        if self.matrix is None:
            return dz, {}
        return self.matrix.T @ dz, {"matrix": np.outer(dz, x), "bias": dz}

    def params(self):
        if self.matrix is None:
            return {}
        return {"matrix": self.matrix, "bias": self.bias}

    def with_params(self, p):
        if self.matrix is None:
            return self
        return Sigma(self.kind, p["matrix"], p["bias"], None)


@dataclass(frozen=True, eq=False)
class RestrictedIdentity:
    """Embed a width-w block at a row offset of a larger zero vector.

    Acts like the identity matrix restricted to a contiguous run of
    columns; the workhorse of concat-to-addition rewrites.
    """

    offset: int
    width: int
    total: int

    def __post_init__(self):
        if not (0 <= self.offset and self.width >= 1 and self.offset + self.width <= self.total):
            raise DimensionMismatch(
                f"block [{self.offset}, {self.offset + self.width}) outside total {self.total}"
            )

    @property
    def in_dim(self):
        return self.width

    @property
    def out_dim(self):
        return self.total

    def apply(self, x):
        x = _check_input(self, x)
        out = np.zeros(self.total)
        out[self.offset : self.offset + self.width] = x
        return out

    def forward(self, x):
        return self.apply(x), None

    def vjp(self, cache, g):
        return np.asarray(g, float)[self.offset : self.offset + self.width], {}

    def params(self):
        return {}

    def with_params(self, p):
        return self


@dataclass(frozen=True, eq=False)
class Zero:
    in_dim: int
    out_dim: int

    def apply(self, x):
        _check_input(self, x)
        return np.zeros(self.out_dim)

    def forward(self, x):
        return self.apply(x), None

    def vjp(self, cache, g):
        return np.zeros(self.in_dim), {}

    def params(self):
        return {}

    def with_params(self, p):
        return self


ArcFunction = (
    Identity | Linear | Affine | Activation | ActAffine | Sigma | RestrictedIdentity | Zero
)


def fn_to_json(fn) -> dict:
    if isinstance(fn, Identity):
        return {"type": "identity", "dim": fn.dim}
    if isinstance(fn, Linear):
        return {"type": "linear", "matrix": fn.matrix.tolist()}
    if isinstance(fn, Affine):
        return {"type": "affine", "matrix": fn.matrix.tolist(), "bias": fn.bias.tolist()}
    if isinstance(fn, Activation):
        return {"type": "activation", "cpwl": cpwl_to_json(fn.cpwl), "dim": fn.dim}
    if isinstance(fn, ActAffine):
        return {
            "type": "act_affine",
            "cpwl": cpwl_to_json(fn.cpwl),
            "matrix": fn.matrix.tolist(),
            "bias": fn.bias.tolist(),
        }
    if isinstance(fn, Sigma):
        obj = {"type": "sigma", "kind": fn.kind}
        if fn.matrix is None:
            obj["dim"] = fn.dim
        else:
            obj["matrix"] = fn.matrix.tolist()
            obj["bias"] = fn.bias.tolist()
        return obj
    if isinstance(fn, RestrictedIdentity):
        return {
            "type": "restricted_identity",
            "offset": fn.offset,
            "width": fn.width,
            "total": fn.total,
        }
    if isinstance(fn, Zero):
        return {"type": "zero", "in_dim": fn.in_dim, "out_dim": fn.out_dim}
    raise TypeError(f"not an arc function: {fn!r}")


def fn_from_json(obj: dict):
    t = obj["type"]
    if t == "identity":
        return Identity(int(obj["dim"]))
    if t == "linear":
        return Linear(obj["matrix"])
    if t == "affine":
        return Affine(obj["matrix"], obj["bias"])
    if t == "activation":
        return Activation(cpwl_from_json(obj["cpwl"]), int(obj["dim"]))
    if t == "act_affine":
        return ActAffine(cpwl_from_json(obj["cpwl"]), obj["matrix"], obj["bias"])
    if t == "sigma":
        if "matrix" in obj:
            return Sigma(obj["kind"], obj["matrix"], obj.get("bias"))
        return Sigma(obj["kind"], dim=int(obj["dim"]))
    if t == "restricted_identity":
        return RestrictedIdentity(int(obj["offset"]), int(obj["width"]), int(obj["total"]))
    if t == "zero":
        return Zero(int(obj["in_dim"]), int(obj["out_dim"]))
    raise KeyError(f"unknown arc function type {t!r}")


def fn_equal(a, b) -> bool:
    """Structural equality (array contents compared exactly)."""
    if type(a) is not type(b):
        return False
    if isinstance(a, Identity):
        return a.dim == b.dim
    if isinstance(a, (Linear,)):
        return np.array_equal(a.matrix, b.matrix)
    if isinstance(a, (Affine,)):
        return np.array_equal(a.matrix, b.matrix) and np.array_equal(a.bias, b.bias)
    if isinstance(a, Activation):
        return a.cpwl == b.cpwl and a.dim == b.dim
    if isinstance(a, ActAffine):
        return (
            a.cpwl == b.cpwl
            and np.array_equal(a.matrix, b.matrix)
            and np.array_equal(a.bias, b.bias)
        )
    if isinstance(a, Sigma):
        if a.kind != b.kind or (a.matrix is None) != (b.matrix is None):
            return False
        if a.matrix is None:
            return a.dim == b.dim
        return np.array_equal(a.matrix, b.matrix) and np.array_equal(a.bias, b.bias)
    if isinstance(a, RestrictedIdentity):
        return (a.offset, a.width, a.total) == (b.offset, b.width, b.total)
    if isinstance(a, Zero):
        return (a.in_dim, a.out_dim) == (b.in_dim, b.out_dim)
    return False


def fn_fingerprint(fn) -> tuple:
    """Hashable structural summary, used when matching graphs up to renaming."""
    name = type(fn).__name__
    parts: list = [name, fn.in_dim, fn.out_dim]
    for key, val in sorted(fn.params().items()):
        parts.append((key, val.tobytes()))
    if isinstance(fn, (Activation, ActAffine)):
        parts.append((fn.cpwl.breakpoints, fn.cpwl.slopes, fn.cpwl.anchor))
    if isinstance(fn, Sigma):
        parts.append(fn.kind)
    if isinstance(fn, RestrictedIdentity):
        parts.append((fn.offset, fn.width, fn.total))
    return tuple(parts)
