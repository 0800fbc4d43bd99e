"""Scalar continuous piecewise-linear functions and their ReLU-sum form.

A CPWL function with m pieces is described by m-1 strictly increasing
breakpoints, one slope per piece, and an anchor point fixing the constant.
Every such function can be rewritten as

    sum_i r_i * relu(x - a_i)  +  sum_i l_i * relu(t_i - x)  +  const

which is the form used to push activations into network arcs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, NonIncreasingBreakpoints

__all__ = [
    "CPWLSpec",
    "ReLUSum",
    "decompose",
    "eval_cpwl",
    "eval_relusum",
    "cpwl_derivative",
    "preset",
    "cpwl_to_json",
    "cpwl_from_json",
]


@dataclass(frozen=True)
class CPWLSpec:
    """Piecewise description: slopes has exactly one more entry than breakpoints.

    ``anchor`` is an (x0, f(x0)) pair; continuity then determines the whole
    function.  Breakpoints must be strictly increasing.
    """

    breakpoints: tuple[float, ...]
    slopes: tuple[float, ...]
    anchor: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        sl = tuple(float(s) for s in self.slopes)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "slopes", sl)
        object.__setattr__(self, "anchor", (float(self.anchor[0]), float(self.anchor[1])))
        if len(sl) != len(bp) + 1:
            raise DimMismatch(
                f"need len(slopes) == len(breakpoints) + 1, got {len(sl)} and {len(bp)}"
            )
        if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise NonIncreasingBreakpoints(f"breakpoints not strictly increasing: {bp}")
        if not all(np.isfinite(bp + sl)) or not all(np.isfinite(self.anchor)):
            raise DimMismatch("non-finite value in piecewise description")

    @property
    def pieces(self) -> int:
        return len(self.slopes)


@dataclass(frozen=True)
class ReLUSum:
    """Explicit ReLU-sum form: right terms (r, a), left terms (l, t), constant."""

    right_terms: tuple[tuple[float, float], ...]
    left_terms: tuple[tuple[float, float], ...]
    const: float = 0.0


def _knot_values(spec: CPWLSpec) -> np.ndarray:
    """Function values at each breakpoint, chained out from the anchor."""
    b = spec.breakpoints
    s = spec.slopes
    x0, f0 = spec.anchor
    vals = np.empty(len(b))
    k = int(np.searchsorted(b, x0, side="right"))  # piece containing x0
    if k <= len(b) - 1:
        vals[k] = f0 + s[k] * (b[k] - x0)
        for i in range(k + 1, len(b)):
            vals[i] = vals[i - 1] + s[i] * (b[i] - b[i - 1])
    if k >= 1:
        vals[k - 1] = f0 + s[k] * (b[k - 1] - x0)
        for i in range(k - 2, -1, -1):
            vals[i] = vals[i + 1] - s[i + 1] * (b[i + 1] - b[i])
    return vals


def eval_cpwl(spec: CPWLSpec, x):
    """Evaluate the piecewise description at x (scalar or ndarray)."""
    arr = np.asarray(x, dtype=float)
    if not spec.breakpoints:
        x0, f0 = spec.anchor
        out = f0 + spec.slopes[0] * (arr - x0)
        return out if arr.ndim else float(out)
    b = np.asarray(spec.breakpoints)
    s = np.asarray(spec.slopes)
    kv = _knot_values(spec)
    idx = np.searchsorted(b, arr, side="right")
    ref = np.clip(idx - 1, 0, len(b) - 1)
    out = kv[ref] + s[idx] * (arr - b[ref])
    return out if arr.ndim else float(out)


def cpwl_derivative(spec: CPWLSpec, x):
    """Right-derivative: at a breakpoint the slope of the piece to its right."""
    arr = np.asarray(x, dtype=float)
    if not spec.breakpoints:
        out = np.full_like(arr, spec.slopes[0])
        return out if arr.ndim else float(out)
    idx = np.searchsorted(np.asarray(spec.breakpoints), arr, side="right")
    out = np.asarray(spec.slopes)[idx]
    return out if arr.ndim else float(out)


def eval_relusum(rs: ReLUSum, x):
    arr = np.asarray(x, dtype=float)
    out = np.full_like(arr, rs.const, dtype=float)
    for r, a in rs.right_terms:
        out += r * np.maximum(arr - a, 0.0)
    for l, t in rs.left_terms:
        out += l * np.maximum(t - arr, 0.0)
    return out if arr.ndim else float(out)


def decompose(spec: CPWLSpec) -> ReLUSum:
    """Rewrite a piecewise description as a ReLU sum.

    Construction: one right term per breakpoint (slope jump, with the
    leftmost slope folded into the first term), at most one left term
    carrying the leftmost slope, and a constant fixed by the anchor.
    A 1-piece function with nonzero slope needs one right and one left
    term hinged at 0.
    """
    s = spec.slopes
    b = spec.breakpoints
    right: list[tuple[float, float]] = []
    left: list[tuple[float, float]] = []
    if not b:
        if s[0] != 0.0:
            right.append((s[0], 0.0))
            left.append((-s[0], 0.0))
    else:
        if s[1] != 0.0:
            right.append((s[1], b[0]))
        for i in range(1, len(b)):
            jump = s[i + 1] - s[i]
            if jump != 0.0:
                right.append((jump, b[i]))
        if s[0] != 0.0:
            left.append((-s[0], b[0]))
    partial = ReLUSum(tuple(right), tuple(left), 0.0)
    x0, f0 = spec.anchor
    const = f0 - eval_relusum(partial, x0)
    return ReLUSum(tuple(right), tuple(left), const)


_PRESETS = {
    "relu": ((0.0,), (0.0, 1.0)),
    "abs": ((0.0,), (-1.0, 1.0)),
    "hardtanh": ((-1.0, 1.0), (0.0, 1.0, 0.0)),
}


def preset(name: str) -> CPWLSpec:
    """Named activations: relu, abs, hardtanh, leaky:<slope>."""
    if name.startswith("leaky:"):
        alpha = float(name.split(":", 1)[1])
        return CPWLSpec((0.0,), (alpha, 1.0), (0.0, 0.0))
    if name in _PRESETS:
        bp, sl = _PRESETS[name]
        return CPWLSpec(bp, sl, (0.0, 0.0))
    raise KeyError(f"unknown activation preset {name!r}")


def cpwl_to_json(spec: CPWLSpec) -> dict:
    return {
        "breakpoints": list(spec.breakpoints),
        "slopes": list(spec.slopes),
        "anchor": [spec.anchor[0], spec.anchor[1]],
    }


def cpwl_from_json(obj) -> CPWLSpec:
    if isinstance(obj, str):
        return preset(obj)
    return CPWLSpec(
        tuple(obj["breakpoints"]),
        tuple(obj["slopes"]),
        tuple(obj.get("anchor", (0.0, 0.0))),
    )
