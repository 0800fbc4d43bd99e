"""Expressions over arc functions and sparse matrices of them.

Composition here is genuinely non-commutative and, because entries may be
nonlinear, matrix multiplication is neither associative nor left
distributive; only right distributivity (A + B)C = AC + BC survives.
Multiplication therefore evaluates strictly right to left and nothing
ever reassociates a composition across a sum.

Expression nodes are immutable and freely shared between matrices;
evaluation memoizes on node identity so shared subtrees cost one visit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arcfns import (
    Affine,
    ArcFunction,
    Identity,
    Linear,
    Zero as ZeroFn,
    fn_equal,
    fn_from_json,
    fn_to_json,
)
from .errors import DimMismatch, ShapeMismatch

__all__ = [
    "ZeroExpr",
    "IdentityFn",
    "Base",
    "Compose",
    "Sum",
    "ArcExpr",
    "eval_expr",
    "simplify",
    "fold_affine",
    "expr_equal",
    "FuncMatrix",
    "identity_matrix",
    "mat_add",
    "mat_mul",
    "eval_matrix",
    "negate",
    "expr_to_json",
    "expr_from_json",
    "matrix_to_json",
    "matrix_from_json",
]


@dataclass(frozen=True, eq=False)
class ZeroExpr:
    in_dim: int
    out_dim: int


@dataclass(frozen=True, eq=False)
class IdentityFn:
    """Neutral element of composition; matrix diagonals are made of these."""

    dim: int

    @property
    def in_dim(self):
        return self.dim

    @property
    def out_dim(self):
        return self.dim


@dataclass(frozen=True, eq=False)
class Base:
    fn: ArcFunction

    @property
    def in_dim(self):
        return self.fn.in_dim

    @property
    def out_dim(self):
        return self.fn.out_dim


@dataclass(frozen=True, eq=False)
class Compose:
    """outer after inner: Compose(f, g) evaluates f(g(x))."""

    outer: "ArcExpr"
    inner: "ArcExpr"

    def __post_init__(self):
        if self.inner.out_dim != self.outer.in_dim:
            raise DimMismatch(
                f"cannot compose: inner produces {self.inner.out_dim}, "
                f"outer consumes {self.outer.in_dim}"
            )

    @property
    def in_dim(self):
        return self.inner.in_dim

    @property
    def out_dim(self):
        return self.outer.out_dim


@dataclass(frozen=True, eq=False)
class Sum:
    terms: tuple["ArcExpr", ...]

    def __post_init__(self):
        if not self.terms:
            raise DimMismatch("empty sum has no dimensions; use ZeroExpr")
        dims = {(t.in_dim, t.out_dim) for t in self.terms}
        if len(dims) != 1:
            raise DimMismatch(f"sum terms disagree on dims: {sorted(dims)}")

    @property
    def in_dim(self):
        return self.terms[0].in_dim

    @property
    def out_dim(self):
        return self.terms[0].out_dim


ArcExpr = ZeroExpr | IdentityFn | Base | Compose | Sum


def eval_expr(e: ArcExpr, x) -> np.ndarray:
    """Evaluate at a vector.

    Subtrees shared between product terms are computed once per distinct
    input within a call: the cache keys on (node identity, input identity),
    and every produced vector is kept alive for the duration of the call so
    ids stay unique.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (e.in_dim,):
        raise DimMismatch(f"expression consumes dim {e.in_dim}, got shape {x.shape}")
    cache: dict[tuple[int, int], np.ndarray] = {}
    alive: list[np.ndarray] = [x]

    def go(node: ArcExpr, vin: np.ndarray) -> np.ndarray:
        key = (id(node), id(vin))
        hit = cache.get(key)
        if hit is not None:
            return hit
        if isinstance(node, ZeroExpr):
            out = np.zeros(node.out_dim)
        elif isinstance(node, IdentityFn):
            out = vin
        elif isinstance(node, Base):
            out = node.fn.apply(vin)
        elif isinstance(node, Compose):
            out = go(node.outer, go(node.inner, vin))
        elif isinstance(node, Sum):
            out = np.zeros(node.out_dim)
            for t in node.terms:
                out = out + go(t, vin)
        else:
            raise TypeError(f"not an expression: {node!r}")
        cache[key] = out
        alive.append(out)
        return out

    return go(e, x)


def simplify(e: ArcExpr) -> ArcExpr:
    """Drop zero terms, elide neutral identities, flatten nested sums.

    Never reassociates a composition across a sum: with nonlinear entries
    f(g + h) differs from f(g) + f(h).
    """
    if isinstance(e, (ZeroExpr, IdentityFn, Base)):
        return e
    if isinstance(e, Compose):
        outer = simplify(e.outer)
        inner = simplify(e.inner)
        if isinstance(outer, ZeroExpr) or isinstance(inner, ZeroExpr):
            return ZeroExpr(e.in_dim, e.out_dim)
        if isinstance(outer, IdentityFn):
            return inner
        if isinstance(inner, IdentityFn):
            return outer
        return Compose(outer, inner)
    if isinstance(e, Sum):
        flat: list[ArcExpr] = []
        for t in e.terms:
            t = simplify(t)
            if isinstance(t, ZeroExpr):
                continue
            if isinstance(t, Sum):
                flat.extend(t.terms)
            else:
                flat.append(t)
        if not flat:
            return ZeroExpr(e.in_dim, e.out_dim)
        if len(flat) == 1:
            return flat[0]
        return Sum(tuple(flat))
    raise TypeError(f"not an expression: {e!r}")


def _linear_parts(e: ArcExpr):
    """(matrix, bias) when the expression is an affine map, else None."""
    if isinstance(e, IdentityFn):
        return np.eye(e.dim), np.zeros(e.dim)
    if isinstance(e, ZeroExpr):
        return np.zeros((e.out_dim, e.in_dim)), np.zeros(e.out_dim)
    if isinstance(e, Base):
        fn = e.fn
        if isinstance(fn, Identity):
            return np.eye(fn.dim), np.zeros(fn.dim)
        if isinstance(fn, Linear):
            return fn.matrix.copy(), np.zeros(fn.out_dim)
        if isinstance(fn, Affine):
            return fn.matrix.copy(), fn.bias.copy()
        if isinstance(fn, ZeroFn):
            return np.zeros((fn.out_dim, fn.in_dim)), np.zeros(fn.out_dim)
    return None


def fold_affine(e: ArcExpr) -> ArcExpr:
    """Optional collapse of affine-only compositions/sums into one affine map.

    Subtrees containing activations are left untouched.  This is an
    explicit opt-in; nothing in the library folds implicitly.
    """
    if isinstance(e, Compose):
        outer = fold_affine(e.outer)
        inner = fold_affine(e.inner)
        po, pi = _linear_parts(outer), _linear_parts(inner)
        if po is not None and pi is not None:
            mo, bo = po
            mi, bi = pi
            return Base(Affine(mo @ mi, mo @ bi + bo))
        return Compose(outer, inner)
    if isinstance(e, Sum):
        terms = tuple(fold_affine(t) for t in e.terms)
        parts = [_linear_parts(t) for t in terms]
        if all(p is not None for p in parts):
            mat = sum(p[0] for p in parts)
            bias = sum(p[1] for p in parts)
            return Base(Affine(mat, bias))
        return Sum(terms)
    return e


def expr_equal(a: ArcExpr, b: ArcExpr) -> bool:
    """Structural equality of expression trees."""
    if type(a) is not type(b):
        return False
    if isinstance(a, ZeroExpr):
        return (a.in_dim, a.out_dim) == (b.in_dim, b.out_dim)
    if isinstance(a, IdentityFn):
        return a.dim == b.dim
    if isinstance(a, Base):
        return fn_equal(a.fn, b.fn)
    if isinstance(a, Compose):
        return expr_equal(a.outer, b.outer) and expr_equal(a.inner, b.inner)
    if isinstance(a, Sum):
        return len(a.terms) == len(b.terms) and all(
            expr_equal(s, t) for s, t in zip(a.terms, b.terms)
        )
    return False


def negate(e: ArcExpr) -> ArcExpr:
    """Compose with -I on the explicit outer side (scalar multiples are
    compositions with a scaled identity; sides matter here)."""
    return Compose(Base(Linear(-np.eye(e.out_dim))), e)


# ---------------------------------------------------------------------------
# sparse matrices of expressions


@dataclass(frozen=True, eq=False)
class FuncMatrix:
    """Sparse matrix of expressions keyed by (row node, col node).

    ``rows``/``cols`` are node id tuples fixing order; entries absent from
    ``cells`` are zero.  Per-index dimensions live in ``row_dims``/
    ``col_dims``.
    """

    rows: tuple[int, ...]
    cols: tuple[int, ...]
    row_dims: dict[int, int]
    col_dims: dict[int, int]
    cells: dict[tuple[int, int], ArcExpr]

    def __post_init__(self):
        for (i, j), e in self.cells.items():
            if e.out_dim != self.row_dims[i] or e.in_dim != self.col_dims[j]:
                raise DimMismatch(
                    f"cell ({i}, {j}) has dims {e.in_dim}->{e.out_dim}, "
                    f"expected {self.col_dims[j]}->{self.row_dims[i]}"
                )

    def entry(self, i: int, j: int) -> ArcExpr:
        e = self.cells.get((i, j))
        if e is None:
            return ZeroExpr(self.col_dims[j], self.row_dims[i])
        return e

    def pattern(self) -> set[tuple[int, int]]:
        return set(self.cells.keys())


def identity_matrix(ids, dims: dict[int, int]) -> FuncMatrix:
    ids = tuple(ids)
    cells = {(i, i): IdentityFn(dims[i]) for i in ids}
    return FuncMatrix(ids, ids, dict(dims), dict(dims), cells)


def mat_add(a: FuncMatrix, b: FuncMatrix) -> FuncMatrix:
    if a.rows != b.rows or a.cols != b.cols:
        raise ShapeMismatch("matrix addition needs identical row/col node orders")
    cells: dict[tuple[int, int], ArcExpr] = dict(a.cells)
    for key, e in b.cells.items():
        prior = cells.get(key)
        if prior is None:
            cells[key] = e
        else:
            left = prior.terms if isinstance(prior, Sum) else (prior,)
            right = e.terms if isinstance(e, Sum) else (e,)
            cells[key] = Sum(left + right)
    return FuncMatrix(a.rows, a.cols, a.row_dims, a.col_dims, cells)


def mat_mul(a: FuncMatrix, c: FuncMatrix) -> FuncMatrix:
    """Entry (i, j) = sum over l of a[i, l] composed after c[l, j].

    Zero factors drop out; the neutral IdentityFn elides inside the fresh
    compositions.  Entries of the operands are referenced, never copied,
    so products share structure with their factors.
    """
    if a.cols != c.rows:
        raise ShapeMismatch("inner node orders differ")
    for l in a.cols:
        if a.col_dims[l] != c.row_dims[l]:
            raise DimMismatch(f"inner dim mismatch at node {l}")
    by_row: dict[int, list[tuple[int, ArcExpr]]] = {}
    for (i, l), e in a.cells.items():
        by_row.setdefault(i, []).append((l, e))
    by_col: dict[int, dict[int, ArcExpr]] = {}
    for (l, j), e in c.cells.items():
        by_col.setdefault(l, {})[j] = e

    cells: dict[tuple[int, int], list[ArcExpr]] = {}
    for i, row in by_row.items():
        for l, left in row:
            for j, right in by_col.get(l, {}).items():
                if isinstance(left, IdentityFn):
                    term = right
                elif isinstance(right, IdentityFn):
                    term = left
                else:
                    term = Compose(left, right)
                cells.setdefault((i, j), []).append(term)
    final: dict[tuple[int, int], ArcExpr] = {}
    for key, terms in cells.items():
        final[key] = terms[0] if len(terms) == 1 else Sum(tuple(terms))
    return FuncMatrix(a.rows, c.cols, a.row_dims, c.col_dims, final)


def eval_matrix(m: FuncMatrix, blocks: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Apply to a block vector: row i collects sum_j entry(i, j)(blocks[j])."""
    out: dict[int, np.ndarray] = {i: np.zeros(m.row_dims[i]) for i in m.rows}
    for (i, j), e in m.cells.items():
        out[i] = out[i] + eval_expr(e, blocks[j])
    return out


# ---------------------------------------------------------------------------
# serialization


def expr_to_json(e: ArcExpr) -> dict:
    if isinstance(e, ZeroExpr):
        return {"op": "zero", "in_dim": e.in_dim, "out_dim": e.out_dim}
    if isinstance(e, IdentityFn):
        return {"op": "id", "dim": e.dim}
    if isinstance(e, Base):
        return {"op": "base", "fn": fn_to_json(e.fn)}
    if isinstance(e, Compose):
        return {"op": "compose", "outer": expr_to_json(e.outer), "inner": expr_to_json(e.inner)}
    if isinstance(e, Sum):
        return {"op": "sum", "terms": [expr_to_json(t) for t in e.terms]}
    raise TypeError(f"not an expression: {e!r}")


def expr_from_json(obj: dict) -> ArcExpr:
    op = obj["op"]
    if op == "zero":
        return ZeroExpr(int(obj["in_dim"]), int(obj["out_dim"]))
    if op == "id":
        return IdentityFn(int(obj["dim"]))
    if op == "base":
        return Base(fn_from_json(obj["fn"]))
    if op == "compose":
        return Compose(expr_from_json(obj["outer"]), expr_from_json(obj["inner"]))
    if op == "sum":
        return Sum(tuple(expr_from_json(t) for t in obj["terms"]))
    raise KeyError(f"unknown expression op {op!r}")


def matrix_to_json(m: FuncMatrix, masked=()) -> dict:
    cells = []
    masked = set(masked)
    for (i, j) in sorted(m.cells.keys()):
        cells.append({"row": i, "col": j, "expr": expr_to_json(m.cells[(i, j)])})
    for (i, j) in sorted(masked):
        cells.append(
            {
                "row": i,
                "col": j,
                "expr": expr_to_json(ZeroExpr(m.col_dims[j], m.row_dims[i])),
                "masked": True,
            }
        )
    return {
        "rows": list(m.rows),
        "cols": list(m.cols),
        "row_dims": [m.row_dims[i] for i in m.rows],
        "col_dims": [m.col_dims[j] for j in m.cols],
        "cells": cells,
    }


def matrix_from_json(obj: dict) -> FuncMatrix:
    rows = tuple(obj["rows"])
    cols = tuple(obj["cols"])
    row_dims = dict(zip(rows, obj["row_dims"]))
    col_dims = dict(zip(cols, obj["col_dims"]))
    cells = {}
    for c in obj["cells"]:
        if c.get("masked"):
            continue
        cells[(c["row"], c["col"])] = expr_from_json(c["expr"])
    return FuncMatrix(rows, cols, row_dims, col_dims, cells)
