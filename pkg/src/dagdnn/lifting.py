"""Factorization of the all-pair function matrix into lifting steps.

For a normalized graph with levels 0..L, the step matrix for level n+1 is
unit lower triangular in level order: identities on the diagonal, the arc
functions from levels <= n into level n+1 in its update block, zero
elsewhere.  The all-pair matrix is the right-to-left product

    C = S(L-1) * ( ... * (S(1) * (S(0) * I)) ... )

whose entry (i, j) is the function computed between node j and node i.
Each step inverts by negating its update block, so the product inverts
step by step in reverse order.

The same entries can be built inductively over levels without any matrix
product; both routes are exposed and agree under evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import (
    ArcExpr,
    Base,
    Compose,
    FuncMatrix,
    IdentityFn,
    Sum,
    eval_expr,
    expr_from_json,
    expr_to_json,
    identity_matrix,
    mat_mul,
    negate,
)
from .arcfns import Identity, Linear, fn_equal, fn_fingerprint
from .errors import LevelOutOfRange, MalformedSequence
from .graph import SCHEMA_VERSION, Arc, Graph, Node, NodeKind, validate_graph
from .passes import LevelMap, require_normalized

__all__ = [
    "LiftingMatrix",
    "AllPairMatrix",
    "arc_matrix",
    "lifting_matrix",
    "factorize",
    "invert_lifting",
    "allpair_product",
    "allpair_inductive",
    "reconstruct_graph",
    "companion_network",
    "level_isomorphic",
    "liftings_to_json",
    "liftings_from_json",
]


@dataclass(frozen=True, eq=False)
class LiftingMatrix:
    """One lifting step: identity everywhere except the update block.

    ``mat`` is the full square matrix in level order; ``updates`` keeps the
    block entries alone as {(dst, src): expr} for direct application to
    state vectors.  ``inverted`` marks a step whose block was negated.
    """

    level: int  # the step fills in nodes at this level + 1
    mat: FuncMatrix
    updates: dict[tuple[int, int], ArcExpr]
    filled: tuple[int, ...]  # node ids at level + 1
    inverted: bool = False


@dataclass(frozen=True, eq=False)
class AllPairMatrix:
    """All-pair function matrix of a graph, complete up to ``upto``."""

    graph: Graph
    levels: LevelMap
    mat: FuncMatrix
    upto: int
    masked: frozenset = frozenset()


def _order_dims(g: Graph, lm: LevelMap) -> dict[int, int]:
    return {n.id: n.dim for n in g.nodes}


def arc_matrix(g: Graph, lm: LevelMap, n: int) -> FuncMatrix:
    """Update block alone: rows = nodes at level n+1, cols = levels <= n,
    entry (i, j) = the arc function j -> i, zero when no arc exists."""
    if not 0 <= n < lm.depth:
        raise LevelOutOfRange(f"level {n} not in [0, {lm.depth})")
    rows = lm.per_level[n + 1]
    cols = lm.upto(n)
    dims = _order_dims(g, lm)
    cells: dict[tuple[int, int], ArcExpr] = {}
    for i in rows:
        for a in g.in_arcs[i]:
            cells[(i, a.src)] = Base(a.fn)
    return FuncMatrix(
        rows,
        cols,
        {i: dims[i] for i in rows},
        {j: dims[j] for j in cols},
        cells,
    )


def lifting_matrix(g: Graph, lm: LevelMap, n: int) -> LiftingMatrix:
    """Full square step matrix for level n+1, unit lower triangular."""
    if not 0 <= n < lm.depth:
        raise LevelOutOfRange(f"level {n} not in [0, {lm.depth})")
    order = lm.order
    dims = _order_dims(g, lm)
    cells = {(i, i): IdentityFn(dims[i]) for i in order}
    updates: dict[tuple[int, int], ArcExpr] = {}
    for i in lm.per_level[n + 1]:
        for a in g.in_arcs[i]:
            e = Base(a.fn)
            cells[(i, a.src)] = e
            updates[(i, a.src)] = e
    mat = FuncMatrix(order, order, dims, dict(dims), cells)
    return LiftingMatrix(n, mat, updates, lm.per_level[n + 1])


def factorize(g: Graph) -> list[LiftingMatrix]:
    """All lifting steps of a normalized graph, level order 0..L-1.

    A one-node graph factors into the empty list.
    """
    lm = require_normalized(g)
    return [lifting_matrix(g, lm, n) for n in range(lm.depth)]


def invert_lifting(b: LiftingMatrix) -> LiftingMatrix:
    """Negate the update block; composing after the original cancels it."""
    order = b.mat.rows
    cells = {(i, i): IdentityFn(b.mat.row_dims[i]) for i in order}
    updates: dict[tuple[int, int], ArcExpr] = {}
    for (i, j), e in b.updates.items():
        ne = negate(e)
        cells[(i, j)] = ne
        updates[(i, j)] = ne
    mat = FuncMatrix(order, order, dict(b.mat.row_dims), dict(b.mat.col_dims), cells)
    return LiftingMatrix(b.level, mat, updates, b.filled, inverted=not b.inverted)


def allpair_product(g: Graph, upto: int | None = None) -> AllPairMatrix:
    """All-pair matrix as the explicit right-to-left product of steps."""
    lm = require_normalized(g)
    if upto is None:
        upto = lm.depth
    if not 0 <= upto <= lm.depth:
        raise LevelOutOfRange(f"level {upto} not in [0, {lm.depth}]")
    dims = _order_dims(g, lm)
    acc = identity_matrix(lm.order, dims)
    for n in range(upto):
        step = lifting_matrix(g, lm, n)
        acc = mat_mul(step.mat, acc)
    return AllPairMatrix(g, lm, acc, upto)


def allpair_inductive(g: Graph, upto: int | None = None) -> AllPairMatrix:
    """All-pair matrix built level by level, no matrix product involved.

    Base: each node maps to itself by the identity.  Step: the function
    from c into a node a one level up is the sum, over parents b of a
    reached from c, of the arc function b -> a composed after the function
    from c to b.
    """
    lm = require_normalized(g)
    if upto is None:
        upto = lm.depth
    if not 0 <= upto <= lm.depth:
        raise LevelOutOfRange(f"level {upto} not in [0, {lm.depth}]")
    dims = _order_dims(g, lm)
    order = lm.order
    cells: dict[tuple[int, int], ArcExpr] = {(i, i): IdentityFn(dims[i]) for i in order}
    for n in range(upto):
        for a in lm.per_level[n + 1]:
            by_source: dict[int, list[ArcExpr]] = {}
            for arc in g.in_arcs[a]:
                for c in lm.upto(n):
                    prior = cells.get((arc.src, c))
                    if prior is None:
                        continue
                    term = Base(arc.fn) if isinstance(prior, IdentityFn) else Compose(Base(arc.fn), prior)
                    by_source.setdefault(c, []).append(term)
            for c, terms in by_source.items():
                cells[(a, c)] = terms[0] if len(terms) == 1 else Sum(tuple(terms))
    mat = FuncMatrix(order, order, dims, dict(dims), cells)
    return AllPairMatrix(g, lm, mat, upto)


# ---------------------------------------------------------------------------
# reconstruction


def reconstruct_graph(steps: list[LiftingMatrix], fold_relays: bool = False) -> Graph:
    """Rebuild the network the steps came from.

    Arcs are read off the update blocks; node kinds are inferred from the
    structure (several parents = addition, level 0 = input, last level =
    output, otherwise relay).  With ``fold_relays`` set, straight chains
    of identity-carrying relays collapse back into a single arc.
    """
    if not steps:
        raise MalformedSequence("cannot rebuild a graph from no lifting steps")
    expected = list(range(len(steps)))
    got = [s.level for s in steps]
    if got != expected:
        raise MalformedSequence(f"levels {got} are not consecutive from 0")

    dims = dict(steps[0].mat.row_dims)
    level_of: dict[int, int] = {}
    for nid in steps[0].mat.rows:
        level_of[nid] = None  # filled below
    filled = set()
    for s in steps:
        for nid in s.filled:
            level_of[nid] = s.level + 1
            filled.add(nid)
    top = len(steps)
    for nid in steps[0].mat.rows:
        if nid not in filled:
            level_of[nid] = 0

    arcs: list[Arc] = []
    aid = 0
    indeg: dict[int, int] = {nid: 0 for nid in level_of}
    for s in steps:
        for (i, j), e in sorted(s.updates.items()):
            if not isinstance(e, Base):
                raise MalformedSequence(
                    f"update entry ({i}, {j}) is not a bare arc function"
                )
            arcs.append(Arc(j, i, e.fn, aid))
            aid += 1
            indeg[i] += 1

    nodes = []
    for nid in sorted(level_of):
        lvl = level_of[nid]
        if lvl == 0:
            kind = NodeKind.INPUT
        elif lvl == top:
            kind = NodeKind.OUTPUT
        elif indeg[nid] > 1:
            kind = NodeKind.ADDITION
        else:
            kind = NodeKind.RELAY
        nodes.append(Node(nid, kind, dims[nid]))

    g = validate_graph(Graph(tuple(nodes), tuple(arcs)))
    if fold_relays:
        g = _fold_relays(g)
    return g


def _fold_relays(g: Graph) -> Graph:
    """Collapse relay nodes whose single outgoing arc is an identity."""
    while True:
        candidate = None
        for n in g.nodes:
            if n.kind is not NodeKind.RELAY:
                continue
            ins, outs = g.in_arcs[n.id], g.out_arcs[n.id]
            if len(ins) == 1 and len(outs) == 1 and isinstance(outs[0].fn, Identity):
                candidate = (n, ins[0], outs[0])
                break
        if candidate is None:
            return g
        node, a_in, a_out = candidate
        arcs = tuple(
            a for a in g.arcs if a is not a_in and a is not a_out
        ) + (Arc(a_in.src, a_out.dst, a_in.fn, a_in.aid),)
        nodes = tuple(n for n in g.nodes if n.id != node.id)
        g = validate_graph(Graph(nodes, arcs))


# ---------------------------------------------------------------------------
# companion networks


def companion_network(g: Graph, sign: int = -1) -> Graph:
    """Invertible companion of the network's function F.

    Maps the stacked pair (x, y) to (x, y + sign * F(x)); with the default
    sign the map (x, y) -> (x, y - F(x)) undoes its sign-flipped twin, so
    either composition order returns the original pair.
    """
    if sign not in (-1, 1):
        raise ValueError("sign must be +1 or -1")
    d_in = g.dim_of(g.input_id)
    d_out = g.dim_of(g.output_id)
    total = d_in + d_out

    nodes: list[Node] = [Node(0, NodeKind.INPUT, total)]
    arcs: list[Arc] = []
    next_id = 1
    next_aid = 0

    sel_x = np.zeros((d_in, total))
    sel_x[:, :d_in] = np.eye(d_in)
    sel_y = np.zeros((d_out, total))
    sel_y[:, d_in:] = np.eye(d_out)

    x_node = Node(next_id, NodeKind.COMPUTE, d_in)
    next_id += 1
    y_node = Node(next_id, NodeKind.COMPUTE, d_out)
    next_id += 1
    nodes += [x_node, y_node]
    arcs.append(Arc(0, x_node.id, Linear(sel_x), next_aid))
    next_aid += 1
    arcs.append(Arc(0, y_node.id, Linear(sel_y), next_aid))
    next_aid += 1

    # embed a copy of g fed from the x block
    remap: dict[int, int] = {g.input_id: x_node.id}
    for n in g.nodes:
        if n.id == g.input_id:
            continue
        kind = NodeKind.COMPUTE if n.kind in (NodeKind.OUTPUT, NodeKind.INPUT) else n.kind
        remap[n.id] = next_id
        nodes.append(Node(next_id, kind, n.dim))
        next_id += 1
    for a in g.arcs:
        arcs.append(Arc(remap[a.src], remap[a.dst], a.fn, next_aid))
        next_aid += 1
    f_out = remap.get(g.output_id, x_node.id)

    scaled = Node(next_id, NodeKind.COMPUTE, d_out)
    next_id += 1
    nodes.append(scaled)
    arcs.append(Arc(f_out, scaled.id, Linear(sign * np.eye(d_out)), next_aid))
    next_aid += 1

    second = Node(next_id, NodeKind.ADDITION, d_out)
    next_id += 1
    nodes.append(second)
    arcs.append(Arc(y_node.id, second.id, Identity(d_out), next_aid))
    next_aid += 1
    arcs.append(Arc(scaled.id, second.id, Identity(d_out), next_aid))
    next_aid += 1

    out = Node(next_id, NodeKind.OUTPUT, total)
    next_id += 1
    nodes.append(out)
    arcs.append(Arc(x_node.id, out.id, Identity(d_in), next_aid))
    next_aid += 1
    arcs.append(Arc(second.id, out.id, Identity(d_out), next_aid))
    return validate_graph(Graph(tuple(nodes), tuple(arcs)))


# ---------------------------------------------------------------------------
# isomorphism up to renaming


def _kind_class(g: Graph, n: Node) -> str:
    if n.kind is NodeKind.INPUT:
        return "input"
    if n.kind is NodeKind.OUTPUT:
        return "output"
    if n.kind is NodeKind.ADDITION and len(g.in_arcs[n.id]) > 1:
        return "addition"
    return "pass"


def level_isomorphic(g1: Graph, g2: Graph) -> bool:
    """Level-respecting bijection matching dims, kind classes, arc functions.

    Relay and compute labels are interchangeable; an addition node with one
    parent behaves like a relay and is treated as one.  Color refinement
    narrows the candidate classes; a small backtracking search finishes the
    job when symmetric branches leave classes of size above one.
    """
    from .passes import assign_levels

    if len(g1.nodes) != len(g2.nodes) or len(g1.arcs) != len(g2.arcs):
        return False
    lm1, lm2 = assign_levels(g1), assign_levels(g2)
    if lm1.counts != lm2.counts:
        return False

    def base_colors(g, lm):
        return {
            n.id: repr(
                (
                    lm.level[n.id],
                    n.dim,
                    _kind_class(g, n),
                    sorted(repr(fn_fingerprint(a.fn)) for a in g.in_arcs[n.id]),
                    sorted(repr(fn_fingerprint(a.fn)) for a in g.out_arcs[n.id]),
                )
            )
            for n in g.nodes
        }

    c1, c2 = base_colors(g1, lm1), base_colors(g2, lm2)
    for _ in range(len(g1.nodes)):
        if sorted(c1.values()) != sorted(c2.values()):
            return False
        if len(set(c1.values())) == len(c1):
            break
        c1 = {
            nid: repr((c1[nid], sorted((c1[a.src], repr(fn_fingerprint(a.fn))) for a in g1.in_arcs[nid])))
            for nid in c1
        }
        c2 = {
            nid: repr((c2[nid], sorted((c2[a.src], repr(fn_fingerprint(a.fn))) for a in g2.in_arcs[nid])))
            for nid in c2
        }
    if sorted(c1.values()) != sorted(c2.values()):
        return False

    by_color2: dict[str, list[int]] = {}
    for nid, c in c2.items():
        by_color2.setdefault(c, []).append(nid)
    order1 = sorted(c1, key=lambda nid: (c1[nid], nid))
    mapping: dict[int, int] = {}
    used: set[int] = set()

    def backtrack(k: int) -> bool:
        if k == len(order1):
            return _arcs_transport(g1, g2, mapping)
        nid = order1[k]
        for cand in by_color2.get(c1[nid], []):
            if cand in used:
                continue
            mapping[nid] = cand
            used.add(cand)
            if backtrack(k + 1):
                return True
            used.discard(cand)
            del mapping[nid]
        return False

    return backtrack(0)


def _arcs_transport(g1: Graph, g2: Graph, mapping: dict[int, int]) -> bool:
    remaining: dict[tuple[int, int], list] = {}
    for a in g2.arcs:
        remaining.setdefault((a.src, a.dst), []).append(a.fn)
    for a in g1.arcs:
        key = (mapping[a.src], mapping[a.dst])
        cands = remaining.get(key, [])
        hit = next((f for f in cands if fn_equal(f, a.fn)), None)
        if hit is None:
            return False
        cands.remove(hit)
    return True


# ---------------------------------------------------------------------------
# serialization


def liftings_to_json(g: Graph, steps: list[LiftingMatrix]) -> dict:
    lm = require_normalized(g)
    return {
        "version": SCHEMA_VERSION,
        "nodes": [
            {"id": n.id, "level": lm.level[n.id], "dim": n.dim, "kind": n.kind.value}
            for n in sorted(g.nodes, key=lambda n: (lm.level[n.id], n.id))
        ],
        "matrices": [
            {
                "level": s.level,
                "inverted": s.inverted,
                "cells": [
                    {"row": i, "col": j, "expr": expr_to_json(e)}
                    for (i, j), e in sorted(s.updates.items())
                ],
            }
            for s in steps
        ],
    }


def liftings_from_json(obj: dict) -> list[LiftingMatrix]:
    nodes = obj["nodes"]
    dims = {int(n["id"]): int(n["dim"]) for n in nodes}
    levels = {int(n["id"]): int(n["level"]) for n in nodes}
    by_level: dict[int, list[int]] = {}
    for nid, lvl in levels.items():
        by_level.setdefault(lvl, []).append(nid)
    order = tuple(
        nid for lvl in sorted(by_level) for nid in sorted(by_level[lvl])
    )
    steps = []
    for m in obj["matrices"]:
        n = int(m["level"])
        cells = {(i, i): IdentityFn(dims[i]) for i in order}
        updates: dict[tuple[int, int], ArcExpr] = {}
        for c in m["cells"]:
            e = expr_from_json(c["expr"])
            cells[(int(c["row"]), int(c["col"]))] = e
            updates[(int(c["row"]), int(c["col"]))] = e
        mat = FuncMatrix(order, order, dict(dims), dict(dims), cells)
        steps.append(
            LiftingMatrix(
                n,
                mat,
                updates,
                tuple(sorted(by_level.get(n + 1, ()))),
                inverted=bool(m.get("inverted", False)),
            )
        )
    return steps
