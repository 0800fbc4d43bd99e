"""Evaluation: plain interpretation, state lifting, and sub-graph functions.

The lifting evaluator carries a block vector with one block per node;
blocks above the current level are zero.  Applying a lifting step fills
the blocks one level up from the arc functions below, so after the last
step the output block holds the network value.  The plain interpreter
walks nodes in topological order and serves as the independent reference
path throughout the test suite.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .algebra import eval_expr
from .errors import DimMismatch, LevelMismatch, Unreachable
from .graph import Graph, NodeKind, _CONCAT_KINDS, topological_order
from .lifting import AllPairMatrix, LiftingMatrix, lifting_matrix
from .passes import LevelMap, require_normalized

__all__ = [
    "StateVec",
    "EvalTrace",
    "init_state",
    "lift_state",
    "forward",
    "interpret",
    "interpret_general",
    "subgraph_nodes",
    "subgraph_eval",
    "is_complete_subgraph",
    "completeness_matrix",
    "mask_incomplete",
    "restrict_state",
    "StateRoundTrip",
    "verify_inverse_steps",
]


@dataclass
class StateVec:
    """Block vector over all nodes at a given lifting level."""

    level: int
    blocks: dict[int, np.ndarray]

    def copy(self) -> "StateVec":
        return StateVec(self.level, dict(self.blocks))


@dataclass
class EvalTrace:
    """Record of one lifted evaluation."""

    states: list[StateVec] = field(default_factory=list)
    node_values: dict[int, np.ndarray] = field(default_factory=dict)
    arc_applications: int = 0
    wall_time: float = 0.0


def init_state(g: Graph, lm: LevelMap, x) -> StateVec:
    """Level-0 state: the input block carries x, everything else is zero."""
    x = np.asarray(x, dtype=float)
    d = g.dim_of(g.input_id)
    if x.shape != (d,):
        raise DimMismatch(f"input must have shape ({d},), got {x.shape}")
    blocks = {n.id: np.zeros(n.dim) for n in g.nodes}
    blocks[g.input_id] = x
    return StateVec(0, blocks)


def lift_state(s: StateVec, step: LiftingMatrix, trace: EvalTrace | None = None) -> StateVec:
    """Apply one lifting step (or its inverse) to a state vector.

    A forward step at level n consumes a level-n state and produces level
    n+1; an inverted step walks back down.  Untouched blocks pass through;
    the filled blocks collect their update-row sums plus their own prior
    value (zero on the way up, canceling on the way down).
    """
    expected = s.level if not step.inverted else s.level - 1
    if step.level != expected:
        raise LevelMismatch(
            f"state at level {s.level} cannot take a step for level {step.level}"
            + (" (inverted)" if step.inverted else "")
        )
    blocks = dict(s.blocks)
    for i in step.filled:
        acc = s.blocks[i]
        for (row, col), e in step.updates.items():
            if row != i:
                continue
            acc = acc + eval_expr(e, s.blocks[col])
            if trace is not None:
                trace.arc_applications += 1
        blocks[i] = acc
    return StateVec(s.level + (1 if not step.inverted else -1), blocks)


def forward(g: Graph, x, with_trace: bool = False):
    """Network value by lifting through all levels; optionally keep a trace."""
    lm = require_normalized(g)
    start = time.perf_counter()
    trace = EvalTrace() if with_trace else None
    s = init_state(g, lm, x)
    if with_trace:
        trace.states.append(s.copy())
    for n in range(lm.depth):
        s = lift_state(s, lifting_matrix(g, lm, n), trace)
        if with_trace:
            trace.states.append(s.copy())
    out = s.blocks[g.output_id]
    if with_trace:
        trace.node_values = {nid: s.blocks[nid] for nid in s.blocks}
        trace.wall_time = time.perf_counter() - start
        return out, trace
    return out


def restrict_state(s: StateVec, lm: LevelMap, n: int) -> np.ndarray:
    """Concatenate the blocks of levels <= n in matrix order."""
    return np.concatenate([s.blocks[nid] for nid in lm.upto(n)]) if lm.upto(n) else np.zeros(0)


@dataclass
class StateRoundTrip:
    """Worst absolute error of step-then-inverse over random states."""

    max_error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_error <= self.tolerance


def verify_inverse_steps(
    steps, dims: dict[int, int], trials: int = 100, seed: int = 0, tol: float = 1e-12
) -> StateRoundTrip:
    """Drive random states up each step and back down its inverse.

    The update rows act on lower-level blocks the step never touches, so
    the subtraction on the way down cancels the addition bit-for-bit up
    to one rounding per component; the worst deviation is reported.
    """
    from .lifting import invert_lifting

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        for step in steps:
            blocks = {nid: rng.standard_normal(d) for nid, d in dims.items()}
            s = StateVec(step.level, blocks)
            down = lift_state(lift_state(s, step), invert_lifting(step))
            for nid, ref in blocks.items():
                if ref.size:
                    worst = max(worst, float(np.max(np.abs(down.blocks[nid] - ref))))
    return StateRoundTrip(worst, tol)


# ---------------------------------------------------------------------------
# plain interpreter (reference path, no lifting machinery)


def _node_value(g: Graph, nid: int, values: dict[int, np.ndarray]) -> np.ndarray:
    node = g.node_by_id[nid]
    incoming = g.in_arcs[nid]
    if node.kind is NodeKind.ADDITION:
        acc = np.zeros(node.dim)
        for a in incoming:
            acc = acc + a.fn.apply(values[a.src])
        return acc
    if node.kind in _CONCAT_KINDS and len(incoming) > 1:
        return np.concatenate([a.fn.apply(values[a.src]) for a in incoming])
    (arc,) = incoming
    return arc.fn.apply(values[arc.src])


def interpret_general(g: Graph, inputs: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Topological evaluation of a possibly multi-input/output graph.

    ``inputs`` maps each zero-in-degree node to its value; the result maps
    each zero-out-degree node to its value.  Used as the reference when
    normalization passes must preserve semantics.
    """
    values: dict[int, np.ndarray] = {}
    for nid in topological_order(g):
        if not g.in_arcs[nid]:
            if nid not in inputs:
                raise DimMismatch(f"no value supplied for source node {nid}")
            v = np.asarray(inputs[nid], dtype=float)
            if v.shape != (g.dim_of(nid),):
                raise DimMismatch(f"source node {nid} expects dim {g.dim_of(nid)}")
            values[nid] = v
        else:
            values[nid] = _node_value(g, nid, values)
    return {nid: values[nid] for nid in values if not g.out_arcs[nid]}


def interpret(g: Graph, x) -> np.ndarray:
    """Reference forward value of a single-input single-output graph."""
    outs = interpret_general(g, {g.input_id: np.asarray(x, dtype=float)})
    return outs[g.output_id]


# ---------------------------------------------------------------------------
# sub-graph functions


def subgraph_nodes(g: Graph, i: int, j: int) -> set[int]:
    """Union of all j -> i paths: forward-reachable(j) meets backward-reachable(i)."""
    fwd = {j}
    stack = [j]
    while stack:
        for a in g.out_arcs[stack.pop()]:
            if a.dst not in fwd:
                fwd.add(a.dst)
                stack.append(a.dst)
    bwd = {i}
    stack = [i]
    while stack:
        for a in g.in_arcs[stack.pop()]:
            if a.src not in bwd:
                bwd.add(a.src)
                stack.append(a.src)
    return fwd & bwd


def subgraph_eval(g: Graph, i: int, j: int, z) -> np.ndarray:
    """Value at node i when node j is forced to z and everything outside
    the j -> i path union is silent (addition nodes treat absent parents
    as zero).  Raises Unreachable when no path runs j -> i."""
    if i == j:
        z = np.asarray(z, dtype=float)
        if z.shape != (g.dim_of(j),):
            raise DimMismatch(f"node {j} expects dim {g.dim_of(j)}")
        return z
    union = subgraph_nodes(g, i, j)
    if i not in union or j not in union:
        raise Unreachable(f"no path from node {j} to node {i}")
    values: dict[int, np.ndarray] = {}
    z = np.asarray(z, dtype=float)
    if z.shape != (g.dim_of(j),):
        raise DimMismatch(f"node {j} expects dim {g.dim_of(j)}")
    values[j] = z
    for nid in topological_order(g):
        if nid not in union or nid == j:
            continue
        node = g.node_by_id[nid]
        inside = [a for a in g.in_arcs[nid] if a.src in union]
        if node.kind is NodeKind.ADDITION:
            acc = np.zeros(node.dim)
            for a in inside:
                acc = acc + a.fn.apply(values[a.src])
            values[nid] = acc
        elif node.kind in _CONCAT_KINDS and len(g.in_arcs[nid]) > 1:
            # stacked blocks outside the union contribute zeros
            parts = []
            for a in g.in_arcs[nid]:
                if a.src in union:
                    parts.append(a.fn.apply(values[a.src]))
                else:
                    parts.append(np.zeros(a.fn.out_dim))
            values[nid] = np.concatenate(parts)
        else:
            (arc,) = inside
            values[nid] = arc.fn.apply(values[arc.src])
    return values[i]


def is_complete_subgraph(g: Graph, i: int, j: int) -> bool:
    """True when every addition node computed inside the j -> i path union
    has all of its parents inside the union.

    The source j never counts: its value is supplied, so its own parents
    are irrelevant.  Unreachable pairs are not complete; a node by itself
    is.
    """
    if i == j:
        return True
    union = subgraph_nodes(g, i, j)
    if i not in union:
        return False
    for nid in union:
        if nid == j:
            continue
        if g.node_by_id[nid].kind is not NodeKind.ADDITION:
            continue
        if any(a.src not in union for a in g.in_arcs[nid]):
            return False
    return True


def completeness_matrix(g: Graph) -> dict[tuple[int, int], bool]:
    """Completeness of every ordered reachable pair (target, source)."""
    from .graph import reachability

    reach = reachability(g)
    ids = g.sorted_ids
    out: dict[tuple[int, int], bool] = {}
    for a, i in enumerate(ids):
        for b, j in enumerate(ids):
            if reach[a, b]:
                out[(i, j)] = is_complete_subgraph(g, i, j)
    return out


def mask_incomplete(c: AllPairMatrix) -> AllPairMatrix:
    """Zero out entries whose pair is not a complete sub-graph.

    Masked positions are remembered so serialization can mark them
    explicitly rather than silently dropping them.
    """
    g = c.graph
    keep: dict[tuple[int, int], object] = {}
    masked = set(c.masked)
    for (i, j), e in c.mat.cells.items():
        if i == j or is_complete_subgraph(g, i, j):
            keep[(i, j)] = e
        else:
            masked.add((i, j))
    from .algebra import FuncMatrix

    mat = FuncMatrix(c.mat.rows, c.mat.cols, c.mat.row_dims, c.mat.col_dims, keep)
    return AllPairMatrix(c.graph, c.levels, mat, c.upto, frozenset(masked))
