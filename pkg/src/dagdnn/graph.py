"""Directed acyclic network representation: typed nodes, functions on arcs.

A graph has exactly one input node and (unless it is the trivial one-node
graph) exactly one output node.  Multi-parent nodes are either addition
nodes (summing their in-arc values) or concatenation nodes (stacking them
in arc order); an output node with several parents concatenates like a
concat node until normalization gives it a single parent.

Graphs are immutable; every transformation returns a new graph.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .arcfns import ArcFunction, Identity, fn_equal, fn_from_json, fn_to_json
from .errors import (
    CycleDetected,
    DimensionMismatch,
    GraphValidationError,
    MultipleInputs,
    MultipleOutputs,
    UnreachableNode,
)

__all__ = [
    "NodeKind",
    "Node",
    "Arc",
    "Graph",
    "build_graph",
    "validate_graph",
    "apply_series",
    "apply_concat",
    "apply_duplicate",
    "adjacency",
    "path_counts",
    "reachability",
    "graph_to_json",
    "graph_from_json",
    "to_dot",
    "graph_equal",
]

SCHEMA_VERSION = "dagdnn/1"


class NodeKind(str, enum.Enum):
    INPUT = "input"
    OUTPUT = "output"
    COMPUTE = "compute"
    CONCAT = "concat"
    ADDITION = "addition"
    RELAY = "relay"


# kinds whose value is the concatenation of parent values, in arc order
_CONCAT_KINDS = (NodeKind.CONCAT, NodeKind.OUTPUT)


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    dim: int


@dataclass(frozen=True, eq=False)
class Arc:
    """Directed arc src -> dst carrying a function; aid is a stable identity
    that survives rewrites and pruning (parameter sets key on it)."""

    src: int
    dst: int
    fn: ArcFunction
    aid: int


@dataclass(frozen=True, eq=False)
class Graph:
    nodes: tuple[Node, ...]
    arcs: tuple[Arc, ...]

    @cached_property
    def node_by_id(self) -> dict[int, Node]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def in_arcs(self) -> dict[int, tuple[Arc, ...]]:
        table: dict[int, list[Arc]] = {n.id: [] for n in self.nodes}
        for a in self.arcs:
            table[a.dst].append(a)
        return {k: tuple(v) for k, v in table.items()}

    @cached_property
    def out_arcs(self) -> dict[int, tuple[Arc, ...]]:
        table: dict[int, list[Arc]] = {n.id: [] for n in self.nodes}
        for a in self.arcs:
            table[a.src].append(a)
        return {k: tuple(v) for k, v in table.items()}

    @cached_property
    def input_id(self) -> int:
        ids = [n.id for n in self.nodes if n.kind is NodeKind.INPUT]
        if len(ids) != 1:
            raise MultipleInputs(f"expected exactly one input node, found {len(ids)}")
        return ids[0]

    @cached_property
    def output_id(self) -> int:
        ids = [n.id for n in self.nodes if n.kind is NodeKind.OUTPUT]
        if not ids and len(self.nodes) == 1:
            return self.nodes[0].id  # one-node graph: the input doubles as output
        if len(ids) != 1:
            raise MultipleOutputs(f"expected exactly one output node, found {len(ids)}")
        return ids[0]

    @cached_property
    def sorted_ids(self) -> tuple[int, ...]:
        return tuple(sorted(n.id for n in self.nodes))

    def dim_of(self, nid: int) -> int:
        return self.node_by_id[nid].dim

    def next_id(self) -> int:
        return max((n.id for n in self.nodes), default=-1) + 1

    def next_aid(self) -> int:
        return max((a.aid for a in self.arcs), default=-1) + 1


def topological_order(g: Graph) -> list[int]:
    """Kahn's algorithm; raises CycleDetected when no topological order exists."""
    indeg = {n.id: 0 for n in g.nodes}
    for a in g.arcs:
        indeg[a.dst] += 1
    ready = sorted(nid for nid, d in indeg.items() if d == 0)
    order: list[int] = []
    while ready:
        nid = ready.pop(0)
        order.append(nid)
        changed = False
        for a in g.out_arcs[nid]:
            indeg[a.dst] -= 1
            if indeg[a.dst] == 0:
                ready.append(a.dst)
                changed = True
        if changed:
            ready.sort()
    if len(order) != len(g.nodes):
        raise CycleDetected("graph contains a directed cycle")
    return order


def validate_graph(g: Graph) -> Graph:
    """Check structural rules; returns the graph unchanged when valid."""
    if not g.nodes:
        raise GraphValidationError("graph has no nodes")
    seen = set()
    for n in g.nodes:
        if n.id in seen:
            raise GraphValidationError(f"duplicate node id {n.id}")
        if n.id < 0:
            raise GraphValidationError(f"node id must be non-negative, got {n.id}")
        if n.dim < 1:
            raise DimensionMismatch(f"node {n.id} has non-positive dim {n.dim}")
        seen.add(n.id)
    for a in g.arcs:
        if a.src not in seen or a.dst not in seen:
            raise GraphValidationError(f"arc {a.src}->{a.dst} references unknown node")
        if a.src == a.dst:
            raise CycleDetected(f"self-arc on node {a.src}")

    _ = g.input_id
    _ = g.output_id
    topological_order(g)

    for n in g.nodes:
        incoming = g.in_arcs[n.id]
        if n.kind is NodeKind.INPUT:
            if incoming:
                raise GraphValidationError(f"input node {n.id} has incoming arcs")
            continue
        if not incoming:
            raise UnreachableNode(f"node {n.id} has no incoming arcs")
        if n.kind is NodeKind.ADDITION:
            for a in incoming:
                if a.fn.out_dim != n.dim:
                    raise DimensionMismatch(
                        f"arc {a.src}->{a.dst} produces dim {a.fn.out_dim}, "
                        f"addition node needs {n.dim}"
                    )
        elif n.kind in _CONCAT_KINDS and len(incoming) > 1:
            total = sum(a.fn.out_dim for a in incoming)
            if total != n.dim:
                raise DimensionMismatch(
                    f"concatenation into node {n.id} totals dim {total}, node has {n.dim}"
                )
        else:
            if len(incoming) > 1:
                raise GraphValidationError(
                    f"{n.kind.value} node {n.id} has {len(incoming)} parents; "
                    "only addition/concat/output nodes may have several"
                )
            if incoming[0].fn.out_dim != n.dim:
                raise DimensionMismatch(
                    f"arc into node {n.id} produces dim {incoming[0].fn.out_dim}, "
                    f"node has {n.dim}"
                )
    for a in g.arcs:
        src_dim = g.dim_of(a.src)
        if a.fn.in_dim != src_dim:
            raise DimensionMismatch(
                f"arc {a.src}->{a.dst} consumes dim {a.fn.in_dim}, source has {src_dim}"
            )
    if g.out_arcs[g.output_id]:
        raise GraphValidationError("output node has outgoing arcs")

    # every node reachable from the input
    seen_fwd = {g.input_id}
    stack = [g.input_id]
    while stack:
        for a in g.out_arcs[stack.pop()]:
            if a.dst not in seen_fwd:
                seen_fwd.add(a.dst)
                stack.append(a.dst)
    missing = set(n.id for n in g.nodes) - seen_fwd
    if missing:
        raise UnreachableNode(f"nodes unreachable from input: {sorted(missing)}")
    return g


def build_graph(nodes, arcs) -> Graph:
    """Assemble and validate a graph from (id, kind, dim) and (src, dst, fn) data.

    Arc identities are assigned by list position unless given as a fourth
    element.
    """
    node_objs = tuple(
        n if isinstance(n, Node) else Node(int(n[0]), NodeKind(n[1]), int(n[2])) for n in nodes
    )
    arc_objs = []
    for k, a in enumerate(arcs):
        if isinstance(a, Arc):
            arc_objs.append(a)
        elif len(a) == 4:
            arc_objs.append(Arc(int(a[0]), int(a[1]), a[2], int(a[3])))
        else:
            arc_objs.append(Arc(int(a[0]), int(a[1]), a[2], k))
    aids = [a.aid for a in arc_objs]
    if len(set(aids)) != len(aids):
        raise GraphValidationError("duplicate arc identities")
    return validate_graph(Graph(node_objs, tuple(arc_objs)))


# ---------------------------------------------------------------------------
# constructors


def apply_series(g: Graph, fn: ArcFunction) -> Graph:
    """Extend the graph by one arc applied after the current output."""
    out = g.node_by_id[g.output_id]
    if fn.in_dim != out.dim:
        raise DimensionMismatch(f"series function consumes dim {fn.in_dim}, output has {out.dim}")
    new_id = g.next_id()
    demoted = _demote(out, g)
    nodes = tuple(demoted if n.id == out.id else n for n in g.nodes)
    nodes = nodes + (Node(new_id, NodeKind.OUTPUT, fn.out_dim),)
    arcs = g.arcs + (Arc(out.id, new_id, fn, g.next_aid()),)
    return validate_graph(Graph(nodes, arcs))


def _demote(n: Node, g: Graph) -> Node:
    # an output that concatenated several parents keeps doing so as a concat node
    if n.kind is NodeKind.OUTPUT:
        kind = NodeKind.CONCAT if len(g.in_arcs[n.id]) > 1 else NodeKind.COMPUTE
        return Node(n.id, kind, n.dim)
    if n.kind is NodeKind.INPUT:
        return n
    return n


def apply_concat(graphs) -> Graph:
    """Merge graphs over one shared input and stack their outputs.

    All operands must consume the same input dimension.  The stacked
    output node concatenates the operand outputs in argument order.
    """
    graphs = list(graphs)
    if len(graphs) < 2:
        raise GraphValidationError("concatenation needs at least two graphs")
    in_dims = {gr.dim_of(gr.input_id) for gr in graphs}
    if len(in_dims) != 1:
        raise DimensionMismatch(f"operand input dims differ: {sorted(in_dims)}")
    in_dim = in_dims.pop()

    nodes: list[Node] = [Node(0, NodeKind.INPUT, in_dim)]
    arcs: list[Arc] = []
    branch_outputs: list[tuple[int, int]] = []  # (node id, dim) after remapping
    next_id = 1
    next_aid = 0
    for gr in graphs:
        remap: dict[int, int] = {gr.input_id: 0}
        for n in gr.nodes:
            if n.id == gr.input_id:
                continue
            kind = _demote(n, gr).kind if n.id == gr.output_id else n.kind
            remap[n.id] = next_id
            nodes.append(Node(next_id, kind, n.dim))
            next_id += 1
        for a in gr.arcs:
            arcs.append(Arc(remap[a.src], remap[a.dst], a.fn, next_aid))
            next_aid += 1
        if gr.output_id == gr.input_id:  # one-node operand: its input is the branch value
            branch_outputs.append((0, in_dim))
        else:
            branch_outputs.append((remap[gr.output_id], gr.dim_of(gr.output_id)))

    total = sum(d for _, d in branch_outputs)
    out_id = next_id
    nodes.append(Node(out_id, NodeKind.OUTPUT, total))
    for nid, d in branch_outputs:
        arcs.append(Arc(nid, out_id, Identity(d), next_aid))
        next_aid += 1
    return validate_graph(Graph(tuple(nodes), tuple(arcs)))


def apply_duplicate(g: Graph, m: int) -> Graph:
    """Stack m copies of the output: dim multiplies by m."""
    if m < 1:
        raise GraphValidationError(f"duplication count must be >= 1, got {m}")
    out = g.node_by_id[g.output_id]
    new_id = g.next_id()
    demoted = _demote(out, g)
    nodes = tuple(demoted if n.id == out.id else n for n in g.nodes)
    nodes = nodes + (Node(new_id, NodeKind.OUTPUT, m * out.dim),)
    aid = g.next_aid()
    extra = tuple(Arc(out.id, new_id, Identity(out.dim), aid + k) for k in range(m))
    return validate_graph(Graph(nodes, g.arcs + extra))


# ---------------------------------------------------------------------------
# connectivity queries


def adjacency(g: Graph) -> np.ndarray:
    """0/1 matrix indexed by sorted node id; entry (i, j) = 1 iff arc j -> i."""
    pos = {nid: k for k, nid in enumerate(g.sorted_ids)}
    mat = np.zeros((len(pos), len(pos)), dtype=np.int64)
    for a in g.arcs:
        mat[pos[a.dst], pos[a.src]] = 1
    return mat


def path_counts(g: Graph, k: int) -> np.ndarray:
    """Entry (i, j) counts directed paths from j to i of length exactly k."""
    if k < 0:
        raise ValueError(f"path length must be >= 0, got {k}")
    return np.linalg.matrix_power(adjacency(g), k)


def reachability(g: Graph) -> np.ndarray:
    """Boolean closure: entry (i, j) true iff some path (length >= 0) runs j -> i."""
    adj = adjacency(g)
    n = len(g.nodes)
    reach = np.eye(n, dtype=np.int64)
    power = np.eye(n, dtype=np.int64)
    for _ in range(n):
        power = np.minimum(adj @ power, 1)  # clip: only the pattern matters
        new = (power == 1) & (reach == 0)
        if not new.any():
            break
        reach[new] = 1
    return reach != 0


# ---------------------------------------------------------------------------
# serialization


def graph_to_json(g: Graph) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "nodes": [{"id": n.id, "kind": n.kind.value, "dim": n.dim} for n in g.nodes],
        "arcs": [
            {"src": a.src, "dst": a.dst, "fn": fn_to_json(a.fn), "aid": a.aid} for a in g.arcs
        ],
    }


def graph_from_json(obj: dict, validate: bool = True) -> Graph:
    version = obj.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise GraphValidationError(f"unsupported schema version {version!r}")
    nodes = tuple(Node(int(n["id"]), NodeKind(n["kind"]), int(n["dim"])) for n in obj["nodes"])
    arcs = tuple(
        Arc(int(a["src"]), int(a["dst"]), fn_from_json(a["fn"]), int(a.get("aid", k)))
        for k, a in enumerate(obj["arcs"])
    )
    g = Graph(nodes, arcs)
    return validate_graph(g) if validate else g


def to_dot(g: Graph, levels: dict[int, int] | None = None) -> str:
    """Graphviz rendering; node labels are id:level:kind."""
    if levels is None:
        from .passes import assign_levels

        levels = assign_levels(g).level
    lines = ["digraph dagdnn {", "  rankdir=LR;"]
    for n in g.nodes:
        label = f"{n.id}:{levels[n.id]}:{n.kind.value}"
        shape = "doublecircle" if n.kind is NodeKind.ADDITION else "circle"
        lines.append(f'  n{n.id} [label="{label}", shape={shape}];')
    for a in g.arcs:
        lines.append(f'  n{a.src} -> n{a.dst} [label="{type(a.fn).__name__}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_equal(g1: Graph, g2: Graph) -> bool:
    """Same ids, kinds, dims, and arcs (functions compared structurally)."""
    if {(n.id, n.kind, n.dim) for n in g1.nodes} != {(n.id, n.kind, n.dim) for n in g2.nodes}:
        return False
    if len(g1.arcs) != len(g2.arcs):
        return False
    by_ends1: dict[tuple[int, int], list[Arc]] = {}
    for a in g1.arcs:
        by_ends1.setdefault((a.src, a.dst), []).append(a)
    for a in g2.arcs:
        cands = by_ends1.get((a.src, a.dst), [])
        hit = next((c for c in cands if fn_equal(c.fn, a.fn)), None)
        if hit is None:
            return False
        cands.remove(hit)
    return True
