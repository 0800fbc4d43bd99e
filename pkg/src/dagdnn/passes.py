"""Rewrites that bring a graph into addition-node level form.

The canonical pipeline is

    normalize_io -> concat_to_addition -> assign_levels -> eliminate_jumps

after which every multi-parent node is an addition node, every arc spans
exactly one level, and every non-addition node except the input has one
parent.  All passes are idempotent and preserve forward values (the
input/output pass up to the documented stacking of channels).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .arcfns import Identity, Linear, RestrictedIdentity
from .errors import GraphValidationError, NotNormalized
from .graph import (
    Arc,
    Graph,
    Node,
    NodeKind,
    _CONCAT_KINDS,
    topological_order,
    validate_graph,
)

import numpy as np

__all__ = [
    "LevelMap",
    "assign_levels",
    "normalize_io",
    "concat_to_addition",
    "eliminate_jumps",
    "normalize_all",
    "check_oplus_invariants",
    "OplusReport",
    "is_normalized",
    "require_normalized",
]


@dataclass(frozen=True)
class LevelMap:
    """Level of every node (longest path from the input) plus derived orders."""

    level: dict[int, int]
    per_level: tuple[tuple[int, ...], ...]  # node ids per level, ascending id

    @property
    def depth(self) -> int:
        """Index of the last level; the output always sits here."""
        return len(self.per_level) - 1

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(tier) for tier in self.per_level)

    @property
    def order(self) -> tuple[int, ...]:
        """All node ids sorted by (level, id); matrix indices use this."""
        return tuple(nid for tier in self.per_level for nid in tier)

    def upto(self, n: int) -> tuple[int, ...]:
        """Ids of levels 0..n in matrix order."""
        return tuple(nid for tier in self.per_level[: n + 1] for nid in tier)


def assign_levels(g: Graph) -> LevelMap:
    """Longest-path levels via one pass over a topological order."""
    level = {g.input_id: 0}
    for nid in topological_order(g):
        if nid not in level:
            level[nid] = 0
        for a in g.out_arcs[nid]:
            level[a.dst] = max(level.get(a.dst, 0), level[nid] + 1)
    depth = max(level.values())
    tiers = [[] for _ in range(depth + 1)]
    for nid in sorted(level):
        tiers[level[nid]].append(nid)
    return LevelMap(level, tuple(tuple(t) for t in tiers))


# ---------------------------------------------------------------------------
# input/output normalization


def normalize_io(g: Graph) -> Graph:
    """Collapse multiple inputs/outputs to one of each.

    Extra inputs are fed by selection arcs from one stacked input node;
    extra outputs are concatenated (in ascending id order) into one output
    node.  Validation is deferred until the graph is single input/output,
    so this pass accepts graphs the validator would reject.
    """
    inputs = sorted(n.id for n in g.nodes if n.kind is NodeKind.INPUT)
    outputs = sorted(n.id for n in g.nodes if n.kind is NodeKind.OUTPUT)
    if len(inputs) == 1 and (len(outputs) == 1 or len(g.nodes) == 1):
        return validate_graph(g)
    if len(inputs) == 0 or len(outputs) == 0:
        raise GraphValidationError("graph must declare input and output nodes")

    nodes = list(g.nodes)
    arcs = list(g.arcs)
    next_id = g.next_id()
    next_aid = g.next_aid()

    if len(inputs) > 1:
        dims = [g.dim_of(i) for i in inputs]
        total = sum(dims)
        stacked = Node(next_id, NodeKind.INPUT, total)
        next_id += 1
        offset = 0
        for nid, d in zip(inputs, dims):
            sel = np.zeros((d, total))
            sel[:, offset : offset + d] = np.eye(d)
            offset += d
            nodes = [Node(n.id, NodeKind.COMPUTE, n.dim) if n.id == nid else n for n in nodes]
            arcs.append(Arc(stacked.id, nid, Linear(sel), next_aid))
            next_aid += 1
        nodes.append(stacked)

    if len(outputs) > 1:
        dims = [g.dim_of(o) for o in outputs]
        gathered = Node(next_id, NodeKind.OUTPUT, sum(dims))
        next_id += 1
        new_nodes = []
        for n in nodes:
            if n.id in outputs:
                kind = NodeKind.CONCAT if len(g.in_arcs[n.id]) > 1 else NodeKind.COMPUTE
                new_nodes.append(Node(n.id, kind, n.dim))
            else:
                new_nodes.append(n)
        nodes = new_nodes
        for nid, d in zip(outputs, dims):
            arcs.append(Arc(nid, gathered.id, Identity(d), next_aid))
            next_aid += 1
        nodes.append(gathered)

    return validate_graph(Graph(tuple(nodes), tuple(arcs)))


# ---------------------------------------------------------------------------
# concat -> addition


def concat_to_addition(g: Graph) -> Graph:
    """Replace every concatenation with an addition node over block embeddings.

    Each branch gets a fresh relay node carrying the original arc function,
    an arc embedding the branch into its block of the stacked vector, and
    the old concat node survives as a pass-through behind the new addition
    node.  A multi-parent output node concatenates, so it is rewritten the
    same way (keeping its output role).
    """
    targets = [
        n
        for n in g.nodes
        if (n.kind is NodeKind.CONCAT)
        or (n.kind in _CONCAT_KINDS and len(g.in_arcs[n.id]) > 1)
    ]
    if not targets:
        return g

    nodes = {n.id: n for n in g.nodes}
    arcs = list(g.arcs)
    next_id = g.next_id()
    next_aid = g.next_aid()

    for node in sorted(targets, key=lambda n: n.id):
        incoming = [a for a in arcs if a.dst == node.id]
        arcs = [a for a in arcs if a.dst != node.id]
        addition = Node(next_id, NodeKind.ADDITION, node.dim)
        next_id += 1
        offset = 0
        for branch in incoming:  # arc order defines block order
            width = branch.fn.out_dim
            relay = Node(next_id, NodeKind.RELAY, width)
            next_id += 1
            nodes[relay.id] = relay
            arcs.append(Arc(branch.src, relay.id, branch.fn, branch.aid))
            arcs.append(Arc(relay.id, addition.id, RestrictedIdentity(offset, width, node.dim), next_aid))
            next_aid += 1
            offset += width
        nodes[addition.id] = addition
        survivor_kind = NodeKind.OUTPUT if node.kind is NodeKind.OUTPUT else NodeKind.RELAY
        nodes[node.id] = Node(node.id, survivor_kind, node.dim)
        arcs.append(Arc(addition.id, node.id, Identity(node.dim), next_aid))
        next_aid += 1

    out = Graph(tuple(nodes[k] for k in sorted(nodes)), tuple(arcs))
    return validate_graph(out)


# ---------------------------------------------------------------------------
# jump elimination


def eliminate_jumps(g: Graph) -> Graph:
    """Split arcs spanning two or more levels into chains of relay nodes.

    The original function rides the first arc of the chain; the rest are
    identities.  Levels of pre-existing nodes are unchanged.
    """
    lm = assign_levels(g)
    jumps = [a for a in g.arcs if lm.level[a.dst] - lm.level[a.src] >= 2]
    if not jumps:
        return g

    nodes = list(g.nodes)
    arcs = [a for a in g.arcs if a not in jumps]
    next_id = g.next_id()
    next_aid = g.next_aid()
    for a in sorted(jumps, key=lambda a: a.aid):
        gap = lm.level[a.dst] - lm.level[a.src]
        width = a.fn.out_dim
        chain = []
        for _ in range(gap - 1):
            chain.append(Node(next_id, NodeKind.RELAY, width))
            next_id += 1
        nodes.extend(chain)
        prev = a.src
        fn = a.fn
        aid = a.aid
        for relay in chain:
            arcs.append(Arc(prev, relay.id, fn, aid))
            prev = relay.id
            fn = Identity(width)
            aid = next_aid
            next_aid += 1
        arcs.append(Arc(prev, a.dst, fn, aid))

    return validate_graph(Graph(tuple(nodes), tuple(arcs)))


def normalize_all(g: Graph) -> Graph:
    """Full pipeline; safe to run on already-normal graphs."""
    g = normalize_io(g)
    g = concat_to_addition(g)
    assign_levels(g)
    g = eliminate_jumps(g)
    assign_levels(g)
    return g


# ---------------------------------------------------------------------------
# invariant checking


@dataclass
class OplusReport:
    """Violations of addition-node level-graph structure.

    parallel_arcs: ordered pairs connected by more than one arc.
    multi_parent: non-addition, non-input nodes with in-degree != 1.
    jumps: arcs spanning >= 2 levels.
    non_addition_jump_targets: informational; jump targets that are not
        addition nodes (chains will replace such arcs either way).
    """

    parallel_arcs: list[tuple[int, int]] = field(default_factory=list)
    multi_parent: list[int] = field(default_factory=list)
    jumps: list[tuple[int, int]] = field(default_factory=list)
    non_addition_jump_targets: list[int] = field(default_factory=list)
    concat_nodes: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.parallel_arcs or self.multi_parent or self.jumps or self.concat_nodes)


def check_oplus_invariants(g: Graph) -> OplusReport:
    report = OplusReport()
    seen_pairs: set[tuple[int, int]] = set()
    for a in g.arcs:
        pair = (a.src, a.dst)
        if pair in seen_pairs:
            if pair not in report.parallel_arcs:
                report.parallel_arcs.append(pair)
        seen_pairs.add(pair)
    for n in g.nodes:
        if n.kind is NodeKind.CONCAT:
            report.concat_nodes.append(n.id)
        if n.kind in (NodeKind.INPUT, NodeKind.ADDITION):
            continue
        if len(g.in_arcs[n.id]) != 1:
            report.multi_parent.append(n.id)
    lm = assign_levels(g)
    for a in g.arcs:
        if lm.level[a.dst] - lm.level[a.src] >= 2:
            report.jumps.append((a.src, a.dst))
            dst = g.node_by_id[a.dst]
            if dst.kind is not NodeKind.ADDITION and a.dst not in report.non_addition_jump_targets:
                report.non_addition_jump_targets.append(a.dst)
    return report


def is_normalized(g: Graph) -> bool:
    return check_oplus_invariants(g).ok


def require_normalized(g: Graph) -> LevelMap:
    report = check_oplus_invariants(g)
    if not report.ok:
        problems = []
        if report.concat_nodes:
            problems.append(f"concat nodes {report.concat_nodes}")
        if report.parallel_arcs:
            problems.append(f"parallel arcs {report.parallel_arcs}")
        if report.multi_parent:
            problems.append(f"multi-parent nodes {report.multi_parent}")
        if report.jumps:
            problems.append(f"level jumps {report.jumps}")
        raise NotNormalized("; ".join(problems))
    return assign_levels(g)
