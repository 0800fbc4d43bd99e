"""Shared fixtures, random-network generators, and independent oracles.

Oracles here deliberately avoid the library's own machinery: reachability
runs a hand-rolled DFS, path counting enumerates paths one by one, and
gradients come from central finite differences.
"""

from __future__ import annotations

import numpy as np
import pytest

import dagdnn as dd
from dagdnn.cpwl import preset

RELU = preset("relu")


@pytest.fixture
def rng():
    return np.random.default_rng(1234567)


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(1.0, float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / denom


# ---------------------------------------------------------------------------
# random network generators


def random_arc_fn(rng, a: int, b: int):
    """Draw from the acceptance base set: affine, relu-affine, identity, sigmoid-affine."""
    kinds = ["affine", "relu_affine", "sigmoid_affine"]
    if a == b:
        kinds.append("identity")
    kind = kinds[rng.integers(len(kinds))]
    if kind == "identity":
        return dd.Identity(a)
    m = rng.standard_normal((b, a)) / np.sqrt(a)
    v = 0.5 * rng.standard_normal(b)
    if kind == "affine":
        return dd.Affine(m, v)
    if kind == "relu_affine":
        return dd.ActAffine(RELU, m, v)
    return dd.Sigma("sigmoid", m, v)


def random_net(rng, min_nodes: int = 5, max_nodes: int = 25, max_dim: int = 8) -> dd.Graph:
    """Random layered DAG with one input and one output.

    Planned levels only seed the wiring; actual levels are recomputed by
    the library.  Arcs may skip levels, addition nodes draw several
    parents, and stray sinks are all gathered into the output, which
    concatenates when it ends up with more than one feed.
    """
    n = int(rng.integers(min_nodes, max_nodes + 1))
    internal = n - 2
    depth = int(rng.integers(2, min(4, internal) + 2))
    counts = np.ones(depth - 1, dtype=int)
    for _ in range(internal - (depth - 1)):
        counts[rng.integers(depth - 1)] += 1

    nodes = [(0, dd.NodeKind.INPUT, int(rng.integers(1, max_dim + 1)))]
    level_of = {0: 0}
    next_id = 1
    for li, c in enumerate(counts, start=1):
        for _ in range(c):
            kind = dd.NodeKind.ADDITION if (li > 1 and rng.random() < 0.35) else dd.NodeKind.COMPUTE
            nodes.append((next_id, kind, int(rng.integers(1, max_dim + 1))))
            level_of[next_id] = li
            next_id += 1

    arcs = []
    for nid, kind, dim in nodes[1:]:
        lower = [m for m in level_of if level_of[m] < level_of[nid]]
        if kind is dd.NodeKind.ADDITION:
            k = min(len(lower), int(rng.integers(2, 4)))
            parents = rng.choice(lower, size=k, replace=False)
        else:
            parents = [lower[rng.integers(len(lower))]]
        for p in parents:
            src_dim = nodes[p][2]
            arcs.append((int(p), nid, random_arc_fn(rng, src_dim, dim)))

    srcs = {a[0] for a in arcs}
    sinks = [nid for nid, _, _ in nodes if nid not in srcs]
    out_id = next_id
    if len(sinks) == 1:
        out_dim = int(rng.integers(1, max_dim + 1))
        src_dim = nodes[sinks[0]][2]
        arcs.append((sinks[0], out_id, random_arc_fn(rng, src_dim, out_dim)))
    else:
        widths = [int(rng.integers(1, 4)) for _ in sinks]
        out_dim = sum(widths)
        for s, w in zip(sinks, widths):
            arcs.append((s, out_id, random_arc_fn(rng, nodes[s][2], w)))
    nodes.append((out_id, dd.NodeKind.OUTPUT, out_dim))
    return dd.build_graph(nodes, arcs)


def random_concat_net(rng, n_concat: int | None = None) -> dd.Graph:
    """Like random_net but with explicit concatenation nodes inside."""
    if n_concat is None:
        n_concat = int(rng.integers(1, 6))
    base = int(rng.integers(4, 10))
    depth = int(rng.integers(2, 5))
    nodes = [(0, dd.NodeKind.INPUT, int(rng.integers(1, 5)))]
    level_of = {0: 0}
    next_id = 1
    plan: list[tuple[int, str]] = []
    for li in range(1, depth):
        for _ in range(max(1, base // depth)):
            plan.append((li, "plain"))
    concat_slots = [i for i, (li, _) in enumerate(plan) if li > 0]
    for i in rng.choice(concat_slots, size=min(n_concat, len(concat_slots)), replace=False):
        plan[i] = (plan[i][0], "concat")

    arcs = []
    node_dims = {0: nodes[0][2]}
    for li, what in plan:
        nid = next_id
        next_id += 1
        lower = [m for m in level_of if level_of[m] < li]
        if what == "concat" and len(lower) >= 2:
            k = min(len(lower), int(rng.integers(2, 4)))
            parents = rng.choice(lower, size=k, replace=False)
            widths = [int(rng.integers(1, 4)) for _ in parents]
            dim = sum(widths)
            nodes.append((nid, dd.NodeKind.CONCAT, dim))
            for p, w in zip(parents, widths):
                arcs.append((int(p), nid, random_arc_fn(rng, node_dims[int(p)], w)))
        else:
            dim = int(rng.integers(1, 6))
            kind = dd.NodeKind.ADDITION if (li > 1 and rng.random() < 0.25) else dd.NodeKind.COMPUTE
            if kind is dd.NodeKind.ADDITION and len(lower) >= 2:
                k = min(len(lower), int(rng.integers(2, 4)))
                parents = rng.choice(lower, size=k, replace=False)
            else:
                kind = dd.NodeKind.COMPUTE
                parents = [lower[rng.integers(len(lower))]]
            nodes.append((nid, kind, dim))
            for p in parents:
                arcs.append((int(p), nid, random_arc_fn(rng, node_dims[int(p)], dim)))
        node_dims[nid] = dim
        level_of[nid] = li

    srcs = {a[0] for a in arcs}
    sinks = [nid for nid, _, _ in nodes if nid not in srcs]
    out_id = next_id
    if len(sinks) == 1:
        out_dim = int(rng.integers(1, 5))
        arcs.append((sinks[0], out_id, random_arc_fn(rng, node_dims[sinks[0]], out_dim)))
    else:
        widths = [int(rng.integers(1, 4)) for _ in sinks]
        out_dim = sum(widths)
        for s, w in zip(sinks, widths):
            arcs.append((s, out_id, random_arc_fn(rng, node_dims[s], w)))
    nodes.append((out_id, dd.NodeKind.OUTPUT, out_dim))
    return dd.build_graph(nodes, arcs)


# ---------------------------------------------------------------------------
# the golden four-node fixture and its seven-node normal form


def golden_source() -> dd.Graph:
    """Input feeding two parallel branches gathered by the output.

    The output concatenates, so normalization replaces it with relays,
    block embeddings, and a single addition node: seven nodes total.
    """
    a1 = np.array([[1.0, -0.5], [0.25, 1.0], [0.0, 2.0]])
    b1 = np.array([0.1, -0.2, 0.3])
    a2 = np.array([[-1.0, 0.5]])
    c1 = np.array([[0.5, 0.0, -1.0], [1.5, -0.25, 0.0]])
    c2 = np.array([[2.0]])
    d2 = np.array([-0.75])
    nodes = [
        (0, dd.NodeKind.INPUT, 2),
        (1, dd.NodeKind.COMPUTE, 3),
        (2, dd.NodeKind.COMPUTE, 1),
        (3, dd.NodeKind.OUTPUT, 3),
    ]
    arcs = [
        (0, 1, dd.ActAffine(RELU, a1, b1)),
        (0, 2, dd.Linear(a2)),
        (1, 3, dd.Linear(c1)),
        (2, 3, dd.Affine(c2, d2)),
    ]
    return dd.build_graph(nodes, arcs)


def golden_net() -> dd.Graph:
    return dd.normalize_all(golden_source())


def level_positions(g: dd.Graph) -> dict[int, int]:
    """Node id -> 1-based position in (level, id) order."""
    lm = dd.assign_levels(g)
    return {nid: k + 1 for k, nid in enumerate(lm.order)}


# ---------------------------------------------------------------------------
# pruning fixtures


def dead_unit_net(rng, n_hidden: int = 4, dim_in: int = 2, n_samples: int = 8):
    """One hidden ReLU unit is dead by construction; data targets sit close
    to the initial function so the regularizer drop dominates any training
    improvement.  Returns (graph, data, dead node id)."""
    inputs = rng.standard_normal((n_samples, dim_in))
    w = rng.standard_normal((n_hidden, dim_in))
    b = 0.1 + 0.2 * rng.random(n_hidden)  # live units lean positive
    dead = n_hidden - 1
    b[dead] = -(float(np.max(np.abs(inputs @ w[dead]))) + 1.0)

    nodes = [(0, dd.NodeKind.INPUT, dim_in)]
    arcs = []
    for j in range(n_hidden):
        nodes.append((1 + j, dd.NodeKind.COMPUTE, 1))
        arcs.append((0, 1 + j, dd.ActAffine(RELU, w[j : j + 1], b[j : j + 1])))
    add_id = 1 + n_hidden
    nodes.append((add_id, dd.NodeKind.ADDITION, 1))
    for j in range(n_hidden):
        arcs.append((1 + j, add_id, dd.Linear(rng.standard_normal((1, 1)))))
    out_id = add_id + 1
    nodes.append((out_id, dd.NodeKind.OUTPUT, 1))
    arcs.append((add_id, out_id, dd.Identity(1)))
    g = dd.build_graph(nodes, arcs)

    # sanity: exactly the intended unit is dead at initialization
    for j in range(n_hidden):
        vals = [dd.subgraph_eval(g, 1 + j, 0, x) for x in inputs]
        alive = any(np.any(v > 0) for v in vals)
        assert alive == (j != dead), f"unit {j} unexpectedly {'live' if not alive else 'dead'}"

    y0 = np.stack([dd.interpret(g, x) for x in inputs])
    targets = y0 + 1e-2 * rng.standard_normal(y0.shape)
    return g, dd.TrainData(inputs, targets), 1 + dead


def two_dead_unit_net(rng, dim_in: int = 2, n_samples: int = 8):
    """Dead units at two different levels so two rewind loops each find one.

    Level 1 holds three ReLU units (the last dead); level 2 holds the
    addition of the live ones plus a second ReLU unit, dead against the
    range of unit 1.  Returns (graph, data, (shallow dead id, deep dead id)).
    """
    inputs = rng.standard_normal((n_samples, dim_in))
    w = rng.standard_normal((3, dim_in))
    b = 0.1 + 0.2 * rng.random(3)
    b[2] = -(float(np.max(np.abs(inputs @ w[2]))) + 1.0)

    # second dead unit reads live unit 1, so its range is known up front
    v = rng.standard_normal((1, 1))
    h1_vals = np.maximum(inputs @ w[0] + b[0], 0.0)
    b5 = -(float(np.max(np.abs(h1_vals * v[0, 0]))) + 1.0)

    nodes = [(0, dd.NodeKind.INPUT, dim_in)]
    arcs = []
    for j in range(3):
        nodes.append((1 + j, dd.NodeKind.COMPUTE, 1))
        arcs.append((0, 1 + j, dd.ActAffine(RELU, w[j : j + 1], b[j : j + 1])))
    nodes.append((4, dd.NodeKind.ADDITION, 1))
    for j in range(3):
        arcs.append((1 + j, 4, dd.Linear(rng.standard_normal((1, 1)))))
    nodes.append((5, dd.NodeKind.COMPUTE, 1))
    arcs.append((1, 5, dd.ActAffine(RELU, v, np.array([b5]))))
    nodes.append((6, dd.NodeKind.ADDITION, 1))
    arcs.append((4, 6, dd.Linear(rng.standard_normal((1, 1)))))
    arcs.append((5, 6, dd.Linear(rng.standard_normal((1, 1)))))
    nodes.append((7, dd.NodeKind.OUTPUT, 1))
    arcs.append((6, 7, dd.Identity(1)))
    g = dd.build_graph(nodes, arcs)

    y0 = np.stack([dd.interpret(g, x) for x in inputs])
    targets = y0 + 5e-3 * rng.standard_normal(y0.shape)
    return g, dd.TrainData(inputs, targets), (3, 5)


# ---------------------------------------------------------------------------
# oracles


def dfs_closure(g: dd.Graph) -> np.ndarray:
    """Reflexive-transitive closure by depth-first search, one source at a time."""
    ids = g.sorted_ids
    pos = {nid: k for k, nid in enumerate(ids)}
    out = np.zeros((len(ids), len(ids)), dtype=int)
    for j in ids:
        seen = {j}
        stack = [j]
        while stack:
            cur = stack.pop()
            for a in g.out_arcs[cur]:
                if a.dst not in seen:
                    seen.add(a.dst)
                    stack.append(a.dst)
        for i in seen:
            out[pos[i], pos[j]] = 1
    return out


def enumerate_paths(g: dd.Graph, src: int, dst: int, k: int) -> int:
    """Count length-k arc sequences from src to dst by brute force."""
    if k == 0:
        return int(src == dst)
    total = 0
    for a in g.out_arcs[src]:
        total += enumerate_paths(g, a.dst, dst, k - 1)
    return total


def fd_gradient(g: dd.Graph, data: dd.TrainData, lam: float, h: float = 1e-6):
    """Central finite differences of the loss over every scalar parameter.

    Binding freezes arrays, so every probe rebuilds the perturbed entry.
    """
    theta = dd.extract_params(g)

    def loss_at(aid, name, k, delta):
        probe = {a: dict(p) for a, p in theta.items()}
        arr = probe[aid][name].copy()
        arr.reshape(-1)[k] += delta
        probe[aid][name] = arr
        return dd.loss(dd.bind_params(g, probe), data, lam)

    grad = {}
    for aid, p in theta.items():
        grad[aid] = {}
        for name, arr in p.items():
            ga = np.zeros_like(arr)
            gflat = ga.reshape(-1)
            for k in range(arr.size):
                gflat[k] = (loss_at(aid, name, k, h) - loss_at(aid, name, k, -h)) / (2.0 * h)
            grad[aid][name] = ga
    return grad


def kink_margin(g: dd.Graph, data: dd.TrainData) -> float:
    """Smallest distance of any piecewise-linear pre-activation to a breakpoint."""
    margin = np.inf
    order = dd.topological_order(g)
    for x in data.inputs:
        values = {}
        for nid in order:
            incoming = g.in_arcs[nid]
            if not incoming:
                values[nid] = x
                continue
            node = g.node_by_id[nid]
            if node.kind is dd.NodeKind.ADDITION:
                values[nid] = sum((a.fn.apply(values[a.src]) for a in incoming), np.zeros(node.dim))
            elif len(incoming) > 1:
                values[nid] = np.concatenate([a.fn.apply(values[a.src]) for a in incoming])
            else:
                (arc,) = incoming
                values[nid] = arc.fn.apply(values[arc.src])
            for a in incoming:
                fn = a.fn
                if isinstance(fn, dd.ActAffine):
                    z = fn.matrix @ values[a.src] + fn.bias
                elif isinstance(fn, dd.Activation):
                    z = values[a.src]
                else:
                    continue
                for bp in fn.cpwl.breakpoints:
                    margin = min(margin, float(np.min(np.abs(z - bp))))
    return margin
