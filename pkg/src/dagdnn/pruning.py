"""Structural pruning of dead level-structures and ticket verification.

A node is dead at training time t when its lifted value is zero on every
training input.  Removing such a node, its incoming arcs, and whatever
becomes disconnected downstream leaves the training loss unchanged
(exactly so at tolerance zero, when the severed arcs map zero to zero),
while the parameter count strictly drops whenever the removed arcs
carried parameters.  The pruned network plus a rewound checkpoint is a
candidate winning ticket; ``verify_ticket`` checks the bound that makes
it one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .engine import forward
from .errors import (
    ConditionsUnsatisfied,
    NoCheckpoint,
    WouldDisconnectOutput,
)
from .graph import Graph, NodeKind, graph_from_json, graph_to_json, validate_graph
from .passes import require_normalized
from .training import (
    Theta,
    TrainData,
    TrainRun,
    _theta_from_json,
    _theta_to_json,
    bind_params,
    extract_params,
    fidelity,
    param_count,
)

__all__ = [
    "DeadNodeReport",
    "detect_dead_nodes",
    "prune",
    "RewindTicket",
    "rewind_prune",
    "TicketReport",
    "verify_ticket",
    "ticket_to_json",
    "ticket_from_json",
]


@dataclass
class DeadNodeReport:
    """Nodes at one level whose values vanish on the whole training set."""

    level: int
    node_ids: tuple[int, ...]
    tol: float
    t: int = 0
    max_abs: dict[int, float] = field(default_factory=dict)

    @property
    def exact(self) -> bool:
        """Zero tolerance: removal provably leaves the training loss alone."""
        return self.tol == 0.0

    def __bool__(self) -> bool:
        return bool(self.node_ids)


def detect_dead_nodes(g: Graph, data: TrainData, level: int, tol: float = 0.0, t: int = 0) -> DeadNodeReport:
    """Find the nodes at ``level`` that output zero on every training input.

    Values come from lifting each input through the level steps, so the
    scan reads exactly what the factorized evaluation produces.
    """
    lm = require_normalized(g)
    candidates = [nid for nid in lm.order if lm.level[nid] == level]
    peak = {nid: 0.0 for nid in candidates}
    for x in data.inputs:
        _, trace = forward(g, x, with_trace=True)
        for nid in candidates:
            peak[nid] = max(peak[nid], float(np.max(np.abs(trace.node_values[nid]))))
    dead = tuple(nid for nid in candidates if peak[nid] <= tol)
    return DeadNodeReport(level, dead, tol, t, peak)


def prune(g: Graph, z: DeadNodeReport, theta: Theta | None = None) -> tuple[Graph, Theta]:
    """Remove the reported nodes and everything that stops making sense.

    The listed nodes lose their incoming arcs and disappear.  Downstream,
    any non-addition node that loses a parent is undefined and goes too;
    an addition node survives on its remaining parents but is removed
    once it has none.  Upstream, nodes left feeding nothing are cleaned
    away.  The returned parameters are the restriction of ``theta`` to
    the surviving arcs.
    """
    if not z.node_ids:
        raise ConditionsUnsatisfied("nothing to prune: the report lists no dead nodes")
    ids = set(z.node_ids)
    unknown = ids - set(g.node_by_id)
    if unknown:
        raise KeyError(f"unknown node ids {sorted(unknown)}")
    if g.output_id in ids:
        raise WouldDisconnectOutput("the output node itself is listed as dead")
    if g.input_id in ids:
        raise WouldDisconnectOutput("refusing to remove the input node")
    if theta is None:
        theta = extract_params(g)

    removed = set(ids)
    changed = True
    while changed:
        changed = False
        for node in g.nodes:
            if node.id in removed or node.id == g.input_id:
                continue
            incoming = g.in_arcs[node.id]
            alive = [a for a in incoming if a.src not in removed]
            if node.kind is NodeKind.ADDITION:
                doomed = not alive
            else:
                doomed = len(alive) < len(incoming)
            if doomed:
                removed.add(node.id)
                changed = True
    if g.output_id in removed:
        raise WouldDisconnectOutput("pruning would cut every path to the output")

    # upstream sweep: drop nodes whose outputs all led into removed territory
    while True:
        dead_ends = [
            n.id
            for n in g.nodes
            if n.id not in removed
            and n.id != g.output_id
            and all(a.dst in removed for a in g.out_arcs[n.id])
        ]
        if not dead_ends:
            break
        removed.update(dead_ends)

    nodes1 = tuple(n for n in g.nodes if n.id not in removed)
    arcs1 = tuple(a for a in g.arcs if a.src not in removed and a.dst not in removed)
    g1 = validate_graph(Graph(nodes1, arcs1))
    surviving = {a.aid for a in arcs1}
    theta1 = {aid: {k: np.array(v) for k, v in p.items()} for aid, p in theta.items() if aid in surviving}
    return g1, theta1


@dataclass
class RewindTicket:
    """A pruned structure plus the rewound parameters that seed its retraining."""

    graph: Graph
    theta: Theta
    report: DeadNodeReport
    t: int
    loss_before: float
    loss_after: float

    @property
    def loss_ok(self) -> bool:
        return self.loss_after <= self.loss_before


def rewind_prune(
    run0: TrainRun,
    t: int = 0,
    level: int | None = None,
    tol: float = 0.0,
    rescan: bool = False,
) -> RewindTicket:
    """Prune the first dead level found at checkpoint t of a finished run.

    Levels are scanned from the top down unless one is pinned; the first
    nonempty report is pruned and the surviving parameters are rewound to
    the checkpoint.  With ``rescan`` the scan repeats on the pruned graph
    until no level reports dead nodes, catching cascades within one loop.
    """
    if t not in run0.checkpoints:
        raise NoCheckpoint(f"run has no checkpoint at step {t}")
    theta_t = run0.checkpoints[t]
    g_t = bind_params(run0.graph, theta_t)
    lam = run0.config.lam
    loss_before = fidelity(g_t, run0.data) + lam * param_count(theta_t)

    g_cur, theta_cur = g_t, theta_t
    first_report = None
    while True:
        lm = require_normalized(g_cur)
        levels = [level] if level is not None else list(range(lm.depth, 0, -1))
        hit = None
        for n in levels:
            rep = detect_dead_nodes(g_cur, run0.data, n, tol, t)
            if rep:
                hit = rep
                break
        if hit is None:
            if first_report is None:
                raise ConditionsUnsatisfied(
                    "no dead nodes at any scanned level; the pruning hypothesis does not apply"
                )
            break
        g_cur, theta_cur = prune(g_cur, hit, extract_params(g_cur))
        if first_report is None:
            first_report = hit
        if not rescan:
            break

    loss_after = fidelity(g_cur, run0.data) + lam * param_count(theta_cur)
    return RewindTicket(g_cur, theta_cur, first_report, t, loss_before, loss_after)


@dataclass
class TicketReport:
    """Pass/fail record for the weak winning-ticket conditions."""

    c: float
    epsilon0: float
    r0: float
    r1: float
    initial_loss_ok: bool
    fidelity_bound_ok: bool
    steps_ok: bool
    fidelity1: float
    bound: float
    steps0: int
    steps1: int
    notes: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.initial_loss_ok and self.fidelity_bound_ok and self.steps_ok


def verify_ticket(run0: TrainRun, run1: TrainRun, lam: float | None = None) -> TicketReport:
    """Check the three conditions that make the pruned run a winning ticket.

    With sizes written through the penalty R(s) = lam * s, the pruned run
    must start no worse than the original's best loss, finish with
    fidelity at most epsilon0 + R(|theta0|) - R(|theta1|) (the (c+1) *
    epsilon0 bound in additive form), and take no more steps.
    """
    if lam is None:
        lam = run0.config.lam
    best = min(run0.history, key=lambda rec: rec["loss"])
    eps0 = best["fidelity"]
    r0 = lam * param_count(run0.checkpoints[0])
    r1 = lam * param_count(run1.checkpoints[0])
    if eps0 > 0.0:
        c = (r0 - r1) / eps0
    else:
        c = float("inf") if r0 > r1 else 0.0
    bound = eps0 + (r0 - r1)
    fid1 = run1.final_fidelity
    notes = []
    if r0 == r1:
        notes.append("parameter count unchanged; nothing was pruned")
    if run1.config.lam != lam:
        notes.append("runs were trained with different penalty weights")
    return TicketReport(
        c=c,
        epsilon0=eps0,
        r0=r0,
        r1=r1,
        initial_loss_ok=run1.history[0]["loss"] <= best["loss"],
        fidelity_bound_ok=fid1 <= bound,
        steps_ok=run1.steps <= run0.steps,
        fidelity1=fid1,
        bound=bound,
        steps0=run0.steps,
        steps1=run1.steps,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# serialization


def ticket_to_json(ticket: RewindTicket) -> dict:
    return {
        "graph": graph_to_json(ticket.graph),
        "theta": _theta_to_json(ticket.theta),
        "report": {
            "level": ticket.report.level,
            "node_ids": list(ticket.report.node_ids),
            "tol": ticket.report.tol,
            "t": ticket.report.t,
            "max_abs": {str(k): v for k, v in ticket.report.max_abs.items()},
            "exact": ticket.report.exact,
        },
        "t": ticket.t,
        "loss_before": ticket.loss_before,
        "loss_after": ticket.loss_after,
    }


def ticket_from_json(obj: dict) -> RewindTicket:
    rep = obj["report"]
    report = DeadNodeReport(
        level=int(rep["level"]),
        node_ids=tuple(int(i) for i in rep["node_ids"]),
        tol=float(rep["tol"]),
        t=int(rep["t"]),
        max_abs={int(k): float(v) for k, v in rep["max_abs"].items()},
    )
    return RewindTicket(
        graph=graph_from_json(obj["graph"]),
        theta=_theta_from_json(obj["theta"]),
        report=report,
        t=int(obj["t"]),
        loss_before=float(obj["loss_before"]),
        loss_after=float(obj["loss_after"]),
    )


def save_ticket(ticket: RewindTicket, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(ticket_to_json(ticket), fh, sort_keys=True)


def load_ticket(path: str) -> RewindTicket:
    with open(path) as fh:
        return ticket_from_json(json.load(fh))
