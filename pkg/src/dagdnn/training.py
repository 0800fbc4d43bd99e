"""Gradient training of arc parameters with a backtracking descent loop.

The objective is mean squared error over a dataset plus a structural
penalty proportional to the number of scalar parameters.  The penalty
does not depend on parameter values, only on how many survive pruning,
so its gradient is zero and the descent direction comes entirely from
the fidelity term.

Gradients are exact reverse-mode sweeps over the graph; piecewise-linear
activations use their right derivative at kinks.  The step size halves
until the candidate strictly decreases the loss and doubles after every
accepted step, so each recorded iterate improves on the previous one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, DivergedLoss, EmptyDataset
from .graph import (
    Arc,
    Graph,
    NodeKind,
    _CONCAT_KINDS,
    graph_from_json,
    graph_to_json,
    topological_order,
)

__all__ = [
    "TrainData",
    "TrainConfig",
    "TrainRun",
    "extract_params",
    "bind_params",
    "param_count",
    "fidelity",
    "loss",
    "loss_and_grad",
    "train",
    "train_data_to_json",
    "train_data_from_json",
    "train_run_to_json",
    "train_run_from_json",
]

Theta = dict[int, dict[str, np.ndarray]]


@dataclass
class TrainData:
    """Paired samples; rows of ``inputs`` line up with rows of ``targets``."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DimMismatch(
                f"{self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets"
            )
        if self.inputs.shape[0] == 0:
            raise EmptyDataset("need at least one sample")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class TrainConfig:
    lam: float = 0.0
    max_steps: int = 100
    init_step: float = 0.5
    grad_tol: float = 1e-10
    max_halvings: int = 50
    checkpoint_every: int = 1


@dataclass
class TrainRun:
    """Everything produced by one training loop, checkpoints included."""

    graph: Graph
    data: TrainData
    config: TrainConfig
    history: list[dict] = field(default_factory=list)
    checkpoints: dict[int, Theta] = field(default_factory=dict)
    theta_final: Theta = field(default_factory=dict)
    steps: int = 0
    stop_reason: str = ""
    seed: int | None = None

    @property
    def final_loss(self) -> float:
        return self.history[-1]["loss"]

    @property
    def final_fidelity(self) -> float:
        return self.history[-1]["fidelity"]

    @property
    def best_loss(self) -> float:
        return min(rec["loss"] for rec in self.history)

    @property
    def best_fidelity(self) -> float:
        """Fidelity at the best-loss step (the last one, per the descent contract)."""
        return min(self.history, key=lambda rec: rec["loss"])["fidelity"]

    def final_graph(self) -> Graph:
        return bind_params(self.graph, self.theta_final)


def extract_params(g: Graph) -> Theta:
    """Copy every trainable arc's parameters, keyed by arc id."""
    theta: Theta = {}
    for a in g.arcs:
        p = a.fn.params()
        if p:
            theta[a.aid] = {k: np.array(v, dtype=float) for k, v in p.items()}
    return theta


def bind_params(g: Graph, theta: Theta) -> Graph:
    """New graph whose arcs carry the parameters in ``theta``.

    Arcs missing from ``theta`` keep their current functions, so a theta
    restricted to surviving arc ids binds cleanly onto a pruned graph.
    """
    arcs = []
    for a in g.arcs:
        if a.aid in theta:
            arcs.append(Arc(a.src, a.dst, a.fn.with_params(theta[a.aid]), a.aid))
        else:
            arcs.append(a)
    return Graph(g.nodes, tuple(arcs))


def param_count(theta: Theta) -> int:
    return sum(arr.size for p in theta.values() for arr in p.values())


def _theta_step(theta: Theta, grad: Theta, eta: float) -> Theta:
    return {
        aid: {k: theta[aid][k] - eta * grad[aid][k] for k in theta[aid]} for aid in theta
    }


def _grad_norm(grad: Theta) -> float:
    total = 0.0
    for p in grad.values():
        for arr in p.values():
            total += float(np.sum(arr * arr))
    return float(np.sqrt(total))


def _forward_cached(g: Graph, order, x):
    values: dict[int, np.ndarray] = {}
    caches: dict[int, object] = {}
    for nid in order:
        incoming = g.in_arcs[nid]
        if not incoming:
            values[nid] = x
            continue
        node = g.node_by_id[nid]
        if node.kind is NodeKind.ADDITION:
            acc = np.zeros(node.dim)
            for a in incoming:
                y, c = a.fn.forward(values[a.src])
                caches[a.aid] = c
                acc = acc + y
            values[nid] = acc
        elif node.kind in _CONCAT_KINDS and len(incoming) > 1:
            parts = []
            for a in incoming:
                y, c = a.fn.forward(values[a.src])
                caches[a.aid] = c
                parts.append(y)
            values[nid] = np.concatenate(parts)
        else:
            (arc,) = incoming
            y, c = arc.fn.forward(values[arc.src])
            caches[arc.aid] = c
            values[nid] = y
    return values, caches


def fidelity(g: Graph, data: TrainData) -> float:
    """Mean squared error of the graph on the dataset."""
    order = topological_order(g)
    total = 0.0
    for x, y in zip(data.inputs, data.targets):
        values, _ = _forward_cached(g, order, x)
        r = values[g.output_id] - y
        total += float(np.dot(r, r))
    return total / len(data)


def loss(g: Graph, data: TrainData, lam: float = 0.0) -> float:
    return fidelity(g, data) + lam * param_count(extract_params(g))


def loss_and_grad(g: Graph, data: TrainData, lam: float = 0.0):
    """Loss plus its gradient with respect to every arc parameter.

    The structural penalty is constant in the parameter values, so the
    returned gradient is exactly the fidelity gradient.
    """
    order = topological_order(g)
    rev = list(reversed(order))
    n = len(data)
    theta = extract_params(g)
    grad: Theta = {
        aid: {k: np.zeros_like(v) for k, v in p.items()} for aid, p in theta.items()
    }
    total = 0.0
    for x, y in zip(data.inputs, data.targets):
        values, caches = _forward_cached(g, order, x)
        r = values[g.output_id] - y
        total += float(np.dot(r, r))
        adjoint: dict[int, np.ndarray] = {nid: np.zeros(g.dim_of(nid)) for nid in values}
        adjoint[g.output_id] = (2.0 / n) * r
        for nid in rev:
            incoming = g.in_arcs[nid]
            if not incoming:
                continue
            gvec = adjoint[nid]
            node = g.node_by_id[nid]
            if node.kind in _CONCAT_KINDS and len(incoming) > 1:
                off = 0
                for a in incoming:
                    seg = gvec[off : off + a.fn.out_dim]
                    off += a.fn.out_dim
                    dx, dp = a.fn.vjp(caches[a.aid], seg)
                    adjoint[a.src] = adjoint[a.src] + dx
                    for k, v in dp.items():
                        grad[a.aid][k] += v
            else:
                # addition fans the same adjoint to every arc; single-arc
                # nodes are the one-term case of the same rule
                for a in incoming:
                    dx, dp = a.fn.vjp(caches[a.aid], gvec)
                    adjoint[a.src] = adjoint[a.src] + dx
                    for k, v in dp.items():
                        grad[a.aid][k] += v
    value = total / n + lam * param_count(theta)
    return value, grad


def train(
    g: Graph, data: TrainData, config: TrainConfig | None = None, seed: int | None = None
) -> TrainRun:
    """Backtracking gradient descent on the arc parameters of ``g``.

    Each iteration halves the step until the loss strictly decreases,
    giving a monotone history; when ``max_halvings`` halvings in a row
    fail to find a descent step the loop stops.  Checkpoints of the full
    parameter set are stored at step zero, every ``checkpoint_every``
    accepted steps, and at the end.

    The loop itself is deterministic; ``seed`` is recorded so a run file
    names the randomness that produced its graph and data.
    """
    cfg = config or TrainConfig()
    if data.inputs.shape[1] != g.dim_of(g.input_id):
        raise DimMismatch("dataset input width does not match the graph")
    if data.targets.shape[1] != g.dim_of(g.output_id):
        raise DimMismatch("dataset target width does not match the graph")
    theta = extract_params(g)
    run = TrainRun(graph=g, data=data, config=cfg, seed=seed)
    run.checkpoints[0] = _copy_theta(theta)

    cur_loss, grad = loss_and_grad(bind_params(g, theta), data, cfg.lam)
    if not np.isfinite(cur_loss):
        raise DivergedLoss(f"initial loss is {cur_loss}")
    fid = cur_loss - cfg.lam * param_count(theta)
    run.history.append({"step": 0, "loss": cur_loss, "fidelity": fid, "step_size": 0.0, "halvings": 0})

    eta = cfg.init_step
    step = 0
    while step < cfg.max_steps:
        if _grad_norm(grad) <= cfg.grad_tol:
            run.stop_reason = "gradient"
            break
        halvings = 0
        accepted = None
        while halvings <= cfg.max_halvings:
            cand = _theta_step(theta, grad, eta)
            cand_loss = loss(bind_params(g, cand), data, cfg.lam)
            if np.isfinite(cand_loss) and cand_loss < cur_loss:
                accepted = (cand, cand_loss)
                break
            eta *= 0.5
            halvings += 1
        if accepted is None:
            run.stop_reason = "no_descent"
            break
        theta, cur_loss = accepted
        step += 1
        fid = cur_loss - cfg.lam * param_count(theta)
        run.history.append(
            {"step": step, "loss": cur_loss, "fidelity": fid, "step_size": eta, "halvings": halvings}
        )
        if step % cfg.checkpoint_every == 0:
            run.checkpoints[step] = _copy_theta(theta)
        _, grad = loss_and_grad(bind_params(g, theta), data, cfg.lam)
        eta *= 2.0
    else:
        run.stop_reason = "max_steps"

    run.steps = step
    run.theta_final = _copy_theta(theta)
    run.checkpoints[step] = _copy_theta(theta)
    return run


def _copy_theta(theta: Theta) -> Theta:
    return {aid: {k: np.array(v) for k, v in p.items()} for aid, p in theta.items()}


# ---------------------------------------------------------------------------
# serialization


def train_data_to_json(data: TrainData) -> dict:
    return {"inputs": data.inputs.tolist(), "targets": data.targets.tolist()}


def train_data_from_json(obj: dict) -> TrainData:
    return TrainData(np.asarray(obj["inputs"]), np.asarray(obj["targets"]))


def _theta_to_json(theta: Theta) -> dict:
    return {str(aid): {k: v.tolist() for k, v in p.items()} for aid, p in theta.items()}


def _theta_from_json(obj: dict) -> Theta:
    return {
        int(aid): {k: np.asarray(v, dtype=float) for k, v in p.items()}
        for aid, p in obj.items()
    }


def train_run_to_json(run: TrainRun) -> dict:
    """Self-contained record: the graph and data ride along with the curves."""
    return {
        "graph": graph_to_json(run.graph),
        "data": train_data_to_json(run.data),
        "config": {
            "lam": run.config.lam,
            "max_steps": run.config.max_steps,
            "init_step": run.config.init_step,
            "grad_tol": run.config.grad_tol,
            "max_halvings": run.config.max_halvings,
            "checkpoint_every": run.config.checkpoint_every,
        },
        "history": run.history,
        "checkpoints": {str(s): _theta_to_json(t) for s, t in run.checkpoints.items()},
        "theta_final": _theta_to_json(run.theta_final),
        "steps": run.steps,
        "stop_reason": run.stop_reason,
        "seed": run.seed,
    }


def train_run_from_json(obj: dict) -> TrainRun:
    cfg = TrainConfig(**obj["config"])
    run = TrainRun(
        graph=graph_from_json(obj["graph"]),
        data=train_data_from_json(obj["data"]),
        config=cfg,
        history=list(obj["history"]),
        checkpoints={int(s): _theta_from_json(t) for s, t in obj["checkpoints"].items()},
        theta_final=_theta_from_json(obj["theta_final"]),
        steps=int(obj["steps"]),
        stop_reason=obj["stop_reason"],
        seed=obj.get("seed"),
    )
    return run


def save_train_run(run: TrainRun, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(train_run_to_json(run), fh, sort_keys=True)


def load_train_run(path: str) -> TrainRun:
    with open(path) as fh:
        return train_run_from_json(json.load(fh))
