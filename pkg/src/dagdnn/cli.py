"""Command-line front end.

Every subcommand reads and writes JSON (DOT export aside) so stages can
be piped through files: normalize -> factorize -> reconstruct, or
train -> prune -> verify-ticket.  Exit code 0 means success, 1 means the
inputs failed validation, 2 means a verification came back negative.
Errors print as one-line JSON diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile

import numpy as np

from .engine import (
    StateRoundTrip,
    completeness_matrix,
    forward,
    interpret,
    subgraph_eval,
    verify_inverse_steps,
)
from .errors import DagDnnError, GraphValidationError
from .graph import SCHEMA_VERSION, graph_from_json, graph_to_json, reachability, to_dot
from .lifting import (
    factorize,
    liftings_from_json,
    liftings_to_json,
    reconstruct_graph,
)
from .passes import (
    assign_levels,
    concat_to_addition,
    eliminate_jumps,
    is_normalized,
    normalize_all,
    normalize_io,
)
from .pruning import rewind_prune, ticket_to_json, verify_ticket
from .report import make_report
from .training import (
    TrainConfig,
    train,
    train_data_from_json,
    train_run_from_json,
    train_run_to_json,
)

log = logging.getLogger("dagdnn")

__all__ = ["main"]


def _setup_logging() -> None:
    wanted = os.environ.get("DAGDNN_LOG", "").strip().lower()
    level = {"debug": logging.DEBUG, "info": logging.INFO}.get(wanted, logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


def _read_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _write_json(obj, path: str | None) -> None:
    """Write to path atomically, or to stdout when no path was given."""
    text = _dump(obj)
    if path is None or path == "-":
        print(text)
        return
    _write_text(text + "\n", path)


def _write_text(text: str, path: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".dagdnn-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _diagnostic(err: BaseException) -> None:
    print(json.dumps({"error": type(err).__name__, "message": str(err)}), file=sys.stderr)


def _load_vector(path: str) -> np.ndarray:
    obj = _read_json(path)
    if isinstance(obj, dict):
        obj = obj.get("input", obj.get("x"))
    return np.asarray(obj, dtype=float)


# ---------------------------------------------------------------------------
# subcommands


def cmd_normalize(args) -> int:
    g = graph_from_json(_read_json(args.graph))
    step = {
        "io": normalize_io,
        "concat": concat_to_addition,
        "jumps": eliminate_jumps,
        "all": normalize_all,
    }[getattr(args, "pass")]
    _write_json(graph_to_json(step(g)), args.output)
    return 0


def cmd_levelize(args) -> int:
    g = graph_from_json(_read_json(args.graph))
    lm = assign_levels(g)
    _write_json(
        {
            "version": SCHEMA_VERSION,
            "depth": lm.depth,
            "levels": {str(nid): lvl for nid, lvl in lm.level.items()},
            "order": list(lm.order),
        },
        args.output,
    )
    return 0


def cmd_factorize(args) -> int:
    g = graph_from_json(_read_json(args.graph))
    steps = factorize(g)
    _write_json(liftings_to_json(g, steps), args.output)
    return 0


def cmd_verify_inverse(args) -> int:
    obj = _read_json(args.lifting)
    steps = liftings_from_json(obj)
    dims = {int(n["id"]): int(n["dim"]) for n in obj["nodes"]}
    result: StateRoundTrip = verify_inverse_steps(steps, dims, trials=args.trials, seed=args.seed)
    _write_json(
        {
            "trials": args.trials,
            "steps": len(steps),
            "max_error": result.max_error,
            "tolerance": result.tolerance,
            "ok": result.ok,
        },
        args.output,
    )
    if not result.ok:
        log.info("round-trip mismatch: max error %g", result.max_error)
        return 2
    return 0


def cmd_reconstruct(args) -> int:
    steps = liftings_from_json(_read_json(args.lifting))
    g = reconstruct_graph(steps, fold_relays=args.fold_relays)
    _write_json(graph_to_json(g), args.output)
    return 0


def cmd_eval(args) -> int:
    g = graph_from_json(_read_json(args.graph))
    x = _load_vector(args.input)
    if args.pair is not None:
        i, j = args.pair
        y = subgraph_eval(g, i, j, x)
        _write_json({"target": i, "source": j, "value": y.tolist()}, args.output)
        return 0
    if args.trace:
        y, trace = forward(g, x, with_trace=True)
        _write_json(
            {
                "output": y.tolist(),
                "levels": [
                    {"level": s.level, "blocks": {str(k): v.tolist() for k, v in s.blocks.items()}}
                    for s in trace.states
                ],
                "arc_applications": trace.arc_applications,
                "wall_time": trace.wall_time,
            },
            args.trace,
        )
        _write_json({"output": y.tolist()}, args.output)
        return 0
    y = forward(g, x) if is_normalized(g) else interpret(g, x)
    _write_json({"output": y.tolist()}, args.output)
    return 0


def cmd_complete_subgraphs(args) -> int:
    g = graph_from_json(_read_json(args.graph))
    comp = completeness_matrix(g)
    reach = reachability(g)
    ids = g.sorted_ids
    rows = []
    for a, i in enumerate(ids):
        rows.append(
            [bool(comp[(i, j)]) if reach[a, b] else None for b, j in enumerate(ids)]
        )
    _write_json({"ids": list(ids), "complete": rows}, args.output)
    return 0


def cmd_train(args) -> int:
    g = graph_from_json(_read_json(args.graph))
    data = train_data_from_json(_read_json(args.data))
    cfg = TrainConfig(
        lam=args.lam,
        max_steps=args.steps,
        init_step=args.lr,
        checkpoint_every=args.checkpoint_every,
    )
    run = train(g, data, cfg, seed=args.seed)
    _write_json(train_run_to_json(run), args.output)
    log.info("trained %d steps, stop reason %s", run.steps, run.stop_reason)
    return 0


def cmd_prune(args) -> int:
    run = train_run_from_json(_read_json(args.run))
    ticket = rewind_prune(run, t=args.at, level=args.level, tol=args.tol, rescan=args.scan_all_levels)
    _write_json(ticket_to_json(ticket), args.output)
    return 0


def cmd_verify_ticket(args) -> int:
    run0 = train_run_from_json(_read_json(args.run0))
    run1 = train_run_from_json(_read_json(args.run1))
    rep = verify_ticket(run0, run1, lam=args.lam)
    _write_json(
        {
            "c": rep.c,
            "epsilon0": rep.epsilon0,
            "r0": rep.r0,
            "r1": rep.r1,
            "initial_loss_ok": rep.initial_loss_ok,
            "fidelity_bound_ok": rep.fidelity_bound_ok,
            "steps_ok": rep.steps_ok,
            "fidelity1": rep.fidelity1,
            "bound": rep.bound,
            "steps0": rep.steps0,
            "steps1": rep.steps1,
            "notes": list(rep.notes),
            "ok": rep.ok,
        },
        args.output,
    )
    return 0 if rep.ok else 2


def cmd_export_dot(args) -> int:
    g = graph_from_json(_read_json(args.graph))
    levels = assign_levels(g).level if is_normalized(g) else None
    text = to_dot(g, levels)
    if args.output is None or args.output == "-":
        print(text)
    else:
        _write_text(text, args.output)
    return 0


def cmd_report(args) -> int:
    run = train_run_from_json(_read_json(args.run))
    paths = make_report(run, args.output, basename=args.basename)
    _write_json({"artifacts": paths}, None)
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dagdnn", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    def out(sp):
        sp.add_argument("-o", "--output", default=None, help="output path (default stdout)")

    sp = sub.add_parser("normalize", help="rewrite a graph toward the addition-node level form")
    sp.add_argument("graph")
    sp.add_argument("--pass", choices=("io", "concat", "jumps", "all"), default="all")
    out(sp)
    sp.set_defaults(func=cmd_normalize)

    sp = sub.add_parser("levelize", help="print the level map of a graph")
    sp.add_argument("graph")
    out(sp)
    sp.set_defaults(func=cmd_levelize)

    sp = sub.add_parser("factorize", help="emit the lifting steps of a normalized graph")
    sp.add_argument("graph")
    out(sp)
    sp.set_defaults(func=cmd_factorize)

    sp = sub.add_parser("verify-inverse", help="round-trip each lifting step against its inverse")
    sp.add_argument("lifting")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    out(sp)
    sp.set_defaults(func=cmd_verify_inverse)

    sp = sub.add_parser("reconstruct", help="rebuild the graph a lifting file came from")
    sp.add_argument("lifting")
    sp.add_argument("--fold-relays", action="store_true")
    out(sp)
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("eval", help="evaluate a graph (whole, traced, or one node pair)")
    sp.add_argument("graph")
    sp.add_argument("--input", required=True, help="JSON file holding the input vector")
    sp.add_argument("--trace", default=None, help="write the level-by-level trace here")
    sp.add_argument("--pair", nargs=2, type=int, metavar=("I", "J"), default=None,
                    help="evaluate the sub-graph function from node J to node I")
    out(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("complete-subgraphs", help="boolean completeness matrix of all pairs")
    sp.add_argument("graph")
    out(sp)
    sp.set_defaults(func=cmd_complete_subgraphs)

    sp = sub.add_parser("train", help="fit arc parameters by backtracking descent")
    sp.add_argument("graph")
    sp.add_argument("data")
    sp.add_argument("--steps", type=int, default=100)
    sp.add_argument("--lr", type=float, default=0.5)
    sp.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--checkpoint-every", type=int, default=1)
    out(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("prune", help="detect and remove dead nodes at a checkpoint")
    sp.add_argument("run")
    sp.add_argument("--at", type=int, default=0, help="checkpoint step to rewind to")
    sp.add_argument("--tol", type=float, default=0.0)
    sp.add_argument("--level", type=int, default=None, help="pin the scan to one level")
    sp.add_argument("--scan-all-levels", action="store_true",
                    help="rescan after each prune until no level reports dead nodes")
    out(sp)
    sp.set_defaults(func=cmd_prune)

    sp = sub.add_parser("verify-ticket", help="check the winning-ticket conditions of two runs")
    sp.add_argument("run0")
    sp.add_argument("run1")
    sp.add_argument("--lambda", dest="lam", type=float, default=None)
    out(sp)
    sp.set_defaults(func=cmd_verify_ticket)

    sp = sub.add_parser("export-dot", help="write the graph in DOT format")
    sp.add_argument("graph")
    out(sp)
    sp.set_defaults(func=cmd_export_dot)

    sp = sub.add_parser("report", help="render a training run to CSV and figures")
    sp.add_argument("run")
    sp.add_argument("-o", "--output", required=True, help="directory for the artifacts")
    sp.add_argument("--basename", default="report")
    sp.set_defaults(func=cmd_report)

    return p


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors; fold those into the validation code
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except GraphValidationError as err:
        _diagnostic(err)
        return 1
    except DagDnnError as err:
        _diagnostic(err)
        return 1
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as err:
        _diagnostic(err)
        return 1


if __name__ == "__main__":
    sys.exit(main())
