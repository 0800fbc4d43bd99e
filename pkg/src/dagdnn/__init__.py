"""DAG networks with functions on arcs: normalization, lifting, pruning.

A network is a directed acyclic graph whose arcs carry functions and
whose multi-parent nodes add their incoming values.  Normalization turns
any such graph into a level form where arcs only connect consecutive
levels; the level form factors into a product of invertible lifting
steps, one per level, from which the full matrix of node-to-node
functions, sub-graph evaluations, and structural pruning all follow.
"""

from .arcfns import (
    ActAffine,
    Activation,
    Affine,
    ArcFunction,
    Identity,
    Linear,
    RestrictedIdentity,
    Sigma,
    Zero,
    fn_equal,
    fn_from_json,
    fn_to_json,
    register_sigma,
)
from .algebra import (
    Base,
    Compose,
    FuncMatrix,
    IdentityFn,
    Sum,
    ZeroExpr,
    eval_expr,
    eval_matrix,
    expr_equal,
    fold_affine,
    mat_add,
    mat_mul,
    simplify,
)
from .cpwl import CPWLSpec, ReLUSum, decompose, eval_cpwl, eval_relusum, preset
from .engine import (
    forward,
    interpret,
    interpret_general,
    is_complete_subgraph,
    completeness_matrix,
    lift_state,
    init_state,
    mask_incomplete,
    subgraph_eval,
    subgraph_nodes,
    verify_inverse_steps,
)
from .errors import DagDnnError, GraphValidationError
from .graph import (
    Arc,
    Graph,
    Node,
    NodeKind,
    apply_concat,
    apply_duplicate,
    apply_series,
    build_graph,
    graph_equal,
    graph_from_json,
    graph_to_json,
    path_counts,
    reachability,
    to_dot,
    topological_order,
    validate_graph,
)
from .lifting import (
    AllPairMatrix,
    LiftingMatrix,
    allpair_inductive,
    allpair_product,
    arc_matrix,
    companion_network,
    factorize,
    invert_lifting,
    level_isomorphic,
    liftings_from_json,
    liftings_to_json,
    lifting_matrix,
    reconstruct_graph,
)
from .passes import (
    LevelMap,
    assign_levels,
    check_oplus_invariants,
    concat_to_addition,
    eliminate_jumps,
    is_normalized,
    normalize_all,
    normalize_io,
    require_normalized,
)
from .pruning import (
    DeadNodeReport,
    RewindTicket,
    TicketReport,
    detect_dead_nodes,
    prune,
    rewind_prune,
    verify_ticket,
)
from .training import (
    TrainConfig,
    TrainData,
    TrainRun,
    bind_params,
    extract_params,
    fidelity,
    loss,
    loss_and_grad,
    param_count,
    train,
    train_run_from_json,
    train_run_to_json,
)

__version__ = "0.1.0"
