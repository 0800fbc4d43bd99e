"""Function-expression algebra: evaluation, simplification, matrix rules.

The multiplication here is not the scalar one: entries compose, and
composition only distributes over sums from the right.  The stored
counterexamples pin down which familiar identities break.
"""

import numpy as np
import pytest

import dagdnn as dd
from conftest import RELU
from dagdnn.algebra import Base, Compose, FuncMatrix, IdentityFn, Sum, ZeroExpr
from dagdnn.algebra import expr_from_json, expr_to_json, matrix_from_json, matrix_to_json
from dagdnn.cpwl import preset

HARDTANH = preset("hardtanh")


def one_by_one(fn) -> FuncMatrix:
    return FuncMatrix(rows=(0,), cols=(0,), row_dims={0: 1}, col_dims={0: 1}, cells={(0, 0): Base(fn)})


def test_eval_compose_order():
    # Compose(outer, inner) must apply inner first
    e = Compose(Base(dd.Affine(np.array([[2.0]]), np.array([1.0]))), Base(dd.Activation(RELU, 1)))
    assert dd.eval_expr(e, np.array([-3.0]))[0] == 1.0  # 2*relu(-3)+1
    assert dd.eval_expr(e, np.array([3.0]))[0] == 7.0


def test_eval_sum_and_zero():
    e = Sum((Base(dd.Identity(2)), ZeroExpr(2, 2), Base(dd.Linear(2 * np.eye(2)))))
    x = np.array([1.0, -2.0])
    assert np.allclose(dd.eval_expr(e, x), 3 * x)


def test_eval_memoizes_shared_subexpressions(rng):
    calls = {"n": 0}

    class Counting(dd.Identity):
        def apply(self, x):
            calls["n"] += 1
            return super().apply(x)

    shared = Base(Counting(2))
    e = Sum((Compose(Base(dd.Linear(np.eye(2))), shared), Compose(Base(dd.Linear(2 * np.eye(2))), shared)))
    dd.eval_expr(e, rng.standard_normal(2))
    assert calls["n"] == 1


def test_simplify_drops_zero_terms():
    e = Sum((ZeroExpr(1, 1), Base(dd.Identity(1)), ZeroExpr(1, 1)))
    s = dd.simplify(e)
    assert dd.expr_equal(s, Base(dd.Identity(1)))


def test_simplify_elides_neutral_identity_only():
    inner = Base(dd.Activation(RELU, 1))
    s = dd.simplify(Compose(IdentityFn(1), inner))
    assert dd.expr_equal(s, inner)
    # a Base-wrapped identity is an arc function and must survive,
    # otherwise composition depth stops matching path length
    kept = dd.simplify(Compose(Base(dd.Identity(1)), inner))
    assert isinstance(kept, Compose)


def test_simplify_zero_annihilates_compose():
    e = Compose(ZeroExpr(2, 3), Base(dd.Identity(2)))
    s = dd.simplify(e)
    assert isinstance(s, ZeroExpr)
    assert (s.in_dim, s.out_dim) == (2, 3)


def test_fold_affine_collapses_linear_chain(rng):
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((3, 4))
    e = Compose(Base(dd.Linear(a)), Base(dd.Affine(b, np.ones(3))))
    folded = dd.fold_affine(e)
    x = rng.standard_normal(4)
    assert np.allclose(dd.eval_expr(folded, x), a @ (b @ x + 1))
    assert isinstance(folded, Base)


def test_mat_mul_rejects_mismatched_shapes():
    a = one_by_one(dd.Identity(1))
    b = FuncMatrix(rows=(0, 1), cols=(0,), row_dims={0: 1, 1: 1}, col_dims={0: 1}, cells={})
    with pytest.raises(dd.DagDnnError):
        dd.mat_mul(b, b)
    dd.mat_mul(a, a)  # square 1x1 composes fine


# ---------------------------------------------------------------------------
# the rule-list fixtures


def test_non_commutativity_fixture():
    a = one_by_one(dd.Activation(RELU, 1))
    b = one_by_one(dd.Linear(np.array([[-1.0]])))
    ab = dd.mat_mul(a, b)  # relu after negation
    ba = dd.mat_mul(b, a)  # negation after relu
    x = np.array([1.0])
    left = dd.eval_expr(ab.cells[(0, 0)], x)[0]
    right = dd.eval_expr(ba.cells[(0, 0)], x)[0]
    assert left == 0.0 and right == -1.0
    assert left != right


def test_non_associativity_fixture():
    # B stacks the input twice, C gathers the copies; (BC) is x -> 2x.
    # A saturating entry sees 2x in A(BC) but is summed twice in (AB)C.
    a = FuncMatrix((0,), (0,), {0: 1}, {0: 1}, {(0, 0): Base(dd.Activation(HARDTANH, 1))})
    b = FuncMatrix((0,), (0, 1), {0: 1}, {0: 1, 1: 1}, {(0, 0): Base(dd.Identity(1)), (0, 1): Base(dd.Identity(1))})
    c = FuncMatrix((0, 1), (0,), {0: 1, 1: 1}, {0: 1}, {(0, 0): Base(dd.Identity(1)), (1, 0): Base(dd.Identity(1))})
    right_first = dd.mat_mul(a, dd.mat_mul(b, c))
    left_first = dd.mat_mul(dd.mat_mul(a, b), c)
    x = np.array([0.8])
    v_right = dd.eval_expr(right_first.cells[(0, 0)], x)[0]
    v_left = dd.eval_expr(left_first.cells[(0, 0)], x)[0]
    assert v_right == 1.0  # hardtanh(1.6) saturates
    assert v_left == pytest.approx(1.6)  # hardtanh(0.8) + hardtanh(0.8)
    assert v_right != v_left


def test_non_left_distributivity_fixture():
    f = Base(dd.Activation(HARDTANH, 1))
    g = Base(dd.Identity(1))
    h = Base(dd.Identity(1))
    together = Compose(f, Sum((g, h)))
    apart = Sum((Compose(f, g), Compose(f, h)))
    x = np.array([0.8])
    assert dd.eval_expr(together, x)[0] == 1.0
    assert dd.eval_expr(apart, x)[0] == pytest.approx(1.6)


def test_right_distributivity_random_triples(rng):
    for _ in range(100):
        d = int(rng.integers(1, 4))
        fns = []
        for _ in range(3):
            kind = rng.integers(3)
            if kind == 0:
                fns.append(dd.Affine(rng.standard_normal((d, d)), rng.standard_normal(d)))
            elif kind == 1:
                fns.append(dd.ActAffine(RELU, rng.standard_normal((d, d)), rng.standard_normal(d)))
            else:
                fns.append(dd.Activation(HARDTANH, d))
        fb, fc, fa = (Base(f) for f in fns)
        lhs = Compose(Sum((fb, fc)), fa)
        rhs = Sum((Compose(fb, fa), Compose(fc, fa)))
        x = rng.standard_normal(d)
        assert np.max(np.abs(dd.eval_expr(lhs, x) - dd.eval_expr(rhs, x))) <= 1e-12


def test_simplify_never_reassociates_across_sums():
    f = Base(dd.Activation(HARDTANH, 1))
    inner = Sum((Base(dd.Identity(1)), Base(dd.Identity(1))))
    e = Compose(f, inner)
    s = dd.simplify(e)
    x = np.array([0.8])
    assert dd.eval_expr(s, x)[0] == dd.eval_expr(e, x)[0] == 1.0


# ---------------------------------------------------------------------------
# serialization


def test_expr_json_round_trip(rng):
    e = Sum(
        (
            Compose(Base(dd.Linear(rng.standard_normal((2, 3)))), Base(dd.Activation(RELU, 3))),
            ZeroExpr(3, 2),
        )
    )
    back = expr_from_json(expr_to_json(e))
    x = rng.standard_normal(3)
    assert np.array_equal(dd.eval_expr(e, x), dd.eval_expr(back, x))


def test_matrix_json_keeps_masked_cells_visible():
    m = FuncMatrix((0, 1), (0,), {0: 1, 1: 1}, {0: 1}, {(0, 0): Base(dd.Identity(1))})
    obj = matrix_to_json(m, masked=((1, 0),))
    flagged = [c for c in obj["cells"] if c.get("masked")]
    assert len(flagged) == 1
    back = matrix_from_json(obj)
    assert (1, 0) not in back.cells
    assert (0, 0) in back.cells
