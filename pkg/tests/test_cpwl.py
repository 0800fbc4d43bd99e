import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dagdnn.cpwl import (
    CPWLSpec,
    cpwl_derivative,
    cpwl_from_json,
    cpwl_to_json,
    decompose,
    eval_cpwl,
    eval_relusum,
    preset,
)
from dagdnn.errors import NonIncreasingBreakpoints


def test_relu_preset_matches_numpy():
    x = np.linspace(-5, 5, 101)
    assert np.array_equal(eval_cpwl(preset("relu"), x), np.maximum(x, 0.0))


def test_abs_preset_matches_numpy():
    x = np.linspace(-3, 3, 67)
    assert np.allclose(eval_cpwl(preset("abs"), x), np.abs(x), atol=0)


def test_hardtanh_saturates():
    f = preset("hardtanh")
    assert eval_cpwl(f, np.array([-9.0]))[0] == -1.0
    assert eval_cpwl(f, np.array([9.0]))[0] == 1.0
    assert eval_cpwl(f, np.array([0.25]))[0] == 0.25


def test_leaky_preset_slope():
    f = preset("leaky:0.01")
    assert eval_cpwl(f, np.array([-2.0]))[0] == pytest.approx(-0.02)
    assert eval_cpwl(f, np.array([3.0]))[0] == 3.0


def test_bad_breakpoints_rejected():
    with pytest.raises(NonIncreasingBreakpoints):
        CPWLSpec(breakpoints=(1.0, 1.0), slopes=(0.0, 1.0, 2.0), anchor=(0.0, 0.0))


def test_derivative_is_right_sided_at_breakpoints():
    # relu at exactly zero must report the slope of the right piece
    d = cpwl_derivative(preset("relu"), np.array([0.0, -1.0, 1.0]))
    assert list(d) == [1.0, 0.0, 1.0]
    d = cpwl_derivative(preset("hardtanh"), np.array([-1.0, 1.0]))
    assert list(d) == [1.0, 0.0]


@pytest.mark.parametrize("name", ["relu", "abs", "hardtanh", "leaky:0.01"])
def test_decompose_matches_direct_eval(name):
    spec = preset(name)
    rs = decompose(spec)
    xs = np.linspace(-6.0, 6.0, 500)
    assert np.max(np.abs(eval_relusum(rs, xs) - eval_cpwl(spec, xs))) <= 1e-12


def test_decompose_single_piece_uses_two_terms():
    # a pure line has no kinks; the decomposition still needs an
    # up-ramp and a down-ramp to realize the slope on both sides
    spec = CPWLSpec(breakpoints=(), slopes=(1.5,), anchor=(0.0, 0.25))
    rs = decompose(spec)
    xs = np.linspace(-4, 4, 81)
    assert np.allclose(eval_relusum(rs, xs), 1.5 * xs + 0.25, atol=1e-13)
    assert len(rs.right_terms) + len(rs.left_terms) == 2


@st.composite
def cpwl_specs(draw):
    k = draw(st.integers(min_value=0, max_value=5))
    bps = sorted(
        draw(
            st.lists(
                st.floats(min_value=-5, max_value=5, allow_nan=False),
                min_size=k,
                max_size=k,
                unique=True,
            )
        )
    )
    slopes = draw(
        st.lists(
            st.floats(min_value=-4, max_value=4, allow_nan=False),
            min_size=k + 1,
            max_size=k + 1,
        )
    )
    y0 = draw(st.floats(min_value=-3, max_value=3, allow_nan=False))
    return CPWLSpec(breakpoints=tuple(bps), slopes=tuple(slopes), anchor=(0.0, y0))


@settings(max_examples=60, deadline=None)
@given(cpwl_specs())
def test_decompose_property(spec):
    rs = decompose(spec)
    xs = np.linspace(-8.0, 8.0, 257)
    direct = eval_cpwl(spec, xs)
    viasum = eval_relusum(rs, xs)
    scale = max(1.0, float(np.max(np.abs(direct))))
    assert np.max(np.abs(viasum - direct)) <= 1e-11 * scale


@settings(max_examples=40, deadline=None)
@given(cpwl_specs())
def test_json_round_trip(spec):
    back = cpwl_from_json(cpwl_to_json(spec))
    assert back.breakpoints == spec.breakpoints
    assert back.slopes == spec.slopes
    assert back.anchor == spec.anchor


def test_preset_name_accepted_on_load():
    # writers always emit the explicit form; readers also take preset names
    spec = cpwl_from_json("relu")
    assert spec.slopes == preset("relu").slopes
    obj = cpwl_to_json(preset("relu"))
    assert obj["slopes"] == [0.0, 1.0]
