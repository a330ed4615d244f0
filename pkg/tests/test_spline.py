import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from hazardsieve.spline import (
    breakpoints_in,
    build_basis,
    default_num_knots,
    design,
    eval_basis,
    quantile_knots,
)

THIRDS = (1 / 3, 2 / 3)


def test_dimensions():
    assert build_basis(3, THIRDS).dim == 5
    nat = build_basis(4, (0.5,), natural=True)
    assert nat.raw_dim == 5
    assert nat.dim == 3


@pytest.mark.parametrize("knots", [(0.7, 0.3), (0.0, 0.5), (0.5, 1.0), (0.4, 0.4)])
def test_bad_knots(knots):
    with pytest.raises(ValueError):
        build_basis(3, knots)


def test_bad_order_and_boundary():
    with pytest.raises(ValueError):
        build_basis(1, ())
    with pytest.raises(ValueError):
        build_basis(3, (), boundary=(1.0, 0.0))
    with pytest.raises(ValueError):
        build_basis(3, (0.5,), natural=True)


def test_boundary_vector():
    b = build_basis(3, THIRDS)
    assert np.allclose(eval_basis(b, 0.0), [1, 0, 0, 0, 0])
    assert np.allclose(eval_basis(b, 1.0), [0, 0, 0, 0, 1])


def test_hat_functions():
    b = build_basis(2, (0.5,))
    assert np.allclose(eval_basis(b, 0.25), [0.5, 0.5, 0.0])


def test_out_of_range():
    b = build_basis(3, THIRDS)
    with pytest.raises(ValueError):
        eval_basis(b, 1.01)
    with pytest.raises(ValueError):
        eval_basis(b, np.nan)


@settings(max_examples=60, deadline=None)
@given(order=st.integers(2, 5), k=st.integers(0, 5), t=st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_partition_of_unity_and_nonnegative(order, k, t):
    b = build_basis(order, tuple(np.arange(1, k + 1) / (k + 1)))
    m = eval_basis(b, np.array(t))
    assert np.allclose(m.sum(axis=1), 1.0, atol=1e-13)
    assert np.all(m >= -1e-15)


@pytest.mark.parametrize("order", [2, 3, 4])
@pytest.mark.parametrize("deriv", [0, 1, 2])
def test_matches_scipy(order, deriv):
    if deriv >= order:
        return
    b = build_basis(order, (0.2, 0.45, 0.7), boundary=(0.0, 2.0))
    t = np.linspace(0.0, 2.0, 97)[:-1]
    ours = design(b, t, deriv)
    ref = BSpline.design_matrix(t, b.knots, order - 1).toarray()
    if deriv:
        ref = np.column_stack([
            BSpline(b.knots, np.eye(b.raw_dim)[j], order - 1).derivative(deriv)(t) for j in range(b.raw_dim)
        ])
    assert np.allclose(ours, ref, atol=1e-11)


def test_natural_constraint():
    b = build_basis(4, (0.25, 0.5, 0.75), natural=True)
    d2 = design(b, np.array([0.0, 1.0]), deriv=2)
    assert np.allclose(d2, 0.0, atol=1e-10)
    g = b.constant_coefficients(2.5)
    assert np.allclose(eval_basis(b, np.linspace(0, 1, 11)) @ g, 2.5)


def test_constant_coefficients_plain():
    b = build_basis(3, THIRDS)
    assert np.allclose(eval_basis(b, np.linspace(0, 1, 7)) @ b.constant_coefficients(-0.7), -0.7)


@pytest.mark.parametrize("ab, expected", [((0.2, 0.5), (1 / 3,)), ((0.4, 0.6), ()), ((0.0, 1.0), THIRDS)])
def test_breakpoints(ab, expected):
    assert breakpoints_in(build_basis(3, THIRDS), *ab) == pytest.approx(expected)


def test_breakpoints_empty_interval():
    with pytest.raises(ValueError):
        breakpoints_in(build_basis(3, THIRDS), 0.6, 0.4)


def test_knot_helpers():
    assert default_num_knots(200) == 2
    assert default_num_knots(10**6) == 7
    x = np.linspace(0.01, 1.0, 100)
    ks = quantile_knots(x, 3)
    assert len(ks) == 3 and all(0 < k < 1 for k in ks)
    assert quantile_knots(np.ones(10), 3) == ()
