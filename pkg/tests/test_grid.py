import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rdaudit.grid import BC, Field, Grid, State, integrate_field, lp_norm, lp_norm_values, make_grid, mean


def test_geometry_1d():
    g = make_grid(1, [2.0], [8])
    assert g.h == (0.25,)
    assert g.cell_volume == 0.25
    assert g.measure == 2.0
    assert g.size == 8
    (x,) = g.centers()
    np.testing.assert_allclose(x, (np.arange(8) + 0.5) * 0.25)


def test_geometry_2d_uses_ij_indexing():
    g = make_grid(2, [1.0, 2.0], [4, 8])
    x, y = g.centers()
    assert x.shape == (4, 8)
    assert np.all(x[:, 0] == x[:, 5])
    assert np.all(y[0] == y[3])
    assert g.cell_volume == pytest.approx(0.25 * 0.25)
    assert g.measure == 2.0


@pytest.mark.parametrize("args", [
    (3, [1.0] * 3, [8] * 3),
    (1, [0.0], [8]),
    (1, [1.0], [3]),
    (2, [1.0], [8, 8]),
    (1, [math.inf], [8]),
])
def test_rejects_bad_grids(args):
    with pytest.raises(ValueError):
        make_grid(*args)


def test_bc_parse():
    assert BC.parse("Dirichlet") is BC.DIRICHLET
    assert BC.parse(BC.NEUMANN) is BC.NEUMANN
    with pytest.raises(ValueError):
        BC.parse("robin")


def test_grid_is_hashable_and_comparable():
    a = make_grid(1, [1.0], [16])
    b = make_grid(1, [1.0], [16])
    _ = a.h, a.measure
    assert a == b and hash(a) == hash(b)
    assert a.with_cells([32]).cells == (32,)


def test_midpoint_quadrature_exact_for_linear():
    g = make_grid(2, [1.0, 3.0], [10, 7])
    f = Field.from_function(g, lambda x, y: 2 * x + y + 1)
    # int_0^1 int_0^3 (2x + y + 1) = 3 + 4.5 + 3
    assert integrate_field(f) == pytest.approx(10.5, rel=1e-13)
    assert mean(f) == pytest.approx(3.5, rel=1e-13)


def test_lp_norms():
    g = make_grid(1, [1.0], [4])
    f = Field(g, [1.0, -2.0, 0.0, 2.0])
    assert lp_norm(f, 1) == pytest.approx(5 / 4)
    assert lp_norm(f, 2) == pytest.approx(math.sqrt(9 / 4))
    assert lp_norm(f, math.inf) == 2.0
    with pytest.raises(ValueError):
        lp_norm(f, 0.5)


def test_field_validation_and_readonly():
    g = make_grid(1, [1.0], [4])
    with pytest.raises(ValueError):
        Field(g, np.ones(5))
    with pytest.raises(ValueError):
        Field(g, [1.0, np.nan, 0, 0])
    f = Field(g, np.ones(4))
    with pytest.raises(ValueError):
        f.values[0] = 3.0
    assert integrate_field(2 * f - 1) == pytest.approx(1.0)


def test_state_shapes():
    g = make_grid(1, [1.0], [8])
    s = State(0.5, g, np.ones(8))
    assert s.m == 1 and s.u.shape == (1, 8)
    s2 = State.from_fields(0.0, [Field.constant(g, 1.0), Field.constant(g, 2.0)])
    np.testing.assert_allclose(s2.masses(), [1.0, 2.0])
    with pytest.raises(ValueError):
        State(-1.0, g, np.ones(8))
    with pytest.raises(ValueError):
        State(0.0, g, np.ones((2, 7)))


values8 = arrays(np.float64, 8, elements=st.floats(-1e3, 1e3))


@given(values8, values8, st.floats(-10, 10))
def test_integral_is_linear(u, v, c):
    g = make_grid(1, [1.0], [8])
    lhs = g.integrate(u + c * v)
    rhs = g.integrate(u) + c * g.integrate(v)
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + np.abs(u).sum() + abs(c) * np.abs(v).sum()))


@given(values8, values8, st.sampled_from([1.0, 1.5, 2.0, 3.0, math.inf]))
def test_minkowski(u, v, p):
    g = make_grid(1, [2.0], [8])
    n = lambda w: float(lp_norm_values(g, w, p))
    assert n(u + v) <= n(u) + n(v) + 1e-9 * (1 + n(u) + n(v))


@settings(max_examples=50)
@given(arrays(np.float64, (4, 6), elements=st.floats(-100, 100)))
def test_norm_ordering_on_unit_square(u):
    # on a domain of measure 1, ||u||_1 <= ||u||_2 <= ||u||_inf
    g = make_grid(2, [1.0, 1.0], [4, 6])
    n1, n2, ninf = (float(lp_norm_values(g, u, p)) for p in (1, 2, math.inf))
    assert n1 <= n2 * (1 + 1e-12) + 1e-12
    assert n2 <= ninf * (1 + 1e-12) + 1e-12
