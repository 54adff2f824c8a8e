import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spacetime_ot.errors import PositivityError
from spacetime_ot.grid_core import ScalarLattice, SpaceTimeGrid, VectorLattice
from spacetime_ot.support_geometry import LevelSetSupport
from spacetime_ot.transport_alpha import solve_alpha
from spacetime_ot.transport_fields import extended_velocity


def moving_band(nt, nx, c, lo=0.3, width=1.0, box=(0.0, 2.0)):
    g = SpaceTimeGrid.from_box((nt, nx), [box[0]], [box[1]])
    T, X = g.mesh()
    psi = np.maximum(lo + c * T - X, X - (lo + width + c * T))
    return g, LevelSetSupport(ScalarLattice(g, psi), psi[0] < 0, psi[-1] < 0)


def uniform_flow(g, rho, c):
    w = VectorLattice(g, np.stack([np.full(g.shape, rho), np.full(g.shape, rho * c)]))
    return w, extended_velocity(w)


def characteristic_oracle(alpha0, c, t, x):
    """Integrate d alpha/dt = -|v|^2/2 along x' = c backwards to t = 0."""
    from scipy.integrate import solve_ivp

    sol = solve_ivp(lambda s, y: [c, -0.5 * c * c], (t, 0.0), [x, 0.0], rtol=1e-10, atol=1e-12)
    x0, a_shift = sol.y[:, -1]
    return alpha0(x0) - a_shift


def test_static_flow_keeps_initial_data():
    g, sup = moving_band(17, 64, 0.0)
    w, V = uniform_flow(g, 2.0, 0.0)
    a0 = np.sin(3 * g.axes()[1])
    sol = solve_alpha(w, V, sup, alpha0=a0)
    ins = sup.inside
    assert np.allclose(sol.alpha.values[ins], np.broadcast_to(a0, g.shape)[ins], atol=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=40, max_size=40))
def test_maximum_principle_without_source(data):
    g, sup = moving_band(9, 40, 0.0)
    w, V = uniform_flow(g, 1.0, 0.0)
    a0 = np.array(data)
    a = solve_alpha(w, V, sup, alpha0=a0).alpha.values[sup.inside]
    inside0 = sup.inside[0]
    assert a.min() >= a0[inside0].min() - 1e-12
    assert a.max() <= a0[inside0].max() + 1e-12


def test_constant_velocity_closed_form_matches_characteristics():
    alpha0 = lambda x: np.cos(2 * np.pi * x)  # noqa: E731
    c = 0.4
    for t, x in [(0.3, 0.9), (0.8, 1.1), (1.0, 0.75)]:
        closed = alpha0(x - c * t) - 0.5 * c * c * t
        assert np.isclose(characteristic_oracle(alpha0, c, t, x), closed, atol=1e-8)


def alpha_error(n, c=0.4):
    g, sup = moving_band(n, 2 * n, c)
    w, V = uniform_flow(g, 1.5, c)
    x = g.axes()[1]
    sol = solve_alpha(w, V, sup, alpha0=np.cos(2 * np.pi * x))
    T, X = g.mesh()
    exact = np.cos(2 * np.pi * (X - c * T)) - 0.5 * c * c * T
    # stay clear of the staircase walls where the upwind stencil is one-sided
    core = sup.inside & (X > 0.3 + c * T + 0.1) & (X < 1.3 + c * T - 0.1)
    return np.max(np.abs(sol.alpha.values - exact)[core]), sol


def test_constant_velocity_first_order_convergence():
    e1, _ = alpha_error(32)
    e2, _ = alpha_error(64)
    e3, sol = alpha_error(128)
    assert e3 < 0.1
    assert e1 / e2 > 1.6 and e2 / e3 > 1.6
    assert sol.residual < 1e-4


def test_boundary_trace_lives_on_the_boundary_layer():
    g, sup = moving_band(17, 64, 0.2)
    w, V = uniform_flow(g, 1.0, 0.2)
    sol = solve_alpha(w, V, sup)
    assert sol.boundary_trace.shape == (int(sup.boundary_layer().sum()),)
    # zero data: alpha(t) = -c^2 t / 2 exactly for a uniform flow
    T = g.mesh()[0]
    assert np.allclose(sol.boundary_trace, (-0.02 * T)[sup.boundary_layer()], atol=1e-12)


def test_nonpositive_density_raises():
    g, sup = moving_band(9, 32, 0.0)
    w, V = uniform_flow(g, 1.0, 0.0)
    vals = w.values.copy()
    node = tuple(np.argwhere(sup.inside)[5])
    vals[(0,) + node] = 0.0
    with pytest.raises(PositivityError):
        solve_alpha(VectorLattice(g, vals), V, sup)
