import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spacetime_ot.diagnostics import (JsonlWriter, density_nodes, half_peaks, hj_mask,
                                      hj_residual, mass_drift, report, symmetry_deviation,
                                      time_symmetry, wasserstein_estimate)
from spacetime_ot.grid_core import ScalarLattice, SpaceTimeGrid
from spacetime_ot.optimizer import (PhaseSchedule, descent_step_fixed_support, initial_state,
                                    run)
from spacetime_ot.problems import translation_problem, trivial_problem
from spacetime_ot.support_geometry import LevelSetSupport
from spacetime_ot.transport_fields import FluxSpec


@pytest.fixture(scope="module")
def state():
    spec = translation_problem(16, 40)
    st_ = spec.initial_state()
    for _ in range(3):
        st_ = descent_step_fixed_support(st_)
    return st_


# ---------------------------------------------------------------------------
# brute-force recomputation with explicit loops


def brute_nodes(state):
    """Node view: mean of the (up to two) edges per axis, face rho from the data."""
    ops = state.support.operators()
    ins = ops.inside
    nt, nx = ins.shape
    W = np.zeros((2, nt, nx))
    for k in range(nt):
        for i in range(nx):
            if not ins[k, i]:
                continue
            for a, (dk, di) in enumerate(((1, 0), (0, 1))):
                e = state.flux[a]
                s = 0.0
                if k - dk >= 0 and i - di >= 0 and ops.edges[a][k - dk, i - di]:
                    s += e[k - dk, i - di]
                if k + dk < nt and i + di < nx and ops.edges[a][k, i]:
                    s += e[k, i]
                W[a, k, i] = 0.5 * s
    ctx = state.context
    W[0, 0] = np.where(ins[0], ctx.flux.rho0, W[0, 0])
    W[0, -1] = np.where(ins[-1], ctx.flux.rho1, W[0, -1])
    return W


def brute_action(state):
    g = state.support.grid
    ins = state.support.inside
    W = brute_nodes(state)
    ht, hx = g.spacing
    total = 0.0
    for k in range(g.shape[0]):
        wt = ht * hx * (0.5 if k in (0, g.shape[0] - 1) else 1.0)
        for i in range(g.shape[1]):
            if ins[k, i] and W[0, k, i] > state.context.rho_floor:
                total += wt * 0.5 * W[1, k, i] ** 2 / W[0, k, i]
    return total


def brute_div(state):
    """Returns (max off-face residual, max face residual), both times ht."""
    g = state.support.grid
    ops = state.support.operators()
    ins = ops.inside
    nt, nx = ins.shape
    ht, hx = g.spacing
    ctx = state.context
    inner, face = 0.0, 0.0
    for k in range(nt):
        for i in range(nx):
            if not ins[k, i]:
                continue
            onface = k in (0, nt - 1)
            wn = ht * hx * (0.5 if onface else 1.0)
            acc = 0.0
            if k + 1 < nt and ops.edges[0][k, i]:
                acc += ht * hx * state.flux[0][k, i] / ht
            if k - 1 >= 0 and ops.edges[0][k - 1, i]:
                acc -= ht * hx * state.flux[0][k - 1, i] / ht
            me = ht * hx * (0.5 if onface else 1.0)
            if i + 1 < nx and ops.edges[1][k, i]:
                acc += me * state.flux[1][k, i] / hx
            if i - 1 >= 0 and ops.edges[1][k, i - 1]:
                acc -= me * state.flux[1][k, i - 1] / hx
            d = acc / wn
            b = 0.0
            if k == 0:
                b = 2 * ctx.flux.rho0[i] / ht
            elif k == nt - 1:
                b = -2 * ctx.flux.rho1[i] / ht
            r = abs(d - b) * ht
            if onface:
                face = max(face, r)
            else:
                inner = max(inner, r)
    return inner, face


def brute_hj(phi, inside, g):
    core = hj_mask(inside)
    ht, hx = g.spacing
    nt, nx = inside.shape
    f = np.where(inside, phi, 0.0)
    num = den = 0.0
    for k in range(nt):
        for i in range(nx):
            if not core[k, i]:
                continue
            pt = (f[k + 1, i] - f[k - 1, i]) / (2 * ht)
            px = (f[k, i + 1] - f[k, i - 1]) / (2 * hx)
            r = pt + 0.5 * px * px
            w = ht * hx
            num += w * r * r
            den += w
    return np.sqrt(num / den)


def test_report_matches_brute_force(state):
    rep = report(state)
    assert abs(rep.action - brute_action(state)) <= 1e-12 * max(1.0, rep.action)
    inner, face = brute_div(state)
    assert abs(rep.div_residual - inner) <= 1e-12 * max(1.0, inner)
    assert abs(rep.flux_residual - face) <= 1e-12 * max(1.0, face)
    g = state.support.grid
    from spacetime_ot.optimizer import projected_gradient
    _, _, phi = projected_gradient(state)
    assert abs(rep.hj_residual - brute_hj(phi, state.support.inside, g)) <= 1e-12
    W = brute_nodes(state)
    ins = state.support.inside
    masses = [np.sum(np.where(ins[k], W[0, k], 0.0)) * g.spacing[1] for k in range(g.shape[0])]
    assert np.allclose(rep.slice_mass, masses, rtol=1e-12, atol=1e-14)


def test_residuals_are_finite_and_nonnegative(state):
    rep = report(state)
    for v in (rep.action, rep.div_residual, rep.flux_residual, rep.hj_residual,
              rep.symmetry_deviation):
        assert np.isfinite(v) and v >= 0


def test_solenoidal_state_conserves_slice_mass(state):
    rep = report(state)
    assert rep.div_residual < 1e-8
    assert mass_drift(rep.slice_mass) < 1e-3


def test_static_problem_has_no_action_and_no_rise():
    g = SpaceTimeGrid.from_box((9, 32), [0], [1])
    T, X = g.mesh()
    psi = np.maximum(0.3 - X, X - 0.7)
    sup = LevelSetSupport(ScalarLattice(g, psi), psi[0] < 0, psi[-1] < 0)
    rho = np.where(psi[0] < 0, 3.0, 0.0)
    st_ = initial_state(FluxSpec(g, rho, rho), sup, PhaseSchedule())
    rep = report(st_)
    assert rep.action == pytest.approx(0.0, abs=1e-20)
    assert np.max(np.abs(rep.density_rise)) < 1e-12
    assert wasserstein_estimate(st_) == pytest.approx(0.0, abs=1e-9)


def test_relaxed_static_problem_has_small_action():
    spec = trivial_problem(16, 32, schedule=PhaseSchedule(neumann_iters=200))
    assert report(run(spec.initial_state())).action <= 1e-4


def test_density_rise_is_measured_at_the_requested_slice(state):
    rep = report(state, t_star=0.5)
    rho = density_nodes(state)
    k = state.support.grid.time_index(0.5)
    assert rep.rise_slice == k
    assert np.array_equal(rep.density_rise, rho[k] - rho[0])


# ---------------------------------------------------------------------------
# scalar helpers


def test_wasserstein_examples():
    assert wasserstein_estimate(0.5 * 0.25 ** 2) == pytest.approx(0.25)
    assert wasserstein_estimate(0.0) == 0.0
    assert wasserstein_estimate(1 / 6) == pytest.approx(np.sqrt(1 / 3))


@given(st.floats(0, 1e6))
def test_wasserstein_inverts_the_action(a):
    assert 0.5 * wasserstein_estimate(a) ** 2 == pytest.approx(a, rel=1e-12, abs=1e-300)


def test_hj_residual_vanishes_for_exact_solution():
    # phi = x^2 / (2 (1 + t)) solves phi_t + phi_x^2 / 2 = 0
    g = SpaceTimeGrid.from_box((41, 81), [0], [1])
    T, X = g.mesh()
    phi = X ** 2 / (2 * (1 + T))
    inside = np.ones(g.shape, bool)
    inside[:, [0, -1]] = False
    r = hj_residual(phi, inside, g)
    assert r < 5e-3
    assert hj_residual(phi + 0.3 * T, inside, g) == pytest.approx(0.3, rel=0.05)


def test_hj_mask_keeps_distance_from_walls_and_faces():
    inside = np.zeros((12, 20), bool)
    inside[:, 4:16] = True
    core = hj_mask(inside)
    cols = np.flatnonzero(core.any(axis=0))
    rows = np.flatnonzero(core.any(axis=1))
    assert cols.min() == 6 and cols.max() == 13
    assert rows.min() == 2 and rows.max() == 9


def test_symmetry_of_a_radial_field_is_zero():
    g = SpaceTimeGrid.from_box((3, 65, 65), [0, 0], [1, 1])
    X, Y = g.spatial_mesh()
    r = np.hypot(X - 0.5, Y - 0.5)
    h = g.spacing[1]
    # constant on the rings used by the metric
    rise = np.floor(r / h) * 0.1
    assert symmetry_deviation(rise, g, (0.5, 0.5)) < 1e-12
    lop = rise + (X > 0.5)
    assert symmetry_deviation(lop, g, (0.5, 0.5)) > 0.4


def test_time_symmetry_and_half_peaks():
    rho = np.stack([np.ones((4, 4)), 2 * np.ones((4, 4)), np.ones((4, 4))])
    assert time_symmetry(rho) == 0.0
    rho[-1] *= 1.1
    assert time_symmetry(rho) == pytest.approx(0.1)
    g = SpaceTimeGrid.from_box((3, 4, 4), [0, 0], [1, 1])
    rise = np.zeros((4, 4))
    rise[0, 1] = 3.0
    rise[3, 2] = 1.0
    assert half_peaks(rise, g, (0.5, 0.5)) == (3.0, 1.0)


def test_jsonl_stream(tmp_path, state):
    path = tmp_path / "d.jsonl"
    with JsonlWriter(path) as w:
        w.write(report(state), 3, 0.25, phase="neumann")
        w.write(report(state), 4, 0.5)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[0])
    for key in ("action", "div_residual", "flux_residual", "hj_residual", "slice_mass",
                "density_rise_peak", "symmetry_deviation", "iteration", "gamma"):
        assert key in rec
    assert rec["iteration"] == 3 and rec["gamma"] == 0.25
