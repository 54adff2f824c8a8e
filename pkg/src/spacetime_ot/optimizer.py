"""Projected gradient descent on (W, Omega).

The unknown is the edge flux of `FluxOperators`.  Node values are the
half-sums of the adjacent edges (missing edges count as zero), with rho on
the temporal faces replaced by the face data.  The discrete action is

    E(W) = sum_nodes Mn T(W_node),

its edge-space gradient is g = Me^{-1} A^T Mn V, and the descent direction
is minus the Helmholtz projection of g.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .elliptic import Projector
from .errors import (ConfigurationError, DegenerateDirectionError, InitializationError,
                     SolverError, StepFailure, StepRejected)
from .grid_core import InteriorMask, ScalarLattice, VectorLattice, gradient
from .support_geometry import ConstraintMask, LevelSetSupport, evolve_boundary, max_admissible_step
from .transport_alpha import solve_alpha
from .transport_fields import FluxSpec, SolenoidalField

log = logging.getLogger(__name__)

DEFAULT_TOLERANCES = {
    "tol_grad": 1e-6,       # relative to the first projected gradient norm
    "tol_mono": 1e-10,
    "tol_elliptic": 1e-10,
    "newton_tol": 1e-10,
    "newton_iters": 20,
    "c_safe": 0.9,
    "max_halvings": 5,
    "vacuum_trim": 1e-3,    # relative to the mean face density; 0 disables trimming
    "alpha0": "potential",  # inflow data for alpha: "potential" (-phi at t=0) or a number
}


@dataclass
class PhaseSchedule:
    neumann_iters: int = 300
    dirichlet_iters: int = 0
    boundary_step_scale: float = 0.5
    reinit_every: int = 5
    relax_iters: int = 5
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.neumann_iters < 1:
            raise ConfigurationError("the fixed-support phase needs at least one iteration")
        if self.dirichlet_iters < 0:
            raise ConfigurationError("dirichlet_iters must be non-negative")
        if self.relax_iters < 0:
            raise ConfigurationError("relax_iters must be non-negative")
        if not self.boundary_step_scale > 0:
            raise ConfigurationError("boundary_step_scale must be positive")
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigurationError(f"unknown tolerance names: {sorted(unknown)}")

    def tol(self, name):
        return self.tolerances.get(name, DEFAULT_TOLERANCES[name])


# ---------------------------------------------------------------------------
# discrete model on a fixed support


class DiscreteModel:
    """Energy, gradient and node views for one support."""

    def __init__(self, support: LevelSetSupport, flux: FluxSpec, rho_floor, tol_elliptic=1e-10):
        self.support = support
        self.flux_spec = flux
        self.ops = support.operators()
        self.rho_floor = rho_floor
        self.projector = Projector(self.ops, support.psi.values, tol=tol_elliptic)
        ops, grid = self.ops, support.grid
        self.face = np.zeros(grid.shape, bool)
        self.face[0] = ops.inside[0]
        self.face[-1] = ops.inside[-1]
        self.face_rho = np.zeros(grid.shape)
        self.face_rho[0] = np.where(ops.inside[0], flux.rho0, 0.0)
        self.face_rho[-1] = np.where(ops.inside[-1], flux.rho1, 0.0)
        lost = (flux.rho0 > 0) & ~ops.inside[0]
        lost1 = (flux.rho1 > 0) & ~ops.inside[-1]
        if lost.any() or lost1.any():
            raise ConfigurationError("face density outside the face masks of the support")
        # D W = b encodes the face fluxes
        ht = grid.spacing[0]
        b = np.zeros(grid.shape)
        b[0] = 2.0 * self.face_rho[0] / ht
        b[-1] = -2.0 * self.face_rho[-1] / ht
        self.b = b

    # -- views
    def nodes(self, flux):
        W = self.ops.to_nodes(flux)
        W[0] = np.where(self.face, self.face_rho, W[0])
        return W

    def dnodes(self, dflux):
        dW = self.ops.to_nodes(dflux)
        dW[0][self.face] = 0.0
        return dW

    def velocity(self, Wn):
        ok = self.ops.inside & (Wn[0] > self.rho_floor)
        v = np.where(ok, Wn[1:] / np.where(ok, Wn[0], 1.0), 0.0)
        return v, ok

    def extended_velocity(self, Wn):
        v, ok = self.velocity(Wn)
        V = np.concatenate([(-0.5 * np.sum(v * v, axis=0))[None], v])
        V[:, ~ok] = 0.0
        return V

    def energy(self, Wn):
        v, ok = self.velocity(Wn)
        T = 0.5 * Wn[0] * np.sum(v * v, axis=0)
        return float(np.sum(self.ops.Mn * np.where(ok, T, 0.0)))

    def gradient(self, Wn):
        V = self.extended_velocity(Wn)
        V[0][self.face] = 0.0
        raw = self.ops.to_nodes_T(self.ops.Mn[None] * V)
        return [np.where(e, r / np.where(e, m, 1.0), 0.0)
                for r, m, e in zip(raw, self.ops.Me, self.ops.edges)]

    def divergence_residual(self, flux):
        r = self.ops.div(flux) - self.b
        return float(np.max(np.abs(r[self.ops.inside]))) if self.ops.n_inside else 0.0

    def edge_norm2(self, g):
        return self.ops.inner_edges(g, g)


# ---------------------------------------------------------------------------
# Newton line search


@dataclass
class NewtonResult:
    gamma: float
    gamma_max: float
    iterations: int
    slope0: float


def gamma_max(rho, drho, weights):
    sel = (weights > 0) & (drho < 0)
    if not sel.any():
        return np.inf
    return float(np.min(-rho[sel] / drho[sel]))


def line_energy(Wn, dWn, weights, gamma, rho_floor=0.0):
    """E(W + gamma dW) with the same floor rule as the solver."""
    W = Wn + gamma * dWn
    ok = (weights > 0) & (W[0] > rho_floor)
    v = np.where(ok, W[1:] / np.where(ok, W[0], 1.0), 0.0)
    return float(np.sum(weights * np.where(ok, 0.5 * W[0] * np.sum(v * v, axis=0), 0.0)))


def _derivs(Wn, dWn, weights, gamma, rho_floor):
    W = Wn + gamma * dWn
    ok = (weights > 0) & (W[0] > rho_floor)
    rho = np.where(ok, W[0], 1.0)
    v = np.where(ok, W[1:] / rho, 0.0)
    V0 = -0.5 * np.sum(v * v, axis=0)
    d1 = dWn[0] * V0 + np.sum(dWn[1:] * v, axis=0)
    r = dWn[1:] - dWn[0] * v
    d2 = np.sum(r * r, axis=0) / rho
    w = np.where(ok, weights, 0.0)
    return float(np.sum(w * d1)), float(np.sum(w * d2))


def newton_line_search(Wn, dWn, weights, rho_floor=0.0, c_safe=0.9, tol=1e-10, max_iter=20):
    """Newton iterations on dE/dgamma = 0, clipped to [0, c_safe gamma_max]."""
    gmax = gamma_max(Wn[0], dWn[0], weights)
    hi = c_safe * gmax
    gamma = 0.0
    e1, e2 = _derivs(Wn, dWn, weights, 0.0, rho_floor)
    slope0 = e1
    if e1 == 0.0:
        return NewtonResult(0.0, gmax, 0, slope0)
    it = 0
    for it in range(1, max_iter + 1):
        if e2 <= 0.0:
            if e1 != 0.0:
                raise DegenerateDirectionError("zero curvature along a direction with non-zero slope")
            break
        new = min(max(gamma - e1 / e2, 0.0), hi)
        done = abs(new - gamma) < tol * max(abs(new), 1e-300)
        gamma = new
        if done or gamma == 0.0:
            break
        e1, e2 = _derivs(Wn, dWn, weights, gamma, rho_floor)
    return NewtonResult(gamma, gmax, it, slope0)


# ---------------------------------------------------------------------------
# state


@dataclass
class SolveContext:
    flux: FluxSpec
    constraint: ConstraintMask
    schedule: PhaseSchedule
    rho_floor: float
    model: DiscreteModel = None

    def model_for(self, support):
        if self.model is None or self.model.support is not support:
            self.model = DiscreteModel(support, self.flux, self.rho_floor,
                                       self.schedule.tol("tol_elliptic"))
        return self.model


@dataclass
class SolverState:
    w: SolenoidalField
    support: LevelSetSupport
    iteration: int = 0
    energy_history: list = field(default_factory=list)
    last_gamma: float = 0.0
    phase: str = "init"
    grad_norm: float = np.nan
    grad_norm0: float = np.nan
    phi: np.ndarray | None = None
    converged: bool = False
    fallbacks: int = 0
    dirichlet_steps: int = 0
    context: SolveContext = field(default=None, repr=False)

    @property
    def flux(self):
        return self.w.flux

    @property
    def energy(self):
        return self.energy_history[-1] if self.energy_history else np.nan


def _field(model, flux):
    grid = model.support.grid
    Wn = model.nodes(flux)
    return SolenoidalField(VectorLattice(grid, Wn, model.ops.inside.copy()), [f.copy() for f in flux])


def initialize_w(flux: FluxSpec, support: LevelSetSupport, rho_floor=None, tol_elliptic=1e-10):
    """Harmonic field W = grad Phi with face fluxes -rho0 / +rho1 and no lateral flux."""
    if flux.imbalance() > 1e-8:
        raise ConfigurationError("initialization needs balanced face masses")
    floor = flux.rho_floor() if rho_floor is None else rho_floor
    model = DiscreteModel(support, flux, floor, tol_elliptic)
    W, _ = model.projector.solve_divergence(model.b)
    Wn = model.nodes(W)
    interior = model.ops.inside & ~model.face
    if np.any(Wn[0][interior] <= 0):
        bad = np.argwhere(interior & (Wn[0] <= 0))[0]
        raise InitializationError(
            f"harmonic initialization gives rho <= 0 at node {tuple(bad)}; try a fatter initial support")
    return _field(model, W)


def initial_state(flux: FluxSpec, support: LevelSetSupport, schedule: PhaseSchedule,
                  constraint: ConstraintMask | None = None, rho_floor=None):
    floor = flux.rho_floor() if rho_floor is None else rho_floor
    ctx = SolveContext(flux, constraint or ConstraintMask.empty(support.grid.shape), schedule, floor)
    w = initialize_w(flux, support, floor, schedule.tol("tol_elliptic"))
    model = ctx.model_for(support)
    E = model.energy(model.nodes(w.flux))
    return SolverState(w, support, 0, [E], 0.0, "init", context=ctx)


def projected_gradient(state: SolverState, mode="neumann", dirichlet_values=None):
    """(g, g_perp, phi) on the state's support."""
    model = state.context.model_for(state.support)
    Wn = model.nodes(state.flux)
    g = model.gradient(Wn)
    if mode == "neumann":
        gp, phi = model.projector.neumann(g)
    else:
        gp, phi = model.projector.dirichlet(g, dirichlet_values)
    return g, gp, phi


def newton_step(state: SolverState, delta_w) -> float:
    """Optimal step along the edge-flux direction delta_w."""
    ctx = state.context
    model = ctx.model_for(state.support)
    dflux = getattr(delta_w, "flux", delta_w)
    Wn = model.nodes(state.flux)
    dWn = model.dnodes(dflux)
    s = ctx.schedule
    return newton_line_search(Wn, dWn, model.ops.Mn, ctx.rho_floor, s.tol("c_safe"),
                              s.tol("newton_tol"), s.tol("newton_iters")).gamma


def _converged(state, gnorm):
    g0 = state.grad_norm0 if np.isfinite(state.grad_norm0) else gnorm
    return gnorm <= state.context.schedule.tol("tol_grad") * g0, g0


def descent_step_fixed_support(state: SolverState) -> SolverState:
    """One Neumann-projected step with the Newton step size."""
    ctx = state.context
    model = ctx.model_for(state.support)
    Wn = model.nodes(state.flux)
    _, gp, phi = projected_gradient(state)
    gnorm = np.sqrt(model.edge_norm2(gp))
    conv, g0 = _converged(state, gnorm)
    if conv:
        return replace(state, grad_norm=gnorm, grad_norm0=g0, phi=phi, converged=True,
                       phase="neumann")
    dflux = [-x for x in gp]
    dWn = model.dnodes(dflux)
    s = ctx.schedule
    res = newton_line_search(Wn, dWn, model.ops.Mn, ctx.rho_floor, s.tol("c_safe"),
                             s.tol("newton_tol"), s.tol("newton_iters"))
    gamma = res.gamma
    E0 = state.energy
    for _ in range(60):
        flux = [a + gamma * d for a, d in zip(state.flux, dflux)]
        E = model.energy(model.nodes(flux))
        if E <= E0 + s.tol("tol_mono"):
            break
        gamma *= 0.5
    else:
        flux, E, gamma = state.flux, E0, 0.0
    return replace(state, w=_field(model, flux), iteration=state.iteration + 1,
                   energy_history=state.energy_history + [E], last_gamma=gamma,
                   phase="neumann", grad_norm=gnorm, grad_norm0=g0, phi=phi, converged=False)


def _transfer(old_model, flux, new_support, ctx):
    """Move an edge flux onto a new support and restore D W = b there."""
    from scipy import ndimage

    new_model = DiscreteModel(new_support, ctx.flux, ctx.rho_floor, ctx.schedule.tol("tol_elliptic"))
    old_ops, new_ops = old_model.ops, new_model.ops
    Wn = old_model.nodes(flux)
    inside_old = old_ops.inside
    if not np.array_equal(inside_old, new_ops.inside):
        _, ind = ndimage.distance_transform_edt(~inside_old, return_indices=True)
        Wn = Wn[(slice(None),) + tuple(ind)]
    interp = new_ops.interpolate(Wn)
    out = []
    for a in range(new_ops.ndim):
        both = new_ops.edges[a] & old_ops.edges[a]
        out.append(np.where(both, flux[a], interp[a]))
    fix, _ = new_model.projector.solve_divergence(new_ops.div(out) - new_model.b)
    out = [o - f for o, f in zip(out, fix)]
    return new_model, out


def _relaxed(state, model, flux, E, iters):
    """A few fixed-support steps on `model`'s support starting from `flux`."""
    ctx = state.context
    saved = ctx.model
    ctx.model = model
    out = replace(state, w=_field(model, flux), support=model.support, energy_history=[E])
    for _ in range(iters):
        out = descent_step_fixed_support(out)
    ctx.model = saved
    return out.flux, out.energy


def trim_vacuum(state: SolverState) -> SolverState:
    """Drop interior nodes whose density has all but vanished.

    The positivity bound lets such a node lose at most a fraction c_safe of
    its density per step, which throttles every step of the whole field.
    Removing the node from Omega lets the support follow the vacuum.  The
    trimmed state is kept only if its energy does not rise.
    """
    ctx = state.context
    s = ctx.schedule
    rel = s.tol("vacuum_trim")
    if not rel:
        return state
    model = ctx.model_for(state.support)
    rho = model.nodes(state.flux)[0]
    fr = np.concatenate([ctx.flux.rho0[ctx.flux.rho0 > 0], ctx.flux.rho1[ctx.flux.rho1 > 0]])
    low = model.ops.inside & ~model.face & ~ctx.constraint.pin & (rho < rel * fr.mean())
    if not low.any():
        return state
    grid = state.support.grid
    psi = np.where(low, np.maximum(state.support.psi.values, 0.5 * min(grid.spacing[1:])),
                   state.support.psi.values)
    new_support = state.support.with_psi(psi)
    try:
        new_model, flux = _transfer(model, state.flux, new_support, ctx)
    except (SolverError, ConfigurationError) as exc:
        log.info("vacuum trim skipped: %s", exc)
        return state
    Wn = new_model.nodes(flux)
    if np.any(Wn[0][new_model.ops.inside & ~new_model.face] <= 0):
        return state
    E = new_model.energy(Wn)
    E0 = state.energy
    if E > E0 + s.tol("tol_mono") and s.relax_iters:
        flux, E = _relaxed(state, new_model, flux, E, s.relax_iters)
    if E > E0 + s.tol("tol_mono"):
        log.info("vacuum trim rejected: energy %.6e -> %.6e", E0, E)
        return state
    log.debug("trimmed %d near-vacuum nodes", int(low.sum()))
    ctx.model = new_model
    return replace(state, w=_field(new_model, flux), support=new_support,
                   energy_history=state.energy_history[:-1] + [E])


def boundary_speed(model, Wn, phi):
    """Outward normal speed -W . (V - grad phi) on the boundary layer of Omega."""
    support = model.support
    V = model.extended_velocity(Wn)
    mask = InteriorMask(support.grid, model.ops.inside)
    gphi = gradient(ScalarLattice(support.grid, phi, model.ops.inside), mask).values
    F = -np.sum(Wn * (V - gphi), axis=0)
    layer = support.boundary_layer()
    return ScalarLattice(support.grid, np.where(layer, F, np.nan), layer)


def descent_step_evolving_support(state: SolverState, constraint: ConstraintMask | None = None):
    """Dirichlet-projected W step plus the matching motion of Gamma."""
    ctx = state.context
    s = ctx.schedule
    constraint = constraint if constraint is not None else ctx.constraint
    model = ctx.model_for(state.support)
    Wn = model.nodes(state.flux)
    V = model.extended_velocity(Wn)
    grid = state.support.grid
    a0 = s.tol("alpha0")
    if a0 == "potential":
        _, _, phi_n = projected_gradient(state)
        a0 = -phi_n[0]
    alpha = solve_alpha(VectorLattice(grid, Wn, model.ops.inside),
                        VectorLattice(grid, V, model.ops.inside), state.support,
                        alpha0=a0, rho_floor=ctx.rho_floor)
    g, gp, phi = projected_gradient(state, "dirichlet", -alpha.alpha.values)
    gnorm = np.sqrt(model.edge_norm2(gp))
    dflux = [-x for x in gp]
    dWn = model.dnodes(dflux)
    res = newton_line_search(Wn, dWn, model.ops.Mn, ctx.rho_floor, s.tol("c_safe"),
                             s.tol("newton_tol"), s.tol("newton_iters"))
    gamma = res.gamma
    if gamma == 0.0:
        raise StepFailure("no admissible step along the Dirichlet direction")
    F = boundary_speed(model, Wn, phi)
    cand = [a + gamma * d for a, d in zip(state.flux, dflux)]
    step = s.boundary_step_scale * gamma
    E0 = state.energy
    last = "no attempt"
    for attempt in range(s.tol("max_halvings") + 1):
        try:
            new_support = evolve_boundary(state.support, F, step, constraint, s.reinit_every)
        except StepRejected as exc:
            step = exc.admissible_step
            new_support = evolve_boundary(state.support, F, step, constraint, s.reinit_every)
        try:
            new_model, flux = _transfer(model, cand, new_support, ctx)
        except (SolverError, ConfigurationError) as exc:
            last = str(exc)
            step *= 0.5
            continue
        Wnew = new_model.nodes(flux)
        interior = new_model.ops.inside & ~new_model.face
        if np.any(Wnew[0][interior] <= 0):
            last = "density lost positivity on the moved support"
            step *= 0.5
            continue
        E = new_model.energy(Wnew)
        moved = not np.array_equal(new_support.inside, state.support.inside)
        if E > E0 + s.tol("tol_mono") and moved and s.relax_iters:
            # a node entering or leaving costs a jump; let W settle on the new support
            flux, E = _relaxed(state, new_model, flux, E, s.relax_iters)
        if E > E0 + s.tol("tol_mono"):
            last = f"energy rose from {E0:.6e} to {E:.6e}"
            step *= 0.5
            continue
        ctx.model = new_model
        return replace(state, w=_field(new_model, flux), support=new_support,
                       iteration=state.iteration + 1, energy_history=state.energy_history + [E],
                       last_gamma=gamma, phase="dirichlet", grad_norm=gnorm, phi=phi,
                       converged=False)
    raise StepFailure(f"evolving-support step failed after {s.tol('max_halvings')} halvings: {last}")


def run(state: SolverState, callback=None):
    """Fixed-support phase, then the evolving-support phase.

    A failed evolving-support step falls back to one fixed-support step.
    `callback(state)` is called after every step.  A resumed state only
    uses what is left of both budgets.
    """
    s = state.context.schedule
    try:
        if state.phase != "dirichlet":
            for _ in range(max(0, s.neumann_iters - state.iteration)):
                state = trim_vacuum(descent_step_fixed_support(state))
                if callback:
                    callback(state)
                if state.converged:
                    break
        left = s.dirichlet_iters - state.dirichlet_steps
        if left > 0:
            state = replace(state, converged=False)
        for _ in range(max(0, left)):
            try:
                state = descent_step_evolving_support(state)
            except StepFailure as exc:
                log.info("falling back to a fixed-support step: %s", exc)
                state = descent_step_fixed_support(state)
                state = replace(state, fallbacks=state.fallbacks + 1, phase="dirichlet")
            state = trim_vacuum(replace(state, dirichlet_steps=state.dirichlet_steps + 1))
            if callback:
                callback(state)
            if state.converged:
                break
    except Exception as exc:
        exc.state = state
        raise
    return state
