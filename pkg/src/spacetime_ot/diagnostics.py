"""Monitors for a solver state: action, residuals, slice masses, density maps."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .optimizer import SolverState, projected_gradient

ANGULAR_BINS = 32
HJ_MARGIN = 2


@dataclass
class DiagnosticsReport:
    action: float
    div_residual: float
    flux_residual: float
    hj_residual: float
    slice_mass: np.ndarray
    density_rise: np.ndarray
    symmetry_deviation: float
    rise_slice: int = 0

    def to_json(self, **extra):
        """Scalars plus the slice masses; the rise map is summarised by its peak."""
        d = asdict(self)
        d["slice_mass"] = [float(m) for m in self.slice_mass]
        rise = d.pop("density_rise")
        d["density_rise_peak"] = float(np.max(rise)) if rise.size else 0.0
        d["density_rise_min"] = float(np.min(rise)) if rise.size else 0.0
        d.update(extra)
        return {k: (float(v) if isinstance(v, (np.floating, float)) else v) for k, v in d.items()}


def density_nodes(state: SolverState):
    model = state.context.model_for(state.support)
    return np.where(model.ops.inside, model.nodes(state.flux)[0], 0.0)


def flux_residuals(state: SolverState):
    """(max |D W - b| off the faces, max |D W - b| on the face nodes).

    Walls carry no flux by construction (edges leaving the support do not
    exist), so the face part is what remains of the prescribed flux data.
    """
    model = state.context.model_for(state.support)
    r = np.abs(model.ops.div(state.flux) - model.b)
    inner = model.ops.inside & ~model.face
    # scale to a density so the face and interior parts are comparable
    r = r * model.ops.grid.spacing[0]
    div = float(r[inner].max()) if inner.any() else 0.0
    face = float(r[model.face].max()) if model.face.any() else 0.0
    return div, face


def hj_mask(inside):
    """Nodes at least HJ_MARGIN cells from the lateral boundary and from both faces."""
    nd = inside.ndim
    st = np.zeros((1,) + (3,) * (nd - 1), bool)
    st[0] = True
    core = ndimage.binary_erosion(inside, structure=st, iterations=HJ_MARGIN, border_value=0)
    # the time neighbours must exist for the central difference
    core[1:-1] &= inside[:-2] & inside[2:]
    core[:HJ_MARGIN] = False
    core[-HJ_MARGIN:] = False
    return core


def hj_residual(phi, inside, grid):
    """Weighted RMS of phi_t + |grad_x phi|^2 / 2 with central differences."""
    core = hj_mask(inside)
    if not core.any():
        return 0.0
    g = np.gradient(np.where(inside, phi, 0.0), *grid.spacing, edge_order=1)
    r = g[0] + 0.5 * sum(gi * gi for gi in g[1:])
    w = grid.node_weights()[core]
    return float(np.sqrt(np.sum(w * r[core] ** 2) / np.sum(w)))


def slice_mass(rho, grid):
    return rho.reshape(rho.shape[0], -1).sum(axis=1) * grid.spatial_cell_volume


def density_rise(rho, grid, t_star=0.5):
    k = grid.time_index(t_star)
    return rho[k] - rho[0], k


def symmetry_deviation(rise, grid, center, mask=None, bins=ANGULAR_BINS):
    """Max over (angle, radius) bins of |bin mean - ring mean| for 2D fields."""
    if grid.spatial_dims != 2:
        return 0.0
    xs = grid.spatial_mesh()
    dx, dy = xs[0] - center[0], xs[1] - center[1]
    r = np.hypot(dx, dy)
    th = np.arctan2(dy, dx)
    if mask is None:
        mask = np.ones(rise.shape, bool)
    h = max(grid.spacing[1:])
    rb = np.floor(r / h).astype(int)
    ab = np.minimum(((th + np.pi) / (2 * np.pi) * bins).astype(int), bins - 1)
    dev = 0.0
    for ring in np.unique(rb[mask]):
        sel = mask & (rb == ring)
        ring_mean = rise[sel].mean()
        for a in np.unique(ab[sel]):
            dev = max(dev, abs(rise[sel & (ab == a)].mean() - ring_mean))
    return float(dev)


def report(state: SolverState, phi=None, t_star=0.5, center=None) -> DiagnosticsReport:
    """Monitors for `state`; phi defaults to a fresh Neumann projection."""
    grid = state.support.grid
    model = state.context.model_for(state.support)
    if phi is None:
        _, _, phi = projected_gradient(state)
    rho = density_nodes(state)
    div, face = flux_residuals(state)
    rise, k = density_rise(rho, grid, t_star)
    if center is None:
        from .support_geometry import centroid
        center = centroid(model.face_rho[0] > 0, grid)
    # compare only cells fully covered at t = 0 that belong to Omega at t*
    r0 = model.face_rho[0]
    full = (r0 >= (1 - 1e-9) * r0.max()) & model.ops.inside[k]
    sym = symmetry_deviation(rise, grid, center, full)
    return DiagnosticsReport(
        action=model.energy(model.nodes(state.flux)),
        div_residual=div,
        flux_residual=face,
        hj_residual=hj_residual(phi, model.ops.inside, grid),
        slice_mass=slice_mass(rho, grid),
        density_rise=rise,
        symmetry_deviation=sym,
        rise_slice=k)


def wasserstein_estimate(state_or_action) -> float:
    """W2 = sqrt(2 * action)."""
    a = getattr(state_or_action, "energy", state_or_action)
    return float(np.sqrt(2.0 * max(float(a), 0.0)))


def time_symmetry(rho):
    """Max over t of ||rho(t) - rho(1-t)||_1 / ||rho(t)||_1."""
    worst = 0.0
    for k in range(rho.shape[0] // 2):
        a, b = rho[k], rho[-1 - k]
        worst = max(worst, float(np.abs(a - b).sum() / max(np.abs(a).sum(), 1e-300)))
    return worst


def half_peaks(rise, grid, center):
    """Peak rise on the bottom (x_1 < c_1) and top halves."""
    x1 = grid.spatial_mesh()[0]
    bottom = x1 < center[0]
    return float(rise[bottom].max()), float(rise[~bottom].max())


def mass_drift(masses):
    m = np.asarray(masses, float)
    ref = max(abs(m[0]), 1e-300)
    return float(np.max(np.abs(m - m[0])) / ref)


class JsonlWriter:
    """Line-delimited JSON, one report per iteration."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def write(self, rep: DiagnosticsReport, iteration, gamma, **extra):
        rec = rep.to_json(iteration=int(iteration), gamma=float(gamma), **extra)
        self._fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
