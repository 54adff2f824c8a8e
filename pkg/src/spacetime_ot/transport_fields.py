"""Conversions between W = (rho, p), U = (1, v) and V = (-|v|^2/2, v)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, PositivityError
from .grid_core import ScalarLattice, SpaceTimeGrid, VectorLattice

TOL_MASS = 1e-8
RHO_FLOOR_REL = 1e-8


@dataclass
class SolenoidalField:
    """Node view `w` of the field; `flux` keeps the edge representation when known."""

    w: VectorLattice
    flux: list | None = None

    @property
    def grid(self):
        return self.w.grid

    @property
    def rho(self):
        return self.w.values[0]

    @property
    def momentum(self):
        return self.w.values[1:]


@dataclass
class FluxSpec:
    """Face densities rho0 (t = 0) and rho1 (t = 1) on the spatial grid."""

    grid: SpaceTimeGrid
    rho0: np.ndarray
    rho1: np.ndarray
    check_balance: bool = True

    def __post_init__(self):
        self.rho0 = np.asarray(self.rho0, float)
        self.rho1 = np.asarray(self.rho1, float)
        if self.rho0.shape != self.grid.shape[1:] or self.rho1.shape != self.grid.shape[1:]:
            raise ConfigurationError("face densities must live on the spatial grid")
        if np.any(self.rho0 < 0) or np.any(self.rho1 < 0):
            raise ConfigurationError("face densities must be non-negative")
        if not (self.rho0.any() and self.rho1.any()):
            raise ConfigurationError("face densities must have non-empty support")
        if self.check_balance and self.imbalance() > TOL_MASS:
            raise ConfigurationError(
                f"unbalanced masses: {self.mass0:.10g} at t=0 vs {self.mass1:.10g} at t=1")

    @property
    def mass0(self):
        return float(self.rho0.sum() * self.grid.spatial_cell_volume)

    @property
    def mass1(self):
        return float(self.rho1.sum() * self.grid.spatial_cell_volume)

    def imbalance(self):
        return abs(self.mass0 - self.mass1) / max(self.mass0, self.mass1)

    @property
    def face_mask_0(self):
        return self.rho0 > 0

    @property
    def face_mask_1(self):
        return self.rho1 > 0

    def rho_floor(self):
        """RHO_FLOOR_REL times the mean face density over the face supports."""
        m = np.concatenate([self.rho0[self.rho0 > 0], self.rho1[self.rho1 > 0]])
        return RHO_FLOOR_REL * float(m.mean())


def _as_lattice(w):
    return w.w if isinstance(w, SolenoidalField) else w


def velocity(w, rho_floor=0.0, on_floor="raise"):
    """v = p / rho and the mask of nodes where it is defined."""
    lat = _as_lattice(w)
    rho = lat.values[0]
    ok = lat.defined & (rho > rho_floor)
    low = lat.defined & ~ok
    if on_floor == "raise" and low.any():
        node = tuple(int(i) for i in np.argwhere(low)[0])
        raise PositivityError(f"density {rho[node]:.3e} at or below floor {rho_floor:.3e}", node)
    v = np.where(ok, lat.values[1:] / np.where(ok, rho, 1.0), 0.0)
    return v, ok


def extended_velocity(w, rho_floor=0.0, on_floor="raise") -> VectorLattice:
    """V = W/rho - ((W.W)/rho^2 + 1)/2 e0 = (-|v|^2/2, v)."""
    lat = _as_lattice(w)
    v, ok = velocity(lat, rho_floor, on_floor)
    V = np.concatenate([(-0.5 * np.sum(v * v, axis=0))[None], v])
    V[:, ~ok] = 0.0
    return VectorLattice(lat.grid, V, ok)


def extended_velocity_from_w(W):
    """The same quantity written in terms of W only (raw arrays, rho > 0)."""
    rho = W[0]
    ww = np.sum(W * W, axis=0)
    out = W / rho
    out[0] -= 0.5 * (ww / rho**2 + 1.0)
    return out


def advection_field(w, rho_floor=0.0, on_floor="raise") -> VectorLattice:
    """U = W / rho = (1, v)."""
    lat = _as_lattice(w)
    v, ok = velocity(lat, rho_floor, on_floor)
    U = np.concatenate([np.ones((1,) + lat.grid.shape), v])
    U[:, ~ok] = 0.0
    return VectorLattice(lat.grid, U, ok)


def kinetic_energy_density(w, rho_floor=0.0, on_floor="raise") -> ScalarLattice:
    """T = W.V = rho |v|^2 / 2."""
    lat = _as_lattice(w)
    V = extended_velocity(lat, rho_floor, on_floor)
    T = np.sum(lat.values * V.values, axis=0)
    T[~V.defined] = 0.0
    return ScalarLattice(lat.grid, T, V.defined)


def action(w, support, rho_floor=0.0, on_floor="raise") -> float:
    """Trapezoid-in-time quadrature of T over Omega."""
    lat = _as_lattice(w)
    inside = support.inside
    sub = VectorLattice(lat.grid, lat.values, lat.defined & inside)
    T = kinetic_energy_density(sub, rho_floor, on_floor)
    return float(np.sum(lat.grid.node_weights() * np.where(inside, T.values, 0.0)))


def slice_mass(w, support):
    """Sum over each slice of rho dx."""
    lat = _as_lattice(w)
    rho = np.where(support.inside, lat.values[0], 0.0)
    return rho.reshape(rho.shape[0], -1).sum(axis=1) * lat.grid.spatial_cell_volume
