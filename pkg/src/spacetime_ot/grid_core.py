"""Space-time lattice, node fields and discrete differential operators.

Axis 0 is time and always spans [0, 1]; axes 1..n are spatial.

Two operator families live here.

* Collocated node operators (`gradient`, `divergence`, `laplacian`,
  `upwind_directional`) acting on `ScalarLattice` / `VectorLattice`.
  Central differences in the interior, one-sided first-order stencils
  where a neighbour leaves the domain, divergence built as the negative
  adjoint of the gradient.
* `FluxOperators`, the staggered finite-volume pair used by the solver:
  potentials on nodes, fluxes on the edges joining two inside nodes.
  Its divergence is again the exact negative adjoint of its gradient and
  its Laplacian is the compact (2n+3)-point stencil.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DataError


# ---------------------------------------------------------------------------
# grid and lattices


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform lattice over [0, 1] x spatial box."""

    shape: tuple
    spacing: tuple
    spatial_origin: tuple

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        spacing = tuple(float(h) for h in self.spacing)
        origin = tuple(float(o) for o in self.spatial_origin)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "spatial_origin", origin)
        if len(shape) < 2 or len(spacing) != len(shape) or len(origin) != len(shape) - 1:
            raise ConfigurationError(
                f"inconsistent grid description: shape={shape}, spacing={spacing}, origin={origin}")
        if shape[0] < 2:
            raise ConfigurationError("need at least two time samples")
        if any(s < 2 for s in shape):
            raise ConfigurationError(f"every axis needs at least two samples, got {shape}")
        if any(not h > 0 for h in spacing):
            raise ConfigurationError(f"spacings must be positive, got {spacing}")
        if abs(spacing[0] * (shape[0] - 1) - 1.0) > 1e-12:
            raise ConfigurationError("time axis must span exactly [0, 1]")

    @classmethod
    def from_box(cls, shape, lo, hi):
        """Grid whose spatial samples include both box corners."""
        shape = tuple(int(s) for s in shape)
        lo = np.atleast_1d(np.asarray(lo, float))
        hi = np.atleast_1d(np.asarray(hi, float))
        if lo.size != len(shape) - 1 or hi.size != lo.size:
            raise ConfigurationError("box corners do not match the spatial dimension")
        if np.any(hi <= lo):
            raise ConfigurationError("box upper corner must exceed lower corner")
        if any(s < 2 for s in shape):
            raise ConfigurationError(f"every axis needs at least two samples, got {shape}")
        spacing = (1.0 / (shape[0] - 1),) + tuple((hi - lo) / (np.array(shape[1:]) - 1))
        return cls(shape, spacing, tuple(lo))

    @property
    def spatial_dims(self):
        return len(self.shape) - 1

    @property
    def ndim(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def spatial_cell_volume(self):
        return float(np.prod(self.spacing[1:]))

    def axes(self):
        t = np.linspace(0.0, 1.0, self.shape[0])
        xs = [o + h * np.arange(n) for o, h, n in
              zip(self.spatial_origin, self.spacing[1:], self.shape[1:])]
        return [t] + xs

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def spatial_mesh(self):
        return np.meshgrid(*self.axes()[1:], indexing="ij")

    def spatial_box(self):
        lo = np.array(self.spatial_origin)
        hi = lo + np.array(self.spacing[1:]) * (np.array(self.shape[1:]) - 1)
        return lo, hi

    def node_weights(self):
        """Trapezoidal quadrature weights in time times the spatial cell volume."""
        w = np.full(self.shape, self.cell_volume)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def time_index(self, t):
        """Index of the slice nearest to time t."""
        if not 0.0 <= t <= 1.0:
            raise ConfigurationError(f"time {t} outside [0, 1]")
        return int(round(t * (self.shape[0] - 1)))

    def to_dict(self):
        return {"shape": list(self.shape), "spacing": list(self.spacing),
                "spatial_origin": list(self.spatial_origin)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["shape"]), tuple(d["spacing"]), tuple(d["spatial_origin"]))


@dataclass
class ScalarLattice:
    """One scalar per node plus an explicit defined flag."""

    grid: SpaceTimeGrid
    values: np.ndarray
    defined: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ConfigurationError(
                f"scalar lattice shape {self.values.shape} != grid shape {self.grid.shape}")
        if self.defined is None:
            self.defined = np.ones(self.grid.shape, bool)
        self.defined = np.asarray(self.defined, bool)

    def masked(self, fill=np.nan):
        return np.where(self.defined, self.values, fill)


@dataclass
class VectorLattice:
    """One (n+1)-vector per node, component 0 temporal."""

    grid: SpaceTimeGrid
    values: np.ndarray
    defined: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        want = (self.grid.ndim,) + self.grid.shape
        if self.values.shape != want:
            raise ConfigurationError(f"vector lattice shape {self.values.shape} != {want}")
        if self.defined is None:
            self.defined = np.ones(self.grid.shape, bool)
        self.defined = np.asarray(self.defined, bool)


# ---------------------------------------------------------------------------
# masks and slicing helpers


def _sl(ndim, axis, s):
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def neighbour_flags(inside, axis):
    """(has_lo, has_hi): whether the neighbour along `axis` is inside."""
    nd = inside.ndim
    lo = np.zeros_like(inside)
    hi = np.zeros_like(inside)
    lo[_sl(nd, axis, slice(1, None))] = inside[_sl(nd, axis, slice(None, -1))]
    hi[_sl(nd, axis, slice(None, -1))] = inside[_sl(nd, axis, slice(1, None))]
    return lo & inside, hi & inside


@dataclass
class InteriorMask:
    """Nodes of Omega together with full-stencil flags."""

    grid: SpaceTimeGrid
    inside: np.ndarray
    interior: np.ndarray = field(init=False)

    def __post_init__(self):
        self.inside = np.asarray(self.inside, bool)
        if self.inside.shape != self.grid.shape:
            raise ConfigurationError("mask shape does not match grid")
        full = self.inside.copy()
        for a in range(self.grid.ndim):
            lo, hi = neighbour_flags(self.inside, a)
            full &= lo & hi
        self.interior = full

    @classmethod
    def full(cls, grid):
        return cls(grid, np.ones(grid.shape, bool))

    @property
    def boundary_adjacent(self):
        return self.inside & ~self.interior


def _check_grid(mask, *lattices):
    for lat in lattices:
        if lat.grid != mask.grid:
            raise ConfigurationError("grid mismatch between lattice and mask")


# ---------------------------------------------------------------------------
# collocated operators


def _gradient_matrices(mask):
    """Sparse per-axis derivative matrices on the full flat grid."""
    grid, inside = mask.grid, mask.inside
    n = grid.size
    idx = np.arange(n).reshape(grid.shape)
    mats = []
    for a, h in enumerate(grid.spacing):
        lo, hi = neighbour_flags(inside, a)
        stride = int(np.prod(grid.shape[a + 1:]))
        both = lo & hi
        only_hi = hi & ~lo
        only_lo = lo & ~hi
        rows, cols, vals = [], [], []

        def add(sel, offs, coef):
            r = idx[sel]
            for o, c in zip(offs, coef):
                rows.append(r)
                cols.append(r + o * stride)
                vals.append(np.full(r.size, c))

        add(both, (1, -1), (0.5 / h, -0.5 / h))
        add(only_hi, (1, 0), (1.0 / h, -1.0 / h))
        add(only_lo, (0, -1), (1.0 / h, -1.0 / h))
        rows = np.concatenate(rows)
        mats.append(sp.csr_matrix((np.concatenate(vals), (rows, np.concatenate(cols))),
                                  shape=(n, n)))
    return mats


def gradient(f: ScalarLattice, mask: InteriorMask) -> VectorLattice:
    """Central differences inside, one-sided where the stencil leaves Omega."""
    _check_grid(mask, f)
    src = np.where(mask.inside, f.values, 0.0).ravel()
    if np.any(mask.inside & ~f.defined):
        raise DataError("gradient of a lattice undefined inside the mask")
    out = np.stack([(G @ src).reshape(f.grid.shape) for G in _gradient_matrices(mask)])
    out[:, ~mask.inside] = 0.0
    return VectorLattice(f.grid, out, mask.inside.copy())


def divergence(w: VectorLattice, mask: InteriorMask) -> ScalarLattice:
    """Negative adjoint of `gradient` under the masked node inner product."""
    _check_grid(mask, w)
    if np.any(mask.inside & ~w.defined):
        raise DataError("divergence of a lattice undefined inside the mask")
    acc = np.zeros(w.grid.size)
    for a, G in enumerate(_gradient_matrices(mask)):
        acc -= G.T @ np.where(mask.inside, w.values[a], 0.0).ravel()
    out = acc.reshape(w.grid.shape)
    out[~mask.inside] = 0.0
    return ScalarLattice(w.grid, out, mask.inside.copy())


def upwind_directional(f: ScalarLattice, w: VectorLattice, mask: InteriorMask) -> ScalarLattice:
    """First-order upwind w . grad f; the stencil looks against the flow."""
    _check_grid(mask, f, w)
    if np.any(mask.inside & ~w.defined):
        raise DataError("advecting field undefined inside the mask")
    nd = f.grid.ndim
    fv = np.where(mask.inside, f.values, 0.0)
    out = np.zeros(f.grid.shape)
    for a, h in enumerate(f.grid.spacing):
        lo, hi = neighbour_flags(mask.inside, a)
        back = np.zeros_like(fv)
        fwd = np.zeros_like(fv)
        back[_sl(nd, a, slice(1, None))] = np.diff(fv, axis=a) / h
        fwd[_sl(nd, a, slice(None, -1))] = np.diff(fv, axis=a) / h
        wa = w.values[a]
        use_back = np.where(wa > 0, lo, ~hi & lo)
        use_fwd = np.where(wa > 0, ~lo & hi, hi)
        d = np.where(use_back, back, np.where(use_fwd, fwd, 0.0))
        out += wa * d
    out[~mask.inside] = 0.0
    return ScalarLattice(f.grid, out, mask.inside.copy())


def laplacian(f: ScalarLattice, bc, mask: InteriorMask, psi=None) -> ScalarLattice:
    """Compact Laplacian with boundary values synthesized from `bc`.

    `bc` is an `elliptic.BoundarySpec`; `psi` locates the interface for
    lateral Dirichlet data.
    """
    from .elliptic import assemble_system

    _check_grid(mask, f)
    ops = FluxOperators(mask.grid, mask.inside)
    K, rhs_bc = assemble_system(ops, bc, psi)
    u = ops.compress(f.values)
    out = ops.expand((-(K @ u) + rhs_bc) / ops.compress(ops.Mn))
    return ScalarLattice(f.grid, out, mask.inside.copy())


# ---------------------------------------------------------------------------
# staggered flux operators


class FluxOperators:
    """Node potentials, edge fluxes, exact discrete integration by parts.

    An edge along axis a joins two inside nodes that are neighbours along
    a.  Edges touching an outside node do not exist: they act as walls.
    Node weights Mn are the trapezoidal cell volumes; edge weights Me are
    the cell volume, halved for spatial edges lying on a temporal face.
    """

    def __init__(self, grid: SpaceTimeGrid, inside):
        self.grid = grid
        self.inside = np.asarray(inside, bool)
        if self.inside.shape != grid.shape:
            raise ConfigurationError("mask shape does not match grid")
        nd = grid.ndim
        self.ndim = nd
        self.Mn = np.where(self.inside, grid.node_weights(), 0.0)
        self.edges = []
        self.Me = []
        for a in range(nd):
            e = self.inside[_sl(nd, a, slice(None, -1))] & self.inside[_sl(nd, a, slice(1, None))]
            m = np.full(e.shape, grid.cell_volume)
            if a > 0:
                m[0] *= 0.5
                m[-1] *= 0.5
            self.edges.append(e)
            self.Me.append(np.where(e, m, 0.0))
        self.flat = np.flatnonzero(self.inside.ravel())
        self.n_inside = self.flat.size
        self._index = np.full(grid.size, -1, dtype=np.int64)
        self._index[self.flat] = np.arange(self.n_inside)
        self._L = None

    # -- layout
    def compress(self, full):
        return np.asarray(full).ravel()[self.flat]

    def expand(self, vec, fill=0.0):
        out = np.full(self.grid.size, fill, dtype=float)
        out[self.flat] = vec
        return out.reshape(self.grid.shape)

    def zeros_edges(self):
        return [np.zeros(e.shape) for e in self.edges]

    # -- operators
    def grad(self, phi):
        """Edge differences; zero on missing edges."""
        h = self.grid.spacing
        return [np.where(e, np.diff(phi, axis=a) / h[a], 0.0)
                for a, e in enumerate(self.edges)]

    def div(self, flux):
        """-Mn^{-1} G^T Me flux, zero outside."""
        nd, h = self.ndim, self.grid.spacing
        acc = np.zeros(self.grid.shape)
        for a in range(nd):
            q = self.Me[a] * flux[a] / h[a]
            acc[_sl(nd, a, slice(None, -1))] += q
            acc[_sl(nd, a, slice(1, None))] -= q
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.inside, acc / np.where(self.inside, self.Mn, 1.0), 0.0)

    def to_nodes(self, flux):
        """Half-sum of the two adjacent edges per axis, missing edges count as zero."""
        nd = self.ndim
        out = np.zeros((nd,) + self.grid.shape)
        for a in range(nd):
            q = 0.5 * np.where(self.edges[a], flux[a], 0.0)
            out[a][_sl(nd, a, slice(None, -1))] += q
            out[a][_sl(nd, a, slice(1, None))] += q
        out[:, ~self.inside] = 0.0
        return out

    def to_nodes_T(self, nodal):
        """Transpose of `to_nodes` (unweighted)."""
        nd = self.ndim
        out = []
        for a in range(nd):
            v = np.where(self.inside, nodal[a], 0.0)
            s = 0.5 * (v[_sl(nd, a, slice(None, -1))] + v[_sl(nd, a, slice(1, None))])
            out.append(np.where(self.edges[a], s, 0.0))
        return out

    def interpolate(self, nodal):
        """Edge value as the mean of its two end nodes (for generic fields)."""
        return self.to_nodes_T(nodal)

    def inner_edges(self, a, b):
        return float(sum(np.sum(m * x * y) for m, x, y in zip(self.Me, a, b)))

    def inner_nodes(self, a, b):
        return float(np.sum(self.Mn * a * b))

    # -- matrices
    def laplacian_matrix(self):
        """L = G^T Me G on inside nodes (symmetric positive semidefinite)."""
        if self._L is None:
            nd, h = self.ndim, self.grid.spacing
            idx = self._index.reshape(self.grid.shape)
            rows, cols, vals = [], [], []
            diag = np.zeros(self.n_inside)
            for a in range(nd):
                e = self.edges[a]
                i = idx[_sl(nd, a, slice(None, -1))][e]
                j = idx[_sl(nd, a, slice(1, None))][e]
                c = self.Me[a][e] / h[a] ** 2
                rows += [i, j]
                cols += [j, i]
                vals += [-c, -c]
                np.add.at(diag, i, c)
                np.add.at(diag, j, c)
            r = np.concatenate(rows + [np.arange(self.n_inside)])
            cc = np.concatenate(cols + [np.arange(self.n_inside)])
            v = np.concatenate(vals + [diag])
            self._L = sp.csr_matrix((v, (r, cc)), shape=(self.n_inside,) * 2)
        return self._L

    def crossings(self):
        """Missing neighbours of inside nodes.

        Yields (axis, side, node_index_full, neighbour_index_full_or_-1,
        weight, on_face) where weight = Me_edge / h_axis^2 of the missing
        edge and on_face marks a temporal-face crossing.
        """
        nd, h = self.ndim, self.grid.spacing
        shape = self.grid.shape
        cell = self.grid.cell_volume
        for a in range(nd):
            has_lo, has_hi = neighbour_flags(self.inside, a)
            stride = int(np.prod(shape[a + 1:]))
            for side, has in ((-1, has_lo), (1, has_hi)):
                miss = self.inside & ~has
                nodes = np.flatnonzero(miss.ravel())
                if nodes.size == 0:
                    continue
                pos = np.unravel_index(nodes, shape)[a]
                at_edge = pos == (0 if side < 0 else shape[a] - 1)
                nbr = np.where(at_edge, -1, nodes + side * stride)
                w = np.full(nodes.size, cell / h[a] ** 2)
                if a > 0:
                    trow = np.unravel_index(nodes, shape)[0]
                    w = np.where((trow == 0) | (trow == shape[0] - 1), 0.5 * w, w)
                on_face = at_edge if a == 0 else np.zeros(nodes.size, bool)
                yield a, side, nodes, nbr, w, on_face
