"""Poisson solves on the embedded domain and Helmholtz projection.

The discrete operator is the compact Laplacian of `FluxOperators`
written as Mn * Lap(phi) = -K phi + r_bc, with K symmetric positive
semidefinite.  Temporal faces and lateral Neumann pieces enter through
r_bc; lateral Dirichlet data adds a diagonal term w / theta where theta
is the fractional distance to the interface along the grid line.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import ConfigurationError, SolverError
from .grid_core import FluxOperators, ScalarLattice, VectorLattice

THETA_MIN = 1e-2
DIRECT_LIMIT = 20000


@dataclass
class BoundarySpec:
    """Boundary data per piece of the boundary.

    face0, face1: outward normal derivative on the temporal faces
    (spatial arrays, None means zero).  lateral_kind is "neumann" or
    "dirichlet"; lateral holds, per node of the full grid, the outward
    derivative or the boundary value seen from that node (None means 0).
    """

    face0: np.ndarray | None = None
    face1: np.ndarray | None = None
    lateral_kind: str = "neumann"
    lateral: np.ndarray | None = None

    def __post_init__(self):
        if self.lateral_kind not in ("neumann", "dirichlet"):
            raise ConfigurationError(f"unknown lateral condition {self.lateral_kind!r}")

    @property
    def all_neumann(self):
        return self.lateral_kind == "neumann"


@dataclass
class EllipticSolution:
    phi: ScalarLattice
    residual_norm: float
    iterations: int
    compat_residual: float = 0.0


def _theta(psi, node, nbr):
    if psi is None:
        return np.ones(node.size)
    p = psi.ravel()
    th = np.ones(node.size)
    ok = nbr >= 0
    pi, pj = p[node[ok]], p[nbr[ok]]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where((pj > pi) & (pj > 0), -pi / (pj - pi), 1.0)
    th[ok] = np.where(pi < 0, t, 1.0)
    return np.clip(th, THETA_MIN, 1.0)


def assemble_system(ops: FluxOperators, bc: BoundarySpec, psi=None, dirichlet_on_faces=False):
    """Return (K, r_bc) on compressed inside nodes.

    Lateral Dirichlet crossings on the temporal face rows are treated as
    homogeneous Neumann unless `dirichlet_on_faces` is set, so that the
    face conditions survive a Dirichlet projection.
    """
    grid = ops.grid
    K = ops.laplacian_matrix()
    rhs = np.zeros(ops.n_inside)
    diag = np.zeros(ops.n_inside)
    h = grid.spacing
    nt = grid.shape[0]
    face_data = {0: bc.face0, nt - 1: bc.face1}
    lat = None if bc.lateral is None else np.asarray(bc.lateral, float).ravel()
    for a, side, node, nbr, w, on_face in ops.crossings():
        ci = ops._index[node]
        if a == 0 and np.any(on_face):
            trow = np.unravel_index(node, grid.shape)[0]
            for row, data in face_data.items():
                sel = on_face & (trow == row) & ((side < 0) == (row == 0))
                if not np.any(sel) or data is None:
                    continue
                spatial = np.unravel_index(node[sel], grid.shape)[1:]
                g = np.asarray(data, float)[spatial]
                np.add.at(rhs, ci[sel], w[sel] * h[a] * g)
        lateral = ~on_face
        if not np.any(lateral):
            continue
        if bc.lateral_kind == "neumann":
            if lat is not None:
                np.add.at(rhs, ci[lateral], w[lateral] * h[a] * lat[node[lateral]])
            continue
        trow = np.unravel_index(node, grid.shape)[0]
        on_face_row = (trow == 0) | (trow == nt - 1)
        sel = lateral if dirichlet_on_faces else lateral & ~on_face_row
        if not np.any(sel):
            continue
        u = np.zeros(node.size) if lat is None else lat[node]
        if not np.all(np.isfinite(u[sel])):
            raise ConfigurationError("Dirichlet data missing on part of the lateral boundary")
        th = _theta(psi, node, nbr)
        c = w / th
        np.add.at(diag, ci[sel], c[sel])
        np.add.at(rhs, ci[sel], c[sel] * u[sel])
    if np.any(diag):
        K = K + sp.diags(diag)
    return K.tocsr(), rhs


class PoissonSolver:
    """Solve K phi = f with gauge handling; caches its factorization.

    Components without any Dirichlet coupling are singular: the right
    hand side is projected to zero sum there, one node is pinned and the
    result is shifted to zero Mn-weighted mean.
    """

    def __init__(self, ops: FluxOperators, K, tol=1e-8, max_iters=None, method="auto"):
        self.ops = ops
        self.K = K.tocsr()
        self.tol = tol
        n = K.shape[0]
        self.max_iters = max_iters or int(10 * np.sqrt(max(n, 1)))
        ncomp, labels = connected_components(self.K, directed=False)
        self.labels = labels
        self.ncomp = ncomp
        rowsum = np.asarray(self.K.sum(axis=1)).ravel()
        scale = np.asarray(abs(self.K).sum(axis=1)).ravel()
        grounded = np.zeros(ncomp, bool)
        np.logical_or.at(grounded, labels, rowsum > 1e-12 * np.maximum(scale, 1e-300))
        self.singular = ~grounded
        self.weights = ops.compress(ops.Mn)
        if method == "auto":
            method = "direct" if (ops.grid.ndim <= 2 or n <= DIRECT_LIMIT) else "amg"
        self.method = method
        self._x0 = None
        pins = []
        for c in np.flatnonzero(self.singular):
            pins.append(np.flatnonzero(labels == c)[0])
        self.pins = np.array(pins, dtype=np.int64)
        keep = np.ones(n, bool)
        keep[self.pins] = False
        self.keep = np.flatnonzero(keep)
        # pinning one node per floating piece leaves an SPD system
        sub = self.K[self.keep][:, self.keep]
        if method == "direct":
            self._lu = spla.splu(sub.tocsc()) if self.keep.size else None
        else:
            import pyamg

            self._amg = pyamg.smoothed_aggregation_solver(sub.tocsr(), symmetry="hermitian")

    def _project_compatible(self, f):
        f = f.copy()
        if not np.any(self.singular):
            return f, 0.0
        bad = 0.0
        norm = np.abs(f).sum() + 1e-300
        for c in np.flatnonzero(self.singular):
            sel = self.labels == c
            s = f[sel].sum()
            bad = max(bad, abs(s) / norm)
            f[sel] -= s / sel.sum()
        return f, bad

    def _gauge(self, x):
        for c in np.flatnonzero(self.singular):
            sel = self.labels == c
            w = self.weights[sel]
            x[sel] -= np.sum(w * x[sel]) / np.sum(w)
        return x

    def solve(self, f):
        f, compat = self._project_compatible(np.asarray(f, float))
        fnorm = np.linalg.norm(f)
        if fnorm == 0.0:
            return np.zeros_like(f), 0.0, 0, compat
        iters = 1
        if self.method == "direct":
            x = np.zeros_like(f)
            if self._lu is not None:
                x[self.keep] = self._lu.solve(f[self.keep])
        else:
            res = []
            x = np.zeros_like(f)
            x[self.keep] = self._amg.solve(f[self.keep], x0=self._x0, tol=0.1 * self.tol,
                                           accel="cg", maxiter=self.max_iters, residuals=res)
            iters = len(res)
            self._x0 = x[self.keep].copy()
        x = self._gauge(x)
        r, _ = self._project_compatible(self.K @ x - f)
        rel = np.linalg.norm(r) / fnorm
        if not rel <= self.tol:
            raise SolverError(f"Poisson solve stalled: relative residual {rel:.3e}",
                              residual=rel, iterations=iters)
        return x, rel, iters, compat


def _compat_check(ops, bc, source_full, K, rhs_bc):
    total = np.sum(ops.Mn * source_full)
    bsum = rhs_bc.sum()
    scale = max(abs(total), abs(bsum), np.sum(np.abs(ops.Mn * source_full)), 1e-300)
    rel = abs(bsum - total) / scale
    if rel > 1e-6 and scale > 1e-14:
        raise ConfigurationError(
            f"incompatible Neumann data: boundary flux {bsum:.6e} vs source {total:.6e}")
    return rel


def solve_poisson(source: ScalarLattice, support, bc: BoundarySpec, tol=1e-8, max_iters=None):
    """Discrete Lap(phi) = source on Omega with boundary data `bc`."""
    if source.grid != support.grid:
        raise ConfigurationError("grid mismatch between source and support")
    ops = support.operators()
    # a plain boundary value problem: Dirichlet data hold up to the face rows
    K, rbc = assemble_system(ops, bc, support.psi.values, dirichlet_on_faces=True)
    src = np.where(ops.inside, source.values, 0.0)
    compat = 0.0
    if bc.all_neumann:
        compat = _compat_check(ops, bc, src, K, rbc)
    solver = PoissonSolver(ops, K, tol=tol, max_iters=max_iters)
    x, rel, iters, c2 = solver.solve(rbc - ops.compress(ops.Mn * src))
    phi = ScalarLattice(source.grid, ops.expand(x), ops.inside.copy())
    return EllipticSolution(phi, rel, iters, max(compat, c2))


# ---------------------------------------------------------------------------
# projection in edge space


class Projector:
    """Helmholtz projection of edge fields on a fixed Omega.

    Neumann mode: D G phi = D g, i.e. L phi = G^T Me g, natural boundary
    conditions on every piece.  Dirichlet mode: same operator plus lateral
    Dirichlet phi = data realized with interface fractions from psi.
    """

    def __init__(self, ops: FluxOperators, psi=None, tol=1e-10):
        self.ops = ops
        self.psi = psi
        self.tol = tol
        self._neumann = None

    def neumann_solver(self):
        if self._neumann is None:
            self._neumann = PoissonSolver(self.ops, self.ops.laplacian_matrix(), tol=self.tol)
        return self._neumann

    def rhs_from_edges(self, g):
        # G^T Me g = -Mn * div(g)
        return -self.ops.compress(self.ops.Mn * self.ops.div(g))

    def neumann(self, g):
        ops = self.ops
        phi, _, _, _ = self.neumann_solver().solve(self.rhs_from_edges(g))
        phi = ops.expand(phi)
        gphi = ops.grad(phi)
        return [a - b for a, b in zip(g, gphi)], phi

    def solve_divergence(self, target):
        """phi with D G phi = target (target compatible); returns edge gradient."""
        ops = self.ops
        phi, _, _, _ = self.neumann_solver().solve(-ops.compress(ops.Mn * target))
        phi = ops.expand(phi)
        return ops.grad(phi), phi

    def dirichlet(self, g, boundary_values):
        ops = self.ops
        bc = BoundarySpec(lateral_kind="dirichlet", lateral=boundary_values)
        K, rbc = assemble_system(ops, bc, self.psi)
        solver = PoissonSolver(ops, K, tol=self.tol)
        phi, _, _, _ = solver.solve(rbc + self.rhs_from_edges(g))
        phi = ops.expand(phi)
        gphi = ops.grad(phi)
        return [a - b for a, b in zip(g, gphi)], phi


def helmholtz_project(v: VectorLattice, support, lateral_mode="neumann", dirichlet_data=None,
                      tol=1e-10):
    """Split v = grad(phi) + v_perp on Omega.

    Node input is interpolated to edges, projected there and averaged back.
    lateral_mode "dirichlet" takes `dirichlet_data` (ScalarLattice or array
    of boundary values, e.g. -alpha).
    """
    if v.grid != support.grid:
        raise ConfigurationError("grid mismatch between field and support")
    ops = support.operators()
    proj = Projector(ops, support.psi.values, tol=tol)
    g = ops.interpolate(v.values)
    if lateral_mode == "neumann":
        gp, phi = proj.neumann(g)
    elif lateral_mode == "dirichlet":
        if dirichlet_data is None:
            raise ConfigurationError("Dirichlet projection needs boundary data")
        data = getattr(dirichlet_data, "values", dirichlet_data)
        gp, phi = proj.dirichlet(g, np.asarray(data, float))
    else:
        raise ConfigurationError(f"unknown lateral mode {lateral_mode!r}")
    vp = VectorLattice(v.grid, edge_mean_to_nodes(ops, gp), ops.inside.copy())
    return vp, ScalarLattice(v.grid, phi, ops.inside.copy())


def edge_mean_to_nodes(ops: FluxOperators, flux):
    """Mean over the existing adjacent edges, per axis."""
    nd = ops.ndim
    out = np.zeros((nd,) + ops.grid.shape)
    for a in range(nd):
        e = ops.edges[a].astype(float)
        q = np.where(ops.edges[a], flux[a], 0.0)
        num = np.zeros(ops.grid.shape)
        cnt = np.zeros(ops.grid.shape)
        lo = [slice(None)] * nd
        hi = [slice(None)] * nd
        lo[a] = slice(None, -1)
        hi[a] = slice(1, None)
        num[tuple(lo)] += q
        num[tuple(hi)] += q
        cnt[tuple(lo)] += e
        cnt[tuple(hi)] += e
        out[a] = np.where(cnt > 0, num / np.maximum(cnt, 1), 0.0)
    out[:, ~ops.inside] = 0.0
    return out
