"""The multiplier alpha from W . grad(alpha) = -W . V.

Because W = rho (1, v) with rho > 0 the equation is a forward transport
problem in t.  Each slice is solved implicitly with first-order upwind
spatial differences, so the discrete residual of the upwind operator
vanishes to solver precision and no CFL restriction applies.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .errors import ConfigurationError, PositivityError
from .grid_core import InteriorMask, ScalarLattice, VectorLattice, neighbour_flags, upwind_directional


@dataclass
class AlphaSolution:
    alpha: ScalarLattice
    boundary_trace: np.ndarray
    residual: float


def _slice_matrix(inside, v, ht, hs):
    """I/ht + v . D_upwind on the inside nodes of one slice."""
    shape = inside.shape
    n = inside.size
    idx = np.arange(n).reshape(shape)
    rows = [idx[inside]]
    cols = [idx[inside]]
    vals = [np.full(int(inside.sum()), 1.0 / ht)]
    for a, h in enumerate(hs):
        lo, hi = neighbour_flags(inside, a)
        va = v[a]
        stride = int(np.prod(shape[a + 1:]))
        back = inside & np.where(va > 0, lo, ~hi & lo)
        fwd = inside & ~back & hi
        for sel, off, sign in ((back, -1, 1.0), (fwd, 1, -1.0)):
            r = idx[sel]
            c = va[sel] / h * sign
            rows += [r, r]
            cols += [r, r + off * stride]
            vals += [c, -c]
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    sel = idx[inside]
    return A[sel][:, sel].tocsc()


def solve_alpha(w, V: VectorLattice, support, alpha0=0.0, rho_floor=0.0) -> AlphaSolution:
    """March alpha from t = 0 (data alpha0) to t = 1 on Omega."""
    lat = getattr(w, "w", w)
    grid = lat.grid
    if V.grid != grid or support.grid != grid:
        raise ConfigurationError("grid mismatch in alpha transport")
    inside = support.inside
    rho = lat.values[0]
    if np.any(inside & (rho <= 0)):
        node = tuple(int(i) for i in np.argwhere(inside & (rho <= 0))[0])
        raise PositivityError("alpha transport needs rho > 0 on Omega", node)
    ok = inside & (rho > rho_floor)
    v = np.where(ok, lat.values[1:] / np.where(ok, rho, 1.0), 0.0)
    src = -0.5 * np.sum(v * v, axis=0)          # -W.V / rho
    ht = grid.spacing[0]
    hs = grid.spacing[1:]
    alpha = np.zeros(grid.shape)
    alpha[0] = np.where(inside[0], np.broadcast_to(alpha0, grid.shape[1:]), 0.0)
    for k in range(1, grid.shape[0]):
        cur = inside[k]
        if not cur.any():
            continue
        prev_in = inside[k - 1]
        if prev_in.any():
            _, ind = ndimage.distance_transform_edt(~prev_in, sampling=hs, return_indices=True)
            prev = alpha[k - 1][tuple(ind)]
        else:
            prev = np.zeros(cur.shape)
        A = _slice_matrix(cur, v[:, k], ht, hs)
        b = prev[cur] / ht + src[k][cur]
        alpha[k][cur] = spla.spsolve(A, b) if A.shape[0] > 1 else b / A.toarray()[0, 0]
    alpha = np.where(inside, alpha, 0.0)
    a_lat = ScalarLattice(grid, alpha, inside.copy())
    res = transport_residual(a_lat, lat, V, support)
    return AlphaSolution(a_lat, alpha[support.boundary_layer()], res)


def transport_residual(alpha: ScalarLattice, w: VectorLattice, V: VectorLattice, support):
    """max |W . grad_up alpha + W . V| on full-stencil nodes, relative to max |W . V|."""
    mask = InteriorMask(alpha.grid, support.inside)
    Wd = VectorLattice(w.grid, np.where(mask.inside, w.values, 0.0), mask.inside.copy())
    lhs = upwind_directional(alpha, Wd, mask).values
    WV = np.sum(w.values * V.values, axis=0)
    interior = mask.interior.copy()
    interior[0] = False
    r = np.abs(lhs + WV)[interior]
    if r.size == 0:
        return 0.0
    scale = float(np.max(np.abs(WV[interior])))
    return float(r.max() / scale) if scale > 0 else float(r.max())
