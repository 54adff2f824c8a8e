"""Level-set support Omega = {psi < 0}, its boundary pieces and evolution."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, DomainError, PreconditionError, StepRejected
from .grid_core import FluxOperators, ScalarLattice, SpaceTimeGrid, VectorLattice, _sl

EPS_SDF = 0.1
DELTA_HALF_WIDTH = 1.5


# ---------------------------------------------------------------------------
# fast sweeping kernels


@numba.njit(cache=True)
def _eikonal_update(vals, hs, m):
    # solve sum_k ((u - a_k)/h_k)^2 = 1 using the m smallest candidates
    order = np.argsort(vals[:m])
    a = vals[order]
    h = hs[order]
    u = a[0] + h[0]
    for k in range(1, m):
        if u <= a[k]:
            break
        A = 0.0
        B = 0.0
        C = -1.0
        for j in range(k + 1):
            w = 1.0 / (h[j] * h[j])
            A += w
            B -= 2.0 * a[j] * w
            C += a[j] * a[j] * w
        disc = B * B - 4.0 * A * C
        if disc < 0.0:
            break
        u = (-B + np.sqrt(disc)) / (2.0 * A)
    return u


@numba.njit(cache=True)
def _sweep_2d(d, fixed, h0, h1, max_iter, tol):
    n0, n1 = d.shape
    vals = np.empty(2)
    hs = np.empty(2)
    for it in range(max_iter):
        change = 0.0
        for s in range(4):
            for ii in range(n0):
                i = ii if s % 2 == 0 else n0 - 1 - ii
                for jj in range(n1):
                    j = jj if s < 2 else n1 - 1 - jj
                    if fixed[i, j]:
                        continue
                    a = np.inf
                    if i > 0:
                        a = d[i - 1, j]
                    if i < n0 - 1:
                        a = min(a, d[i + 1, j])
                    b = np.inf
                    if j > 0:
                        b = d[i, j - 1]
                    if j < n1 - 1:
                        b = min(b, d[i, j + 1])
                    m = 0
                    if a < np.inf:
                        vals[m] = a
                        hs[m] = h0
                        m += 1
                    if b < np.inf:
                        vals[m] = b
                        hs[m] = h1
                        m += 1
                    if m == 0:
                        continue
                    u = _eikonal_update(vals, hs, m)
                    if u < d[i, j]:
                        if d[i, j] < np.inf:
                            change = max(change, d[i, j] - u)
                        else:
                            change = np.inf
                        d[i, j] = u
        if change <= tol:
            break
    return d


@numba.njit(cache=True)
def _sweep_3d(d, fixed, h0, h1, h2, max_iter, tol):
    n0, n1, n2 = d.shape
    vals = np.empty(3)
    hs = np.empty(3)
    for it in range(max_iter):
        change = 0.0
        for s in range(8):
            for ii in range(n0):
                i = ii if (s & 1) == 0 else n0 - 1 - ii
                for jj in range(n1):
                    j = jj if (s & 2) == 0 else n1 - 1 - jj
                    for kk in range(n2):
                        k = kk if (s & 4) == 0 else n2 - 1 - kk
                        if fixed[i, j, k]:
                            continue
                        m = 0
                        a = np.inf
                        if i > 0:
                            a = d[i - 1, j, k]
                        if i < n0 - 1:
                            a = min(a, d[i + 1, j, k])
                        if a < np.inf:
                            vals[m] = a
                            hs[m] = h0
                            m += 1
                        b = np.inf
                        if j > 0:
                            b = d[i, j - 1, k]
                        if j < n1 - 1:
                            b = min(b, d[i, j + 1, k])
                        if b < np.inf:
                            vals[m] = b
                            hs[m] = h1
                            m += 1
                        c = np.inf
                        if k > 0:
                            c = d[i, j, k - 1]
                        if k < n2 - 1:
                            c = min(c, d[i, j, k + 1])
                        if c < np.inf:
                            vals[m] = c
                            hs[m] = h2
                            m += 1
                        if m == 0:
                            continue
                        u = _eikonal_update(vals, hs, m)
                        if u < d[i, j, k]:
                            if d[i, j, k] < np.inf:
                                change = max(change, d[i, j, k] - u)
                            else:
                                change = np.inf
                            d[i, j, k] = u
        if change <= tol:
            break
    return d


def _interface_distance(psi, spacing):
    """Sub-cell distance at nodes with a sign change to some axis neighbour."""
    nd = psi.ndim
    inv2 = np.zeros(psi.shape)
    near = np.zeros(psi.shape, bool)
    for a, h in enumerate(spacing):
        lo = psi[_sl(nd, a, slice(None, -1))]
        hi = psi[_sl(nd, a, slice(1, None))]
        cross = (lo < 0) != (hi < 0)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac_lo = np.where(cross, np.abs(lo) / (np.abs(lo) + np.abs(hi)), np.inf)
        frac_hi = np.where(cross, 1.0 - frac_lo, np.inf)
        dlo = np.maximum(frac_lo * h, 1e-12 * h)
        dhi = np.maximum(frac_hi * h, 1e-12 * h)
        best = np.full(psi.shape, np.inf)
        best[_sl(nd, a, slice(None, -1))] = dlo
        best[_sl(nd, a, slice(1, None))] = np.minimum(best[_sl(nd, a, slice(1, None))], dhi)
        ok = np.isfinite(best)
        inv2[ok] += 1.0 / best[ok] ** 2
        near |= ok
    dist = np.full(psi.shape, np.inf)
    dist[near] = 1.0 / np.sqrt(inv2[near])
    return dist, near


def reinitialize(psi, spacing, max_iter=50, tol=1e-12):
    """Signed distance with the sign of psi, by fast sweeping."""
    psi = np.asarray(psi, float)
    if not (np.any(psi < 0) and np.any(psi >= 0)):
        return psi.copy()
    d0, near = _interface_distance(psi, spacing)
    d = d0.copy()
    if psi.ndim == 2:
        d = _sweep_2d(d, near, spacing[0], spacing[1], max_iter, tol)
    elif psi.ndim == 3:
        d = _sweep_3d(d, near, spacing[0], spacing[1], spacing[2], max_iter, tol)
    elif psi.ndim == 1:
        idx = np.flatnonzero(near)
        x = np.arange(psi.size) * spacing[0]
        d = np.min(np.abs(x[:, None] - x[None, idx]) + d0[idx][None, :], axis=1)
    else:
        raise ConfigurationError("fast sweeping implemented for up to three axes")
    return np.where(psi < 0, -d, d)


@numba.njit(cache=True)
def _extend_2d(F, apsi, fixed, h0, h1, max_iter, tol):
    n0, n1 = F.shape
    for it in range(max_iter):
        change = 0.0
        for s in range(4):
            for ii in range(n0):
                i = ii if s % 2 == 0 else n0 - 1 - ii
                for jj in range(n1):
                    j = jj if s < 2 else n1 - 1 - jj
                    if fixed[i, j]:
                        continue
                    num = 0.0
                    den = 0.0
                    p = apsi[i, j]
                    # upwind neighbour along each axis: the one closer to Gamma
                    bi = -1
                    bv = p
                    if i > 0 and apsi[i - 1, j] < bv and np.isfinite(F[i - 1, j]):
                        bi = i - 1
                        bv = apsi[i - 1, j]
                    if i < n0 - 1 and apsi[i + 1, j] < bv and np.isfinite(F[i + 1, j]):
                        bi = i + 1
                        bv = apsi[i + 1, j]
                    if bi >= 0:
                        w = (p - bv) / (h0 * h0)
                        num += w * F[bi, j]
                        den += w
                    bj = -1
                    bv = p
                    if j > 0 and apsi[i, j - 1] < bv and np.isfinite(F[i, j - 1]):
                        bj = j - 1
                        bv = apsi[i, j - 1]
                    if j < n1 - 1 and apsi[i, j + 1] < bv and np.isfinite(F[i, j + 1]):
                        bj = j + 1
                        bv = apsi[i, j + 1]
                    if bj >= 0:
                        w = (p - bv) / (h1 * h1)
                        num += w * F[i, bj]
                        den += w
                    if den > 0.0:
                        u = num / den
                        old = F[i, j]
                        if np.isfinite(old):
                            change = max(change, abs(u - old))
                        else:
                            change = np.inf
                        F[i, j] = u
        if change <= tol:
            break
    return F


@numba.njit(cache=True)
def _extend_3d(F, apsi, fixed, h0, h1, h2, max_iter, tol):
    n0, n1, n2 = F.shape
    hh = np.array([h0, h1, h2])
    for it in range(max_iter):
        change = 0.0
        for s in range(8):
            for ii in range(n0):
                i = ii if (s & 1) == 0 else n0 - 1 - ii
                for jj in range(n1):
                    j = jj if (s & 2) == 0 else n1 - 1 - jj
                    for kk in range(n2):
                        k = kk if (s & 4) == 0 else n2 - 1 - kk
                        if fixed[i, j, k]:
                            continue
                        p = apsi[i, j, k]
                        num = 0.0
                        den = 0.0
                        for ax in range(3):
                            best = p
                            bval = 0.0
                            found = False
                            for sd in (-1, 1):
                                a = i + sd if ax == 0 else i
                                b = j + sd if ax == 1 else j
                                c = k + sd if ax == 2 else k
                                if a < 0 or a >= n0 or b < 0 or b >= n1 or c < 0 or c >= n2:
                                    continue
                                q = apsi[a, b, c]
                                if q < best and np.isfinite(F[a, b, c]):
                                    best = q
                                    bval = F[a, b, c]
                                    found = True
                            if found:
                                w = (p - best) / (hh[ax] * hh[ax])
                                num += w * bval
                                den += w
                        if den > 0.0:
                            u = num / den
                            old = F[i, j, k]
                            if np.isfinite(old):
                                change = max(change, abs(u - old))
                            else:
                                change = np.inf
                            F[i, j, k] = u
        if change <= tol:
            break
    return F


# ---------------------------------------------------------------------------
# support type


@dataclass
class ConstraintMask:
    """Nodes that must stay outside Omega (forbid) or whose psi is frozen (pin)."""

    forbid: np.ndarray
    pin: np.ndarray

    @classmethod
    def empty(cls, shape):
        return cls(np.zeros(shape, bool), np.zeros(shape, bool))

    @property
    def any(self):
        return self.forbid | self.pin


def _prune(inside):
    """Drop non-face nodes without any temporal neighbour inside."""
    inside = inside.copy()
    while True:
        lo = np.zeros_like(inside)
        hi = np.zeros_like(inside)
        lo[1:] = inside[:-1]
        hi[:-1] = inside[1:]
        lonely = inside & ~lo & ~hi
        if not lonely.any():
            return inside
        inside &= ~lonely


@dataclass
class LevelSetSupport:
    """Omega = {psi < 0} between the temporal faces.

    The face rows t = 0 and t = 1 take their membership from the face
    masks (the supports of the densities); psi there is kept only as a
    distance-like field.
    """

    psi: ScalarLattice
    face_mask_0: np.ndarray
    face_mask_1: np.ndarray
    band_width: float = 6.0
    steps_since_reinit: int = 0
    _ops: FluxOperators = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        g = self.psi.grid
        self.face_mask_0 = np.asarray(self.face_mask_0, bool)
        self.face_mask_1 = np.asarray(self.face_mask_1, bool)
        if self.face_mask_0.shape != g.shape[1:] or self.face_mask_1.shape != g.shape[1:]:
            raise ConfigurationError("face masks must match the spatial grid")
        if not (self.face_mask_0.any() and self.face_mask_1.any()):
            raise ConfigurationError("both temporal faces must be non-empty")
        raw = self.raw_inside()
        edge = np.zeros(g.shape[1:], bool)
        for a in range(g.spatial_dims):
            edge[_sl(g.spatial_dims, a, 0)] = True
            edge[_sl(g.spatial_dims, a, -1)] = True
        if np.any(raw[:, edge]):
            raise ConfigurationError("support touches the lateral edge of the grid box")

    @property
    def grid(self) -> SpaceTimeGrid:
        return self.psi.grid

    def raw_inside(self):
        m = self.psi.values < 0
        m[0] = self.face_mask_0
        m[-1] = self.face_mask_1
        return m

    @property
    def inside(self):
        return self.operators().inside

    def operators(self) -> FluxOperators:
        if self._ops is None:
            self._ops = FluxOperators(self.grid, _prune(self.raw_inside()))
        return self._ops

    def with_psi(self, values, steps_since_reinit=None):
        s = self.steps_since_reinit if steps_since_reinit is None else steps_since_reinit
        return LevelSetSupport(ScalarLattice(self.grid, values), self.face_mask_0,
                               self.face_mask_1, self.band_width, s)

    def face_rows(self):
        m = np.zeros(self.grid.shape, bool)
        m[0] = self.face_mask_0
        m[-1] = self.face_mask_1
        return m

    def band(self):
        return np.abs(self.psi.values) < self.band_width * max(self.grid.spacing)

    def interface_nodes(self):
        """Nodes off the face rows with an axis neighbour across psi = 0."""
        psi = self.psi.values
        nd = psi.ndim
        near = np.zeros(psi.shape, bool)
        for a in range(nd):
            lo = psi[_sl(nd, a, slice(None, -1))] < 0
            hi = psi[_sl(nd, a, slice(1, None))] < 0
            c = lo != hi
            near[_sl(nd, a, slice(None, -1))] |= c
            near[_sl(nd, a, slice(1, None))] |= c
        near[0] = False
        near[-1] = False
        return near

    def boundary_layer(self):
        """Inside nodes (off the faces) having a missing axis neighbour."""
        ops = self.operators()
        inside = ops.inside
        lay = np.zeros_like(inside)
        nd = inside.ndim
        for a in range(nd):
            lo = np.zeros_like(inside)
            hi = np.zeros_like(inside)
            lo[_sl(nd, a, slice(1, None))] = inside[_sl(nd, a, slice(None, -1))]
            hi[_sl(nd, a, slice(None, -1))] = inside[_sl(nd, a, slice(1, None))]
            if a == 0:
                lo[0] = True
                hi[-1] = True
            lay |= inside & ~(lo & hi)
        lay[0] = False
        lay[-1] = False
        return lay

    def sdf_quality(self):
        """Fraction of band nodes with | |grad psi| - 1 | > EPS_SDF."""
        g = np.stack(np.gradient(self.psi.values, *self.grid.spacing))
        norm = np.sqrt(np.sum(g * g, axis=0))
        band = self.band()
        band[0] = band[-1] = False
        # skip nodes next to kinks where central differences straddle a ridge
        if not band.any():
            return 0.0
        bad = np.abs(norm[band] - 1.0) > EPS_SDF
        return float(bad.mean())

    def reinitialized(self):
        psi = reinitialize(self.psi.values, self.grid.spacing)
        return self.with_psi(psi, steps_since_reinit=0)


# ---------------------------------------------------------------------------
# construction


def spatial_sdf_from_mask(mask, spacing):
    """Approximate signed distance of a node mask, zero half-way between nodes."""
    mask = np.asarray(mask, bool)
    sampling = np.asarray(spacing, float)
    if mask.all() or not mask.any():
        raise ConfigurationError("cannot build a distance function for an empty or full mask")
    dout = ndimage.distance_transform_edt(~mask, sampling=sampling)
    din = ndimage.distance_transform_edt(mask, sampling=sampling)
    half = 0.5 * float(np.min(sampling))
    return np.where(mask, -(din - half), dout - half)


def centroid(mask, grid):
    xs = grid.spatial_mesh()
    m = np.asarray(mask, float)
    return np.array([np.sum(x * m) / m.sum() for x in xs])


def _shift_field(f, shift, spacing):
    """f(x - shift) by linear interpolation, nearest-value extrapolation."""
    if np.allclose(shift, 0.0):
        return f.copy()
    coords = np.indices(f.shape).astype(float)
    for a in range(f.ndim):
        coords[a] -= shift[a] / spacing[a]
    return ndimage.map_coordinates(f, coords, order=1, mode="nearest")


def interpolated_support(grid: SpaceTimeGrid, sdf0, sdf1, face_mask_0, face_mask_1,
                         mode="centroid", fattening=0.5, band_width=6.0, reinit=True):
    """Initial psi from the spatial signed distances of the two end supports.

    mode "linear": psi(t) = (1-t) sdf0 + t sdf1.
    mode "centroid": the same blend after aligning both shapes on the
    moving centroid c(t) = (1-t) c0 + t c1.
    `fattening` (in cells of the finest spacing) lowers psi strictly
    between the faces.
    """
    sp_h = grid.spacing[1:]
    t = grid.axes()[0]
    sdf0 = np.asarray(sdf0, float)
    sdf1 = np.asarray(sdf1, float)
    if mode == "centroid":
        dc = centroid(face_mask_1, grid) - centroid(face_mask_0, grid)
    elif mode == "linear":
        dc = np.zeros(grid.spatial_dims)
    else:
        raise ConfigurationError(f"unknown interpolation mode {mode!r}")
    psi = np.empty(grid.shape)
    for k, tk in enumerate(t):
        a = _shift_field(sdf0, tk * dc, sp_h)
        b = _shift_field(sdf1, -(1.0 - tk) * dc, sp_h)
        psi[k] = (1.0 - tk) * a + tk * b
    fat = fattening * min(sp_h)
    psi[1:-1] -= fat
    # rows next to a face must cover that face, otherwise face nodes carry no flux
    cover = 0.25 * min(sp_h)
    psi[1] = np.where(face_mask_0, np.minimum(psi[1], -cover), psi[1])
    psi[-2] = np.where(face_mask_1, np.minimum(psi[-2], -cover), psi[-2])
    sup = LevelSetSupport(ScalarLattice(grid, psi), face_mask_0, face_mask_1, band_width)
    return sup.reinitialized() if reinit else sup


def apply_constraint_to_psi(psi, constraint: ConstraintMask, margin):
    """Force forbidden nodes outside Omega."""
    return np.where(constraint.forbid, np.maximum(psi, margin), psi)


# ---------------------------------------------------------------------------
# geometry


@dataclass
class BoundarySample:
    location: np.ndarray
    normal: np.ndarray
    spatial_normal: np.ndarray
    boundary_speed_dot_N: float


def _grad_at(psi, spacing, node):
    node = tuple(int(i) for i in node)
    g = np.zeros(psi.ndim)
    for a, h in enumerate(spacing):
        i = node[a]
        n = psi.shape[a]
        up = list(node)
        dn = list(node)
        if 0 < i < n - 1:
            up[a] += 1
            dn[a] -= 1
            g[a] = (psi[tuple(up)] - psi[tuple(dn)]) / (2 * h)
        elif i == 0:
            up[a] += 1
            g[a] = (psi[tuple(up)] - psi[node]) / h
        else:
            dn[a] -= 1
            g[a] = (psi[node] - psi[tuple(dn)]) / h
    return g


def spacetime_normal(support: LevelSetSupport, node):
    """Outward unit normal at a node: grad psi / |grad psi|, or -e0 / +e0 on faces."""
    grid = support.grid
    node = tuple(int(i) for i in node)
    e0 = np.zeros(grid.ndim)
    e0[0] = 1.0
    if node[0] == grid.shape[0] - 1 and support.face_mask_1[node[1:]]:
        return e0
    if node[0] == 0 and support.face_mask_0[node[1:]]:
        return -e0
    psi = support.psi.values
    if abs(psi[node]) > support.band_width * max(grid.spacing):
        raise DomainError(f"node {node} lies outside the narrow band")
    g = _grad_at(psi, grid.spacing, node)
    n = np.linalg.norm(g)
    if n == 0:
        raise DomainError(f"psi is flat at node {node}")
    return g / n


def boundary_sample(support: LevelSetSupport, node):
    """Normal data at a lateral node, with the spatial normal and boundary speed."""
    nrm = spacetime_normal(support, node)
    spatial = nrm[1:]
    ns = np.linalg.norm(spatial)
    if ns == 0:
        raise DomainError("normal is purely temporal here")
    speed = -nrm[0] / ns
    loc = np.array([ax[i] for ax, i in zip(support.grid.axes(), node)])
    return BoundarySample(loc, nrm, spatial / ns, speed)


def smeared_delta(psi, eps):
    d = np.zeros_like(psi)
    m = np.abs(psi) < eps
    d[m] = (1.0 + np.cos(np.pi * psi[m] / eps)) / (2.0 * eps)
    return d


def surface_integral(support: LevelSetSupport, integrand: ScalarLattice, eps_cells=DELTA_HALF_WIDTH):
    """Integral over Gamma of the integrand via delta(psi)|grad psi|."""
    grid = support.grid
    if integrand.grid != grid:
        raise ConfigurationError("grid mismatch")
    psi = support.psi.values
    eps = eps_cells * max(grid.spacing)
    g = np.stack(np.gradient(psi, *grid.spacing))
    norm = np.sqrt(np.sum(g * g, axis=0))
    f = np.where(integrand.defined, integrand.values, 0.0)
    return float(np.sum(grid.node_weights() * smeared_delta(psi, eps) * norm * f))


def surface_integral_sliced(support: LevelSetSupport, integrand: ScalarLattice,
                            area_factor=True, eps_cells=DELTA_HALF_WIDTH):
    """Time-sliced form: sum over t of the integral over Gamma_t of g sqrt(1+s^2)."""
    grid = support.grid
    psi = support.psi.values
    eps = eps_cells * max(grid.spacing[1:])
    gt = np.gradient(psi, grid.spacing[0], axis=0)
    gx = np.stack([np.gradient(psi, grid.spacing[a], axis=a) for a in range(1, grid.ndim)])
    nx = np.sqrt(np.sum(gx * gx, axis=0))
    f = np.where(integrand.defined, integrand.values, 0.0)
    # delta of psi/|grad_x psi| keeps the slice measure independent of psi scaling
    dens = smeared_delta(psi / np.maximum(nx, 1e-12), eps) * (nx > 0)
    if area_factor:
        s = -gt / np.maximum(nx, 1e-12)
        dens = dens * np.sqrt(1.0 + s * s)
    return float(np.sum(grid.node_weights() * dens * f))


def boundary_speed_field(support: LevelSetSupport):
    """s = d Gamma_t/dt . N = -psi_t / |grad_x psi| at every node."""
    grid = support.grid
    psi = support.psi.values
    gt = np.gradient(psi, grid.spacing[0], axis=0)
    gx = np.stack([np.gradient(psi, grid.spacing[a], axis=a) for a in range(1, grid.ndim)])
    nx = np.sqrt(np.sum(gx * gx, axis=0))
    return -gt / np.maximum(nx, 1e-12)


# ---------------------------------------------------------------------------
# evolution


def velocity_extension(support: LevelSetSupport, speed_on_gamma: ScalarLattice,
                       max_iter=100, tol=1e-13):
    """Extend a speed known near Gamma constantly along grad psi."""
    grid = support.grid
    psi = support.psi.values
    seeds = support.interface_nodes() & speed_on_gamma.defined & np.isfinite(speed_on_gamma.values)
    if not seeds.any():
        raise DomainError("no speed samples next to Gamma")
    F = np.where(seeds, speed_on_gamma.values, np.inf).astype(float)
    # fill interface nodes lacking data from seeded neighbours across Gamma
    near = support.interface_nodes() & ~seeds
    if near.any():
        nd = psi.ndim
        acc = np.zeros(psi.shape)
        cnt = np.zeros(psi.shape)
        for a in range(nd):
            for src, dst in ((slice(None, -1), slice(1, None)), (slice(1, None), slice(None, -1))):
                s = seeds[_sl(nd, a, src)]
                acc[_sl(nd, a, dst)] += np.where(s, F[_sl(nd, a, src)], 0.0)
                cnt[_sl(nd, a, dst)] += s
        fill = near & (cnt > 0)
        F[fill] = acc[fill] / cnt[fill]
        seeds = seeds | fill
    F_in = np.where(seeds, F, np.nan)
    apsi = np.abs(psi)
    if psi.ndim == 2:
        out = _extend_2d(F_in, apsi, seeds, grid.spacing[0], grid.spacing[1], max_iter, tol)
    elif psi.ndim == 3:
        out = _extend_3d(F_in, apsi, seeds, *grid.spacing, max_iter, tol)
    else:
        raise ConfigurationError("velocity extension implemented for two or three axes")
    out = np.where(np.isfinite(out), out, 0.0)
    return ScalarLattice(grid, out)


def _godunov_norm(psi, spacing, F):
    nd = psi.ndim
    plus = np.zeros(psi.shape)
    minus = np.zeros(psi.shape)
    for a, h in enumerate(spacing):
        d = np.diff(psi, axis=a) / h
        dm = np.zeros(psi.shape)
        dp = np.zeros(psi.shape)
        dm[_sl(nd, a, slice(1, None))] = d
        dp[_sl(nd, a, slice(None, -1))] = d
        plus += np.maximum(dm, 0) ** 2 + np.minimum(dp, 0) ** 2
        minus += np.minimum(dm, 0) ** 2 + np.maximum(dp, 0) ** 2
    return np.where(F > 0, np.sqrt(plus), np.sqrt(minus))


def max_admissible_step(support, speed):
    fmax = float(np.max(np.abs(speed)))
    return np.inf if fmax == 0 else 0.5 * min(support.grid.spacing) / fmax


def evolve_boundary(support: LevelSetSupport, speed_on_gamma: ScalarLattice, step: float,
                    constraint: ConstraintMask | None = None, reinit_every=5, extend=True):
    """One explicit level-set step psi <- psi - step F |grad psi|.

    The speed is the outward normal speed.  It is zeroed on the temporal
    faces and on constrained nodes before extension; frozen nodes keep
    their psi, forbidden nodes stay outside.
    """
    grid = support.grid
    if not step > 0:
        raise ConfigurationError("boundary step must be positive")
    if constraint is None:
        constraint = ConstraintMask.empty(grid.shape)
    speed = ScalarLattice(grid, np.where(constraint.any, 0.0, speed_on_gamma.values),
                          speed_on_gamma.defined)
    F = velocity_extension(support, speed).values if extend else np.nan_to_num(speed.values)
    F[0] = 0.0
    F[-1] = 0.0
    F[constraint.any] = 0.0
    admissible = max_admissible_step(support, F)
    if step > admissible * (1 + 1e-12):
        raise StepRejected(f"boundary step {step:.3e} exceeds CFL bound {admissible:.3e}",
                           admissible)
    psi = support.psi.values
    new = psi - step * F * _godunov_norm(psi, grid.spacing, F)
    new[0] = psi[0]
    new[-1] = psi[-1]
    new = np.where(constraint.pin, psi, new)
    margin = 0.01 * min(grid.spacing)
    new = apply_constraint_to_psi(new, constraint, margin)
    # never touch the lateral edge of the box
    for a in range(1, grid.ndim):
        for s in (0, -1):
            idx = _sl(grid.ndim, a, s)
            new[idx] = np.maximum(new[idx], margin)
    out = support.with_psi(new, steps_since_reinit=support.steps_since_reinit + 1)
    if np.any(F != 0) and (out.steps_since_reinit >= reinit_every or out.sdf_quality() > 0.05):
        out = out.reinitialized()
        fixed = np.where(constraint.pin, psi, out.psi.values)
        fixed = apply_constraint_to_psi(fixed, constraint, margin)
        out = out.with_psi(fixed, steps_since_reinit=0)
    return out


# ---------------------------------------------------------------------------
# coupling identity (one spatial dimension)


def coupling_identity_check(support: LevelSetSupport, w: VectorLattice,
                            delta_gamma_normal: ScalarLattice, delta_w: VectorLattice,
                            level=0.0, trim=0.1, flux_tol=1e-6):
    """Max discrepancy of dW.N = d/ds((W.T)(dGamma.N)) along Gamma.

    Gamma is extracted as a polyline, resampled at uniform arc length and
    fields are read from bicubic splines.  N = grad psi/|grad psi| from the
    spline of psi, T is N rotated by +90 degrees.  Samples within `trim`
    of either temporal face are ignored.
    """
    from scipy.interpolate import RectBivariateSpline
    from skimage.measure import find_contours

    grid = support.grid
    if grid.spatial_dims != 1:
        raise ConfigurationError("coupling check is implemented for one spatial dimension")
    t, x = grid.axes()
    psi = support.psi.values
    contours = find_contours(psi, level)
    if not contours:
        raise DomainError("no boundary curve found")
    spl = lambda f: RectBivariateSpline(t, x, f, kx=3, ky=3)  # noqa: E731
    sp_psi = spl(psi)
    sw = [spl(w.values[a]) for a in range(2)]
    sdw = [spl(delta_w.values[a]) for a in range(2)]
    sg = spl(delta_gamma_normal.values)
    h = min(grid.spacing)
    worst = 0.0
    flux_scale = max(float(np.max(np.abs(w.values))), 1e-300)
    for c in contours:
        pts = np.column_stack([np.interp(c[:, 0], np.arange(len(t)), t),
                               np.interp(c[:, 1], np.arange(len(x)), x)])
        seg = np.sqrt(np.sum(np.diff(pts, axis=0) ** 2, axis=1))
        s = np.concatenate([[0], np.cumsum(seg)])
        if s[-1] < 4 * h:
            continue
        n = max(int(s[-1] / h), 8)
        su = np.linspace(0, s[-1], n + 1)
        P = np.column_stack([np.interp(su, s, pts[:, 0]), np.interp(su, s, pts[:, 1])])
        # one Newton correction onto the spline zero set
        for _ in range(2):
            pv = sp_psi.ev(P[:, 0], P[:, 1]) - level
            gt = sp_psi.ev(P[:, 0], P[:, 1], dx=1)
            gx = sp_psi.ev(P[:, 0], P[:, 1], dy=1)
            g2 = gt * gt + gx * gx
            P = P - (pv / g2)[:, None] * np.column_stack([gt, gx])
        gt = sp_psi.ev(P[:, 0], P[:, 1], dx=1)
        gx = sp_psi.ev(P[:, 0], P[:, 1], dy=1)
        gn = np.sqrt(gt * gt + gx * gx)
        N = np.column_stack([gt, gx]) / gn[:, None]
        T = np.column_stack([-N[:, 1], N[:, 0]])
        step = np.diff(P, axis=0)
        if np.sum(step * T[:-1]) < 0:
            P, N, T = P[::-1], N[::-1], T[::-1]
        W = np.column_stack([f.ev(P[:, 0], P[:, 1]) for f in sw])
        dW = np.column_stack([f.ev(P[:, 0], P[:, 1]) for f in sdw])
        dg = sg.ev(P[:, 0], P[:, 1])
        keep = (P[:, 0] > trim) & (P[:, 0] < 1 - trim)
        flux = np.abs(np.sum(W * N, axis=1))
        if np.any(flux[keep] > flux_tol * flux_scale):
            raise PreconditionError(f"W.N reaches {flux[keep].max():.3e} on Gamma")
        arc = np.concatenate([[0], np.cumsum(np.sqrt(np.sum(np.diff(P, axis=0) ** 2, axis=1)))])
        lhs = np.sum(dW * N, axis=1)
        q = np.sum(W * T, axis=1) * dg
        rhs = np.gradient(q, arc, edge_order=2)
        if keep.any():
            worst = max(worst, float(np.max(np.abs(lhs - rhs)[keep])))
    return worst
