"""Scenario construction: shapes, densities, constraints and problem documents.

A problem document is TOML with the sections

    [grid]            shape, lo, hi
    [density]         normalize (optional flag)
    [density.rho0]    kind = uniform | gaussian | raster, plus kind keys
    [density.rho1]    same, or same_as = "rho0"
    [support]         interpolation, fattening (optional)
    [support.NAME]    kind = box | disk | polygon | raster | union | difference | complement
    [constraint.NAME] region, mode = forbid_support | pin_boundary, t, half_width
    [schedule]        PhaseSchedule fields, [schedule.tolerances] overrides
    [output]          out_dir, frame_slices, formats, checkpoint_every

Spatial axis i of the grid is coordinate x_(i+1); for two spatial
dimensions "bottom" means small x_1.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError
from .grid_core import SpaceTimeGrid
from .optimizer import DEFAULT_TOLERANCES, PhaseSchedule, initial_state
from .pgm import read_pgm
from .support_geometry import (ConstraintMask, apply_constraint_to_psi, interpolated_support,
                               spatial_sdf_from_mask)
from .transport_fields import FluxSpec

SUPERSAMPLE = 4
OUT_DIR_ENV = "SPACETIME_OT_OUT"
FORMATS = ("raw_volume", "pgm_frames", "jsonl_diag")


# ---------------------------------------------------------------------------
# shapes


class Shape:
    """Spatial region with a signed distance (negative inside)."""

    def sdf(self, xs):
        raise NotImplementedError

    def contains(self, xs):
        return self.sdf(xs) < 0

    def on_grid(self, grid):
        return self.sdf(grid.spatial_mesh())

    def coverage(self, grid, sub=SUPERSAMPLE):
        """Fraction of each spatial cell (centred on its node) inside the shape."""
        xs = grid.spatial_mesh()
        hs = grid.spacing[1:]
        offs = (np.arange(sub) + 0.5) / sub - 0.5
        acc = np.zeros(grid.shape[1:])
        for o in np.stack(np.meshgrid(*([offs] * len(hs)), indexing="ij"), -1).reshape(-1, len(hs)):
            acc += self.contains([x + oi * h for x, oi, h in zip(xs, o, hs)])
        return acc / sub ** len(hs)


@dataclass
class Box(Shape):
    lo: tuple
    hi: tuple

    def sdf(self, xs):
        lo = np.asarray(self.lo, float)
        hi = np.asarray(self.hi, float)
        c = 0.5 * (lo + hi)
        r = 0.5 * (hi - lo)
        q = np.stack([np.abs(x - ci) - ri for x, ci, ri in zip(xs, c, r)])
        outside = np.sqrt(np.sum(np.maximum(q, 0.0) ** 2, axis=0))
        return outside + np.minimum(q.max(axis=0), 0.0)


@dataclass
class Disk(Shape):
    center: tuple
    radius: float

    def sdf(self, xs):
        r2 = sum((x - c) ** 2 for x, c in zip(xs, self.center))
        return np.sqrt(r2) - self.radius


@dataclass
class Polygon(Shape):
    """Simple polygon in two spatial dimensions (even-odd rule)."""

    vertices: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, float)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2 or len(self.vertices) < 3:
            raise ConfigurationError("polygon needs at least three 2D vertices")

    def contains(self, xs):
        x, y = xs
        inside = np.zeros(np.shape(x), bool)
        v = self.vertices
        for (x0, y0), (x1, y1) in zip(v, np.roll(v, -1, axis=0)):
            crosses = (y0 > y) != (y1 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (x < xc)
        return inside

    def sdf(self, xs):
        x, y = xs
        d2 = np.full(np.shape(x), np.inf)
        v = self.vertices
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            e = b - a
            t = np.clip(((x - a[0]) * e[0] + (y - a[1]) * e[1]) / (e @ e), 0.0, 1.0)
            d2 = np.minimum(d2, (x - a[0] - t * e[0]) ** 2 + (y - a[1] - t * e[1]) ** 2)
        d = np.sqrt(d2)
        return np.where(self.contains(xs), -d, d)


@dataclass
class RasterMask(Shape):
    """Mask from an image whose pixel grid equals the spatial grid."""

    image: np.ndarray
    spacing: tuple
    origin: tuple
    threshold: float = 0.5

    def _mask(self):
        return self.image > self.threshold

    def _lookup(self, xs, values):
        idx = [np.clip(np.rint((x - o) / h).astype(int), 0, n - 1)
               for x, o, h, n in zip(xs, self.origin, self.spacing, self.image.shape)]
        inside_box = np.ones(np.shape(xs[0]), bool)
        for x, o, h, n in zip(xs, self.origin, self.spacing, self.image.shape):
            inside_box &= (x >= o - 0.5 * h) & (x <= o + (n - 0.5) * h)
        return values[tuple(idx)], inside_box

    def contains(self, xs):
        m, box = self._lookup(xs, self._mask())
        return m & box

    def sdf(self, xs):
        d = spatial_sdf_from_mask(self._mask(), self.spacing)
        vals, _ = self._lookup(xs, d)
        return vals


@dataclass
class Union(Shape):
    parts: list

    def sdf(self, xs):
        return np.min([p.sdf(xs) for p in self.parts], axis=0)

    def contains(self, xs):
        return np.any([p.contains(xs) for p in self.parts], axis=0)


@dataclass
class Difference(Shape):
    base: Shape
    minus: Shape

    def sdf(self, xs):
        return np.maximum(self.base.sdf(xs), -self.minus.sdf(xs))

    def contains(self, xs):
        return self.base.contains(xs) & ~self.minus.contains(xs)


@dataclass
class Complement(Shape):
    of: Shape

    def sdf(self, xs):
        return -self.of.sdf(xs)

    def contains(self, xs):
        return ~self.of.contains(xs)


# ---------------------------------------------------------------------------
# densities


@dataclass
class Density:
    """kind: uniform (value), gaussian (peak, center, sigma) or raster (image, lo, hi)."""

    kind: str
    shape: Shape | None = None
    value: float = 1.0
    center: tuple = ()
    sigma: float = 0.0
    image: np.ndarray | None = None
    maxval: int = 255
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian", "raster"):
            raise ConfigurationError(f"unknown density kind {self.kind!r}")
        if self.kind in ("uniform", "gaussian") and self.shape is None:
            raise ConfigurationError(f"{self.kind} density needs a support shape")
        if self.kind in ("uniform", "gaussian") and not self.value > 0:
            raise ConfigurationError(f"density value must be positive, got {self.value}")
        if self.kind == "gaussian" and not self.sigma > 0:
            raise ConfigurationError("gaussian density needs sigma > 0")
        if self.kind == "raster":
            if self.image is None:
                raise ConfigurationError("raster density needs an image")
            if self.lo < 0 or not self.hi > self.lo:
                raise ConfigurationError("raster density range needs 0 <= lo < hi")

    def support_shape(self, grid):
        if self.shape is not None:
            return self.shape
        return RasterMask(self.image, grid.spacing[1:], grid.spatial_origin, 0.0)

    def rasterize(self, grid):
        """Node values: density times the covered fraction of each cell."""
        if self.kind == "raster":
            img = np.asarray(self.image, float)
            if img.shape != grid.shape[1:]:
                raise ConfigurationError(
                    f"raster of shape {img.shape} does not match spatial grid {grid.shape[1:]}")
            rho = np.where(img > 0, self.lo + (self.hi - self.lo) * img / self.maxval, 0.0)
            if self.shape is not None:
                rho = rho * self.shape.coverage(grid)
            return rho
        cov = self.shape.coverage(grid)
        if self.kind == "uniform":
            return self.value * cov
        xs = grid.spatial_mesh()
        r2 = sum((x - c) ** 2 for x, c in zip(xs, self.center))
        return self.value * np.exp(-0.5 * r2 / self.sigma ** 2) * cov


# ---------------------------------------------------------------------------
# constraints, outputs, problem


@dataclass
class ConstraintRegion:
    """Spatial region active on the slab |t - t_center| <= half_width slices."""

    region: Shape
    mode: str = "forbid_support"
    t_center: float = 0.5
    half_width: int = 1

    def __post_init__(self):
        if self.mode not in ("forbid_support", "pin_boundary"):
            raise ConfigurationError(f"unknown constraint mode {self.mode!r}")
        if not 0.0 <= self.t_center <= 1.0:
            raise ConfigurationError(f"constraint time {self.t_center} outside [0, 1]")
        if self.half_width < 0:
            raise ConfigurationError("constraint half_width must be non-negative")

    def slab(self, grid):
        # symmetric about the exact centre, which may fall between two slices
        c = self.t_center * (grid.shape[0] - 1)
        lo = int(np.floor(c - self.half_width + 1e-9))
        hi = int(np.ceil(c + self.half_width - 1e-9))
        if lo <= 0 or hi >= grid.shape[0] - 1:
            raise ConfigurationError("a constraint slab may not reach the temporal faces")
        return lo, hi

    def mask(self, grid):
        lo, hi = self.slab(grid)
        m = np.zeros(grid.shape, bool)
        m[lo:hi + 1] = self.region.contains(grid.spatial_mesh())[None]
        return m


def constraint_mask(grid, regions) -> ConstraintMask:
    out = ConstraintMask.empty(grid.shape)
    for r in regions:
        if r.mode == "forbid_support":
            out.forbid |= r.mask(grid)
        else:
            out.pin |= r.mask(grid)
    return out


@dataclass
class ExportConfig:
    out_dir: Path = field(default_factory=lambda: Path(os.environ.get(OUT_DIR_ENV, "out")))
    frame_slices: object = "all"
    formats: tuple = FORMATS
    checkpoint_every: int = 0

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        if self.frame_slices != "all":
            ts = [float(t) for t in self.frame_slices]
            if any(not 0.0 <= t <= 1.0 for t in ts):
                raise ConfigurationError("frame_slices must lie in [0, 1]")
            self.frame_slices = ts
        self.formats = tuple(self.formats)
        bad = set(self.formats) - set(FORMATS)
        if bad:
            raise ConfigurationError(f"unknown export formats {sorted(bad)}")
        if self.checkpoint_every < 0:
            raise ConfigurationError("checkpoint_every must be non-negative")

    def slice_indices(self, grid):
        if self.frame_slices == "all":
            return list(range(grid.shape[0]))
        return sorted({grid.time_index(t) for t in self.frame_slices})


@dataclass
class ProblemSpec:
    grid: SpaceTimeGrid
    rho0: Density
    rho1: Density
    support0: Shape
    support1: Shape
    constraints: list = field(default_factory=list)
    schedule: PhaseSchedule = field(default_factory=PhaseSchedule)
    outputs: ExportConfig = field(default_factory=ExportConfig)
    normalize: bool = True
    interpolation: str = "centroid"
    fattening: float = 0.5
    name: str = "problem"

    def __post_init__(self):
        r0 = self.rho0.rasterize(self.grid)
        r1 = self.rho1.rasterize(self.grid)
        for label, r in (("rho0", r0), ("rho1", r1)):
            if np.any(r < 0):
                raise ConfigurationError(f"density.{label}: negative values")
            if not r.any():
                raise ConfigurationError(f"density.{label}: empty support on this grid")
        dv = self.grid.spatial_cell_volume
        if self.normalize:
            r0 = r0 / (r0.sum() * dv)
            r1 = r1 / (r1.sum() * dv)
        self.rho0_values = r0
        self.rho1_values = r1
        self.flux = FluxSpec(self.grid, r0, r1)

    @property
    def masses(self):
        return self.flux.mass0, self.flux.mass1

    def constraint_mask(self):
        return constraint_mask(self.grid, self.constraints)

    def initial_support(self):
        g = self.grid
        sup = interpolated_support(g, self.support0.on_grid(g), self.support1.on_grid(g),
                                   self.flux.face_mask_0, self.flux.face_mask_1,
                                   mode=self.interpolation, fattening=self.fattening)
        cm = self.constraint_mask()
        if cm.forbid.any():
            psi = apply_constraint_to_psi(sup.psi.values, cm, 0.5 * min(g.spacing[1:]))
            sup = sup.with_psi(psi).reinitialized()
        return sup

    def initial_state(self):
        return initial_state(self.flux, self.initial_support(), self.schedule,
                             self.constraint_mask())


def self_transport_wrap(grid, rho0: Density, support0: Shape, target_support: Shape,
                        schedule=None, half_width=1, **kw) -> ProblemSpec:
    """Unknown density on a known support, posed as transport from rho0 back to itself.

    The complement of the target is forbidden on a slab around t = 1/2,
    so the t = 1/2 slice of the optimum is the sought density.
    """
    if not target_support.coverage(grid).any():
        raise ConfigurationError("target support has zero volume on this grid")
    hole = ConstraintRegion(Complement(target_support), "forbid_support", 0.5, half_width)
    kw.setdefault("normalize", False)
    return ProblemSpec(grid, rho0, rho0, support0, support0, [hole],
                       schedule or PhaseSchedule(), **kw)


# ---------------------------------------------------------------------------
# documents

_KEYS = {
    "grid": {"shape", "lo", "hi"},
    "density": {"normalize"},
    "support": {"interpolation", "fattening"},
    "schedule": {"neumann_iters", "dirichlet_iters", "boundary_step_scale", "reinit_every",
                 "relax_iters", "tolerances"},
    "output": {"out_dir", "frame_slices", "formats", "checkpoint_every"},
}
_DENSITY_KEYS = {
    "uniform": {"kind", "support", "value"},
    "gaussian": {"kind", "support", "value", "center", "sigma"},
    "raster": {"kind", "support", "path", "lo", "hi"},
}
_SHAPE_KEYS = {
    "box": {"kind", "lo", "hi"},
    "disk": {"kind", "center", "radius"},
    "polygon": {"kind", "vertices"},
    "raster": {"kind", "path", "threshold"},
    "union": {"kind", "of"},
    "difference": {"kind", "base", "minus"},
    "complement": {"kind", "of"},
}
_CONSTRAINT_KEYS = {"region", "mode", "t", "half_width"}


class _Doc:
    """Parsed document plus enough of the text to point at offending lines."""

    def __init__(self, text, base):
        import tomli

        self.lines = text.splitlines()
        self.base = Path(base)
        try:
            self.data = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ParseError(exc.msg, getattr(exc, "lineno", None)) from None

    def line_of(self, section, key=None):
        head = f"[{section}]"
        start = None
        for i, raw in enumerate(self.lines):
            s = raw.strip()
            if s.replace(" ", "") == head.replace(" ", ""):
                start = i
                if key is None:
                    return i + 1
                continue
            if start is not None:
                if s.startswith("["):
                    break
                if key is not None and s.split("=")[0].strip() == key:
                    return i + 1
        return None if start is None else start + 1

    def fail(self, section, key, message):
        where = section if key is None else f"{section}.{key}"
        raise ParseError(f"{where}: {message}", self.line_of(section, key))

    def check_keys(self, section, table, allowed):
        if not isinstance(table, dict):
            self.fail(section, None, "expected a table")
        for k in table:
            if k not in allowed:
                self.fail(section, k, f"unknown key (allowed: {', '.join(sorted(allowed))})")

    def need(self, section, table, key):
        if key not in table:
            self.fail(section, None, f"missing key {key!r}")
        return table[key]


def _shape(doc, name, tables, cache, grid, stack=()):
    if name in cache:
        return cache[name]
    sec = f"support.{name}"
    if name not in tables:
        raise ParseError(f"reference to undefined shape {name!r}")
    if name in stack:
        doc.fail(sec, None, "cyclic shape definition")
    t = tables[name]
    kind = doc.need(sec, t, "kind")
    if kind not in _SHAPE_KEYS:
        doc.fail(sec, "kind", f"unknown shape kind {kind!r}")
    doc.check_keys(sec, t, _SHAPE_KEYS[kind])
    sub = lambda n: _shape(doc, n, tables, cache, grid, stack + (name,))  # noqa: E731
    try:
        if kind == "box":
            s = Box(tuple(doc.need(sec, t, "lo")), tuple(doc.need(sec, t, "hi")))
        elif kind == "disk":
            s = Disk(tuple(doc.need(sec, t, "center")), float(doc.need(sec, t, "radius")))
            if not s.radius > 0:
                doc.fail(sec, "radius", "must be positive")
        elif kind == "polygon":
            s = Polygon(doc.need(sec, t, "vertices"))
        elif kind == "raster":
            img, _ = read_pgm(doc.base / doc.need(sec, t, "path"))
            s = RasterMask(img, grid.spacing[1:], grid.spatial_origin, float(t.get("threshold", 0.5)))
        elif kind == "union":
            s = Union([sub(n) for n in doc.need(sec, t, "of")])
        elif kind == "difference":
            s = Difference(sub(doc.need(sec, t, "base")), sub(doc.need(sec, t, "minus")))
        else:
            s = Complement(sub(doc.need(sec, t, "of")))
    except (TypeError, ValueError) as exc:
        doc.fail(sec, None, str(exc))
    if kind in ("box", "disk") and len(getattr(s, "lo", getattr(s, "center", ()))) != grid.spatial_dims:
        doc.fail(sec, None, f"expected {grid.spatial_dims} spatial coordinates")
    cache[name] = s
    return s


def _density(doc, name, t, shapes, grid):
    sec = f"density.{name}"
    kind = doc.need(sec, t, "kind")
    if kind not in _DENSITY_KEYS:
        doc.fail(sec, "kind", f"unknown density kind {kind!r}")
    doc.check_keys(sec, t, _DENSITY_KEYS[kind])
    shape = shapes(t["support"]) if "support" in t else None
    value = float(t.get("value", 1.0))
    if kind != "raster" and not value > 0:
        doc.fail(sec, "value", f"density must be positive, got {value}")
    try:
        if kind == "raster":
            img, maxval = read_pgm(doc.base / doc.need(sec, t, "path"))
            return Density("raster", shape, image=img, maxval=maxval,
                           lo=float(t.get("lo", 0.0)), hi=float(t.get("hi", 1.0)))
        return Density(kind, shape, value=value, center=tuple(t.get("center", ())),
                       sigma=float(t.get("sigma", 0.0)))
    except ConfigurationError as exc:
        doc.fail(sec, None, str(exc))


def build(source, base_dir=".") -> ProblemSpec:
    """ProblemSpec from a TOML document (text or path)."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and Path(source).is_file()):
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read {path}: {exc}") from exc
        base_dir = path.parent
    else:
        text = source
    doc = _Doc(text, base_dir)
    d = doc.data
    for k in d:
        if k not in ("grid", "density", "support", "constraint", "schedule", "output", "name"):
            raise ParseError(f"unknown section [{k}]", doc.line_of(k))

    if "grid" not in d:
        raise ParseError("missing section [grid]")
    g = d["grid"]
    doc.check_keys("grid", g, _KEYS["grid"])
    try:
        grid = SpaceTimeGrid.from_box(doc.need("grid", g, "shape"), doc.need("grid", g, "lo"),
                                      doc.need("grid", g, "hi"))
    except ConfigurationError as exc:
        doc.fail("grid", None, str(exc))

    sup = dict(d.get("support", {}))
    sup_opts = {k: sup.pop(k) for k in list(sup) if not isinstance(sup[k], dict)}
    doc.check_keys("support", sup_opts, _KEYS["support"])
    cache = {}
    shapes = lambda n: _shape(doc, n, sup, cache, grid)  # noqa: E731

    dens = dict(d.get("density", {}))
    dens_opts = {k: dens.pop(k) for k in list(dens) if not isinstance(dens[k], dict)}
    doc.check_keys("density", dens_opts, _KEYS["density"])
    for req in ("rho0", "rho1"):
        if req not in dens:
            raise ParseError(f"missing section [density.{req}]")
    for k in dens:
        if k not in ("rho0", "rho1"):
            doc.fail(f"density.{k}", None, "only rho0 and rho1 are allowed")
    if set(dens["rho1"]) == {"same_as"}:
        if dens["rho1"]["same_as"] != "rho0":
            doc.fail("density.rho1", "same_as", "only 'rho0' is allowed")
        dens["rho1"] = dens["rho0"]
    rho0 = _density(doc, "rho0", dens["rho0"], shapes, grid)
    rho1 = _density(doc, "rho1", dens["rho1"], shapes, grid)

    constraints = []
    for name, t in d.get("constraint", {}).items():
        sec = f"constraint.{name}"
        doc.check_keys(sec, t, _CONSTRAINT_KEYS)
        try:
            constraints.append(ConstraintRegion(shapes(doc.need(sec, t, "region")),
                                                t.get("mode", "forbid_support"),
                                                float(t.get("t", 0.5)), int(t.get("half_width", 1))))
        except ConfigurationError as exc:
            doc.fail(sec, None, str(exc))

    s = dict(d.get("schedule", {}))
    doc.check_keys("schedule", s, _KEYS["schedule"])
    tols = s.get("tolerances", {})
    doc.check_keys("schedule.tolerances", tols, set(DEFAULT_TOLERANCES))
    try:
        schedule = PhaseSchedule(**s)
    except (ConfigurationError, TypeError) as exc:
        doc.fail("schedule", None, str(exc))

    o = dict(d.get("output", {}))
    doc.check_keys("output", o, _KEYS["output"])
    if "out_dir" in o:
        o["out_dir"] = doc.base / o["out_dir"]
    try:
        outputs = ExportConfig(**o)
    except ConfigurationError as exc:
        doc.fail("output", None, str(exc))

    s0 = rho0.support_shape(grid)
    s1 = rho1.support_shape(grid)
    try:
        return ProblemSpec(grid, rho0, rho1, s0, s1, constraints, schedule, outputs,
                           normalize=bool(dens_opts.get("normalize", True)),
                           interpolation=sup_opts.get("interpolation", "centroid"),
                           fattening=float(sup_opts.get("fattening", 0.5)),
                           name=str(d.get("name", "problem")))
    except ConfigurationError as exc:
        raise ParseError(str(exc)) from None


# ---------------------------------------------------------------------------
# named scenarios


def translation_problem(nt=64, nx=128, d=0.25, schedule=None):
    """Uniform density on [0.1, 0.35] moved by d; optimal action d^2 / 2."""
    g = SpaceTimeGrid.from_box((nt, nx), [0.0], [1.0])
    a = Box((0.1,), (0.35,))
    b = Box((0.1 + d,), (0.35 + d,))
    return ProblemSpec(g, Density("uniform", a), Density("uniform", b), a, b,
                       schedule=schedule or PhaseSchedule(), name="translation")


def dilation_problem(nt=64, nx=128, schedule=None):
    """Uniform [0, 1] onto uniform [0, 2]; optimal action 1/6."""
    g = SpaceTimeGrid.from_box((nt, nx), [-0.25], [2.25])
    a = Box((0.0,), (1.0,))
    b = Box((0.0,), (2.0,))
    return ProblemSpec(g, Density("uniform", a), Density("uniform", b), a, b,
                       schedule=schedule or PhaseSchedule(), name="dilation")


def trivial_problem(nt=32, nx=64, schedule=None):
    """The same Gaussian bump at both ends on the same support."""
    g = SpaceTimeGrid.from_box((nt, nx), [0.0], [1.0])
    a = Box((0.2,), (0.7,))
    rho = Density("gaussian", a, value=2.0, center=(0.45,), sigma=0.15)
    return ProblemSpec(g, rho, rho, a, a, schedule=schedule or PhaseSchedule(), name="trivial")


EVAC_DISK = 0.35
EVAC_HOLE = 0.12
EVAC_DENSITY = 3.0
EVAC_EDGE_GAP = 0.04


def evacuation_problem(position="center", shape=(64, 128, 128), schedule=None,
                       disk_radius=EVAC_DISK, hole_radius=EVAC_HOLE, half_width=1):
    """Uniform disk of density 3 that must vacate a hole at t = 1/2.

    position "edge" puts the hole EVAC_EDGE_GAP above the bottom of the disk.
    """
    g = SpaceTimeGrid.from_box(shape, [0.0, 0.0], [1.0, 1.0])
    disk = Disk((0.5, 0.5), disk_radius)
    if position == "center":
        hc = (0.5, 0.5)
    elif position == "edge":
        hc = (0.5 - disk_radius + hole_radius + EVAC_EDGE_GAP, 0.5)
    else:
        raise ConfigurationError(f"unknown hole position {position!r}")
    target = Difference(disk, Disk(hc, hole_radius))
    spec = self_transport_wrap(g, Density("uniform", disk, value=EVAC_DENSITY), disk, target,
                               schedule or PhaseSchedule(), half_width,
                               name=f"evacuation-{position}")
    spec.hole_center = np.array(hc)
    return spec


def two_blob_problem(shape=(32, 64, 64), schedule=None):
    """Two separated disks merging into one non-convex crescent-like blob."""
    g = SpaceTimeGrid.from_box(shape, [0.0, 0.0], [1.0, 1.0])
    a = Union([Disk((0.3, 0.35), 0.13), Disk((0.7, 0.35), 0.13)])
    b = Difference(Disk((0.5, 0.62), 0.24), Disk((0.5, 0.75), 0.14))
    return ProblemSpec(g, Density("uniform", a), Density("uniform", b), a, b,
                       schedule=schedule or PhaseSchedule(), name="two-blob")
