"""Command-line driver, checkpoints and exports.

A checkpoint is a directory holding one raw little-endian volume per array
(C order, axes (t, x_1, ..., x_n)), a JSON sidecar per volume and a
manifest.json with the scalar state.  Exported volumes are float32;
checkpoint arrays keep float64 so that resuming is exact.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .diagnostics import JsonlWriter, density_nodes, report, wasserstein_estimate
from .errors import SpacetimeOTError
from .grid_core import ScalarLattice, SpaceTimeGrid
from .optimizer import (PhaseSchedule, SolveContext, SolverState, _field, run)
from .pgm import write_pgm16
from .problems import FORMATS, OUT_DIR_ENV, ExportConfig, build
from .support_geometry import ConstraintMask, LevelSetSupport
from .transport_fields import FluxSpec

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
FORMAT_VERSION = 1
EXIT_OK, EXIT_ERROR, EXIT_BUDGET = 0, 1, 2


# ---------------------------------------------------------------------------
# raw volumes


def write_raw(directory, name, array, grid: SpaceTimeGrid, dtype="<f4", **meta):
    """`name.raw` plus `name.json`; the sidecar alone describes the geometry."""
    directory = Path(directory)
    arr = np.ascontiguousarray(np.asarray(array).astype(dtype))
    (directory / f"{name}.raw").write_bytes(arr.tobytes())
    side = {"file": f"{name}.raw", "dtype": np.dtype(dtype).str, "shape": list(arr.shape),
            "order": "C", "grid": grid.to_dict(),
            "axes": ["t"] + [f"x{i + 1}" for i in range(grid.spatial_dims)]}
    side.update(meta)
    (directory / f"{name}.json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")


def read_raw(directory, name):
    directory = Path(directory)
    try:
        side = json.loads((directory / f"{name}.json").read_text())
        data = (directory / side["file"]).read_bytes()
    except (OSError, ValueError, KeyError) as exc:
        raise SpacetimeOTError(f"cannot read volume {directory / name}: {exc}") from exc
    arr = np.frombuffer(data, dtype=np.dtype(side["dtype"])).reshape(side["shape"]).copy()
    return arr, side


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(state: SolverState, directory, name="problem"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ctx = state.context
    grid = state.support.grid
    sup = state.support
    f8 = "<f8"
    write_raw(directory, "psi", sup.psi.values, grid, f8, kind="node")
    for a, f in enumerate(state.flux):
        write_raw(directory, f"flux_{a}", f, grid, f8, kind="edge", axis=a)
    write_raw(directory, "rho0", ctx.flux.rho0, grid, f8, kind="face", t=0.0)
    write_raw(directory, "rho1", ctx.flux.rho1, grid, f8, kind="face", t=1.0)
    write_raw(directory, "forbid", ctx.constraint.forbid, grid, "u1", kind="node")
    write_raw(directory, "pin", ctx.constraint.pin, grid, "u1", kind="node")
    s = ctx.schedule
    manifest = {
        "format": FORMAT_VERSION,
        "name": name,
        "grid": grid.to_dict(),
        "schedule": {"neumann_iters": s.neumann_iters, "dirichlet_iters": s.dirichlet_iters,
                     "boundary_step_scale": s.boundary_step_scale,
                     "reinit_every": s.reinit_every, "relax_iters": s.relax_iters,
                     "tolerances": dict(s.tolerances)},
        "rho_floor": ctx.rho_floor,
        "band_width": sup.band_width,
        "steps_since_reinit": sup.steps_since_reinit,
        "iteration": state.iteration,
        "energy_history": [float(e) for e in state.energy_history],
        "last_gamma": float(state.last_gamma),
        "phase": state.phase,
        "grad_norm": float(state.grad_norm),
        "grad_norm0": float(state.grad_norm0),
        "converged": bool(state.converged),
        "fallbacks": state.fallbacks,
        "dirichlet_steps": state.dirichlet_steps,
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory) -> SolverState:
    directory = Path(directory)
    try:
        m = json.loads((directory / MANIFEST).read_text())
    except (OSError, ValueError) as exc:
        raise SpacetimeOTError(f"unreadable checkpoint {directory}: {exc}") from exc
    if m.get("format") != FORMAT_VERSION:
        raise SpacetimeOTError(f"unsupported checkpoint format {m.get('format')!r}")
    grid = SpaceTimeGrid.from_dict(m["grid"])
    psi, _ = read_raw(directory, "psi")
    rho0, _ = read_raw(directory, "rho0")
    rho1, _ = read_raw(directory, "rho1")
    forbid, _ = read_raw(directory, "forbid")
    pin, _ = read_raw(directory, "pin")
    flux = [read_raw(directory, f"flux_{a}")[0] for a in range(grid.ndim)]
    fs = FluxSpec(grid, rho0, rho1)
    support = LevelSetSupport(ScalarLattice(grid, psi), fs.face_mask_0, fs.face_mask_1,
                              m["band_width"], m["steps_since_reinit"])
    schedule = PhaseSchedule(**m["schedule"])
    ctx = SolveContext(fs, ConstraintMask(forbid.astype(bool), pin.astype(bool)), schedule,
                       m["rho_floor"])
    model = ctx.model_for(support)
    return SolverState(_field(model, flux), support, m["iteration"], m["energy_history"],
                       m["last_gamma"], m["phase"], m["grad_norm"], m["grad_norm0"], None,
                       m["converged"], m["fallbacks"], m["dirichlet_steps"], ctx)


def checkpoint_name(directory):
    try:
        return json.loads((Path(directory) / MANIFEST).read_text()).get("name", "problem")
    except (OSError, ValueError):
        return "problem"


# ---------------------------------------------------------------------------
# exports


def export_state(state: SolverState, cfg: ExportConfig):
    """Write the configured formats into cfg.out_dir; returns the written paths."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = state.support.grid
    rho = density_nodes(state)
    written = []
    if "raw_volume" in cfg.formats:
        model = state.context.model_for(state.support)
        write_raw(out, "rho", rho, grid, kind="node")
        write_raw(out, "psi", state.support.psi.values, grid, kind="node")
        write_raw(out, "W", model.nodes(state.flux), grid, kind="node_vector",
                  components=["rho"] + [f"p{i + 1}" for i in range(grid.spatial_dims)])
        written += [out / f"{n}.raw" for n in ("rho", "psi", "W")]
    if "pgm_frames" in cfg.formats:
        if grid.spatial_dims > 2:
            raise SpacetimeOTError("PGM frames need one or two spatial dimensions")
        top = float(rho.max())
        scale = 65535.0 / top if top > 0 else 0.0
        for k in cfg.slice_indices(grid):
            img = np.rint(np.clip(rho[k], 0.0, top) * scale).astype(np.int64)
            path = out / f"frame_{k:04d}.pgm"
            write_pgm16(path, np.atleast_2d(img))
            written.append(path)
    if "jsonl_diag" in cfg.formats:
        path = out / "final_diagnostics.jsonl"
        path.unlink(missing_ok=True)
        with JsonlWriter(path) as w:
            w.write(report(state), state.iteration, state.last_gamma,
                    wasserstein=wasserstein_estimate(state))
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# commands


def cmd_solve(config_path, resume=None, out_dir=None):
    spec = build(Path(config_path))
    cfg = spec.outputs if out_dir is None else replace(spec.outputs, out_dir=Path(out_dir))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume:
        state = load_checkpoint(resume)
        state.context.schedule = spec.schedule
    else:
        state = spec.initial_state()
    ckpt = out / "checkpoint"
    diag = JsonlWriter(out / "diagnostics.jsonl") if "jsonl_diag" in cfg.formats else None

    def callback(st):
        if diag is not None:
            diag.write(report(st, phi=st.phi), st.iteration, st.last_gamma, phase=st.phase)
        if cfg.checkpoint_every and st.iteration % cfg.checkpoint_every == 0:
            save_checkpoint(st, ckpt, spec.name)

    try:
        state = run(state, callback)
    except SpacetimeOTError as exc:
        bad = getattr(exc, "state", None)
        if bad is not None:
            save_checkpoint(bad, out / "failed_state", spec.name)
        raise
    finally:
        if diag is not None:
            diag.close()
    save_checkpoint(state, ckpt, spec.name)
    export_state(state, replace(cfg, formats=tuple(f for f in cfg.formats if f != "jsonl_diag")))
    log.info("action %.8g after %d iterations", state.energy, state.iteration)
    return EXIT_OK if state.converged else EXIT_BUDGET


def cmd_export(checkpoint, slices="all", formats=FORMATS, out_dir=None):
    state = load_checkpoint(checkpoint)
    cfg = ExportConfig(out_dir=Path(out_dir) if out_dir else Path(checkpoint) / "export",
                       frame_slices=slices, formats=formats)
    return export_state(state, cfg)


def cmd_diagnose(checkpoint, stream=None):
    state = load_checkpoint(checkpoint)
    rec = report(state).to_json(iteration=state.iteration, gamma=state.last_gamma,
                                wasserstein=wasserstein_estimate(state),
                                converged=state.converged, phase=state.phase)
    print(json.dumps(rec, indent=1, sort_keys=True), file=stream or sys.stdout)
    return rec


def _slices(text):
    if text == "all":
        return "all"
    return [float(t) for t in text.split(",") if t.strip()]


def _formats(text):
    return tuple(f.strip() for f in text.split(",") if f.strip())


def parser():
    p = argparse.ArgumentParser(
        prog="spacetime-ot",
        description="Optimal transport by descent on a space-time support.",
        epilog=f"The default output directory is ${OUT_DIR_ENV} or ./out.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="run the solver on a problem document")
    s.add_argument("config", help="TOML problem document")
    s.add_argument("--resume", metavar="CKPT", help="continue from a checkpoint directory")
    s.add_argument("--out", metavar="DIR", help="override [output].out_dir")
    e = sub.add_parser("export", help="write frames and volumes from a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--slices", default="all", type=_slices,
                   help="'all' or comma-separated times in [0, 1]")
    e.add_argument("--formats", default=",".join(FORMATS), type=_formats,
                   help=f"comma-separated subset of {', '.join(FORMATS)}")
    e.add_argument("--out", metavar="DIR", help="output directory (default CKPT/export)")
    d = sub.add_parser("diagnose", help="print the diagnostics of a checkpoint as JSON")
    d.add_argument("checkpoint")
    return p


def main(argv=None):
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "solve":
            return cmd_solve(args.config, args.resume, args.out)
        if args.command == "export":
            for path in cmd_export(args.checkpoint, args.slices, args.formats, args.out):
                print(path)
            return EXIT_OK
        cmd_diagnose(args.checkpoint)
        return EXIT_OK
    except (SpacetimeOTError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
