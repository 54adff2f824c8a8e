import json
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from spacetime_ot.cli_io import (EXIT_BUDGET, EXIT_ERROR, EXIT_OK, cmd_export, export_state,
                                 load_checkpoint, main, read_raw, save_checkpoint)
from spacetime_ot.diagnostics import density_nodes
from spacetime_ot.grid_core import SpaceTimeGrid
from spacetime_ot.optimizer import PhaseSchedule, descent_step_fixed_support
from spacetime_ot.pgm import read_pgm
from spacetime_ot.problems import ExportConfig, translation_problem

DOC = textwrap.dedent("""\
    name = "tiny"

    [grid]
    shape = [{nt}, 32]
    lo = [0.0]
    hi = [1.0]

    [support.a]
    kind = "box"
    lo = [0.1]
    hi = [0.35]

    [support.b]
    kind = "box"
    lo = [0.35]
    hi = [0.6]

    [density.rho0]
    kind = "uniform"
    support = "a"

    [density.rho1]
    kind = "uniform"
    support = "b"

    [schedule]
    neumann_iters = {iters}

    [output]
    out_dir = "run"
    formats = ["raw_volume", "pgm_frames", "jsonl_diag"]
""")


@pytest.fixture
def state():
    spec = translation_problem(16, 32)
    st_ = spec.initial_state()
    for _ in range(2):
        st_ = descent_step_fixed_support(st_)
    return st_


def write_doc(tmp_path, nt=16, iters=1):
    p = tmp_path / "p.toml"
    p.write_text(DOC.format(nt=nt, iters=iters))
    return p


# ---------------------------------------------------------------------------
# volumes and checkpoints


def test_raw_volume_sidecar_is_self_describing(tmp_path, state):
    export_state(state, ExportConfig(out_dir=tmp_path, formats=("raw_volume",)))
    arr, side = read_raw(tmp_path, "rho")
    assert side["dtype"] == "<f4" and side["order"] == "C"
    assert side["axes"] == ["t", "x1"]
    g = SpaceTimeGrid.from_dict(side["grid"])
    assert g == state.support.grid
    assert arr.shape == g.shape
    raw = np.fromfile(tmp_path / "rho.raw", dtype="<f4").reshape(side["shape"])
    assert np.array_equal(raw, arr)
    W, wside = read_raw(tmp_path, "W")
    assert W.shape == (2,) + g.shape and wside["components"] == ["rho", "p1"]


def test_checkpoint_round_trip_is_identity(tmp_path, state):
    save_checkpoint(state, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck")
    assert np.array_equal(back.support.psi.values, state.support.psi.values)
    for a, b in zip(back.flux, state.flux):
        assert np.array_equal(a, b)
    assert np.array_equal(back.w.w.values, state.w.w.values)
    assert back.energy_history == state.energy_history
    assert back.iteration == state.iteration and back.phase == state.phase
    assert np.array_equal(back.context.flux.rho0, state.context.flux.rho0)


def test_exports_are_deterministic(tmp_path, state):
    cfg = lambda d: ExportConfig(out_dir=tmp_path / d, formats=("raw_volume", "pgm_frames"))  # noqa
    export_state(state, cfg("a"))
    export_state(state, cfg("b"))
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_first_frame_matches_rho0(tmp_path, state):
    export_state(state, ExportConfig(out_dir=tmp_path, frame_slices=[0.0], formats=("pgm_frames",)))
    img, maxval = read_pgm(tmp_path / "frame_0000.pgm")
    rho = density_nodes(state)
    scale = rho.max() / maxval
    assert np.max(np.abs(img[0] * scale - state.context.flux.rho0)) <= 0.5 * scale + 1e-12


def test_all_slices_give_one_frame_each(tmp_path):
    spec = translation_problem(64, 32)
    st_ = spec.initial_state()
    paths = export_state(st_, ExportConfig(out_dir=tmp_path, formats=("pgm_frames",)))
    assert len(paths) == 64
    assert len(list(tmp_path.glob("frame_*.pgm"))) == 64


def test_export_from_checkpoint(tmp_path, state):
    save_checkpoint(state, tmp_path / "ck")
    paths = cmd_export(tmp_path / "ck", slices=[0.0, 1.0], formats=("pgm_frames",))
    assert [p.name for p in paths] == ["frame_0000.pgm", "frame_0015.pgm"]


def test_unreadable_checkpoint(tmp_path, capsys):
    assert main(["diagnose", str(tmp_path / "nothing")]) == EXIT_ERROR
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# commands


def test_malformed_config_exits_one_with_line(tmp_path, capsys):
    p = write_doc(tmp_path)
    p.write_text(p.read_text().replace('kind = "box"\nlo = [0.1]', 'kind = "box"\nlo = [0.1'))
    assert main(["solve", str(p)]) == EXIT_ERROR
    err = capsys.readouterr().err
    assert err.startswith("error:") and "line" in err


def test_budget_exhaustion_exits_two_with_checkpoint(tmp_path):
    p = write_doc(tmp_path, iters=1)
    assert main(["solve", str(p)]) == EXIT_BUDGET
    out = tmp_path / "run"
    assert (out / "checkpoint" / "manifest.json").is_file()
    lines = (out / "diagnostics.jsonl").read_text().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["iteration"] == 1
    assert (out / "rho.raw").is_file() and (out / "frame_0000.pgm").is_file()


def test_resume_continues_the_budget(tmp_path):
    p = write_doc(tmp_path, iters=2)
    main(["solve", str(p)])
    p.write_text(DOC.format(nt=16, iters=4))
    assert main(["solve", str(p), "--resume", str(tmp_path / "run" / "checkpoint"),
                 "--out", str(tmp_path / "more")]) == EXIT_BUDGET
    assert load_checkpoint(tmp_path / "more" / "checkpoint").iteration == 4


def test_converged_trivial_problem_exits_zero(tmp_path, capsys):
    doc = DOC.format(nt=9, iters=1000).replace('hi = [0.6]', 'hi = [0.35]').replace(
        'lo = [0.35]', 'lo = [0.1]')
    doc = doc.replace("[output]", "[schedule.tolerances]\ntol_grad = 1e-3\n\n[output]")
    p = tmp_path / "t.toml"
    p.write_text(doc)
    assert main(["solve", str(p)]) == EXIT_OK
    assert main(["diagnose", str(tmp_path / "run" / "checkpoint")]) == EXIT_OK
    rec = json.loads(capsys.readouterr().out)
    assert rec["action"] <= 1e-4 and rec["converged"] is True


def test_diagnose_prints_valid_json(tmp_path, state, capsys):
    save_checkpoint(state, tmp_path / "ck")
    assert main(["diagnose", str(tmp_path / "ck")]) == EXIT_OK
    rec = json.loads(capsys.readouterr().out)
    types = {"action": float, "div_residual": float, "flux_residual": float,
             "hj_residual": float, "slice_mass": list, "density_rise_peak": float,
             "symmetry_deviation": float, "wasserstein": float, "iteration": int}
    for key, t in types.items():
        assert isinstance(rec[key], t), key
    assert rec["wasserstein"] == pytest.approx(np.sqrt(2 * rec["action"]))


def test_help_documents_every_command():
    out = subprocess.run([sys.executable, "-m", "spacetime_ot", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for word in ("solve", "export", "diagnose", "SPACETIME_OT_OUT"):
        assert word in out
    out = subprocess.run([sys.executable, "-m", "spacetime_ot", "export", "--help"],
                         capture_output=True, text=True, check=True).stdout
    assert "--slices" in out and "--formats" in out
