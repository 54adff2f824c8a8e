import textwrap

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spacetime_ot.errors import ConfigurationError, ParseError
from spacetime_ot.grid_core import SpaceTimeGrid
from spacetime_ot.optimizer import PhaseSchedule, run
from spacetime_ot.pgm import read_pgm, write_pgm16
from spacetime_ot.problems import (Box, Complement, ConstraintRegion, Density, Difference, Disk,
                                   ExportConfig, Polygon, RasterMask, Union, build,
                                   evacuation_problem, self_transport_wrap, translation_problem)

GRID128 = SpaceTimeGrid.from_box((3, 128, 128), [0, 0], [1, 1])

DOC = textwrap.dedent("""\
    name = "doc"

    [grid]
    shape = [16, 32]
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
    value = 1.0

    [density.rho1]
    kind = "uniform"
    support = "b"
    value = 1.0

    [schedule]
    neumann_iters = 5
""")


def area(shape, grid=GRID128):
    return shape.coverage(grid).sum() * grid.spatial_cell_volume


# ---------------------------------------------------------------------------
# shapes


@pytest.mark.parametrize("shape, exact", [
    (Disk((0.5, 0.5), 0.3), np.pi * 0.09),
    (Box((0.2, 0.1), (0.7, 0.5)), 0.2),
    (Polygon([(0.1, 0.1), (0.9, 0.1), (0.5, 0.8)]), 0.5 * 0.8 * 0.7),
    (Difference(Disk((0.5, 0.5), 0.35), Disk((0.5, 0.5), 0.12)), np.pi * (0.35 ** 2 - 0.12 ** 2)),
    (Union([Disk((0.3, 0.5), 0.1), Disk((0.7, 0.5), 0.1)]), 2 * np.pi * 0.01),
])
def test_rasterized_areas_within_two_percent(shape, exact):
    assert abs(area(shape) - exact) / exact < 0.02


def test_raster_mask_reproduces_a_disk(tmp_path):
    X, Y = GRID128.spatial_mesh()
    img = (np.hypot(X - 0.5, Y - 0.5) < 0.3).astype(np.int64) * 65535
    write_pgm16(tmp_path / "d.pgm", img)
    back, maxval = read_pgm(tmp_path / "d.pgm")
    assert maxval == 65535 and np.array_equal(back, img)
    m = RasterMask(back / maxval, GRID128.spacing[1:], GRID128.spatial_origin, 0.5)
    assert abs(area(m) - np.pi * 0.09) / (np.pi * 0.09) < 0.02


@given(st.floats(0.05, 0.45), st.floats(0.05, 0.45))
def test_box_sdf_sign_matches_containment(a, b):
    box = Box((0.5 - a,), (0.5 + b,))
    xs = [np.linspace(0, 1, 101)]
    inside = (xs[0] > 0.5 - a) & (xs[0] < 0.5 + b)
    clear = (np.abs(xs[0] - (0.5 - a)) > 1e-9) & (np.abs(xs[0] - (0.5 + b)) > 1e-9)
    assert np.array_equal(box.contains(xs)[clear], inside[clear])


def test_complement_flips():
    d = Disk((0.5, 0.5), 0.2)
    xs = GRID128.spatial_mesh()
    assert np.array_equal(Complement(d).contains(xs), ~d.contains(xs))


# ---------------------------------------------------------------------------
# densities and constraints


def test_negative_density_rejected():
    with pytest.raises(ConfigurationError):
        Density("uniform", Box((0.1,), (0.3,)), value=-1.0)


def test_gaussian_needs_sigma():
    with pytest.raises(ConfigurationError):
        Density("gaussian", Box((0.1,), (0.3,)), center=(0.2,))


def test_translation_masses_balanced():
    spec = translation_problem(16, 64)
    m0, m1 = spec.masses
    assert np.isclose(m0, 1.0) and np.isclose(m1, 1.0)


def test_constraint_slab_must_avoid_faces():
    g = SpaceTimeGrid.from_box((5, 10), [0], [1])
    with pytest.raises(ConfigurationError):
        ConstraintRegion(Box((0.4,), (0.6,)), t_center=0.5, half_width=2).slab(g)


@pytest.mark.parametrize("nt", [16, 17, 32, 33])
def test_centered_slab_is_time_symmetric(nt):
    g = SpaceTimeGrid.from_box((nt, 8), [0], [1])
    lo, hi = ConstraintRegion(Box((0.4,), (0.6,)), t_center=0.5, half_width=1).slab(g)
    assert lo + hi == nt - 1
    assert hi - lo >= 2


def test_export_config_rejects_bad_slices_and_formats():
    with pytest.raises(ConfigurationError):
        ExportConfig(frame_slices=[0.5, 1.5])
    with pytest.raises(ConfigurationError):
        ExportConfig(formats=("png",))


def test_out_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("SPACETIME_OT_OUT", str(tmp_path))
    assert ExportConfig().out_dir == tmp_path


# ---------------------------------------------------------------------------
# self transport


def test_evacuation_scenario_geometry():
    spec = evacuation_problem("center", (16, 48, 48))
    assert spec.flux.rho0.max() == 3.0
    assert spec.normalize is False
    cm = spec.constraint_mask()
    k = spec.grid.time_index(0.5)
    assert cm.forbid[k].any() and not cm.forbid[0].any() and not cm.forbid[-1].any()
    X, Y = spec.grid.spatial_mesh()
    assert np.all(cm.forbid[k][np.hypot(X - 0.5, Y - 0.5) < 0.1])
    assert not spec.initial_support().inside[k][cm.forbid[k]].any()


def test_edge_hole_sits_near_the_bottom():
    spec = evacuation_problem("edge", (16, 48, 48))
    assert spec.hole_center[0] < 0.5 - 0.1 and spec.hole_center[1] == 0.5


def test_self_transport_with_vacuous_target_is_zero_transport():
    g = SpaceTimeGrid.from_box((16, 48), [0], [1])
    a = Box((0.3,), (0.7,))
    spec = self_transport_wrap(g, Density("uniform", a, value=3.0), a, a,
                               PhaseSchedule(neumann_iters=200))
    assert not (spec.constraint_mask().forbid & spec.initial_support().inside).any()
    out = run(spec.initial_state())
    # partially covered end cells make the start slightly non-static
    assert out.energy <= 1e-4


def test_zero_volume_target_rejected():
    g = SpaceTimeGrid.from_box((16, 48), [0], [1])
    a = Box((0.3,), (0.7,))
    with pytest.raises(ConfigurationError, match="zero volume"):
        self_transport_wrap(g, Density("uniform", a), a, Box((0.5,), (0.5,)))


# ---------------------------------------------------------------------------
# documents


def test_document_builds_translation():
    spec = build(DOC)
    assert spec.name == "doc" and spec.grid.shape == (16, 32)
    assert spec.schedule.neumann_iters == 5
    assert np.isclose(spec.masses[0], 1.0)


def test_config_files_build():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    for path in sorted(root.glob("*.toml")):
        spec = build(path)
        assert spec.flux.imbalance() < 1e-8


def test_syntax_error_names_the_line():
    bad = DOC.replace('hi = [0.35]', 'hi = [0.35')
    with pytest.raises(ParseError) as info:
        build(bad)
    assert info.value.line is not None


def test_unknown_key_names_its_line():
    bad = DOC.replace('value = 1.0\n\n[density.rho1]', 'value = 1.0\ncolour = "red"\n\n[density.rho1]')
    with pytest.raises(ParseError, match="colour") as info:
        build(bad)
    assert info.value.line == bad.splitlines().index('colour = "red"') + 1


def test_unknown_section_rejected():
    with pytest.raises(ParseError, match="unknown section"):
        build(DOC + "\n[solver]\nfoo = 1\n")


def test_negative_density_in_document_names_the_field():
    bad = DOC.replace('value = 1.0\n\n[density.rho1]', 'value = -2.0\n\n[density.rho1]')
    with pytest.raises(ParseError, match="density.rho0.value"):
        build(bad)


def test_unbalanced_document_rejected():
    bad = DOC + "\n[density]\nnormalize = false\n"
    bad = bad.replace('lo = [0.35]\nhi = [0.6]', 'lo = [0.35]\nhi = [0.8]')
    with pytest.raises(ParseError, match="unbalanced"):
        build(bad)


def test_undefined_shape_reference():
    with pytest.raises(ParseError, match="undefined shape"):
        build(DOC.replace('support = "b"', 'support = "c"'))


def test_raster_density_document(tmp_path):
    g = SpaceTimeGrid.from_box((8, 32, 32), [0, 0], [1, 1])
    X, Y = g.spatial_mesh()
    img = np.where(np.hypot(X - 0.5, Y - 0.5) < 0.25, 40000, 0).astype(np.int64)
    write_pgm16(tmp_path / "blob.pgm", img)
    text = textwrap.dedent("""\
        [grid]
        shape = [8, 32, 32]
        lo = [0.0, 0.0]
        hi = [1.0, 1.0]

        [density]
        normalize = false

        [density.rho0]
        kind = "raster"
        path = "blob.pgm"
        lo = 1.0
        hi = 3.0

        [density.rho1]
        same_as = "rho0"
    """)
    spec = build(text, base_dir=tmp_path)
    expect = 1.0 + 2.0 * 40000 / 65535
    assert np.allclose(spec.flux.rho0[img > 0], expect)
    assert np.all(spec.flux.rho0[img == 0] == 0)
