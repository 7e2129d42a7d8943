import math

import numpy as np
import pytest

from bulksurface_ch.diagnostics import DiagnosticsRecord
from bulksurface_ch.errors import ConfigurationError
from bulksurface_ch.experiments import DependenceTable, SweepResult
from bulksurface_ch.io import (DiagnosticsCsv, load_velocity_table, read_diagnostics, read_snapshot,
                               write_dependence_report, write_snapshot, write_sweep_report, write_vtk)
from bulksurface_ch.model import State


def _state(rng, ops):
    return State(rng.standard_normal(ops.n_bulk), rng.standard_normal(ops.n_surf), rng.standard_normal(ops.n_bulk),
                 rng.standard_normal(ops.n_surf), 0.25)


def test_snapshot_roundtrip_is_exact(tmp_path, disk6, rng):
    mesh, ops = disk6
    s = _state(rng, ops)
    pb, ps = write_snapshot(s, mesh, tmp_path / "snap")
    assert pb.name == "snap_bulk.csv" and ps.name == "snap_surf.csv"
    assert pb.read_text().splitlines()[0] == "vertex_id,x,y,phi,mu"
    assert ps.read_text().splitlines()[0] == "surface_id,arclength,psi,theta"
    back = read_snapshot(pb, ps, mesh)
    for name in ("phi", "psi", "mu", "theta"):
        assert np.array_equal(getattr(back, name), getattr(s, name))


def test_snapshot_size_mismatch(tmp_path, disk3, disk6, rng):
    mesh, ops = disk6
    pb, ps = write_snapshot(_state(rng, ops), mesh, tmp_path / "snap")
    with pytest.raises(ConfigurationError):
        read_snapshot(pb, ps, disk3[0])


def test_vtk_structure(tmp_path, disk3, rng):
    mesh, ops = disk3
    pb, ps = write_vtk(_state(rng, ops), mesh, tmp_path / "v")
    bulk = pb.read_text().splitlines()
    assert bulk[0] == "# vtk DataFile Version 3.0" and bulk[3] == "DATASET UNSTRUCTURED_GRID"
    assert f"POINTS {mesh.n_bulk} double" in bulk
    assert f"CELLS {len(mesh.triangles)} {4 * len(mesh.triangles)}" in bulk
    assert "SCALARS phi double 1" in bulk and "SCALARS mu double 1" in bulk
    surf = ps.read_text().splitlines()
    assert f"CELLS {mesh.n_surf} {3 * mesh.n_surf}" in surf and "SCALARS theta double 1" in surf
    # every scalar block has one value per point
    i = bulk.index("SCALARS phi double 1")
    assert len(bulk[i + 2:i + 2 + mesh.n_bulk]) == mesh.n_bulk
    assert bulk[i + 2 + mesh.n_bulk].startswith("SCALARS mu")


def test_diagnostics_csv_roundtrip(tmp_path):
    recs = [DiagnosticsRecord(0.0, 1.5, 2.0, 1.0, 1.0),
            DiagnosticsRecord(0.1, 1.25, 2.0, 1.0, 1.0, 0.1, 0.2, 0.3, 0.4, 0.5, -1e-3, 2e-7)]
    path = tmp_path / "d.csv"
    with DiagnosticsCsv(path) as sink:
        for r in recs:
            sink(r)
    assert path.read_text().splitlines()[0] == ",".join(DiagnosticsRecord.columns())
    back = read_diagnostics(path)
    assert math.isnan(back[0].chain_rule_residual)
    assert back[1] == recs[1]


def test_sweep_report(tmp_path):
    r = SweepResult("K_to_0", np.array([1e-2, 1e-1, 1.0]), np.array([0.1, 0.3, 1.0]), 0.5, 0.02)
    text = write_sweep_report(r, tmp_path / "s.csv").read_text().splitlines()
    assert text[0] == "parameter,quantity,slope_so_far"
    assert text[1].endswith(",nan") and len(text) == 5
    assert "status=pass" in text[-1] and "expected=0.5" in text[-1]
    r.fitted_slope = 1.0
    assert "status=fail" in write_sweep_report(r, tmp_path / "s.csv").read_text()
    r.exploratory = True
    assert "status=exploratory" in write_sweep_report(r, tmp_path / "s.csv").read_text()


def test_dependence_report(tmp_path):
    t = DependenceTable("velocity", np.array([0.0, 0.1]), np.array([0.0, 0.01]), math.nan, math.nan, [True, False])
    lines = write_dependence_report(t, tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "delta,max_dual_norm_difference,identical"
    assert lines[1] == "0.0,0.0,1" and lines[-1].startswith("# summary mode=velocity")


def test_velocity_table(tmp_path, disk3):
    mesh, _ = disk3
    p = tmp_path / "vel.txt"
    p.write_text("# bulk and surface rows\nb 0 1.0 2.0\ns 3 -0.5 0.25  # trailing comment\n\n")
    v, w = load_velocity_table(p, mesh)
    assert v.shape == (mesh.n_bulk, 2) and w.shape == (mesh.n_surf, 2)
    assert tuple(v[0]) == (1.0, 2.0) and tuple(w[3]) == (-0.5, 0.25)
    assert np.count_nonzero(v) == 2 and np.count_nonzero(w) == 2
    p.write_text("b 999 0 0\n")
    with pytest.raises(ConfigurationError, match="out of range"):
        load_velocity_table(p, mesh)
    p.write_text("x 0 0 0\n")
    with pytest.raises(ConfigurationError):
        load_velocity_table(p, mesh)
