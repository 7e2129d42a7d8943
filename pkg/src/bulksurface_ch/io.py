"""Snapshot, diagnostics and sweep-report files."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .diagnostics import DiagnosticsRecord
from .errors import ConfigurationError
from .geometry import BulkSurfaceMesh
from .model import State

BULK_COLUMNS = ("vertex_id", "x", "y", "phi", "mu")
SURF_COLUMNS = ("surface_id", "arclength", "psi", "theta")


def write_snapshot(state: State, mesh: BulkSurfaceMesh, stem) -> tuple[Path, Path]:
    """Write ``<stem>_bulk.csv`` and ``<stem>_surf.csv``; return both paths."""
    stem = Path(stem)
    pb = stem.with_name(stem.name + "_bulk.csv")
    ps = stem.with_name(stem.name + "_surf.csv")
    with pb.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BULK_COLUMNS)
        for i, ((x, y), f, m) in enumerate(zip(mesh.vertices, state.phi, state.mu)):
            w.writerow([i, repr(float(x)), repr(float(y)), repr(float(f)), repr(float(m))])
    with ps.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SURF_COLUMNS)
        for j, (s, f, m) in enumerate(zip(mesh.arclength, state.psi, state.theta)):
            w.writerow([j, repr(float(s)), repr(float(f)), repr(float(m))])
    return pb, ps


def _read_columns(path, expected):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != tuple(expected):
        raise ConfigurationError(f"{path}: expected header {','.join(expected)}")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    return data.reshape(-1, len(expected))


def read_snapshot(bulk_path, surf_path, mesh: BulkSurfaceMesh) -> State:
    """Read a snapshot pair written by :func:`write_snapshot` back into a :class:`State`."""
    b = _read_columns(bulk_path, BULK_COLUMNS)
    s = _read_columns(surf_path, SURF_COLUMNS)
    if len(b) != mesh.n_bulk or len(s) != mesh.n_surf:
        raise ConfigurationError("snapshot size does not match the mesh")
    phi = np.empty(mesh.n_bulk)
    mu = np.empty(mesh.n_bulk)
    phi[b[:, 0].astype(int)] = b[:, 3]
    mu[b[:, 0].astype(int)] = b[:, 4]
    psi = np.empty(mesh.n_surf)
    theta = np.empty(mesh.n_surf)
    psi[s[:, 0].astype(int)] = s[:, 2]
    theta[s[:, 0].astype(int)] = s[:, 3]
    return State(phi, psi, mu, theta)


def _vtk_scalars(fh, name, values):
    fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
    for v in values:
        fh.write(f"{float(v)!r}\n")


def _vtk_header(kind, t):
    return f"# vtk DataFile Version 3.0\n{kind} fields t={float(t)!r}\nASCII\nDATASET UNSTRUCTURED_GRID\n"


def write_vtk(state: State, mesh: BulkSurfaceMesh, stem) -> tuple[Path, Path]:
    """Legacy ASCII VTK files: bulk triangles with ``phi, mu`` and the boundary polygon with ``psi, theta``."""
    stem = Path(stem)
    pb = stem.with_name(stem.name + "_bulk.vtk")
    ps = stem.with_name(stem.name + "_surf.vtk")
    with pb.open("w") as fh:
        fh.write(_vtk_header("bulk", state.t))
        fh.write(f"POINTS {mesh.n_bulk} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r} 0.0\n")
        nt = len(mesh.triangles)
        fh.write(f"CELLS {nt} {4 * nt}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {nt}\n" + "5\n" * nt)
        fh.write(f"POINT_DATA {mesh.n_bulk}\n")
        _vtk_scalars(fh, "phi", state.phi)
        _vtk_scalars(fh, "mu", state.mu)
    with ps.open("w") as fh:
        ns = mesh.n_surf
        fh.write(_vtk_header("surface", state.t))
        fh.write(f"POINTS {ns} double\n")
        for x, y in mesh.surface_points:
            fh.write(f"{float(x)!r} {float(y)!r} 0.0\n")
        fh.write(f"CELLS {ns} {3 * ns}\n")
        for j in range(ns):
            fh.write(f"2 {j} {(j + 1) % ns}\n")
        fh.write(f"CELL_TYPES {ns}\n" + "3\n" * ns)
        fh.write(f"POINT_DATA {ns}\n")
        _vtk_scalars(fh, "psi", state.psi)
        _vtk_scalars(fh, "theta", state.theta)
    return pb, ps


class DiagnosticsCsv:
    """Streaming sink writing one CSV row per :class:`DiagnosticsRecord`."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = self.path.open("w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(DiagnosticsRecord.columns())

    def __call__(self, rec: DiagnosticsRecord):
        self._writer.writerow([repr(float(v)) for v in rec.values()])

    def close(self):
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_diagnostics(path) -> list[DiagnosticsRecord]:
    data = _read_columns(path, DiagnosticsRecord.columns())
    return [DiagnosticsRecord(*map(float, row)) for row in data]


def write_sweep_report(result, path, band: float = 0.1) -> Path:
    """CSV of ``parameter, quantity, slope_so_far`` followed by a ``# summary`` line."""
    path = Path(path)
    status = "exploratory" if result.exploratory else (
        "pass" if abs(result.fitted_slope - result.expected_slope) <= band else "fail")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "quantity", "slope_so_far"])
        for p, q, s in zip(result.parameter_values, result.quantity_values, result.slopes_so_far()):
            w.writerow([repr(float(p)), repr(float(q)), "nan" if math.isnan(s) else repr(float(s))])
        fh.write(f"# summary direction={result.direction} slope={float(result.fitted_slope)!r} "
                 f"expected={result.expected_slope!r} band={band!r} fit_residual={float(result.fit_residual)!r} "
                 f"status={status} note=one-sided-bound\n")
    return path


def write_dependence_report(table, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta", "max_dual_norm_difference", "identical"])
        for d, m, same in zip(table.deltas, table.max_difference, table.identical):
            w.writerow([repr(float(d)), repr(float(m)), int(same)])
        fh.write(f"# summary mode={table.mode} slope={float(table.slope)!r} "
                 f"fit_residual={float(table.fit_residual)!r}\n")
    return path


def load_velocity_table(path, mesh: BulkSurfaceMesh):
    """Read nodal velocities from rows ``b i vx vy`` (bulk vertex) and ``s j wx wy`` (surface vertex)."""
    v = np.zeros((mesh.n_bulk, 2))
    w = np.zeros((mesh.n_surf, 2))
    for k, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] not in ("b", "s"):
            raise ConfigurationError(f"{path}:{k}: expected 'b|s index vx vy'")
        idx = int(parts[1])
        target = v if parts[0] == "b" else w
        if not 0 <= idx < len(target):
            raise ConfigurationError(f"{path}:{k}: index {idx} out of range")
        target[idx] = float(parts[2]), float(parts[3])
    return v, w
