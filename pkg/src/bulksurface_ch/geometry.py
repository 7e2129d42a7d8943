"""Bulk triangulations of the unit disk and unit square with their boundary trace curve.

The boundary curve is represented by its own 1D mesh (a closed polygon) whose
vertices coincide with bulk vertices; ``trace_map[j]`` is the bulk index of
surface vertex ``j``.  Surface vertices are numbered counterclockwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError

SHAPES = ("unit_disk", "unit_square")


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BulkSurfaceMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    trace_map: np.ndarray
    element_areas: np.ndarray
    edge_lengths: np.ndarray
    outward_normals: np.ndarray
    shape: str = "custom"
    resolution: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_bulk(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_surf(self) -> int:
        return self.trace_map.shape[0]

    @property
    def area(self) -> float:
        return float(self.element_areas.sum())

    @property
    def perimeter(self) -> float:
        return float(self.edge_lengths.sum())

    @property
    def h(self) -> float:
        """Longest edge of the triangulation."""
        if "h" not in self._cache:
            tri = self.triangles
            p = self.vertices
            e = np.concatenate([p[tri[:, 1]] - p[tri[:, 0]],
                                p[tri[:, 2]] - p[tri[:, 1]],
                                p[tri[:, 0]] - p[tri[:, 2]]])
            self._cache["h"] = float(np.sqrt((e**2).sum(axis=1)).max())
        return self._cache["h"]

    @property
    def surface_points(self) -> np.ndarray:
        return self.vertices[self.trace_map]

    @property
    def interior_vertices(self) -> np.ndarray:
        mask = np.ones(self.n_bulk, dtype=bool)
        mask[self.trace_map] = False
        return np.flatnonzero(mask)

    @property
    def vertex_normals(self) -> np.ndarray:
        """Unit normals at surface vertices (normalized mean of the two adjacent edge normals)."""
        if "vn" not in self._cache:
            n = self.outward_normals
            vn = n + np.roll(n, 1, axis=0)
            vn /= np.linalg.norm(vn, axis=1)[:, None]
            self._cache["vn"] = _frozen(vn, float)
        return self._cache["vn"]

    @property
    def vertex_tangents(self) -> np.ndarray:
        """Counterclockwise unit tangents at surface vertices."""
        vn = self.vertex_normals
        return np.column_stack([-vn[:, 1], vn[:, 0]])

    @property
    def arclength(self) -> np.ndarray:
        """Arc-length coordinate of each surface vertex, starting at 0 at surface vertex 0."""
        return np.concatenate([[0.0], np.cumsum(self.edge_lengths)[:-1]])


def _build(vertices, triangles, trace_map, shape, resolution):
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    trace_map = np.asarray(trace_map, dtype=np.int64)
    p = vertices[triangles]
    signed = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                    - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    flip = signed < 0
    if flip.any():
        triangles = triangles.copy()
        triangles[flip, 1], triangles[flip, 2] = triangles[flip, 2], triangles[flip, 1].copy()
        signed = np.abs(signed)
    edges = np.column_stack([trace_map, np.roll(trace_map, -1)])
    t = vertices[edges[:, 1]] - vertices[edges[:, 0]]
    lengths = np.sqrt((t**2).sum(axis=1))
    normals = np.column_stack([t[:, 1], -t[:, 0]]) / lengths[:, None]
    return BulkSurfaceMesh(
        vertices=_frozen(vertices, float),
        triangles=_frozen(triangles, np.int64),
        boundary_edges=_frozen(edges, np.int64),
        trace_map=_frozen(trace_map, np.int64),
        element_areas=_frozen(signed, float),
        edge_lengths=_frozen(lengths, float),
        outward_normals=_frozen(normals, float),
        shape=shape,
        resolution=int(resolution),
    )


def _square(r):
    n = r + 1
    x, y = np.meshgrid(np.arange(n) / r, np.arange(n) / r)
    vertices = np.column_stack([x.ravel(), y.ravel()])
    idx = np.arange(n * n).reshape(n, n)  # idx[j, i] -> vertex at (i/r, j/r)
    v00 = idx[:-1, :-1].ravel()
    v10 = idx[:-1, 1:].ravel()
    v01 = idx[1:, :-1].ravel()
    v11 = idx[1:, 1:].ravel()
    triangles = np.concatenate([np.column_stack([v00, v10, v11]),
                                np.column_stack([v00, v11, v01])])
    boundary = np.concatenate([idx[0, :-1], idx[:-1, -1], idx[-1, :0:-1], idx[:0:-1, 0]])
    return vertices, triangles, boundary


def _ring_strip(inner, outer, n_in, n_out):
    """Triangulate the annular strip between two concentric rings by merging their angles."""
    tris = []
    i = j = 0
    while i < n_in or j < n_out:
        a_next = (i + 1) / n_in
        b_next = (j + 1) / n_out
        if i < n_in and (j == n_out or a_next < b_next - 1e-14):
            tris.append((inner[i % n_in], outer[j % n_out], inner[(i + 1) % n_in]))
            i += 1
        else:
            tris.append((inner[i % n_in], outer[j % n_out], outer[(j + 1) % n_out]))
            j += 1
    return tris


def _disk(r):
    pts = [(0.0, 0.0)]
    rings = [np.array([0])]
    for k in range(1, r + 1):
        m = 6 * k
        ang = 2.0 * np.pi * np.arange(m) / m
        start = len(pts)
        rad = k / r
        ring_pts = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
        if k == r:
            # boundary vertices exactly on the unit circle
            ring_pts /= np.linalg.norm(ring_pts, axis=1)[:, None]
        pts.extend(map(tuple, ring_pts))
        rings.append(np.arange(start, start + m))
    tris = []
    first = rings[1]
    for j in range(len(first)):
        tris.append((0, first[j], first[(j + 1) % len(first)]))
    for k in range(2, r + 1):
        tris.extend(_ring_strip(rings[k - 1], rings[k], len(rings[k - 1]), len(rings[k])))
    return np.array(pts), np.array(tris), rings[r]


def generate_mesh(shape: str, resolution: int) -> BulkSurfaceMesh:
    """Build a conforming P1 triangulation of ``shape``.

    ``unit_square`` uses an ``r x r`` grid of diagonally split cells.
    ``unit_disk`` uses ``r`` concentric rings with ``6k`` vertices on ring ``k``;
    the outermost ring lies on the unit circle.  In both cases the mesh size is
    proportional to ``1/r``.
    """
    if shape not in SHAPES:
        raise ConfigurationError(f"unsupported mesh shape {shape!r}; expected one of {SHAPES}")
    resolution = int(resolution)
    if resolution < 2:
        raise DomainError(f"resolution must be >= 2, got {resolution}")
    if shape == "unit_square":
        v, t, b = _square(resolution)
    else:
        v, t, b = _disk(resolution)
    return _build(v, t, b, shape, resolution)


def measures(mesh: BulkSurfaceMesh) -> tuple[float, float]:
    """Return ``(|Omega|, |Gamma|)``."""
    return mesh.area, mesh.perimeter


def check_mesh(mesh: BulkSurfaceMesh) -> list[str]:
    """Return a list of violated mesh invariants (empty when the mesh is valid)."""
    problems = []
    if np.any(mesh.element_areas <= 0):
        problems.append("non-positive element area")
    tm = mesh.trace_map
    if len(np.unique(tm)) != len(tm):
        problems.append("trace_map not injective")
    # boundary vertices = vertices on edges used by exactly one triangle
    tri = mesh.triangles
    e = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    if set(np.unique(bnd).tolist()) != set(tm.tolist()):
        problems.append("trace_map image differs from boundary vertex set")
    be = {tuple(x) for x in np.sort(mesh.boundary_edges, axis=1).tolist()}
    if be != {tuple(x) for x in bnd.tolist()}:
        problems.append("boundary edges do not form the topological boundary cycle")
    if mesh.n_bulk - len(uniq) + len(tri) != 1:
        problems.append("Euler characteristic V - E + F != 1")
    if np.max(np.abs(np.linalg.norm(mesh.outward_normals, axis=1) - 1.0)) > 1e-12:
        problems.append("outward normals not unit length")
    return problems


def euler_characteristic(mesh: BulkSurfaceMesh) -> int:
    tri = mesh.triangles
    e = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    n_edges = len(np.unique(e, axis=0))
    return mesh.n_bulk - n_edges + len(tri)


def save_mesh(mesh: BulkSurfaceMesh, path) -> None:
    """Write the vertex, triangle and boundary-edge tables as whitespace-delimited text."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# shape {mesh.shape} resolution {mesh.resolution}\n")
        fh.write(f"vertices {mesh.n_bulk}\n")
        for i, (x, y) in enumerate(mesh.vertices):
            fh.write(f"{i} {float(x)!r} {float(y)!r}\n")
        fh.write(f"triangles {len(mesh.triangles)}\n")
        for i, (a, b, c) in enumerate(mesh.triangles):
            fh.write(f"{i} {a} {b} {c}\n")
        fh.write(f"boundary_edges {len(mesh.boundary_edges)}\n")
        for i, (a, b) in enumerate(mesh.boundary_edges):
            fh.write(f"{i} {a} {b}\n")


def load_mesh(path) -> BulkSurfaceMesh:
    """Read a mesh written by :func:`save_mesh`."""
    lines = Path(path).read_text().splitlines()
    shape, resolution = "custom", 0
    tables = {}
    k = 0
    while k < len(lines):
        line = lines[k].strip()
        k += 1
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 4 and parts[0] == "shape":
                shape, resolution = parts[1], int(parts[3])
            continue
        name, count = line.split()
        rows = [lines[k + i].split() for i in range(int(count))]
        k += int(count)
        tables[name] = rows
    for name in ("vertices", "triangles", "boundary_edges"):
        if name not in tables:
            raise ConfigurationError(f"mesh file {path} lacks the {name} table")
    vertices = np.array([[float(r[1]), float(r[2])] for r in tables["vertices"]])
    triangles = np.array([[int(r[1]), int(r[2]), int(r[3])] for r in tables["triangles"]])
    edges = np.array([[int(r[1]), int(r[2])] for r in tables["boundary_edges"]])
    trace = edges[:, 0]
    if not np.array_equal(np.roll(trace, -1), edges[:, 1]):
        raise ConfigurationError("boundary edges must form a single ordered cycle")
    return _build(vertices, triangles, trace, shape, resolution)
