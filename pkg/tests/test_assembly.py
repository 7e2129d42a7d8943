from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from bulksurface_ch.assembly import (VelocitySample, assemble_operators, builtin_velocity, check_velocity,
                                     convection_load, dump_coo, dump_operators, weighted_stiffness)
from bulksurface_ch.errors import AssemblyError, ConfigurationError, ModelError
from bulksurface_ch.geometry import BulkSurfaceMesh, generate_mesh
from bulksurface_ch.verification import dense_convection, dense_operators, dense_weighted_stiffness


@pytest.mark.parametrize("shape", ["unit_square", "unit_disk"])
@given(r=st.integers(2, 10))
@settings(max_examples=8, deadline=None)
def test_matrix_invariants(shape, r):
    mesh = generate_mesh(shape, r)
    ops = assemble_operators(mesh)
    for A in (ops.M_bulk, ops.A_bulk, ops.M_surf, ops.A_surf):
        assert abs(A - A.T).max() < 1e-14
    # stiffness kills constants, mass rows sum to the lumped weights
    assert np.abs(ops.A_bulk @ np.ones(ops.n_bulk)).max() < 1e-12
    assert np.abs(ops.A_surf @ np.ones(ops.n_surf)).max() < 1e-12
    assert np.allclose(np.asarray(ops.M_bulk.sum(axis=1)).ravel(), ops.M_bulk_lumped, atol=1e-15)
    assert np.allclose(np.asarray(ops.M_surf.sum(axis=1)).ravel(), ops.M_surf_lumped, atol=1e-15)
    assert ops.area == pytest.approx(mesh.area, rel=1e-13)
    assert ops.perimeter == pytest.approx(mesh.perimeter, rel=1e-13)
    assert np.all(ops.M_bulk_lumped > 0) and np.all(ops.M_surf_lumped > 0)


def test_linear_function_gradient_energy(square4):
    mesh, ops = square4
    x, y = mesh.vertices.T
    u = 2.0 * x - 3.0 * y
    assert u @ (ops.A_bulk @ u) == pytest.approx(13.0, rel=1e-13)  # |grad u|^2 |Omega|
    assert u @ (ops.M_bulk @ u) == pytest.approx(
        4 / 3 - 2 * 2 * 3 * 0.25 + 9 / 3, rel=1e-13)  # int (2x - 3y)^2 over the unit square


def test_surface_arclength_derivative_on_square(square4):
    mesh, ops = square4
    s = mesh.arclength
    # s jumps by 4 at the seam; the edge closing the loop contributes (4 - h)^2/h instead of h
    h = mesh.edge_lengths[0]
    expected = (mesh.perimeter - h) + (mesh.perimeter - h) ** 2 / h
    assert s @ (ops.A_surf @ s) == pytest.approx(expected, rel=1e-12)


def test_matches_element_loop_oracle(disk3):
    mesh, ops = disk3
    D = dense_operators(mesh)
    for sparse, dense in ((ops.M_bulk, D.M_b), (ops.A_bulk, D.A_b), (ops.M_surf, D.M_s), (ops.A_surf, D.A_s),
                          (ops.T, D.T)):
        assert np.abs(sparse.toarray() - dense).max() < 1e-13


def test_stiffness_nullspace_is_constants(disk3):
    _, ops = disk3
    for A in (ops.A_bulk, ops.A_surf):
        w = np.linalg.eigvalsh(A.toarray())
        assert np.sum(np.abs(w) < 1e-10) == 1


def test_weighted_stiffness_reduces_and_scales(disk3, rng):
    mesh, ops = disk3
    A_b, A_s = weighted_stiffness(ops, mesh, np.ones(mesh.n_bulk), np.ones(mesh.n_surf))
    assert abs(A_b - ops.A_bulk).max() < 1e-14 and abs(A_s - ops.A_surf).max() < 1e-14
    wb = rng.uniform(0.5, 2.0, mesh.n_bulk)
    ws = rng.uniform(0.5, 2.0, mesh.n_surf)
    B_b, B_s = weighted_stiffness(ops, mesh, 3.0 * wb, 3.0 * ws)
    C_b, C_s = weighted_stiffness(ops, mesh, wb, ws)
    assert abs(B_b - 3.0 * C_b).max() < 1e-12
    ref_b, ref_s = dense_weighted_stiffness(mesh, wb, ws)
    assert np.abs(C_b.toarray() - ref_b).max() < 1e-12
    assert np.abs(C_s.toarray() - ref_s).max() < 1e-12
    # symmetric positive semidefinite with the constants as the only null direction
    w = np.linalg.eigvalsh(C_b.toarray())
    assert w.min() > -1e-12 and np.sum(w < 1e-10) == 1


def test_weighted_stiffness_rejects_nonpositive(disk3):
    mesh, ops = disk3
    with pytest.raises(ModelError):
        weighted_stiffness(ops, mesh, np.zeros(mesh.n_bulk), np.ones(mesh.n_surf))


def test_convection_zero_velocity(disk3, rng):
    mesh, ops = disk3
    vel = builtin_velocity("zero", mesh)
    b, s = convection_load(ops, mesh, rng.standard_normal(mesh.n_bulk), rng.standard_normal(mesh.n_surf), vel)
    assert not np.any(b) and not np.any(s)


def test_convection_of_constant_under_rotation_vanishes(disk6):
    # v is divergence free and tangential, so int 1 v . grad zeta = 0 for every test function
    mesh, ops = disk6
    vel = builtin_velocity("rotation", mesh)
    b, s = convection_load(ops, mesh, np.ones(mesh.n_bulk), np.ones(mesh.n_surf), vel)
    assert np.abs(b).max() < 1e-14 and np.abs(s).max() < 1e-14


def _single_triangle():
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tri = np.array([[0, 1, 2]])
    edges = np.array([[0, 1], [1, 2], [2, 0]])
    ell = np.array([1.0, np.sqrt(2.0), 1.0])
    t = (vertices[edges[:, 1]] - vertices[edges[:, 0]]) / ell[:, None]
    normals = np.column_stack([t[:, 1], -t[:, 0]])
    return BulkSurfaceMesh(vertices, tri, edges, np.array([0, 1, 2]), np.array([0.5]), ell, normals)


def test_convection_reference_triangle():
    mesh = _single_triangle()
    ops = assemble_operators(mesh)
    v = np.tile([1.0, 0.0], (3, 1))
    vel = VelocitySample(v, np.zeros((3, 2)))
    b, _ = convection_load(ops, mesh, mesh.vertices[:, 0], np.zeros(3), vel)
    # int x d(zeta_i)/dx over the triangle with grads (-1, 1, 0) and int x = 1/6
    assert np.allclose(b, [-1 / 6, 1 / 6, 0.0], atol=1e-15)


def test_convection_superposition_and_oracle(disk3, rng):
    mesh, ops = disk3
    rot = builtin_velocity("rotation", mesh)
    slide = builtin_velocity("surface_slide", mesh, sigma=0.7)
    both = VelocitySample(rot.v_nodes + slide.v_nodes, rot.w_nodes + slide.w_nodes)
    f, g = rng.standard_normal(mesh.n_bulk), rng.standard_normal(mesh.n_surf)
    r1 = convection_load(ops, mesh, f, g, rot)
    r2 = convection_load(ops, mesh, f, g, slide)
    r3 = convection_load(ops, mesh, f, g, both)
    for k in range(2):
        assert np.allclose(r1[k] + r2[k], r3[k], atol=1e-13)
    ref = dense_convection(mesh, f, g, both)
    for k in range(2):
        assert np.abs(r3[k] - ref[k]).max() < 1e-13


def test_degenerate_element_raises():
    mesh = generate_mesh("unit_square", 3)
    areas = np.array(mesh.element_areas)
    areas[4] = 0.0
    bad = replace(mesh, element_areas=areas)
    with pytest.raises(AssemblyError, match="element 4"):
        assemble_operators(bad)


def test_builtin_velocities(disk6):
    mesh, _ = disk6
    rot = builtin_velocity("rotation", mesh, gamma=2.0)
    assert np.allclose(rot.v_nodes[1], 2.0 * np.array([-mesh.vertices[1, 1], mesh.vertices[1, 0]]))
    assert check_velocity(rot, mesh) < 1e-12
    slide = builtin_velocity("surface_slide", mesh)
    assert check_velocity(slide, mesh) < 1e-12
    assert np.allclose(np.linalg.norm(slide.w_nodes, axis=1), 1.0)
    assert builtin_velocity("zero", mesh).is_zero
    with pytest.raises(ConfigurationError):
        builtin_velocity("rotation", generate_mesh("unit_square", 3))
    with pytest.raises(ConfigurationError):
        builtin_velocity("vortex", mesh)


def test_check_velocity_rejects_normal_component(disk3):
    mesh, _ = disk3
    vel = VelocitySample(np.zeros((mesh.n_bulk, 2)), mesh.vertex_normals.copy())
    with pytest.raises(ConfigurationError, match="tangential"):
        check_velocity(vel, mesh)


def test_coupling_block_is_penalty(disk3, rng):
    _, ops = disk3
    f, g = rng.standard_normal(ops.n_bulk), rng.standard_normal(ops.n_surf)
    u = np.concatenate([f, g])
    d = 1.7 * g - ops.T @ f
    assert u @ (ops.coupling_block(1.7) @ u) == pytest.approx(d @ (ops.M_surf_lumped * d), rel=1e-12)


def test_restriction_spans_trace_space(disk3, rng):
    _, ops = disk3
    P = ops.restriction(2.5)
    u = P @ rng.standard_normal(P.shape[1])
    phi, psi = u[:ops.n_bulk], u[ops.n_bulk:]
    assert np.allclose(ops.T @ phi, 2.5 * psi)
    assert np.linalg.matrix_rank(P.toarray()) == P.shape[1]


def test_dump_coo_roundtrip(tmp_path, square4):
    _, ops = square4
    path = tmp_path / "A.txt"
    dump_coo(ops.A_bulk, path)
    lines = path.read_text().splitlines()
    n, m, nnz = map(int, lines[0][1:].split())
    rows = np.array([ln.split() for ln in lines[1:]], dtype=float)
    A = sp.coo_matrix((rows[:, 2], (rows[:, 0].astype(int), rows[:, 1].astype(int))), shape=(n, m))
    assert nnz == ops.A_bulk.nnz
    assert abs(A.tocsr() - ops.A_bulk).max() == 0.0
    written = dump_operators(ops, tmp_path / "ops")
    assert len(written) == 5 and all(p.exists() for p in written)
