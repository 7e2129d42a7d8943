import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bulksurface_ch.errors import ConfigurationError, ModelError
from bulksurface_ch.model import (CouplingParams, MobilitySpec, Potentials, State, TriState, builtin_potential,
                                  conserved_quantities, constant_mobility, double_well, energy, h_of, mass,
                                  penalty, tabulated_mobility, tabulated_potential)


def _p(K="1", L="1", **kw):
    return CouplingParams(K=TriState.parse(K), L=TriState.parse(L), **kw)


def test_h_of_cases():
    assert h_of(TriState.zero()) == 0.0
    assert h_of(TriState.infinite()) == 0.0
    assert h_of(TriState.finite(4.0)) == 0.25


@pytest.mark.parametrize("text, tag", [("0", "zero"), ("0.0", "zero"), ("inf", "infinite"), ("INF", "infinite"),
                                       ("1e300000", "infinite"), ("2.5", "finite")])
def test_tristate_parse(text, tag):
    assert TriState.parse(text).tag == tag


@pytest.mark.parametrize("bad", ["-1", "abc", "nan", "-inf"])
def test_tristate_parse_rejects(bad):
    with pytest.raises(ConfigurationError):
        TriState.parse(bad)


def test_tristate_str_roundtrip():
    for t in (TriState.zero(), TriState.infinite(), TriState.finite(0.125)):
        assert TriState.parse(str(t)) == t


def test_params_validation():
    with pytest.raises(ConfigurationError):
        CouplingParams(eps=0.0)
    p = _p(alpha=-1.0)
    with pytest.raises(ConfigurationError, match="must be nonzero"):
        p.check_solvability(np.pi, 2 * np.pi * 0.5)  # -pi + pi = 0
    p.check_solvability(1.0, 4.0)


def test_energy_of_zero_state(disk6):
    mesh, ops = disk6
    s = State.from_fields(np.zeros(ops.n_bulk), np.zeros(ops.n_surf))
    assert energy(s, ops, mesh, _p(), Potentials()) == pytest.approx(0.25 * (ops.area + ops.perimeter), rel=1e-14)


def test_energy_of_pure_phase_is_zero(disk6):
    mesh, ops = disk6
    s = State.from_fields(np.ones(ops.n_bulk), np.ones(ops.n_surf))
    for K in ("0", "1", "inf"):
        assert energy(s, ops, mesh, _p(K=K), Potentials()) == pytest.approx(0.0, abs=1e-14)


def test_energy_penalty_of_opposite_phases(disk6):
    mesh, ops = disk6
    s = State.from_fields(np.ones(ops.n_bulk), -np.ones(ops.n_surf))
    assert energy(s, ops, mesh, _p(K="1"), Potentials()) == pytest.approx(2 * ops.perimeter, rel=1e-13)
    # the penalty term is absent for K in {0, inf}
    assert energy(s, ops, mesh, _p(K="inf"), Potentials()) == pytest.approx(0.0, abs=1e-14)


def test_energy_additive_in_penalty(disk6, rng):
    mesh, ops = disk6
    s = State.from_fields(rng.standard_normal(ops.n_bulk), rng.standard_normal(ops.n_surf))
    e_inf = energy(s, ops, mesh, _p(K="inf"), Potentials())
    e_half = energy(s, ops, mesh, _p(K="0.5"), Potentials())
    e_quarter = energy(s, ops, mesh, _p(K="0.25"), Potentials())
    pen = penalty(s, ops, 1.0)
    assert e_half - e_inf == pytest.approx(pen, rel=1e-12)
    assert e_quarter - e_inf == pytest.approx(2 * pen, rel=1e-12)


def test_energy_permutation_invariant(rng):
    from dataclasses import replace

    from bulksurface_ch.assembly import assemble_operators
    from bulksurface_ch.geometry import generate_mesh

    mesh = generate_mesh("unit_disk", 4)
    perm = rng.permutation(mesh.n_bulk)
    inv = np.argsort(perm)
    pmesh = replace(mesh, vertices=mesh.vertices[perm], triangles=inv[mesh.triangles], trace_map=inv[mesh.trace_map],
                    _cache={})
    ops, pops = assemble_operators(mesh), assemble_operators(pmesh)
    phi, psi = rng.standard_normal(mesh.n_bulk), rng.standard_normal(mesh.n_surf)
    s = State.from_fields(phi, psi)
    ps = State.from_fields(phi[perm], psi)
    p = _p()
    assert energy(s, ops, mesh, p, Potentials()) == pytest.approx(energy(ps, pops, pmesh, p, Potentials()), rel=1e-13)


def test_mass_example(square4):
    _, ops = square4
    s = State.from_fields(np.ones(ops.n_bulk), np.full(ops.n_surf, 3.0))
    combined, bulk, surf = mass(s, ops, _p(beta=2.0))
    assert combined == pytest.approx(14.0, rel=1e-14)
    assert (bulk, surf) == (pytest.approx(1.0), pytest.approx(12.0))
    assert mass(s, ops, _p(beta=0.0))[0] == surf


def test_mass_matches_element_integration(disk6, rng):
    mesh, ops = disk6
    s = State.from_fields(rng.standard_normal(ops.n_bulk), rng.standard_normal(ops.n_surf))
    bulk = sum(a * s.phi[t].mean() for t, a in zip(mesh.triangles, mesh.element_areas))
    j = np.arange(mesh.n_surf)
    surf = float(np.sum(mesh.edge_lengths * 0.5 * (s.psi[j] + s.psi[(j + 1) % mesh.n_surf])))
    combined, b, sf = mass(s, ops, _p(beta=1.5))
    assert b == pytest.approx(bulk, abs=1e-12) and sf == pytest.approx(surf, abs=1e-12)
    assert combined == pytest.approx(1.5 * bulk + surf, abs=1e-12)


@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_mass_is_linear(square4, a, b, seed):
    _, ops = square4
    r = np.random.default_rng(seed)
    s1 = State.from_fields(r.standard_normal(ops.n_bulk), r.standard_normal(ops.n_surf))
    s2 = State.from_fields(r.standard_normal(ops.n_bulk), r.standard_normal(ops.n_surf))
    s3 = State.from_fields(a * s1.phi + b * s2.phi, a * s1.psi + b * s2.psi)
    p = _p(beta=1.3)
    m = [np.array(mass(s, ops, p)) for s in (s1, s2, s3)]
    assert np.allclose(a * m[0] + b * m[1], m[2], atol=1e-12)


def test_conserved_quantities_by_case(square4):
    _, ops = square4
    s = State.from_fields(np.ones(ops.n_bulk), np.ones(ops.n_surf))
    assert conserved_quantities(s, ops, _p(L="1")).shape == (1,)
    assert conserved_quantities(s, ops, _p(L="inf")).shape == (2,)


def test_double_well_split():
    w = double_well()
    assert (w.F_prime(1.0), w.F_prime(0.0), w.F_second(0.0)) == (0.0, 0.0, -1.0)
    s = np.linspace(-3, 3, 1000)
    assert np.abs(w.convex_part_prime(s) + w.concave_part_prime(s) - w.F_prime(s)).max() <= 1e-14
    # derivative checks by central differences
    h = 1e-6
    assert np.allclose((w.F(s + h) - w.F(s - h)) / (2 * h), w.F_prime(s), atol=1e-6)
    assert np.allclose((w.F_prime(s + h) - w.F_prime(s - h)) / (2 * h), w.F_second(s), atol=1e-5)
    w.check()
    a, b = w.coercivity
    grid = np.linspace(-10, 10, 200001)
    assert np.min(w.F(grid) - a * grid**2 + b) >= 0


def test_tabulated_potential_matches_double_well():
    s = np.linspace(-3, 3, 601)
    w = double_well()
    t = tabulated_potential(s, w.F(s), s**3, -s)
    x = np.linspace(-2.5, 2.5, 37)
    assert np.allclose(t.F(x), w.F(x), atol=1e-3)
    assert np.allclose(t.F_prime(x), w.F_prime(x), atol=1e-3)
    t.check(s)


def test_potential_errors():
    s = np.linspace(-1, 1, 5)
    with pytest.raises(ModelError):
        tabulated_potential(s, -np.ones(5), s, -s)
    with pytest.raises(ModelError):
        tabulated_potential(s, np.ones(5), -s, s)  # convex part decreasing
    with pytest.raises(ModelError):
        tabulated_potential(s[:2], np.ones(2), s[:2], s[:2])
    with pytest.raises(ConfigurationError):
        builtin_potential("user")
    with pytest.raises(ConfigurationError):
        builtin_potential("quartic")


def test_mobility_bounds():
    m = constant_mobility(2.0)
    assert m.constant and np.all(m(np.zeros(4)) == 2.0)
    with pytest.raises(ModelError):
        constant_mobility(0.0)
    with pytest.raises(ModelError):
        MobilitySpec(m=lambda s: s, lower=2.0, upper=1.0)
    t = tabulated_mobility([-1, 0, 1], [1.0, 2.0, 1.0])
    assert not t.constant and (t.lower, t.upper) == (1.0, 2.0)
    t.check()
    with pytest.raises(ModelError):
        tabulated_mobility([0, 1], [1.0, 0.0])


def test_state_shape_check(square4):
    _, ops = square4
    with pytest.raises(ModelError):
        State.from_fields(np.zeros(3), np.zeros(ops.n_surf)).check(ops)
