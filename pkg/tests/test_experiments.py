import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bulksurface_ch.errors import ConfigurationError, DomainError, ModelError, SolverError
from bulksurface_ch.experiments import (EXPECTED_SLOPES, SweepResult, _mean_free_perturbation, continuous_dependence,
                                        fit_rate, limit_sweep, reference_initial_data, reference_setup)
from bulksurface_ch.model import CouplingParams, Mobilities, TriState, tabulated_mobility
from bulksurface_ch.stepper import StepConfig


def _p(K="1", L="1", **kw):
    return CouplingParams(K=TriState.parse(K), L=TriState.parse(L), **kw)


def test_fit_rate_exact_laws():
    x = np.logspace(-4, 0, 5)
    assert fit_rate(x, x) == pytest.approx((1.0, 0.0), abs=1e-12)
    s, r = fit_rate(x, 7.0 * x**-0.5)
    assert s == pytest.approx(-0.5, abs=1e-12) and r < 1e-12
    assert fit_rate(x, np.full(5, 3.0))[0] == pytest.approx(0.0, abs=1e-12)
    assert fit_rate(x, x**0.5)[0] == pytest.approx(0.5, abs=1e-12)


@given(seed=st.integers(0, 10**6), n=st.integers(3, 12))
@settings(max_examples=40, deadline=None)
def test_fit_rate_matches_normal_equations(seed, n):
    r = np.random.default_rng(seed)
    x = np.sort(r.uniform(0.01, 100, n))
    if len(np.unique(x)) < 2:
        return
    y = 2.0 * x**0.3 * np.exp(0.1 * r.standard_normal(n))
    lx, ly = np.log(x), np.log(y)
    # closed-form simple regression
    slope = ((lx - lx.mean()) @ (ly - ly.mean())) / ((lx - lx.mean()) @ (lx - lx.mean()))
    icpt = ly.mean() - slope * lx.mean()
    rms = np.sqrt(np.mean((ly - slope * lx - icpt) ** 2))
    got = fit_rate(x, y)
    assert got[0] == pytest.approx(slope, abs=1e-12)
    assert got[1] == pytest.approx(rms, abs=1e-12)


def test_fit_rate_errors_and_clamping():
    with pytest.raises(DomainError):
        fit_rate([1, 2], [1, 2])
    with pytest.raises(DomainError):
        fit_rate([0, 1, 2], [1, 2, 3])
    with pytest.warns(UserWarning, match="clamped"):
        fit_rate([1, 10, 100], [1.0, 0.0, 1.0])


def test_reference_initial_data(disk6):
    mesh, _ = disk6
    phi, psi = reference_initial_data("tanh_disk", mesh, _p(), r0=0.5, width=0.1)
    assert phi[0] == pytest.approx(np.tanh(5.0))  # vertex 0 is the origin
    assert np.all(np.abs(phi) < 1) and np.array_equal(psi, phi[mesh.trace_map])
    a = reference_initial_data("random_smooth", mesh, _p(), seed=4)
    b = reference_initial_data("random_smooth", mesh, _p(), seed=4)
    c = reference_initial_data("random_smooth", mesh, _p(), seed=5)
    assert np.array_equal(a[0], b[0]) and not np.array_equal(a[0], c[0])
    assert np.abs(a[0]).max() == pytest.approx(0.5)
    _, psi2 = reference_initial_data("tanh_disk", mesh, _p(K="0", alpha=2.0))
    assert np.allclose(2.0 * psi2, phi[mesh.trace_map])


def test_reference_initial_data_errors(disk3):
    mesh, _ = disk3
    with pytest.raises(ConfigurationError):
        reference_initial_data("tanh_disk", mesh, _p(K="0", alpha=0.0))
    with pytest.raises(ConfigurationError):
        reference_initial_data("gaussian", mesh, _p())
    with pytest.raises(ConfigurationError):
        reference_initial_data("tanh_disk", mesh, _p(), width=0.0)


@pytest.fixture(scope="module")
def tiny():
    return reference_setup(resolution=3, T_final=0.004, dt=1e-3, width=0.3)


def test_sweep_is_order_independent(tiny):
    a = limit_sweep("L_to_inf", [1e-2, 1.0, 1e2], tiny, workers=1)
    b = limit_sweep("L_to_inf", [1.0, 1e2, 1e-2], tiny, workers=1)
    assert np.array_equal(a.parameter_values, [1e-2, 1.0, 1e2])
    assert np.array_equal(a.parameter_values, b.parameter_values)
    assert np.array_equal(a.quantity_values, b.quantity_values)
    assert a.fitted_slope == b.fitted_slope
    assert a.expected_slope == EXPECTED_SLOPES["L_to_inf"] and not a.exploratory
    assert np.isnan(a.slopes_so_far()[1]) and a.slopes_so_far()[2] == pytest.approx(a.fitted_slope)


def test_sweep_quantities_are_positive_and_trend(tiny):
    res = limit_sweep("K_to_0", [1e-3, 1e-2, 1e-1, 1.0], tiny, workers=1)
    assert np.all(res.quantity_values > 0)
    # the trace mismatch shrinks with K
    assert np.all(np.diff(res.quantity_values) > 0)
    assert res.per_run_handles[0]["value"] == 1e-3


@pytest.mark.parametrize("values, err", [([1.0, 0.1], DomainError), ([1.0, 0.5, 0.2], DomainError),
                                         ([1.0, 1.0, 1e-3], DomainError), ([1.0, -1.0, 1e-3], DomainError)])
def test_sweep_rejects_bad_values(tiny, values, err):
    with pytest.raises(err):
        limit_sweep("K_to_0", values, tiny)


def test_sweep_rejects_unknown_direction(tiny):
    with pytest.raises(ConfigurationError):
        limit_sweep("alpha_to_0", [1, 0.1, 0.01], tiny)


def test_sweep_names_failing_member(tiny):
    from dataclasses import replace

    bad = replace(tiny, step=StepConfig(dt=0.5, newton_max_iters=1, newton_tol=1e-14), T_final=1.0)
    with pytest.raises(SolverError, match="value"):
        limit_sweep("K_to_inf", [1.0, 10.0, 100.0], bad)


def test_sweep_with_variable_mobility_is_exploratory(tiny):
    from dataclasses import replace

    mobs = Mobilities(tabulated_mobility([-1, 1], [0.5, 1.5]), tabulated_mobility([-1, 1], [1.0, 1.0]))
    res = limit_sweep("L_to_0", [1e-2, 1e-1, 1.0], replace(tiny, mobilities=mobs))
    assert res.exploratory


def test_sweep_result_slopes_so_far():
    r = SweepResult("K_to_0", np.array([1e-2, 1e-1, 1.0, 10.0]), np.array([0.1, 0.3162, 1.0, 3.162]), 0.5, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        s = r.slopes_so_far()
    assert np.isnan(s[0]) and np.isnan(s[1]) and s[3] == pytest.approx(0.5, abs=1e-3)


@pytest.mark.parametrize("K, L", [("1", "1"), ("0", "0"), ("1", "inf"), ("0", "inf")])
def test_perturbation_is_mean_free_and_admissible(K, L):
    setup = reference_setup(resolution=4, params=_p(K, L, alpha=0.8, beta=1.3), T_final=0.0)
    pb, ps = _mean_free_perturbation(setup)
    ops, p = setup.ops, setup.params
    mb, ms = ops.M_bulk_lumped @ pb, ops.M_surf_lumped @ ps
    if L == "inf":
        assert abs(mb) < 1e-13 and abs(ms) < 1e-13
    else:
        assert abs(p.beta * mb + ms) < 1e-13
    if K == "0":
        assert np.allclose(pb[ops.T.indices], p.alpha * ps, atol=1e-14)
    assert np.abs(pb).max() > 0.01


def test_continuous_dependence_zero_delta_is_identical(tiny):
    for mode in ("initial_data", "velocity"):
        table = continuous_dependence(tiny, [0.0], mode)
        assert table.identical == [True]
        assert table.max_difference[0] == 0.0


def test_continuous_dependence_linear(tiny):
    table = continuous_dependence(tiny, [0.0, 1e-4, 1e-3, 1e-2], "initial_data")
    assert table.identical == [True, False, False, False]
    assert 0.9 <= table.slope <= 1.1


def test_continuous_dependence_preconditions(tiny):
    from dataclasses import replace

    mobs = Mobilities(tabulated_mobility([-1, 1], [0.5, 1.5]))
    with pytest.raises(ModelError, match="constant mobilities"):
        continuous_dependence(replace(tiny, mobilities=mobs), [0.1])
    with pytest.raises(ConfigurationError):
        continuous_dependence(tiny, [0.1], "boundary")
    with pytest.raises(DomainError):
        continuous_dependence(tiny, [-0.1])


def test_rotation_falls_back_to_zero_off_disk():
    s = reference_setup(shape="unit_square", resolution=3, T_final=0.0)
    assert s.velocity.is_zero
