"""Per-step energy bookkeeping, conserved quantities and the discrete chain-rule check."""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from .assembly import FeOperators, VelocitySample, convection_load, weighted_stiffness
from .elliptic import coupled_form
from .errors import DomainError
from .model import CouplingParams, Mobilities, Potentials, energy, h_of, mass


@dataclass
class DiagnosticsRecord:
    t: float
    energy: float
    mass_combined: float
    mass_bulk: float
    mass_surf: float
    dissipation_bulk: float = 0.0
    dissipation_surf: float = 0.0
    exchange: float = 0.0
    convective_work_bulk: float = 0.0
    convective_work_surf: float = 0.0
    energy_ineq_residual: float = 0.0
    chain_rule_residual: float = math.nan

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> tuple:
        return astuple(self)


def initial_record(state, ops: FeOperators, mesh, params: CouplingParams, potentials: Potentials):
    """Record for the initial state: energy and masses only."""
    mc, mb, ms = mass(state, ops, params)
    return DiagnosticsRecord(state.t, energy(state, ops, mesh, params, potentials), mc, mb, ms)


def exchange_term(state, ops: FeOperators, params: CouplingParams) -> float:
    """``h(L) int_Gamma (beta theta - mu)^2`` with the lumped surface quadrature the stepper uses."""
    hl = h_of(params.L)
    if not hl:
        return 0.0
    d = params.beta * state.theta - ops.T @ state.mu
    return hl * float(d @ (ops.M_surf_lumped * d))


def record(prev, next, vel: VelocitySample, ops: FeOperators, mesh, params: CouplingParams,
           potentials: Potentials, mobilities: Mobilities, dt: float) -> DiagnosticsRecord:
    """Diagnostics of the step ``prev -> next``.

    Mobilities and velocity transport use the fields of ``prev``, matching the
    stepper, so that the residual is the convex-splitting slack of the step.
    """
    A_wb, A_ws = weighted_stiffness(ops, mesh, mobilities.bulk(prev.phi), mobilities.surf(prev.psi))
    diss_b = float(next.mu @ (A_wb @ next.mu))
    diss_s = float(next.theta @ (A_ws @ next.theta))
    exch = exchange_term(next, ops, params)
    if vel.is_zero:
        work_b = work_s = 0.0
    else:
        cb, cs = convection_load(ops, mesh, prev.phi, prev.psi, vel)
        work_b = float(cb @ next.mu)
        work_s = float(cs @ next.theta)
    e0 = energy(prev, ops, mesh, params, potentials)
    e1 = energy(next, ops, mesh, params, potentials)
    mc, mb, ms = mass(next, ops, params)
    resid = e1 - e0 - dt * (work_b + work_s - diss_b - diss_s - exch)
    return DiagnosticsRecord(next.t, e1, mc, mb, ms, diss_b, diss_s, exch, work_b, work_s, resid)


def chain_rule_check(window, ops: FeOperators, mesh, params: CouplingParams) -> float:
    """Central-difference defect of ``d/dt ||(phi, psi)||^2_{K,alpha} = 2 <d/dt (phi, psi), A (phi, psi)>``.

    ``window`` holds three consecutive states with uniform spacing in time;
    the defect is evaluated at the middle one.
    """
    if len(window) < 3:
        raise DomainError("chain_rule_check needs three consecutive states")
    a, b, c = window[-3:]
    tau = 0.5 * (c.t - a.t)
    if not tau > 0:
        raise DomainError("states must be ordered in time")
    if abs((b.t - a.t) - (c.t - b.t)) > 1e-9 * tau:
        raise DomainError("chain_rule_check requires a uniform time step")
    G = coupled_form(ops, params.K, params.alpha)
    u = [np.concatenate([s.phi, s.psi]) for s in (a, b, c)]
    q = [float(x @ (G @ x)) for x in (u[0], u[2])]
    du = (u[2] - u[0]) / (2.0 * tau)
    return abs((q[1] - q[0]) / (2.0 * tau) - 2.0 * float(du @ (G @ u[1])))


def mass_drift(trajectory, params: CouplingParams):
    """Largest deviation of the combined mass and of the separate masses from their initial values.

    Accepts a trajectory (anything with ``records``) or a sequence of records.
    """
    recs = getattr(trajectory, "records", trajectory)
    arr = np.array([(r.mass_combined, r.mass_bulk, r.mass_surf) for r in recs])
    drift = np.abs(arr - arr[0]).max(axis=0)
    return float(drift[0]), (float(drift[1]), float(drift[2]))


def telescoped_gap(records, dt: float) -> float:
    """``E(final) - E(initial) - sum(dt * (work - dissipation - exchange) + residual)`` over the records."""
    total = 0.0
    for r in records[1:]:
        total += dt * (r.convective_work_bulk + r.convective_work_surf
                       - r.dissipation_bulk - r.dissipation_surf - r.exchange) + r.energy_ineq_residual
    return records[-1].energy - records[0].energy - total
