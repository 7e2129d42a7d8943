"""Time stepping for the bulk-surface convective Cahn-Hilliard system.

One step of size ``tau`` solves, for all discrete test pairs,

    (phi1 - phi0, zeta) + (psi1 - psi0, xi) - tau * conv(phi0, psi0; zeta, xi)
        = -tau * [ (m(phi0) grad mu1, grad zeta) + (m(psi0) grad theta1, grad xi)
                   + h(L) (beta theta1 - mu1, beta xi - zeta)_Gamma ]
    (mu1, eta) + (theta1, vartheta)
        = eps (grad phi1, grad eta) + (Fc'(phi1) + Fe'(phi0), eta)_h / eps
          + eps_s kappa (grad psi1, grad vartheta) + (Gc'(psi1) + Ge'(psi0), vartheta)_h / eps_s
          + h(K) (alpha psi1 - phi1, alpha vartheta - eta)_Gamma

with ``(.,.)_h`` the lumped inner product.  ``K = 0`` and ``L = 0`` are imposed
by eliminating bulk trace unknowns (``phi = alpha psi`` resp. ``mu = beta theta``
on the boundary, for trial and test functions alike).  The coupled system is
solved by Newton's method with exact nodal Jacobians of the convex parts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import diagnostics
from .assembly import FeOperators, VelocitySample, convection_load, weighted_stiffness
from .errors import DomainError, SolverError, StepError
from .model import CouplingParams, Mobilities, Potentials, State, h_of

SCHEMES = ("convex_split_newton", "stabilized_linear")
# residuals within this multiple of machine epsilon times the size of the
# summed terms are indistinguishable from zero (stiff penalties raise that floor)
ROUNDOFF_FACTOR = 64.0


@dataclass(frozen=True)
class StepConfig:
    dt: float = 1e-3
    newton_tol: float = 1e-12
    newton_max_iters: int = 30
    scheme: str = "convex_split_newton"
    S_F: float = 2.0
    S_G: float = 2.0

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if not self.newton_tol >= 1e-14:
            raise DomainError("newton_tol must be >= 1e-14")
        if self.newton_max_iters < 1:
            raise DomainError("newton_max_iters must be positive")
        if self.scheme not in SCHEMES:
            raise DomainError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")


class _Spaces:
    """Trial/test spaces and the step-independent matrices for one (ops, params) pair."""

    def __init__(self, ops: FeOperators, params: CouplingParams):
        n = ops.n
        eye = sp.identity(n, format="csr")
        self.PK = ops.restriction(params.alpha) if params.K.is_zero else eye
        self.PL = ops.restriction(params.beta) if params.L.is_zero else eye
        self.sel_K = self._selector(ops, params.K.is_zero)
        self.sel_L = self._selector(ops, params.L.is_zero)
        M = ops.block_mass()
        A_K = ops.block_stiffness(params.eps, params.eps_surf * params.kappa)
        hk = h_of(params.K)
        if hk:
            A_K = A_K + hk * ops.coupling_block(params.alpha)
        self.M = M
        self.A_K = A_K.tocsr()
        self.lumped = ops.block_lumped()
        self.MKL = (self.PK.T @ M @ self.PL).tocsr()
        self.AKK = (self.PK.T @ self.A_K @ self.PK).tocsr()
        self.hL = h_of(params.L)
        self.E_beta = ops.coupling_block(params.beta) if self.hL else None
        self.res_scale = float(self.lumped.max())
        self.abs_PK = abs(self.PK)
        self.abs_M = abs(M)
        self.abs_A_K = abs(self.A_K)
        self.abs_MKL = abs(self.MKL)
        # order unknowns node by node so that each (phi_i, mu_i) pair is adjacent
        self.perm = np.argsort(np.concatenate([self.sel_K, self.sel_L]), kind="stable")

    def solve(self, J, rhs):
        p = self.perm
        Jp = J[p][:, p].tocsc()
        lu = spla.splu(Jp, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1,
                       options=dict(SymmetricMode=True))
        out = np.empty_like(rhs)
        out[p] = lu.solve(rhs[p])
        return out

    @staticmethod
    def _selector(ops, constrained):
        if not constrained:
            return np.arange(ops.n)
        trace = ops.T.indices
        interior = np.setdiff1d(np.arange(ops.n_bulk), trace)
        return np.concatenate([interior, ops.n_bulk + np.arange(ops.n_surf)])


def _spaces(ops, params) -> _Spaces:
    key = ("spaces", params)
    sp_ = ops._cache.get(key)
    if sp_ is None:
        sp_ = _Spaces(ops, params)
        ops._cache[key] = sp_
    return sp_


def _chemical_terms(X, X0, nb, params, potentials, cfg):
    """Nodal values of the split potential derivatives and their derivative in the implicit argument."""
    phi, psi = X[:nb], X[nb:]
    phi0, psi0 = X0[:nb], X0[nb:]
    F, G = potentials.F, potentials.G
    if cfg.scheme == "stabilized_linear":
        f_b = F.F_prime(phi0) + cfg.S_F * (phi - phi0)
        f_s = G.F_prime(psi0) + cfg.S_G * (psi - psi0)
        d_b = np.full(nb, cfg.S_F)
        d_s = np.full(len(psi), cfg.S_G)
    else:
        f_b = F.convex_part_prime(phi) + F.concave_part_prime(phi0)
        f_s = G.convex_part_prime(psi) + G.concave_part_prime(psi0)
        d_b = F.convex_part_second(phi)
        d_s = G.convex_part_second(psi)
    f = np.concatenate([f_b / params.eps, f_s / params.eps_surf])
    d = np.concatenate([np.broadcast_to(d_b, phi.shape) / params.eps,
                        np.broadcast_to(d_s, psi.shape) / params.eps_surf])
    return f, d


def _roundoff_floor(S, X, Y, x, y, f, BLL, rhs_mass, tau):
    """Scaled residual size attributable to rounding in forming the residual itself."""
    chem = S.abs_PK.T @ (S.abs_M @ np.abs(Y) + S.abs_A_K @ np.abs(X) + S.lumped * np.abs(f))
    mass = S.abs_MKL.T @ np.abs(x) + tau * (abs(BLL) @ np.abs(y)) + np.abs(rhs_mass)
    size = max(float(chem.max()), float(mass.max()))
    return ROUNDOFF_FACTOR * np.finfo(float).eps * size / S.res_scale


def step(state: State, vel: VelocitySample, ops: FeOperators, mesh, params: CouplingParams,
         potentials: Potentials, mobilities: Mobilities, cfg: StepConfig) -> State:
    """Advance ``state`` by one time step of size ``cfg.dt``."""
    S = _spaces(ops, params)
    nb = ops.n_bulk
    X0 = np.concatenate([state.phi, state.psi])
    if not np.all(np.isfinite(X0)):
        raise DomainError("state contains non-finite values")
    if params.K.is_zero:
        gap = np.abs(state.phi[ops.T.indices] - params.alpha * state.psi).max()
        if gap > 1e-8:
            raise DomainError(f"K = 0 requires phi|_Gamma = alpha psi on input (max gap {gap:.3e})")
    tau = cfg.dt

    A_wb, A_ws = weighted_stiffness(ops, mesh, mobilities.bulk(state.phi), mobilities.surf(state.psi))
    B = sp.block_diag([A_wb, A_ws], format="csr")
    if S.hL:
        B = B + S.hL * S.E_beta
    cb, cs = convection_load(ops, mesh, state.phi, state.psi, vel)
    c0 = np.concatenate([cb, cs])

    PK, PL = S.PK, S.PL
    BLL = (PL.T @ B @ PL).tocsr()
    rhs_mass = PL.T @ (S.M @ X0 + tau * c0)

    x = X0[S.sel_K].copy()
    Y0 = np.concatenate([state.mu, state.theta])
    y = Y0[S.sel_L].copy()
    nK = len(x)

    J_static = sp.bmat([[-S.AKK, S.MKL], [S.MKL.T, tau * BLL]], format="csr")
    history = []
    converged = False
    for it in range(cfg.newton_max_iters + 1):
        X = PK @ x
        Y = PL @ y
        f, d = _chemical_terms(X, X0, nb, params, potentials, cfg)
        r_chem = PK.T @ (S.M @ Y - S.A_K @ X - S.lumped * f)
        r_mass = S.MKL.T @ x + tau * (BLL @ y) - rhs_mass
        R = np.concatenate([r_chem, r_mass])
        res = float(np.abs(R).max()) / S.res_scale
        history.append(res)
        if not math.isfinite(res):
            break
        if res <= cfg.newton_tol or res <= _roundoff_floor(S, X, Y, x, y, f, BLL, rhs_mass, tau):
            converged = True
            break
        if it == cfg.newton_max_iters:
            break
        Dk = PK.T @ sp.diags(S.lumped * d) @ PK
        J = J_static - sp.block_diag([Dk, sp.csr_matrix((len(y), len(y)))], format="csr")
        try:
            delta = S.solve(J, -R)
        except RuntimeError as exc:
            raise SolverError(f"linear solve failed in Newton iteration {it}: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise SolverError(f"non-finite Newton update in iteration {it}")
        x += delta[:nK]
        y += delta[nK:]
    if not converged:
        raise StepError(f"Newton did not converge in {cfg.newton_max_iters} iterations "
                        f"(scaled residuals {history})", history)

    X = PK @ x
    Y = PL @ y
    return State(X[:nb].copy(), X[nb:].copy(), Y[:nb].copy(), Y[nb:].copy(), state.t + tau)


def project_initial(raw, params: CouplingParams, ops: FeOperators, target_mass: Optional[float] = None):
    """Move raw initial data into the admissible space and optionally fix the conserved mass.

    For ``K = 0`` the bulk trace is overwritten by ``alpha * psi``.  When
    ``target_mass`` is given, the pair is shifted by a constant so that
    ``beta int phi + int psi`` equals it: along ``(beta, 1)`` with
    ``c = (beta int phi + int psi - target) / (beta^2 |Omega| + |Gamma|)``, or
    along ``(alpha, 1)`` when ``K = 0`` and ``alpha != beta`` so that the trace
    constraint survives the shift.
    """
    phi, psi = (np.array(x, float) for x in raw)
    if params.K.is_zero:
        phi[ops.T.indices] = params.alpha * psi
    if target_mass is not None:
        area, per = ops.area, ops.perimeter
        current = params.beta * float(ops.M_bulk_lumped @ phi) + float(ops.M_surf_lumped @ psi)
        if params.K.is_zero and params.alpha != params.beta:
            dirb = params.alpha
        else:
            dirb = params.beta
        denom = params.beta * dirb * area + per
        if abs(denom) < 1e-14:
            raise DomainError("cannot adjust the mass along a direction with zero mass")
        c = (current - target_mass) / denom
        phi -= dirb * c
        psi -= c
    return phi, psi


@dataclass
class Trajectory:
    """Result of :func:`simulate`: stored snapshots plus one diagnostics record per step."""

    states: list = field(default_factory=list)
    records: list = field(default_factory=list)
    steps: int = 0
    dt: float = 0.0
    stride: int = 1

    def __len__(self):
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def final(self) -> State:
        return self.states[-1]

    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.records])


def simulate(init, vel: VelocitySample, T_final: float, ops: FeOperators, mesh, params: CouplingParams,
             potentials: Potentials, mobilities: Mobilities, cfg: StepConfig,
             sinks: Iterable[Callable] = (), snapshot_stride: int = 1,
             step_hook: Optional[Callable] = None) -> Trajectory:
    """Run ``ceil(T_final / dt)`` steps from ``init = (phi0, psi0)``.

    Each step's :class:`~bulksurface_ch.diagnostics.DiagnosticsRecord` is passed
    to every sink; the first record describes the initial state.  The
    chain-rule residual of record ``n`` is centred at step ``n``, so it is NaN
    for the first and last records.  Snapshots are
    kept every ``snapshot_stride`` steps and at the final step.
    """
    if T_final < 0:
        raise DomainError("T_final must be nonnegative")
    n_steps = int(math.ceil(T_final / cfg.dt - 1e-9)) if T_final > 0 else 0
    sinks = list(sinks)
    state = State.from_fields(*init)
    state.check(ops)
    traj = Trajectory(steps=n_steps, dt=cfg.dt, stride=snapshot_stride)
    traj.states.append(state.copy())
    rec0 = diagnostics.initial_record(state, ops, mesh, params, potentials)
    traj.records.append(rec0)
    prev = None
    for n in range(n_steps):
        v_n = vel.at(n)
        try:
            nxt = step(state, v_n, ops, mesh, params, potentials, mobilities, cfg)
        except StepError as exc:
            raise StepError(f"step {n} failed: {exc}", exc.residual_history, n) from exc
        rec = diagnostics.record(state, nxt, v_n, ops, mesh, params, potentials, mobilities, cfg.dt)
        if prev is not None:
            traj.records[-1].chain_rule_residual = diagnostics.chain_rule_check([prev, state, nxt],
                                                                                ops, mesh, params)
        # a record is streamed once its centred chain-rule value is known
        for s in sinks:
            s(traj.records[-1])
        traj.records.append(rec)
        if step_hook is not None:
            step_hook(n + 1, nxt)
        prev, state = state, nxt
        if (n + 1) % snapshot_stride == 0 or n + 1 == n_steps:
            traj.states.append(state.copy())
    for s in sinks:
        s(traj.records[-1])
    return traj
