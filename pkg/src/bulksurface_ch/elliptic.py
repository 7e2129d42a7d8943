"""Bulk-surface elliptic solution operator and the induced dual norm.

``solve_S`` computes the discrete solution of the coupled Poisson problem

    <S(f), (zeta, xi)>_{L,beta} = -((f_bulk, zeta)_Omega + (f_surf, xi)_Gamma)

for all discrete test pairs, with the mean constraint enforced by one
Lagrange multiplier (``L`` zero or finite) or two (``L`` infinite).  For
``L = 0`` trial and test pairs are restricted to ``phi|_Gamma = beta psi``.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import FeOperators
from .errors import DomainError, SolverError
from .model import CouplingParams, TriState, h_of

_lock = threading.Lock()


@dataclass
class EllipticSolution:
    s_bulk: np.ndarray
    s_surf: np.ndarray
    multipliers: np.ndarray

    @property
    def pair(self):
        return self.s_bulk, self.s_surf


class InterpolationCheck(NamedTuple):
    lhs: float
    rhs: float

    @property
    def violated(self) -> bool:
        return self.lhs > self.rhs + 1e-9


def coupled_form(ops: FeOperators, coupling: TriState, coef: float) -> sp.csr_matrix:
    """Matrix of the bilinear form ``(grad, grad)_Omega + (grad, grad)_Gamma + h(coupling) * penalty(coef)``."""
    G = ops.block_stiffness()
    hc = h_of(coupling)
    if hc:
        G = G + hc * ops.coupling_block(coef)
    return G.tocsr()


def _split(ops, vec):
    return vec[:ops.n_bulk], vec[ops.n_bulk:]


def _pair_vector(pair) -> np.ndarray:
    a, b = pair
    return np.concatenate([np.asarray(a, float), np.asarray(b, float)])


def lb_inner(a, b, ops: FeOperators, params: CouplingParams) -> float:
    """The bilinear form ``<a, b>_{L,beta}`` on pairs of nodal vectors."""
    G = coupled_form(ops, params.L, params.beta)
    return float(_pair_vector(a) @ (G @ _pair_vector(b)))


def mean_residual(rhs, ops: FeOperators, params: CouplingParams) -> np.ndarray:
    """Mean constraint values: ``beta |Omega| <f> + |Gamma| <g>`` or both means for ``L = inf``."""
    fb, fs = (np.asarray(x, float) for x in rhs)
    mb = float(ops.M_bulk_lumped @ fb)
    ms = float(ops.M_surf_lumped @ fs)
    if params.L.is_infinite:
        return np.array([mb, ms])
    return np.array([params.beta * mb + ms])


def _constraint_scale(rhs, ops, params):
    fb, fs = (np.abs(np.asarray(x, float)) for x in rhs)
    return max(1.0, abs(params.beta) * float(ops.M_bulk_lumped @ fb) + float(ops.M_surf_lumped @ fs))


def _trial_space(ops, L: TriState, beta: float):
    if L.is_zero:
        return ops.restriction(beta)
    return sp.identity(ops.n, format="csr")


def _constraint_rows(ops, L: TriState, beta: float) -> np.ndarray:
    lb, ls = ops.M_bulk_lumped, ops.M_surf_lumped
    if L.is_infinite:
        return np.vstack([np.concatenate([lb, np.zeros_like(ls)]),
                          np.concatenate([np.zeros_like(lb), ls])])
    return np.concatenate([beta * lb, ls])[None, :]


def _factorization(ops: FeOperators, L: TriState, beta: float):
    key = ("S-factor", L, float(beta))
    fac = ops._cache.get(key)
    if fac is not None:
        return fac
    with _lock:
        fac = ops._cache.get(key)
        if fac is not None:
            return fac
        P = _trial_space(ops, L, beta)
        G = (P.T @ coupled_form(ops, L, beta) @ P).tocsc()
        C = sp.csr_matrix(_constraint_rows(ops, L, beta) @ P)
        k = C.shape[0]
        K = sp.bmat([[G, C.T], [C, None]], format="csc")
        try:
            lu = spla.splu(K)
        except RuntimeError as exc:
            raise SolverError(f"singular bulk-surface saddle system: {exc}") from exc
        fac = (P, lu, k)
        ops._cache[key] = fac
    return fac


def solve_S(rhs, ops: FeOperators, mesh, params: CouplingParams) -> EllipticSolution:
    """Discrete solution operator ``S_{L,beta}`` applied to ``rhs = (f_bulk, f_surf)``."""
    res = mean_residual(rhs, ops, params)
    if np.any(np.abs(res) > 1e-10 * _constraint_scale(rhs, ops, params)):
        raise DomainError(f"right-hand side violates the mean constraint (residual {res})")
    P, lu, k = _factorization(ops, params.L, params.beta)
    f = _pair_vector(rhs)
    b = np.concatenate([-(P.T @ (ops.block_mass() @ f)), np.zeros(k)])
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite values in the elliptic solve")
    s = P @ x[:-k]
    sb, ss = _split(ops, s)
    return EllipticSolution(sb, ss, x[-k:])


def dual_norm(rhs, ops: FeOperators, mesh, params: CouplingParams) -> float:
    """``||rhs||_{L,beta,*} = sqrt(-(S(rhs), rhs)_{L2})``."""
    sol = solve_S(rhs, ops, mesh, params)
    fb, fs = (np.asarray(x, float) for x in rhs)
    val = -(float(sol.s_bulk @ (ops.M_bulk @ fb)) + float(sol.s_surf @ (ops.M_surf @ fs)))
    if val < -1e-12:
        raise SolverError(f"negative squared dual norm {val:.3e}")
    return float(np.sqrt(max(val, 0.0)))


def dual_inner(f, g, ops: FeOperators, mesh, params: CouplingParams) -> float:
    """``(f, g)_{L,beta,*} = <S f, S g>_{L,beta}``."""
    sf = solve_S(f, ops, mesh, params)
    sg = solve_S(g, ops, mesh, params)
    return lb_inner(sf.pair, sg.pair, ops, params)


def _null_space_basis(c):
    return sla.null_space(np.atleast_2d(c))


def poincare_constant(ops: FeOperators, mesh, params: CouplingParams) -> float:
    """Smallest constant with ``||u||_L2 <= C ||u||_{K,alpha}`` on the constrained subspace.

    Dense generalized eigenvalue problem; intended for meshes with a few
    thousand degrees of freedom at most.
    """
    return 1.0 / np.sqrt(poincare_eigenvalue(ops, mesh, params))


def poincare_eigenvalue(ops: FeOperators, mesh, params: CouplingParams) -> float:
    if params.K.is_infinite:
        raise DomainError("the bulk-surface Poincare inequality is only available for K in [0, inf)")
    P = _trial_space(ops, params.K, params.alpha)
    Q = (P.T @ coupled_form(ops, params.K, params.alpha) @ P).toarray()
    Mr = (P.T @ ops.block_mass() @ P).toarray()
    c = P.T @ np.concatenate([params.beta * ops.M_bulk_lumped, ops.M_surf_lumped])
    Z = _null_space_basis(c)
    lam = sla.eigh(Z.T @ Q @ Z, Z.T @ Mr @ Z, eigvals_only=True, subset_by_index=[0, 0])[0]
    if not lam > 0:
        raise SolverError(f"non-positive Poincare eigenvalue {lam:.3e}")
    return float(lam)


def h1_dual_norm(pair, ops: FeOperators, K: TriState, alpha: float) -> float:
    """Norm of ``pair`` in the dual of the discrete ``H^1_{K,alpha}`` (full ``H^1`` inner product)."""
    key = ("H1-riesz", K.is_zero, float(alpha) if K.is_zero else 0.0)
    fac = ops._cache.get(key)
    if fac is None:
        with _lock:
            P = _trial_space(ops, K, alpha)
            H = (P.T @ (ops.block_mass() + ops.block_stiffness()) @ P).tocsc()
            fac = (P, spla.splu(H))
            ops._cache[key] = fac
    P, lu = fac
    g = P.T @ (ops.block_mass() @ _pair_vector(pair))
    return float(np.sqrt(max(float(g @ lu.solve(g)), 0.0)))


def project_to_space(pair, ops: FeOperators, K: TriState, alpha: float):
    """Overwrite the bulk trace by ``alpha * psi`` when ``K = 0``; identity otherwise."""
    phi, psi = (np.array(x, float) for x in pair)
    if K.is_zero:
        phi[ops.T.indices] = alpha * psi
    return phi, psi


def check_interpolation_inequality(sample, ops: FeOperators, mesh, params: CouplingParams) -> InterpolationCheck:
    """Evaluate both sides of ``||u||^2 <= 2 ||u||_* ||grad u|| + ||u||_*^2``.

    ``||.||_*`` is the norm of the dual of the discrete ``H^1_{K,alpha}``.
    For ``K = 0`` the sample is first moved into that space.
    """
    phi, psi = project_to_space(sample, ops, params.K, params.alpha)
    u = np.concatenate([phi, psi])
    lhs = float(u @ (ops.block_mass() @ u))
    grad = float(np.sqrt(max(float(u @ (ops.block_stiffness() @ u)), 0.0)))
    dual = h1_dual_norm((phi, psi), ops, params.K, params.alpha)
    return InterpolationCheck(lhs, 2.0 * dual * grad + dual * dual)
