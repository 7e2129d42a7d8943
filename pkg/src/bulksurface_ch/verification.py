"""Dense reference computations and the invariant suites behind ``verify``.

Everything here is assembled element by element into dense arrays and solved
with Lagrange multipliers instead of dof elimination, so it shares no code
path with the sparse solvers it is used to check.  Only meant for meshes with
a few hundred vertices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import FeOperators, VelocitySample, builtin_velocity
from .elliptic import (check_interpolation_inequality, dual_inner, dual_norm, poincare_eigenvalue,
                       solve_S)
from .errors import BulkSurfaceError, SolverError
from .geometry import BulkSurfaceMesh
from .model import CouplingParams, Mobilities, Potentials, State, TriState, conserved_quantities, energy, h_of
from .stepper import StepConfig, project_initial, step


@dataclass
class DenseOperators:
    M_b: np.ndarray
    A_b: np.ndarray
    M_s: np.ndarray
    A_s: np.ndarray
    m_b: np.ndarray  # lumped weights
    m_s: np.ndarray
    T: np.ndarray

    @property
    def nb(self):
        return len(self.m_b)

    @property
    def ns(self):
        return len(self.m_s)


def _tri_geometry(p):
    d1, d2 = p[1] - p[0], p[2] - p[0]
    area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
    B = np.array([d1, d2]).T
    g_ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = g_ref @ np.linalg.inv(B)
    return area, grads


def dense_operators(mesh: BulkSurfaceMesh) -> DenseOperators:
    nb, ns = mesh.n_bulk, mesh.n_surf
    M_b = np.zeros((nb, nb))
    A_b = np.zeros((nb, nb))
    local_mass = (np.ones((3, 3)) + np.eye(3)) / 12.0
    for tri in mesh.triangles:
        area, g = _tri_geometry(mesh.vertices[tri])
        M_b[np.ix_(tri, tri)] += area * local_mass
        A_b[np.ix_(tri, tri)] += area * g @ g.T
    M_s = np.zeros((ns, ns))
    A_s = np.zeros((ns, ns))
    pts = mesh.surface_points
    for j in range(ns):
        e = [j, (j + 1) % ns]
        ell = np.linalg.norm(pts[e[1]] - pts[e[0]])
        M_s[np.ix_(e, e)] += ell / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
        A_s[np.ix_(e, e)] += np.array([[1.0, -1.0], [-1.0, 1.0]]) / ell
    T = np.zeros((ns, nb))
    T[np.arange(ns), mesh.trace_map] = 1.0
    return DenseOperators(M_b, A_b, M_s, A_s, M_b.sum(axis=1), M_s.sum(axis=1), T)


def _blk(a, b):
    n1, n2 = a.shape[0], b.shape[0]
    out = np.zeros((n1 + n2, n1 + n2))
    out[:n1, :n1] = a
    out[n1:, n1:] = b
    return out


def dense_penalty(D: DenseOperators, coef: float) -> np.ndarray:
    """Lumped-quadrature matrix of ``int_Gamma (coef psi - phi)(coef xi - zeta)``."""
    C = np.hstack([-D.T, coef * np.eye(D.ns)])
    return C.T @ np.diag(D.m_s) @ C


def dense_trace_constraint(D: DenseOperators, coef: float) -> np.ndarray:
    """Rows of ``coef psi - phi|_Gamma = 0``."""
    return np.hstack([-D.T, coef * np.eye(D.ns)])


def dense_weighted_stiffness(mesh, wb, ws):
    nb, ns = mesh.n_bulk, mesh.n_surf
    A_b = np.zeros((nb, nb))
    for tri in mesh.triangles:
        area, g = _tri_geometry(mesh.vertices[tri])
        A_b[np.ix_(tri, tri)] += np.mean(wb[tri]) * area * g @ g.T
    A_s = np.zeros((ns, ns))
    pts = mesh.surface_points
    for j in range(ns):
        e = [j, (j + 1) % ns]
        ell = np.linalg.norm(pts[e[1]] - pts[e[0]])
        A_s[np.ix_(e, e)] += 0.5 * (ws[e[0]] + ws[e[1]]) * np.array([[1.0, -1.0], [-1.0, 1.0]]) / ell
    return A_b, A_s


def dense_convection(mesh, phi, psi, vel: VelocitySample):
    """Element loop for ``int phi v . grad zeta`` (edge midpoints) and ``int psi w . grad_Gamma xi`` (Simpson)."""
    b_b = np.zeros(mesh.n_bulk)
    for tri in mesh.triangles:
        area, g = _tri_geometry(mesh.vertices[tri])
        for a, b in ((0, 1), (1, 2), (2, 0)):
            pv = 0.5 * (phi[tri[a]] + phi[tri[b]])
            vv = 0.5 * (vel.v_nodes[tri[a]] + vel.v_nodes[tri[b]])
            b_b[tri] += area / 3.0 * pv * (g @ vv)
    ns = mesh.n_surf
    b_s = np.zeros(ns)
    pts = mesh.surface_points
    for j in range(ns):
        e = [j, (j + 1) % ns]
        t = pts[e[1]] - pts[e[0]]
        ell = np.linalg.norm(t)
        t = t / ell
        wt = [vel.w_nodes[k] @ t for k in e]
        vals = [psi[e[0]] * wt[0], 0.25 * (psi[e[0]] + psi[e[1]]) * (wt[0] + wt[1]), psi[e[1]] * wt[1]]
        integral = ell * (vals[0] + 4 * vals[1] + vals[2]) / 6.0
        b_s[e[0]] -= integral / ell
        b_s[e[1]] += integral / ell
    return b_b, b_s


def dense_solve_S(rhs, mesh, params: CouplingParams, D: DenseOperators | None = None) -> np.ndarray:
    """Saddle-point solve of the coupled Poisson problem with every constraint as a multiplier."""
    D = D or dense_operators(mesh)
    nb, ns = D.nb, D.ns
    G = _blk(D.A_b, D.A_s)
    if h_of(params.L):
        G = G + h_of(params.L) * dense_penalty(D, params.beta)
    rows = []
    if params.L.is_infinite:
        rows += [np.concatenate([D.m_b, np.zeros(ns)]), np.concatenate([np.zeros(nb), D.m_s])]
    else:
        rows += [np.concatenate([params.beta * D.m_b, D.m_s])]
    C = np.array(rows)
    if params.L.is_zero:
        C = np.vstack([C, dense_trace_constraint(D, params.beta)])
    k = C.shape[0]
    K = np.block([[G, C.T], [C, np.zeros((k, k))]])
    f = np.concatenate(rhs)
    b = np.concatenate([-_blk(D.M_b, D.M_s) @ f, np.zeros(k)])
    x = np.linalg.lstsq(K, b, rcond=None)[0]
    return x[:nb + ns]


def dense_step(state: State, vel: VelocitySample, mesh, params: CouplingParams, potentials: Potentials,
               mobilities: Mobilities, dt: float, tol=1e-13, max_iter=200, fd_step=1e-7):
    """One implicit step solved monolithically by Newton with a finite-difference Jacobian.

    Unknowns are the full nodal vectors plus multipliers for ``K = 0`` and
    ``L = 0`` trace constraints.
    """
    D = dense_operators(mesh)
    nb, ns = D.nb, D.ns
    n = nb + ns
    M = _blk(D.M_b, D.M_s)
    ml = np.concatenate([D.m_b, D.m_s])
    A_K = _blk(params.eps * D.A_b, params.eps_surf * params.kappa * D.A_s)
    if h_of(params.K):
        A_K = A_K + h_of(params.K) * dense_penalty(D, params.alpha)
    wb, ws = dense_weighted_stiffness(mesh, mobilities.bulk(state.phi), mobilities.surf(state.psi))
    B = _blk(wb, ws)
    if h_of(params.L):
        B = B + h_of(params.L) * dense_penalty(D, params.beta)
    c0 = np.concatenate(dense_convection(mesh, state.phi, state.psi, vel))
    CK = dense_trace_constraint(D, params.alpha) if params.K.is_zero else np.zeros((0, n))
    CL = dense_trace_constraint(D, params.beta) if params.L.is_zero else np.zeros((0, n))
    kK, kL = CK.shape[0], CL.shape[0]
    X0 = np.concatenate([state.phi, state.psi])
    F, G = potentials.F, potentials.G

    def nonlinear(X):
        return np.concatenate([(F.convex_part_prime(X[:nb]) + F.concave_part_prime(X0[:nb])) / params.eps,
                               (G.convex_part_prime(X[nb:]) + G.concave_part_prime(X0[nb:])) / params.eps_surf])

    def residual(z):
        X, Y = z[:n], z[n:2 * n]
        lK, lL = z[2 * n:2 * n + kK], z[2 * n + kK:]
        r1 = M @ Y - A_K @ X - ml * nonlinear(X) + CK.T @ lK
        r2 = M @ (X - X0) - dt * c0 + dt * B @ Y + CL.T @ lL
        return np.concatenate([r1, r2, CK @ X, CL @ Y])

    z = np.concatenate([X0, np.concatenate([state.mu, state.theta]), np.zeros(kK + kL)])
    scale = ml.max()
    for _ in range(max_iter):
        R = residual(z)
        if np.abs(R).max() <= tol * scale:
            break
        J = np.empty((len(z), len(z)))
        for i in range(len(z)):
            e = np.zeros(len(z))
            e[i] = fd_step
            J[:, i] = (residual(z + e) - residual(z - e)) / (2 * fd_step)
        z = z - np.linalg.solve(J, R)
    else:
        raise SolverError("dense reference Newton did not converge")
    X, Y = z[:n], z[n:2 * n]
    return State(X[:nb], X[nb:], Y[:nb], Y[nb:], state.t + dt)


def random_constrained_pair(rng, ops: FeOperators, params: CouplingParams):
    """Random pair whose conserved means vanish (and in ``D_beta`` when ``L = 0``)."""
    f = rng.standard_normal(ops.n_bulk)
    g = rng.standard_normal(ops.n_surf)
    if params.L.is_zero:
        f[ops.T.indices] = params.beta * g
    lb, ls = ops.M_bulk_lumped, ops.M_surf_lumped
    if params.L.is_infinite:
        return f - (lb @ f) / lb.sum(), g - (ls @ g) / ls.sum()
    # remove the combined mean along (beta, 1), which keeps the D_beta structure
    c = (params.beta * (lb @ f) + ls @ g) / (params.beta**2 * lb.sum() + ls.sum())
    return f - params.beta * c, g - c


# invariant suites -----------------------------------------------------------------

CASES = [(a, b) for a in ("0", "1", "inf") for b in ("0", "1", "inf")]


def _params(K, L, **kw):
    return CouplingParams(K=TriState.parse(K), L=TriState.parse(L), **kw)


def elliptic_suite(mesh, ops, base: CouplingParams, samples=20, seed=0):
    """Yield ``(name, passed, detail)`` rows for the elliptic operator checks."""
    rng = np.random.default_rng(seed)
    D = dense_operators(mesh) if mesh.n_bulk <= 400 else None
    for Lc in ("0", "1", "inf"):
        p = base.with_(L=TriState.parse(Lc))
        f = random_constrained_pair(rng, ops, p)
        s = solve_S(f, ops, mesh, p)
        if D is not None:
            ref = dense_solve_S(f, mesh, p, D)
            got = np.concatenate(s.pair)
            err = np.abs(got - ref).max() / max(np.abs(ref).max(), 1e-300)
            yield f"solve_S vs dense saddle (L={Lc})", err <= 1e-10, f"rel err {err:.2e}"
        worst = 0.0
        for _ in range(samples):
            a = random_constrained_pair(rng, ops, p)
            b = random_constrained_pair(rng, ops, p)
            sa = np.concatenate(solve_S(a, ops, mesh, p).pair)
            sb = np.concatenate(solve_S(b, ops, mesh, p).pair)
            lhs = sa @ (ops.block_mass() @ np.concatenate(b))
            rhs = sb @ (ops.block_mass() @ np.concatenate(a))
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), 1e-300))
        yield f"S self-adjoint (L={Lc})", worst <= 1e-10, f"max rel asym {worst:.2e}"
        n1 = dual_norm(f, ops, mesh, p) ** 2
        n2 = dual_inner(f, f, ops, mesh, p)
        gap = abs(n1 - n2) / max(n1, 1e-300)
        yield f"dual norm two formulas (L={Lc})", gap <= 1e-9, f"rel gap {gap:.2e}"
    for Kc in ("0", "1"):
        p = base.with_(K=TriState.parse(Kc))
        lam = poincare_eigenvalue(ops, mesh, p)
        yield f"Poincare eigenvalue positive (K={Kc})", lam > 0, f"lambda_min {lam:.4e}"
        viol = sum(check_interpolation_inequality((rng.standard_normal(ops.n_bulk), rng.standard_normal(ops.n_surf)),
                                 ops, mesh, p).violated
                   for _ in range(samples))
        yield f"interpolation inequality (K={Kc})", viol == 0, f"{viol} violations / {samples}"


def stepper_suite(mesh, ops, base: CouplingParams, steps=5, dt=1e-3):
    """Yield ``(name, passed, detail)`` rows for the time-stepping invariants over all (K, L) cases."""
    pots, mobs = Potentials(), Mobilities()
    vel = builtin_velocity("rotation" if mesh.shape == "unit_disk" else "zero", mesh)
    zero = builtin_velocity("zero", mesh)
    r = np.linalg.norm(mesh.vertices - mesh.vertices.mean(axis=0), axis=1)
    phi = np.tanh((0.35 - r) / 0.1)
    cfg = StepConfig(dt=dt)
    for K, L in CASES:
        p = base.with_(K=TriState.parse(K), L=TriState.parse(L))
        tag = f"(K={K}, L={L})"
        try:
            phi0, psi0 = project_initial((phi, phi[mesh.trace_map]), p, ops)
            s = State.from_fields(phi0, psi0)
            q0 = conserved_quantities(s, ops, p)
            e_prev = energy(s, ops, mesh, p, pots)
            drift = mono = 0.0
            gap = 0.0
            s_mass = s
            for _ in range(steps):
                s_mass = step(s_mass, vel, ops, mesh, p, pots, mobs, cfg)
                drift = max(drift, float(np.abs(conserved_quantities(s_mass, ops, p) - q0).max()))
                if K == "0":
                    gap = max(gap, float(np.abs(s_mass.phi[ops.T.indices] - p.alpha * s_mass.psi).max()))
                if L == "0":
                    gap = max(gap, float(np.abs(s_mass.mu[ops.T.indices] - p.beta * s_mass.theta).max()))
                s = step(s, zero, ops, mesh, p, pots, mobs, cfg)
                e = energy(s, ops, mesh, p, pots)
                mono = max(mono, e - e_prev)
                e_prev = e
            yield f"mass conserved {tag}", drift <= 1e-10, f"drift {drift:.2e}"
            yield f"energy nonincreasing {tag}", mono <= 1e-11, f"max increase {mono:.2e}"
            if K == "0" or L == "0":
                yield f"trace constraints exact {tag}", gap <= 1e-10, f"max gap {gap:.2e}"
        except BulkSurfaceError as exc:
            yield f"stepper runs {tag}", False, str(exc)
    p = base.with_(alpha=1.0)
    one = State.from_fields(np.ones(mesh.n_bulk), np.ones(mesh.n_surf))
    nxt = step(one, zero, ops, mesh, p, pots, mobs, cfg)
    dev = max(np.abs(nxt.phi - 1).max(), np.abs(nxt.psi - 1).max(), np.abs(nxt.mu).max(), np.abs(nxt.theta).max())
    yield "pure phase is a fixed point", dev <= 1e-10, f"max deviation {dev:.2e}"


SUITES = {"elliptic": elliptic_suite, "stepper": stepper_suite}


def run_suites(which, mesh, ops, params: CouplingParams):
    """Run the named suites (``elliptic``, ``stepper`` or ``all``).

    Returns ``(suite, check, passed, detail)`` rows.
    """
    names = list(SUITES) if which == "all" else [which]
    rows = []
    for name in names:
        for check, ok, detail in SUITES[name](mesh, ops, params):
            rows.append((name, check, bool(ok), detail))
    return rows
