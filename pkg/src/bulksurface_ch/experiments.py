"""Parameter sweeps towards the limiting coupling regimes, rate fitting, and continuous dependence studies."""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .assembly import FeOperators, VelocitySample, assemble_operators, builtin_velocity
from .elliptic import dual_norm
from .errors import ConfigurationError, DomainError, ModelError, SolverError
from .geometry import BulkSurfaceMesh, generate_mesh
from .model import CouplingParams, Mobilities, Potentials, TriState
from .stepper import StepConfig, project_initial, simulate

DIRECTIONS = ("K_to_0", "K_to_inf", "L_to_0", "L_to_inf")
EXPECTED_SLOPES = {"K_to_0": 0.5, "K_to_inf": -0.5, "L_to_0": 0.5, "L_to_inf": -0.5}
THREADS_ENV = "BULKSURFACE_THREADS"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class Setup:
    """Everything needed to run one simulation."""

    mesh: BulkSurfaceMesh
    params: CouplingParams
    init: tuple
    velocity: VelocitySample
    T_final: float
    step: StepConfig = field(default_factory=StepConfig)
    potentials: Potentials = field(default_factory=Potentials)
    mobilities: Mobilities = field(default_factory=Mobilities)
    ops: Optional[FeOperators] = None

    def __post_init__(self):
        if self.ops is None:
            self.ops = assemble_operators(self.mesh)

    def with_params(self, params: CouplingParams) -> "Setup":
        return replace(self, params=params)

    def run(self, **kw):
        init = project_initial(self.init, self.params, self.ops)
        return simulate(init, self.velocity, self.T_final, self.ops, self.mesh, self.params,
                        self.potentials, self.mobilities, self.step, **kw)


def reference_setup(shape="unit_disk", resolution=32, params=None, velocity="rotation", T_final=0.5,
                    dt=1e-3, initial="tanh_disk", **init_kw) -> Setup:
    """The tanh-interface reference configuration; rotation falls back to zero velocity off the disk."""
    mesh = generate_mesh(shape, resolution)
    params = params or CouplingParams()
    if velocity == "rotation" and shape != "unit_disk":
        velocity = "zero"
    vel = builtin_velocity(velocity, mesh)
    init = reference_initial_data(initial, mesh, params, **init_kw)
    return Setup(mesh, params, init, vel, T_final, StepConfig(dt=dt))


def reference_initial_data(name: str, mesh: BulkSurfaceMesh, params: CouplingParams, *, r0=0.5, width=0.1,
                           seed=0, modes=3, amplitude=0.5, center=(0.0, 0.0)):
    """Initial pairs ``tanh_disk`` and ``random_smooth``.

    ``tanh_disk`` is ``tanh((r0 - |x - center|) / width)``; ``random_smooth`` is
    a trigonometric sum over integer wave vectors with ``|k_i| <= modes``,
    scaled to maximum modulus ``amplitude``.  The surface field is the trace,
    divided by ``alpha`` when ``K = 0``.
    """
    x = mesh.vertices
    if name == "tanh_disk":
        if not width > 0:
            raise ConfigurationError("tanh_disk width must be positive")
        phi = np.tanh((r0 - np.linalg.norm(x - np.asarray(center, float), axis=1)) / width)
    elif name == "random_smooth":
        rng = np.random.default_rng(seed)
        ks = [(i, j) for i in range(-modes, modes + 1) for j in range(0, modes + 1) if (i, j) != (0, 0)]
        phi = np.zeros(mesh.n_bulk)
        for kx, ky in ks:
            a = rng.standard_normal() / (1.0 + kx * kx + ky * ky)
            c = rng.uniform(0.0, 2.0 * np.pi)
            phi += a * np.cos(np.pi * (kx * x[:, 0] + ky * x[:, 1]) + c)
        phi *= amplitude / max(np.abs(phi).max(), 1e-300)
    else:
        raise ConfigurationError(f"unknown initial data {name!r}; expected tanh_disk or random_smooth")
    trace = phi[mesh.trace_map].copy()
    if params.K.is_zero:
        if params.alpha == 0:
            if np.any(trace != 0):
                raise ConfigurationError("K = 0 with alpha = 0 forces a vanishing bulk trace")
            psi = np.zeros(mesh.n_surf)
        else:
            psi = trace / params.alpha
    else:
        psi = trace
    return phi, psi


def fit_rate(x, y):
    """Least-squares slope of ``log y`` against ``log x`` and the RMS log misfit."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("fit_rate needs two equally long 1D sequences")
    if len(x) < 3:
        raise DomainError(f"fit_rate needs at least 3 points, got {len(x)}")
    if np.any(x <= 0):
        raise DomainError("fit_rate needs positive abscissae")
    if np.any(y <= 0):
        warnings.warn("nonpositive values clamped to 1e-300 before taking logarithms", stacklevel=2)
        y = np.maximum(y, 1e-300)
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


@dataclass
class SweepResult:
    direction: str
    parameter_values: np.ndarray
    quantity_values: np.ndarray
    fitted_slope: float
    fit_residual: float
    per_run_handles: list = field(default_factory=list)
    exploratory: bool = False

    @property
    def expected_slope(self) -> float:
        return EXPECTED_SLOPES[self.direction]

    def slopes_so_far(self) -> list:
        """Slope of the fit over the first ``k`` values, NaN until three points exist."""
        out = []
        for k in range(1, len(self.parameter_values) + 1):
            if k < 3:
                out.append(math.nan)
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    out.append(fit_rate(self.parameter_values[:k], self.quantity_values[:k])[0])
        return out


def _sweep_params(direction, base: CouplingParams, value) -> CouplingParams:
    if direction.startswith("K"):
        return base.with_(K=TriState.finite(value))
    return base.with_(L=TriState.finite(value))


class _Recorder:
    """Accumulates the per-step mismatch norms a sweep needs."""

    def __init__(self, ops, params):
        self.ops = ops
        self.params = params
        self.max_trace_gap = 0.0
        self.exchange_sq = 0.0
        self.prev_t = 0.0

    def __call__(self, n, state):
        ops, p = self.ops, self.params
        d = p.alpha * state.psi - ops.T @ state.phi
        self.max_trace_gap = max(self.max_trace_gap, float(np.sqrt(max(d @ (ops.M_surf @ d), 0.0))))
        e = p.beta * state.theta - ops.T @ state.mu
        dt = state.t - self.prev_t
        self.prev_t = state.t
        self.exchange_sq += dt * float(e @ (ops.M_surf @ e))


def _run_member(args):
    direction, setup, value = args
    params = _sweep_params(direction, setup.params, value)
    member = setup.with_params(params)
    rec = _Recorder(member.ops, params)
    try:
        member.run(step_hook=rec, snapshot_stride=10**9)
    except Exception as exc:  # report which member failed
        raise SolverError(f"{direction} sweep member with value {value:g} failed: {exc}") from exc
    if direction.startswith("K"):
        q = rec.max_trace_gap
    else:
        q = math.sqrt(rec.exchange_sq)
    if direction.endswith("inf"):
        q /= value
    return q, {"value": value, "max_trace_gap": rec.max_trace_gap,
               "exchange_l2": math.sqrt(rec.exchange_sq)}


def limit_sweep(direction: str, values, base: Setup, workers: Optional[int] = None) -> SweepResult:
    """Run one simulation per value of ``K`` (or ``L``) and fit the power law of the mismatch norm.

    Quantities: ``K_to_0`` the maximum over steps of ``||alpha psi - phi||_{L2(Gamma)}``,
    ``K_to_inf`` the same divided by ``K``, ``L_to_0`` the space-time norm
    ``||beta theta - mu||_{L2(Gamma x (0,T))}`` (rectangle rule in time),
    ``L_to_inf`` that divided by ``L``.  Results are ordered by increasing
    parameter value whatever the input order.
    """
    if direction not in DIRECTIONS:
        raise ConfigurationError(f"unknown sweep direction {direction!r}; expected one of {DIRECTIONS}")
    vals = np.asarray(sorted(float(v) for v in values))
    if len(vals) < 3:
        raise DomainError("a sweep needs at least 3 values for rate fitting")
    if np.any(vals <= 0) or np.any(~np.isfinite(vals)):
        raise DomainError("sweep values must be positive and finite")
    if np.any(np.diff(vals) <= 0):
        raise DomainError("sweep values must be distinct")
    if vals[-1] / vals[0] < 100.0 * (1 - 1e-12):
        raise DomainError("sweep values must span at least two decades")
    workers = worker_count() if workers is None else workers
    jobs = [(direction, base, v) for v in vals]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_run_member, jobs))
    else:
        out = [_run_member(j) for j in jobs]
    q = np.array([o[0] for o in out])
    slope, resid = fit_rate(vals, q)
    return SweepResult(direction, vals, q, slope, resid, [o[1] for o in out],
                       exploratory=not base.mobilities.constant)


@dataclass
class DependenceTable:
    mode: str
    deltas: np.ndarray
    max_difference: np.ndarray
    slope: float
    fit_residual: float
    identical: list


def _mean_free_perturbation(setup: Setup, seed=7):
    """A smooth perturbation of the initial pair with zero conserved means that respects ``D_alpha`` for ``K = 0``."""
    p, ops = setup.params, setup.ops
    pb, ps = reference_initial_data("random_smooth", setup.mesh, p.with_(K=TriState.finite(1.0)), seed=seed)
    pb, ps = project_initial((pb, ps), p, ops)
    lb, ls = ops.M_bulk_lumped, ops.M_surf_lumped
    # directions (alpha, 1) and (interior bubble, 0) both stay in D_alpha
    d1 = (np.full(ops.n_bulk, p.alpha), np.ones(ops.n_surf))
    bubble = np.ones(ops.n_bulk)
    bubble[ops.T.indices] = 0.0
    d2 = (bubble, np.zeros(ops.n_surf))
    if p.L.is_infinite:
        A = np.array([[lb @ d1[0], lb @ d2[0]], [ls @ d1[1], ls @ d2[1]]])
        b = np.array([lb @ pb, ls @ ps])
        c = np.linalg.solve(A, b)
        return pb - c[0] * d1[0] - c[1] * d2[0], ps - c[0] * d1[1] - c[1] * d2[1]
    denom = p.beta * (lb @ d1[0]) + ls @ d1[1]
    if abs(denom) < 1e-14:
        raise DomainError("alpha beta |Omega| + |Gamma| vanishes; cannot remove the mean")
    c = (p.beta * (lb @ pb) + ls @ ps) / denom
    return pb - c * d1[0], ps - c * d1[1]


def _velocity_perturbation(setup: Setup) -> VelocitySample:
    if setup.mesh.shape == "unit_disk":
        return builtin_velocity("rotation", setup.mesh)
    return builtin_velocity("surface_slide", setup.mesh)


def continuous_dependence(base: Setup, deltas, mode: str = "initial_data") -> DependenceTable:
    """Max over time of ``||(phi1 - phi2, psi1 - psi2)||_{L,beta,*}`` for perturbations of size ``delta``."""
    if not base.mobilities.constant:
        raise ModelError("continuous dependence requires constant mobilities")
    if mode not in ("initial_data", "velocity"):
        raise ConfigurationError(f"unknown perturbation mode {mode!r}")
    deltas = np.asarray([float(d) for d in deltas])
    if np.any(deltas < 0):
        raise DomainError("perturbation amplitudes must be nonnegative")
    ops, mesh, p = base.ops, base.mesh, base.params
    ref = base.run()
    if mode == "initial_data":
        pert = _mean_free_perturbation(base)
    else:
        vp = _velocity_perturbation(base)
    maxima, identical = [], []
    for d in deltas:
        if mode == "initial_data":
            phi0, psi0 = project_initial(base.init, p, ops)
            other = replace(base, init=(phi0 + d * pert[0], psi0 + d * pert[1]))
        else:
            vel = VelocitySample(base.velocity.v_nodes + d * vp.v_nodes,
                                 base.velocity.w_nodes + d * vp.w_nodes, name="perturbed")
            other = replace(base, velocity=vel)
        run = other.run()
        same = all(np.array_equal(a.phi, b.phi) and np.array_equal(a.psi, b.psi)
                   for a, b in zip(ref.states, run.states))
        identical.append(same)
        worst = 0.0
        for a, b in zip(ref.states, run.states):
            diff = (a.phi - b.phi, a.psi - b.psi)
            worst = max(worst, dual_norm(diff, ops, mesh, p))
        maxima.append(worst)
    maxima = np.array(maxima)
    pos = deltas > 0
    if pos.sum() >= 3:
        slope, resid = fit_rate(deltas[pos], maxima[pos])
    else:
        slope, resid = math.nan, math.nan
    return DependenceTable(mode, deltas, maxima, slope, resid, identical)
