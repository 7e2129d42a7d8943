"""Model parameters, potentials, mobilities and the discrete energy and mass functionals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, ModelError


@dataclass(frozen=True)
class TriState:
    """A coupling parameter in ``[0, inf]``: ``zero``, ``finite(value)`` or ``infinite``."""

    tag: str
    value: float = 0.0

    def __post_init__(self):
        if self.tag not in ("zero", "finite", "infinite"):
            raise ConfigurationError(f"unknown TriState tag {self.tag!r}")
        if self.tag == "finite" and not (self.value > 0 and math.isfinite(self.value)):
            raise ConfigurationError(f"finite coupling value must be positive, got {self.value}")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def finite(cls, value):
        return cls("finite", float(value))

    @classmethod
    def infinite(cls):
        return cls("infinite")

    @classmethod
    def parse(cls, text) -> "TriState":
        """Parse ``"0"``, ``"inf"`` (any case) or a positive number."""
        if isinstance(text, TriState):
            return text
        s = str(text).strip().lower()
        if s in ("inf", "infinity", "+inf"):
            return cls.infinite()
        try:
            x = float(s)
        except ValueError:
            raise ConfigurationError(f"cannot parse coupling parameter {text!r}") from None
        if x == 0.0:
            return cls.zero()
        if math.isinf(x) and x > 0:
            return cls.infinite()
        return cls.finite(x)

    @property
    def is_zero(self) -> bool:
        return self.tag == "zero"

    @property
    def is_finite(self) -> bool:
        return self.tag == "finite"

    @property
    def is_infinite(self) -> bool:
        return self.tag == "infinite"

    def __str__(self):
        if self.tag == "zero":
            return "0"
        if self.tag == "infinite":
            return "inf"
        return repr(self.value)


def h_of(x: TriState) -> float:
    """Case selector: ``1/x`` for finite positive ``x``, zero for ``x`` in ``{0, inf}``."""
    return 1.0 / x.value if x.is_finite else 0.0


@dataclass(frozen=True)
class CouplingParams:
    K: TriState = TriState.finite(1.0)
    L: TriState = TriState.finite(1.0)
    alpha: float = 1.0
    beta: float = 1.0
    eps: float = 1.0
    eps_surf: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        for name in ("eps", "eps_surf", "kappa"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")

    def solvability(self, area: float, perimeter: float) -> float:
        return self.alpha * self.beta * area + perimeter

    def check_solvability(self, area: float, perimeter: float) -> None:
        val = self.solvability(area, perimeter)
        if abs(val) < 1e-12 * max(1.0, perimeter):
            raise ConfigurationError(
                f"alpha*beta*|Omega| + |Gamma| = {val:.6g} must be nonzero "
                f"(alpha={self.alpha}, beta={self.beta}, |Omega|={area:.6g}, |Gamma|={perimeter:.6g})")

    def with_(self, **kw) -> "CouplingParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class PotentialSpec:
    """A potential with the convex/concave split of its derivative used by the stepper."""

    F: Callable
    F_prime: Callable
    F_second: Callable
    convex_part_prime: Callable
    concave_part_prime: Callable
    convex_part_second: Callable
    growth: float = 4.0
    coercivity: Optional[tuple] = None
    name: str = "custom"

    def check(self, grid=None) -> None:
        """Sample-check nonnegativity, coercivity and monotonicity of the convex part."""
        s = np.linspace(-10.0, 10.0, 4001) if grid is None else np.asarray(grid, float)
        f = self.F(s)
        if np.any(f < -1e-14):
            raise ModelError(f"potential {self.name} takes negative values (min {f.min():.3e})")
        if self.coercivity is not None:
            a, b = self.coercivity
            if np.any(f < a * s**2 - b - 1e-12):
                raise ModelError(f"potential {self.name} violates F(s) >= {a} s^2 - {b}")
        fc = self.convex_part_prime(s)
        if np.any(np.diff(fc) < -1e-12):
            raise ModelError(f"convex part of potential {self.name} is not convex")
        if not 2.0 <= self.growth:
            raise ModelError("growth exponent must be >= 2")


def double_well() -> PotentialSpec:
    """``W(s) = (s^2 - 1)^2 / 4`` split as ``s^3`` (convex) plus ``-s`` (concave)."""
    return PotentialSpec(
        F=lambda s: 0.25 * (s * s - 1.0) ** 2,
        F_prime=lambda s: s**3 - s,
        F_second=lambda s: 3.0 * s * s - 1.0,
        convex_part_prime=lambda s: s**3,
        concave_part_prime=lambda s: -s,
        convex_part_second=lambda s: 3.0 * s * s,
        growth=4.0,
        coercivity=(0.125, 1.0),
        name="double_well",
    )


def tabulated_potential(s, F_values, convex_prime_values, concave_prime_values,
                        growth: float = 4.0, name: str = "user") -> PotentialSpec:
    """Potential given by sampled tables with linear interpolation.

    Outside the table range the derivative tables are extended linearly, which
    keeps the convex part convex.
    """
    s = np.asarray(s, float)
    Fv = np.asarray(F_values, float)
    fc = np.asarray(convex_prime_values, float)
    fe = np.asarray(concave_prime_values, float)
    if not (len(s) == len(Fv) == len(fc) == len(fe)) or len(s) < 3 or np.any(np.diff(s) <= 0):
        raise ModelError("potential table needs >= 3 strictly increasing sample points")
    if np.any(Fv < 0):
        raise ModelError(f"potential table {name} takes negative values")
    if np.any(np.diff(fc) < 0):
        raise ModelError(f"potential table {name}: convex part derivative must be nondecreasing")

    def interp_ext(y):
        sl0 = (y[1] - y[0]) / (s[1] - s[0])
        sl1 = (y[-1] - y[-2]) / (s[-1] - s[-2])

        def f(x):
            x = np.asarray(x, float)
            out = np.interp(x, s, y)
            out = np.where(x < s[0], y[0] + sl0 * (x - s[0]), out)
            return np.where(x > s[-1], y[-1] + sl1 * (x - s[-1]), out)
        return f

    def slope(y):
        d = np.diff(y) / np.diff(s)

        def f(x):
            idx = np.clip(np.searchsorted(s, np.asarray(x, float)) - 1, 0, len(d) - 1)
            return d[idx]
        return f

    fc_f, fe_f = interp_ext(fc), interp_ext(fe)
    return PotentialSpec(
        F=interp_ext(Fv),
        F_prime=lambda x: fc_f(x) + fe_f(x),
        F_second=lambda x: slope(fc)(x) + slope(fe)(x),
        convex_part_prime=fc_f,
        concave_part_prime=fe_f,
        convex_part_second=slope(fc),
        growth=growth,
        coercivity=None,
        name=name,
    )


def load_potential_table(path, name=None) -> PotentialSpec:
    """Read columns ``s F Fc' Fe'`` (whitespace-delimited, ``#`` comments)."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 4:
        raise ModelError(f"potential table {path} needs 4 columns: s F Fc' Fe'")
    pot = tabulated_potential(data[:, 0], data[:, 1], data[:, 2], data[:, 3],
                              name=name or Path(path).stem)
    pot.check(data[:, 0])
    return pot


def builtin_potential(name: str, path=None) -> PotentialSpec:
    if name == "double_well":
        return double_well()
    if name == "user":
        if path is None:
            raise ConfigurationError("user potential requires a table path")
        return load_potential_table(path)
    raise ConfigurationError(f"unknown potential {name!r}")


@dataclass(frozen=True)
class Potentials:
    F: PotentialSpec = field(default_factory=double_well)
    G: PotentialSpec = field(default_factory=double_well)


@dataclass(frozen=True)
class MobilitySpec:
    m: Callable
    lower: float
    upper: float
    constant: bool = False

    def __post_init__(self):
        if not (0 < self.lower <= self.upper):
            raise ModelError(f"mobility bounds must satisfy 0 < m* <= M*, got {self.lower}, {self.upper}")

    def __call__(self, s):
        return self.m(s)

    def check(self, grid=None) -> None:
        s = np.linspace(-10.0, 10.0, 2001) if grid is None else np.asarray(grid, float)
        vals = np.broadcast_to(self.m(s), s.shape)
        if np.any(vals < self.lower - 1e-14) or np.any(vals > self.upper + 1e-14):
            raise ModelError("mobility leaves its bounds [m*, M*] on the sample grid")


def constant_mobility(value: float = 1.0) -> MobilitySpec:
    value = float(value)
    if not value > 0:
        raise ModelError(f"constant mobility must be positive, got {value}")
    return MobilitySpec(m=lambda s: np.full(np.shape(s), value), lower=value, upper=value, constant=True)


def tabulated_mobility(s, values) -> MobilitySpec:
    s = np.asarray(s, float)
    values = np.asarray(values, float)
    if np.any(values <= 0):
        raise ModelError("tabulated mobility must be strictly positive")
    # np.interp clamps outside the table, so bounds are the table extremes
    return MobilitySpec(m=lambda x: np.interp(x, s, values), lower=float(values.min()),
                        upper=float(values.max()), constant=bool(np.all(values == values[0])))


@dataclass(frozen=True)
class Mobilities:
    bulk: MobilitySpec = field(default_factory=constant_mobility)
    surf: MobilitySpec = field(default_factory=constant_mobility)

    @property
    def constant(self) -> bool:
        return self.bulk.constant and self.surf.constant


@dataclass
class State:
    phi: np.ndarray
    psi: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    t: float = 0.0

    @classmethod
    def from_fields(cls, phi, psi, t=0.0):
        phi = np.asarray(phi, float)
        psi = np.asarray(psi, float)
        return cls(phi.copy(), psi.copy(), np.zeros_like(phi), np.zeros_like(psi), t)

    def check(self, ops) -> None:
        if self.phi.shape != (ops.n_bulk,) or self.mu.shape != (ops.n_bulk,):
            raise ModelError("bulk vectors do not match the number of bulk vertices")
        if self.psi.shape != (ops.n_surf,) or self.theta.shape != (ops.n_surf,):
            raise ModelError("surface vectors do not match the number of surface vertices")

    def copy(self) -> "State":
        return State(self.phi.copy(), self.psi.copy(), self.mu.copy(), self.theta.copy(), self.t)


def penalty(state_or_pair, ops, coef: float) -> float:
    """``int_Gamma (coef psi - phi)^2`` with lumped quadrature."""
    phi, psi = (state_or_pair.phi, state_or_pair.psi) if isinstance(state_or_pair, State) else state_or_pair
    d = coef * psi - ops.T @ phi
    return float(d @ (ops.M_surf_lumped * d))


def energy(state, ops, mesh, params: CouplingParams, potentials: Potentials) -> float:
    """Discrete total energy with lumped quadrature for the potentials and the coupling penalty."""
    phi, psi = state.phi, state.psi
    e = 0.5 * params.eps * float(phi @ (ops.A_bulk @ phi))
    e += float(ops.M_bulk_lumped @ potentials.F.F(phi)) / params.eps
    e += 0.5 * params.eps_surf * params.kappa * float(psi @ (ops.A_surf @ psi))
    e += float(ops.M_surf_lumped @ potentials.G.F(psi)) / params.eps_surf
    hk = h_of(params.K)
    if hk:
        e += 0.5 * hk * penalty(state, ops, params.alpha)
    return e


def mass(state, ops, params: CouplingParams) -> tuple[float, float, float]:
    """Return ``(beta * bulk + surf, bulk, surf)`` with consistent-mass integration."""
    bulk = float(ops.M_bulk_lumped @ state.phi)  # row sums of M equal the lumped weights
    surf = float(ops.M_surf_lumped @ state.psi)
    return params.beta * bulk + surf, bulk, surf


def conserved_quantities(state, ops, params: CouplingParams) -> np.ndarray:
    """The quantities conserved for the given ``L``: one combined mass or two separate masses."""
    combined, bulk, surf = mass(state, ops, params)
    if params.L.is_infinite:
        return np.array([bulk, surf])
    return np.array([combined])
