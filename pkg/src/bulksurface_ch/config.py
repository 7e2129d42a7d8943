"""Run configuration: flat ``section.key = value`` files with canonical serialization.

Example::

    mesh.shape = unit_disk
    mesh.resolution = 32
    params.K = inf
    params.L = 1
    time.dt = 0.001
    time.T_final = 0.5

Every key except ``mesh.*`` and ``time.dt``/``time.T_final`` has a default.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assembly import VelocitySample, builtin_velocity, check_velocity
from .errors import ConfigurationError
from .geometry import BulkSurfaceMesh, generate_mesh, load_mesh
from .model import (CouplingParams, Mobilities, Potentials, TriState, builtin_potential, constant_mobility,
                    tabulated_mobility)
from .stepper import SCHEMES, StepConfig

_REQUIRED = object()


def _tristate(text):
    return TriState.parse(text)


def _bool(text):
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


def _choice(*options):
    def parse(text):
        s = str(text).strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


# key -> (parser, default); "" for optional paths means "not given"
SCHEMA = {
    "mesh.shape": (_choice("unit_disk", "unit_square", "file"), _REQUIRED),
    "mesh.resolution": (int, _REQUIRED),
    "mesh.file": (str, ""),
    "params.K": (_tristate, TriState.finite(1.0)),
    "params.L": (_tristate, TriState.finite(1.0)),
    "params.alpha": (float, 1.0),
    "params.beta": (float, 1.0),
    "params.eps": (float, 1.0),
    "params.eps_surf": (float, 1.0),
    "params.kappa": (float, 1.0),
    "potentials.bulk": (_choice("double_well", "user"), "double_well"),
    "potentials.bulk_table": (str, ""),
    "potentials.surf": (_choice("double_well", "user"), "double_well"),
    "potentials.surf_table": (str, ""),
    "mobilities.bulk": (float, 1.0),
    "mobilities.bulk_table": (str, ""),
    "mobilities.surf": (float, 1.0),
    "mobilities.surf_table": (str, ""),
    "velocity.name": (_choice("zero", "rotation", "surface_slide", "table"), "zero"),
    "velocity.gamma": (float, 1.0),
    "velocity.sigma": (float, 1.0),
    "velocity.table": (str, ""),
    "initial.name": (_choice("tanh_disk", "random_smooth", "file"), "tanh_disk"),
    "initial.r0": (float, 0.5),
    "initial.width": (float, 0.1),
    "initial.modes": (_positive_int, 3),
    "initial.amplitude": (float, 0.5),
    "initial.bulk_file": (str, ""),
    "initial.surf_file": (str, ""),
    "initial.target_mass": (str, "none"),
    "time.dt": (float, _REQUIRED),
    "time.T_final": (float, _REQUIRED),
    "time.snapshot_stride": (_positive_int, 100),
    "scheme.name": (_choice(*SCHEMES), "convex_split_newton"),
    "scheme.newton_tol": (float, 1e-12),
    "scheme.newton_max_iters": (_positive_int, 30),
    "scheme.S_F": (float, 2.0),
    "scheme.S_G": (float, 2.0),
    "output.dir": (str, "output"),
    "output.vtk": (_bool, False),
    "seed": (int, 0),
}

_PATH_KEYS = ("mesh.file", "potentials.bulk_table", "potentials.surf_table", "mobilities.bulk_table",
              "mobilities.surf_table", "velocity.table", "initial.bulk_file", "initial.surf_file")


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``values`` maps every schema key to its typed value."""

    values: tuple
    base_dir: str = "."

    def __getitem__(self, key):
        return dict(self.values)[key]

    def as_dict(self) -> dict:
        return dict(self.values)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def __hash__(self):
        return hash(self.values)

    def with_(self, **overrides) -> "RunConfig":
        """Copy with keys replaced; ``section__key`` spells ``section.key``."""
        d = self.as_dict()
        for k, v in overrides.items():
            key = k.replace("__", ".")
            if key not in SCHEMA:
                raise ConfigurationError(f"unknown key {key!r}")
            d[key] = SCHEMA[key][0](v) if isinstance(v, str) else v
        return _finish(d, self.base_dir)

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    # builders ------------------------------------------------------------------

    def build_mesh(self) -> BulkSurfaceMesh:
        if self["mesh.shape"] == "file":
            return load_mesh(self.resolve(self["mesh.file"]))
        return generate_mesh(self["mesh.shape"], self["mesh.resolution"])

    def build_params(self) -> CouplingParams:
        return CouplingParams(K=self["params.K"], L=self["params.L"], alpha=self["params.alpha"],
                              beta=self["params.beta"], eps=self["params.eps"],
                              eps_surf=self["params.eps_surf"], kappa=self["params.kappa"])

    def build_potentials(self) -> Potentials:
        def one(side):
            name = self[f"potentials.{side}"]
            table = self[f"potentials.{side}_table"]
            return builtin_potential(name, self.resolve(table) if table else None)
        return Potentials(one("bulk"), one("surf"))

    def build_mobilities(self) -> Mobilities:
        def one(side):
            table = self[f"mobilities.{side}_table"]
            if table:
                data = np.loadtxt(self.resolve(table), comments="#", ndmin=2)
                if data.shape[1] != 2:
                    raise ConfigurationError(f"mobility table {table} needs 2 columns: s m")
                return tabulated_mobility(data[:, 0], data[:, 1])
            return constant_mobility(self[f"mobilities.{side}"])
        return Mobilities(one("bulk"), one("surf"))

    def build_velocity(self, mesh) -> VelocitySample:
        name = self["velocity.name"]
        if name == "table":
            from .io import load_velocity_table

            v, w = load_velocity_table(self.resolve(self["velocity.table"]), mesh)
            vel = VelocitySample(v, w, name="table")
        else:
            vel = builtin_velocity(name, mesh, gamma=self["velocity.gamma"], sigma=self["velocity.sigma"])
        check_velocity(vel, mesh, tol=1e-10)
        return vel

    def build_step(self) -> StepConfig:
        return StepConfig(dt=self["time.dt"], newton_tol=self["scheme.newton_tol"],
                          newton_max_iters=self["scheme.newton_max_iters"], scheme=self["scheme.name"],
                          S_F=self["scheme.S_F"], S_G=self["scheme.S_G"])

    def target_mass(self):
        t = self["initial.target_mass"]
        return None if t.strip().lower() == "none" else float(t)

    def build_initial(self, mesh, params):
        from .experiments import reference_initial_data
        from .io import read_snapshot

        name = self["initial.name"]
        if name == "file":
            s = read_snapshot(self.resolve(self["initial.bulk_file"]), self.resolve(self["initial.surf_file"]), mesh)
            return s.phi, s.psi
        if name == "tanh_disk":
            return reference_initial_data(name, mesh, params, r0=self["initial.r0"], width=self["initial.width"])
        return reference_initial_data(name, mesh, params, seed=self["seed"], modes=self["initial.modes"],
                                      amplitude=self["initial.amplitude"])


def emit(cfg: RunConfig) -> str:
    """Canonical text form: every key in schema order, one per line."""
    return "".join(f"{k} = {_render(v)}\n" for k, v in cfg.values)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(emit(cfg).encode("ascii")).hexdigest()[:12]


def parse_text(text: str, base_dir=".") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",), strict=True)
    cp.optionxform = str
    try:
        cp.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed configuration: {exc}") from exc
    raw = dict(cp["config"])
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigurationError(f"unknown key(s) {', '.join(unknown)}; valid keys: {', '.join(SCHEMA)}")
    d = {}
    for key, (parser, default) in SCHEMA.items():
        if key in raw:
            try:
                d[key] = parser(raw[key])
            except (ValueError, ConfigurationError) as exc:
                raise ConfigurationError(f"{key}: {exc}") from exc
        elif default is _REQUIRED:
            if key == "mesh.resolution" and raw.get("mesh.shape", "").strip() == "file":
                d[key] = 0
                continue
            raise ConfigurationError(f"missing required key {key}")
        else:
            d[key] = default
    return _finish(d, base_dir)


def _finish(d: dict, base_dir) -> RunConfig:
    cfg = RunConfig(tuple((k, d[k]) for k in SCHEMA), str(base_dir))
    for key in _PATH_KEYS:
        if d[key] and not cfg.resolve(d[key]).exists():
            raise ConfigurationError(f"{key}: file {d[key]} does not exist")
    if d["mesh.shape"] == "file" and not d["mesh.file"]:
        raise ConfigurationError("mesh.shape = file needs mesh.file")
    if d["initial.name"] == "file" and not (d["initial.bulk_file"] and d["initial.surf_file"]):
        raise ConfigurationError("initial.name = file needs initial.bulk_file and initial.surf_file")
    if d["velocity.name"] == "table" and not d["velocity.table"]:
        raise ConfigurationError("velocity.name = table needs velocity.table")
    for side in ("bulk", "surf"):
        if d[f"potentials.{side}"] == "user" and not d[f"potentials.{side}_table"]:
            raise ConfigurationError(f"potentials.{side} = user needs potentials.{side}_table")
    if d["initial.target_mass"].strip().lower() != "none":
        try:
            float(d["initial.target_mass"])
        except ValueError:
            raise ConfigurationError("initial.target_mass must be a number or none") from None
    try:
        cfg.build_params()
        cfg.build_step()
    except Exception as exc:
        raise ConfigurationError(str(exc)) from exc
    if d["mesh.shape"] != "file" and d["mesh.resolution"] < 2:
        raise ConfigurationError("mesh.resolution must be >= 2")
    mesh = cfg.build_mesh()
    cfg.build_params().check_solvability(mesh.area, mesh.perimeter)
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration {path}: {exc}") from exc
    return parse_text(text, base_dir=path.parent)
