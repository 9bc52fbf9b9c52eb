"""Run configuration files.

Configurations are INI files read with :mod:`configparser`.  Every
section and key is checked against a schema so that typos fail loudly.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

SCHEMA_VERSION = 1


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _tuple(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.replace(",", " ").split() if x.strip())


SCHEMA = {
    "run": {
        "version": int, "name": str, "system": str, "degree": int, "t_final": float, "cfl": float,
        "limiter": _bool, "uniform": _bool, "seed": int, "max_steps": int, "min_dt": float,
        "vtk_every": int, "log_every": int,
    },
    "system": {"g": float, "h_cut_factor": float, "gamma": float},
    "mesh": {"x_min": float, "x_max": float, "y_min": float, "y_max": float, "nx": int, "ny": int, "max_level": int},
    "initial": {
        "kind": str,
        # dam break
        "h_left": float, "h_right": float, "x_dam": float,
        # blast
        "rho": float, "p_ambient": float, "p_blast": float, "radius": float, "x_center": float, "y_center": float,
        # jet
        "rho_jet": float, "p_jet": float, "v_jet": float, "y_jet_min": float, "y_jet_max": float,
        # constant state
        "state": _tuple,
    },
    "boundary": {"left": str, "right": str, "bottom": str, "top": str},
    "indicator": {
        "quantities": _tuple, "kappa": float, "rounds": int, "alpha_ref": float, "alpha_coarsen": float, "period": int,
    },
}

INITIAL_KEYS = {
    "dam_break": {"h_left", "h_right", "x_dam"},
    "blast": {"rho", "p_ambient", "p_blast", "radius", "x_center", "y_center"},
    "jet": {"rho", "p_ambient", "rho_jet", "p_jet", "v_jet", "y_jet_min", "y_jet_max"},
    "constant": {"state"},
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    name: str = "run"
    system: str = "shallow_water"
    system_params: dict = field(default_factory=dict)
    degree: int = 1
    t_final: float = 1.0
    cfl: float = 0.9
    limiter: bool = True
    uniform: bool = False
    seed: int = 0
    max_steps: int = 1_000_000
    min_dt: float = 1e-8
    vtk_every: int = 0
    log_every: int = 1
    extent: tuple = ((0.0, 1.0), (0.0, 1.0))
    nx: int = 1
    ny: int = 1
    max_level: int = 4
    initial: dict = field(default_factory=lambda: {"kind": "constant", "state": ("1", "0", "0")})
    boundary: dict = field(default_factory=lambda: {s: "slip" for s in ("left", "right", "bottom", "top")})
    indicator: dict = field(default_factory=dict)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    data: dict[str, dict] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        data[section] = {}
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                data[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
    run = data.get("run", {})
    version = run.pop("version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config version must be {SCHEMA_VERSION}, got {version}")
    mesh = data.get("mesh", {})
    initial = data.get("initial", {})
    kind = initial.get("kind")
    if kind not in INITIAL_KEYS:
        raise ConfigError(f"[initial] kind must be one of {sorted(INITIAL_KEYS)}")
    extra = set(initial) - INITIAL_KEYS[kind] - {"kind"}
    if extra:
        raise ConfigError(f"keys {sorted(extra)} do not apply to initial kind {kind!r}")
    cfg = RunConfig(
        system_params=data.get("system", {}),
        extent=((mesh.get("x_min", 0.0), mesh.get("x_max", 1.0)), (mesh.get("y_min", 0.0), mesh.get("y_max", 1.0))),
        nx=mesh.get("nx", 1),
        ny=mesh.get("ny", 1),
        max_level=mesh.get("max_level", 4),
        initial=initial,
        boundary={**RunConfig().boundary, **data.get("boundary", {})},
        indicator=data.get("indicator", {}),
        **run,
    )
    if cfg.degree not in (1, 2):
        raise ConfigError("degree must be 1 or 2")
    if not 0 < cfg.cfl <= 1:
        raise ConfigError("cfl must lie in (0, 1]")
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
