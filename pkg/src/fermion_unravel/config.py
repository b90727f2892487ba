"""Run configuration: a flat sectioned ``key = value`` file, environment
overrides and validation.

Precedence, lowest first: built-in defaults, config file, environment
variables ``FERMION_UNRAVEL_<KEY>``, explicit overrides (command-line flags).
Keys are unique across sections, so the environment name drops the section.
"""

from __future__ import annotations

import ast
import configparser
import math
import operator
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping

ENV_PREFIX = "FERMION_UNRAVEL_"

SECTIONS: dict[str, tuple[str, ...]] = {
    "potential": ("kind", "mass", "omega", "barrier_height", "barrier_width"),
    "channel": ("omega_l", "gamma"),
    "system": ("n_particles", "theta", "box_length", "n_points"),
    "run": (
        "dt",
        "t_final",
        "n_hs",
        "n_traj",
        "n_runs",
        "ci_level",
        "propagator",
        "newton_tol",
        "convention",
        "combine",
        "master_seed",
        "output_path",
    ),
    "reference": ("n_basis",),
}
# sections that may appear in a manifest but carry no configuration
IGNORED_SECTIONS = ("manifest",)


class ConfigError(ValueError):
    """Invalid or unknown configuration key; the message names the key."""


@dataclass(frozen=True)
class SimConfig:
    kind: str = "harmonic"
    mass: float = 1.0
    omega: float = 1.0
    barrier_height: float = 8.0
    barrier_width: float = 0.2
    omega_l: float = 1.0
    gamma: float = 0.2
    n_particles: int = 8
    theta: float = math.pi / 4
    box_length: float = 16.0
    n_points: int = 128
    dt: float = 0.25
    t_final: float = 25.0
    n_hs: int = 10
    n_traj: int = 160
    n_runs: int = 10
    ci_level: float = 0.75
    propagator: str = "newton"
    newton_tol: float = 1e-9
    convention: str = "complex"
    combine: str = "wavefunction"
    master_seed: int = 0
    output_path: str = "out"
    n_basis: int = 16

    def __post_init__(self):
        validate(self)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def replace(self, **changes: Any) -> "SimConfig":
        return from_mapping({**asdict(self), **changes})


_TYPES = {f.name: f.type for f in fields(SimConfig)}
_CHOICES = {
    "kind": ("harmonic", "double_well"),
    "propagator": ("newton", "split", "dense"),
    "convention": ("complex", "real"),
    "combine": ("wavefunction", "density"),
}
# key -> (predicate, accepted range text)
_RANGES = {
    "mass": (lambda v: v > 0, "> 0"),
    "omega": (lambda v: v > 0, "> 0"),
    "barrier_height": (lambda v: v >= 0, ">= 0"),
    "barrier_width": (lambda v: v > 0, "> 0"),
    "omega_l": (lambda v: v > 0, "> 0"),
    "gamma": (lambda v: v >= 0, ">= 0"),
    "n_particles": (lambda v: v >= 1, ">= 1"),
    "theta": (lambda v: True, "any real (radians)"),
    "box_length": (lambda v: v > 0, "> 0"),
    "n_points": (lambda v: v >= 8 and v & (v - 1) == 0, "a power of two >= 8"),
    "dt": (lambda v: v > 0, "> 0"),
    "t_final": (lambda v: True, ">= dt"),
    "n_hs": (lambda v: v >= 1, ">= 1"),
    "n_traj": (lambda v: v >= 2, ">= 2"),
    "n_runs": (lambda v: v >= 1, ">= 1"),
    "ci_level": (lambda v: 0 < v < 1, "in (0, 1)"),
    "newton_tol": (lambda v: 0 < v <= 1e-3, "in (0, 1e-3]"),
    "master_seed": (lambda v: v >= 0, ">= 0"),
    "n_basis": (lambda v: v >= 2, ">= 2"),
}


def validate(cfg: SimConfig) -> None:
    for key, choices in _CHOICES.items():
        if getattr(cfg, key) not in choices:
            raise ConfigError(f"{key} = {getattr(cfg, key)!r}: accepted values are {', '.join(choices)}")
    for key, (ok, text) in _RANGES.items():
        value = getattr(cfg, key)
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(f"{key} = {value!r}: must be finite, accepted range {text}")
        if not ok(value):
            raise ConfigError(f"{key} = {value!r}: accepted range {text}")
    if not cfg.t_final >= cfg.dt:
        raise ConfigError(f"t_final = {cfg.t_final!r}: accepted range >= dt ({cfg.dt!r})")
    ratio = cfg.t_final / cfg.dt
    if abs(ratio - round(ratio)) > 1e-9 * max(ratio, 1.0):
        raise ConfigError(f"t_final = {cfg.t_final!r}: must be an integer multiple of dt ({cfg.dt!r})")
    if cfg.n_points < cfg.n_particles + 1:
        raise ConfigError(f"n_points = {cfg.n_points}: accepted range >= n_particles + 1")
    if cfg.n_basis < cfg.n_particles + 1 or cfg.n_basis > cfg.n_points:
        raise ConfigError(f"n_basis = {cfg.n_basis}: accepted range [n_particles + 1, n_points]")


# --------------------------------------------------------------------------
# value parsing

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}


def _eval_number(node: ast.AST) -> float:
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id == "pi":
        return math.pi
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval_number(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_number(node.left), _eval_number(node.right))
    raise ValueError("not a number")


def parse_float(text: str) -> float:
    """Plain float, or simple arithmetic in numbers and ``pi`` (``pi/4``, ``3*pi/2``)."""
    try:
        return float(text)
    except ValueError:
        pass
    try:
        return _eval_number(ast.parse(text.strip(), mode="eval").body)
    except (SyntaxError, ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"cannot read {text!r} as a number") from exc


def _coerce(key: str, value: Any) -> Any:
    kind = _TYPES[key]
    try:
        if kind == "int":
            if isinstance(value, str):
                as_float = parse_float(value)
            else:
                as_float = float(value)
            if as_float != int(as_float):
                raise ValueError("not an integer")
            return int(as_float)
        if kind == "float":
            return parse_float(value) if isinstance(value, str) else float(value)
        return str(value).strip()
    except (TypeError, ValueError, OverflowError) as exc:
        raise ConfigError(f"{key} = {value!r}: expected {kind}") from exc


def from_mapping(values: Mapping[str, Any]) -> SimConfig:
    unknown = sorted(set(values) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}; known keys: {', '.join(_TYPES)}")
    return SimConfig(**{k: _coerce(k, v) for k, v in values.items()})


def read_file(path: str | os.PathLike) -> dict[str, str]:
    """Flat key/value pairs from a sectioned config file (section names are checked)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} does not exist")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {str(path)!r}: {exc}") from exc
    out: dict[str, str] = {}
    for section in parser.sections():
        if section in IGNORED_SECTIONS:
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]; known sections: {', '.join(SECTIONS)}")
        for key, value in parser.items(section):
            if key not in SECTIONS[section]:
                where = next((s for s, keys in SECTIONS.items() if key in keys), None)
                hint = f" (belongs in [{where}])" if where else ""
                raise ConfigError(f"unknown key {key!r} in section [{section}]{hint}")
            out[key] = value
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key not in _TYPES:
            raise ConfigError(f"unknown config key {key!r} from environment variable {name}")
        out[key] = value
    return out


def parse_config(
    path: str | os.PathLike | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> SimConfig:
    values: dict[str, Any] = {}
    if path is not None:
        values.update(read_file(path))
    values.update(env_overrides(environ))
    values.update(overrides or {})
    return from_mapping(values)


def parse_assignment(text: str) -> tuple[str, str]:
    """``key=value`` from a command-line ``--set`` flag."""
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"expected key=value, got {text!r}")
    return key.strip(), value.strip()


def format_config(cfg: SimConfig) -> str:
    """Sectioned text that :func:`parse_config` reads back to an identical config."""
    lines = []
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            value = getattr(cfg, key)
            lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
