"""INI-style run configuration.

Keys may sit in any section (``[model]``, ``[localization]``,
``[exact_oracle]``, ``[runner]`` are the conventional ones); unknown keys
are rejected so typos do not pass silently::

    [model]
    n = 100
    mu = 1
    gamma = 0
    nu_family = uniform(0, 1)
    nu_strength = 4
    seed = 7
    realizations = 500

    [localization]
    t_max = 200
    t_step = 0.1
    d_min = 5
    d_max = 40

    [exact_oracle]
    oracle_cap = 10
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, replace

import numpy as np

from .model import ChainSpec, ConfigError, DisorderSpec, EnsembleConfig, Observable, ObservablePair, UniformInterval

_FAMILY = re.compile(r"^\s*uniform\s*\(\s*([^,]+?)\s*,\s*([^)]+?)\s*\)\s*$", re.IGNORECASE)

DEFAULT_EPSILON_GRID = tuple(np.linspace(0.0, 0.005, 11))

KNOWN_KEYS = {
    "n", "mu", "gamma", "nu_family", "nu_strength", "seed", "realizations",
    "t_max", "t_step", "d_min", "d_max", "oracle_cap", "margin", "max_sources", "r2_min",
    "left", "right", "sites", "eta", "epsilon", "smalltime_step", "verify_realizations",
}


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration: the ensemble plus per-command extras."""

    ensemble: EnsembleConfig
    left: tuple[Observable, ...] = ()
    right: Observable | None = None
    sites: tuple[int, ...] | None = None
    eta: float | None = None
    epsilon: tuple[float, ...] = DEFAULT_EPSILON_GRID
    smalltime_step: float = 0.05
    verify_realizations: int = 20

    def pair(self) -> ObservablePair:
        if not self.left or self.right is None:
            raise ConfigError("this command needs 'left' and 'right' observables")
        return ObservablePair(self.left, self.right)

    def with_seed(self, seed: int) -> RunConfig:
        ens = replace(self.ensemble, disorder=replace(self.ensemble.disorder, base_seed=seed))
        return replace(self, ensemble=ens)

    def as_dict(self) -> dict:
        e = self.ensemble
        t = e.chain_template
        return {
            "n": t.n, "mu": list(t.mu), "gamma": list(t.gamma),
            "nu_family": f"uniform({e.disorder.family.a!r}, {e.disorder.family.b!r})",
            "nu_strength": e.disorder.strength, "seed": e.disorder.base_seed,
            "realizations": e.disorder.realizations, "t_max": e.t_max, "t_step": e.t_step,
            "d_min": e.d_min, "d_max": e.d_max, "oracle_cap": e.oracle_cap, "margin": e.margin,
            "max_sources": e.max_sources, "r2_min": e.r2_min,
            "left": [_format_obs(o) for o in self.left],
            "right": _format_obs(self.right) if self.right else None,
            "sites": list(self.sites) if self.sites else None, "eta": self.eta,
            "epsilon": list(self.epsilon), "smalltime_step": self.smalltime_step,
            "verify_realizations": self.verify_realizations,
        }


def _format_obs(o: Observable) -> str:
    if o.kind == "matrix_unit":
        return f"matrix_unit({o.unit[0]},{o.unit[1]})@{o.site}"
    return f"{o.kind}@{o.site}"


def parse_observable(text: str) -> Observable:
    """``kind@site``, e.g. ``sigma_z@2`` or ``matrix_unit(1,2)@3``."""
    m = re.fullmatch(r"\s*([a-z_]+)(?:\((\d)\s*,\s*(\d)\))?\s*@\s*(\d+)\s*", text)
    if not m:
        raise ConfigError(f"cannot parse observable {text!r}; expected kind@site")
    kind, r, s, site = m.groups()
    unit = (int(r), int(s)) if r else None
    return Observable(kind, int(site), unit)


def _floats(text: str, key: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected numbers, got {text!r}") from exc


def _int(values: dict, key: str, default=None):
    if key not in values:
        return default
    try:
        return int(values[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected an integer, got {values[key]!r}") from exc


def _float(values: dict, key: str, default=None):
    if key not in values:
        return default
    try:
        return float(values[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a number, got {values[key]!r}") from exc


def parse_family(text: str) -> UniformInterval:
    m = _FAMILY.match(text)
    if not m:
        raise ConfigError(f"unsupported nu_family {text!r}; only uniform(a, b) is available")
    try:
        return UniformInterval(float(m.group(1)), float(m.group(2)))
    except ValueError as exc:
        raise ConfigError(f"bad bounds in nu_family {text!r}") from exc


def from_mapping(values: dict[str, str]) -> RunConfig:
    unknown = set(values) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "n" not in values:
        raise ConfigError("config must set n")
    n = _int(values, "n")
    if n < 1:
        raise ConfigError("n must be >= 1")
    mu = _floats(values.get("mu", "1"), "mu")
    gamma = _floats(values.get("gamma", "0"), "gamma")
    template = ChainSpec(n, mu if len(mu) > 1 else mu * (n - 1), gamma if len(gamma) > 1 else gamma * (n - 1), 0.0)
    disorder = DisorderSpec(
        family=parse_family(values.get("nu_family", "uniform(0, 1)")),
        strength=_float(values, "nu_strength", 1.0),
        base_seed=_int(values, "seed", 0),
        realizations=_int(values, "realizations", 1),
    )
    ens = EnsembleConfig(
        chain_template=template,
        disorder=disorder,
        t_max=_float(values, "t_max", 200.0),
        t_step=_float(values, "t_step", 0.1),
        d_min=_int(values, "d_min", 5),
        d_max=_int(values, "d_max"),
        oracle_cap=_int(values, "oracle_cap", 10),
        margin=_int(values, "margin", 0),
        max_sources=_int(values, "max_sources", 0),
        r2_min=_float(values, "r2_min", 0.95),
    )
    left = tuple(parse_observable(x) for x in values.get("left", "").split(",") if x.strip())
    right = parse_observable(values["right"]) if "right" in values else None
    sites = tuple(int(x) for x in _floats(values["sites"], "sites")) if "sites" in values else None
    eps = tuple(_floats(values["epsilon"], "epsilon")) if "epsilon" in values else DEFAULT_EPSILON_GRID
    return RunConfig(
        ensemble=ens, left=left, right=right, sites=sites, eta=_float(values, "eta"),
        epsilon=eps, smalltime_step=_float(values, "smalltime_step", 0.05),
        verify_realizations=_int(values, "verify_realizations", 20),
    )


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    values: dict[str, str] = dict(parser.defaults())
    for section in parser.sections():
        for key, val in parser.items(section, raw=True):
            if key in values and values[key] != val and key not in parser.defaults():
                raise ConfigError(f"key {key!r} set twice with different values")
            values[key] = val
    return from_mapping(values)
