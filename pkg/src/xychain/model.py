"""Chain parameters, disorder, observables and ensemble configuration.

Sites are 1-based everywhere a user can see them (configs, CSV, errors).
Arrays inside the package are 0-based; conversion happens at the edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid chain, disorder or ensemble parameters."""


class CapacityError(ConfigError):
    """Requested system size exceeds the exact-oracle memory guard."""


class NumericalError(RuntimeError):
    """A numerical routine failed; carries replay metadata when known."""

    def __init__(self, message: str, seed: int | None = None, index: int | None = None):
        if seed is not None or index is not None:
            message = f"{message} (seed={seed}, realization={index})"
        super().__init__(message)
        self.seed = seed
        self.index = index


class DegeneracyError(NumericalError):
    """Ground state is degenerate (zero gap)."""


ORACLE_HARD_CAP = 14


def _as_tuple(values, length: int, name: str) -> tuple[float, ...]:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.size == 1 and length != 1:
        arr = np.full(length, float(arr[0]))
    if arr.size != length:
        raise ConfigError(f"{name} must have length {length}, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} contains non-finite entries")
    return tuple(float(x) for x in arr)


@dataclass(frozen=True)
class ChainSpec:
    """One realization of the XY chain on sites 1..n.

    ``mu`` and ``gamma`` are the n-1 bond couplings and anisotropies,
    ``nu`` the n on-site fields. Scalars are broadcast.
    """

    n: int
    mu: tuple[float, ...]
    gamma: tuple[float, ...]
    nu: tuple[float, ...]

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be an integer >= 1, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "mu", _as_tuple(self.mu, self.n - 1, "mu"))
        object.__setattr__(self, "gamma", _as_tuple(self.gamma, self.n - 1, "gamma"))
        object.__setattr__(self, "nu", _as_tuple(self.nu, self.n, "nu"))
        if any(m == 0.0 for m in self.mu):
            raise ConfigError("all couplings mu_j must be nonzero")

    @classmethod
    def uniform(cls, n: int, mu: float = 1.0, gamma: float = 0.0, nu=0.0) -> ChainSpec:
        return cls(n, (mu,) * (n - 1), (gamma,) * (n - 1), nu)

    def isotropic(self) -> bool:
        return all(g == 0.0 for g in self.gamma) and len(set(self.mu)) <= 1

    def with_nu(self, nu: Sequence[float]) -> ChainSpec:
        return replace(self, nu=tuple(nu))


@dataclass(frozen=True)
class UniformInterval:
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not self.a < self.b:
            raise ConfigError(f"UniformInterval needs a < b, got ({self.a}, {self.b})")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.a, self.b, size)


@dataclass(frozen=True)
class DisorderSpec:
    """I.i.d. on-site fields ``strength * X`` with ``X ~ family``.

    Realization ``i`` draws from a generator keyed by ``(base_seed, i)``
    (a numpy ``SeedSequence`` spawn key), so realizations can be produced
    in any order or on any worker.
    """

    family: UniformInterval = field(default_factory=UniformInterval)
    strength: float = 1.0
    base_seed: int = 0
    realizations: int = 1

    def __post_init__(self):
        if self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigError("base_seed must fit in 64 unsigned bits")
        if not np.isfinite(self.strength):
            raise ConfigError("strength must be finite")

    def rng(self, index: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.base_seed, spawn_key=(index,))
        return np.random.Generator(np.random.PCG64(ss))

    def bounds(self) -> tuple[float, float]:
        lo, hi = self.strength * self.family.a, self.strength * self.family.b
        return (min(lo, hi), max(lo, hi))


def draw_realization(spec: DisorderSpec, template: ChainSpec, index: int) -> ChainSpec:
    """Return ``template`` with its fields replaced by realization ``index``."""
    if not 0 <= index < spec.realizations:
        raise ConfigError(f"realization index {index} outside [0, {spec.realizations})")
    nu = spec.strength * spec.family.sample(spec.rng(index), template.n)
    return template.with_nu(nu)


OBSERVABLE_KINDS = (
    "a", "a_dagger", "a_dagger_a", "a_a_dagger",
    "sigma_x", "sigma_y", "sigma_z", "c", "c_dagger",
)


@dataclass(frozen=True)
class Observable:
    """Single-site observable descriptor.

    ``kind`` is one of :data:`OBSERVABLE_KINDS` or ``"matrix_unit"``, in
    which case ``unit=(r, s)`` (1-based, 1 = spin up) picks the entry.
    """

    kind: str
    site: int
    unit: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind == "matrix_unit":
            if self.unit is None or not all(u in (1, 2) for u in self.unit):
                raise ConfigError("matrix_unit needs unit=(r, s) with r, s in {1, 2}")
        elif self.kind not in OBSERVABLE_KINDS:
            raise ConfigError(f"unknown observable kind {self.kind!r}")
        if self.site < 1:
            raise ConfigError("sites are 1-based")


@dataclass(frozen=True)
class ObservablePair:
    """Left observable(s) on sites ``J`` and a right observable at site ``k``."""

    left: tuple[Observable, ...]
    right: Observable

    def __post_init__(self):
        if not self.left:
            raise ConfigError("at least one left observable is required")
        if max(o.site for o in self.left) >= self.right.site:
            raise ConfigError("left supports must lie strictly left of the right site")

    @classmethod
    def single(cls, kind_left: str, j: int, kind_right: str, k: int) -> ObservablePair:
        return cls((Observable(kind_left, j),), Observable(kind_right, k))

    @property
    def distance(self) -> int:
        return min(self.right.site - o.site for o in self.left)

    def validate_for(self, n: int) -> None:
        if self.right.site > n:
            raise ConfigError(f"site {self.right.site} outside chain of length {n}")


@dataclass(frozen=True)
class EnsembleConfig:
    """Everything an ensemble run needs besides the observable.

    ``margin`` excludes that many sites at each chain end from correlator
    tables; ``max_sources`` (0 = all) caps the number of left sites used.
    """

    chain_template: ChainSpec
    disorder: DisorderSpec
    t_max: float = 200.0
    t_step: float = 0.1
    d_min: int = 5
    d_max: int | None = None
    oracle_cap: int = 10
    margin: int = 0
    max_sources: int = 0
    r2_min: float = 0.95

    def __post_init__(self):
        n = self.chain_template.n
        if self.d_max is None:
            object.__setattr__(self, "d_max", max(min(40, n - 10), 0))
        if not self.t_step > 0 or not self.t_max >= self.t_step:
            raise ConfigError("need t_step > 0 and t_max >= t_step")
        if self.d_min < 1:
            raise ConfigError("d_min must be >= 1")
        if not self.d_max < n:
            raise ConfigError(f"d_max must be < n (got d_max={self.d_max}, n={n})")
        if not 1 <= self.oracle_cap <= ORACLE_HARD_CAP:
            raise ConfigError(f"oracle_cap must lie in [1, {ORACLE_HARD_CAP}]")
        if self.margin < 0 or self.max_sources < 0:
            raise ConfigError("margin and max_sources must be >= 0")

    @property
    def n(self) -> int:
        return self.chain_template.n

    def time_grid(self) -> np.ndarray:
        steps = int(np.floor(self.t_max / self.t_step + 1e-9))
        return self.t_step * np.arange(steps + 1)

    def realization(self, index: int) -> ChainSpec:
        return draw_realization(self.disorder, self.chain_template, index)

    def require_oracle(self) -> None:
        if self.n > self.oracle_cap:
            raise CapacityError(f"n={self.n} exceeds oracle_cap={self.oracle_cap}")
