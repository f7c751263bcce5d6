"""Domain types, population validation and shared tolerances."""
from __future__ import annotations

import json
import math
import numbers
import warnings
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

#: Threshold of an agent that always volunteers (hoarders).
INFINITE = math.inf

FRACTION_TOL = 1e-9


class ScripError(Exception):
    """Base class for domain errors raised by scripsim."""


class FractionSumError(ScripError):
    pass


class ParameterRangeError(ScripError):
    pass


class NotPayoffHeterogeneous(ScripError):
    """Types differ in beta or rho; the max-ent theory does not apply."""


class Infeasible(ScripError):
    """No threshold profile of the given mix can hold the requested money."""


class DivergentMean(ScripError):
    pass


class NonConvergence(ScripError):
    pass


class NonThresholdPolicy(ScripError):
    """The optimal work set computed from a value function is not downward closed."""


class ThresholdUnbounded(ScripError):
    pass


class NoSolution(ScripError):
    pass


class NegativeMass(ScripError):
    pass


class NoExplanation(ScripError):
    pass


class NoUpperBound(ScripError):
    pass


class StateSpaceTooLarge(ScripError):
    pass


class ConfigError(ScripError):
    pass


@dataclass(frozen=True)
class AgentType:
    """Payoff parameters of one agent class.

    ``alpha`` is the cost of doing a job, ``beta`` the probability of being
    able to serve a request, ``gamma`` the value of being served, ``delta`` the
    discount factor per unit time and ``rho`` the relative request rate.
    """

    alpha: float
    beta: float
    gamma: float
    delta: float
    rho: float = 1.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ParameterRangeError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 < self.beta <= 1:
            raise ParameterRangeError(f"beta must be in (0, 1], got {self.beta}")
        if not self.gamma > 0:
            raise ParameterRangeError(f"gamma must be > 0, got {self.gamma}")
        if not 0 < self.delta < 1:
            raise ParameterRangeError(f"delta must be in (0, 1), got {self.delta}")
        if not self.rho > 0:
            raise ParameterRangeError(f"rho must be > 0, got {self.rho}")

    @classmethod
    def from_tuple(cls, t: Sequence[float]) -> "AgentType":
        return cls(*t)

    def as_tuple(self):
        return (self.alpha, self.beta, self.gamma, self.delta, self.rho)


HOARDER_DEFAULT = AgentType(alpha=0.0, beta=1.0, gamma=1.0, delta=0.5, rho=1.0)


@dataclass(frozen=True)
class Population:
    """Standard types with their population fractions, plus hoarders and altruists."""

    types: tuple
    fractions: tuple
    n: int = 1000
    hoarder_fraction: float = 0.0
    altruist_fraction: float = 0.0
    hoarder_type: AgentType | None = None

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        object.__setattr__(self, "fractions", tuple(float(f) for f in self.fractions))

    @classmethod
    def from_pairs(cls, pairs: Iterable, **kwargs) -> "Population":
        types, fracs = [], []
        for t, f in pairs:
            types.append(t if isinstance(t, AgentType) else AgentType.from_tuple(t))
            fracs.append(f)
        return cls(tuple(types), tuple(fracs), **kwargs)

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def moneyed_fraction(self) -> float:
        """Mass of agents that hold money (standard agents and hoarders)."""
        return 1.0 - self.altruist_fraction

    @property
    def payoff_heterogeneous(self) -> bool:
        members = list(self.types)
        if self.hoarder_type is not None and self.hoarder_fraction > 0:
            members.append(self.hoarder_type)
        if not members:
            return True
        return len({t.beta for t in members}) == 1 and len({t.rho for t in members}) == 1

    def with_hoarders(self, f_h: float) -> "Population":
        """Replace hoarder mass by ``f_h``, rescaling the standard fractions."""
        scale = (1.0 - f_h - self.altruist_fraction) / max(sum(self.fractions), 1e-300)
        return replace(self, fractions=tuple(f * scale for f in self.fractions), hoarder_fraction=f_h)

    def with_altruists(self, f_a: float) -> "Population":
        scale = (1.0 - f_a - self.hoarder_fraction) / max(sum(self.fractions), 1e-300)
        return replace(self, fractions=tuple(f * scale for f in self.fractions), altruist_fraction=f_a)


def validate_population(p: Population) -> Population:
    """Check every Population invariant and return ``p`` unchanged.

    Payoff heterogeneity is not checked here; see
    :attr:`Population.payoff_heterogeneous` and :func:`require_payoff_heterogeneous`.
    """
    if len(p.types) != len(p.fractions):
        raise ParameterRangeError("types and fractions differ in length")
    for t in p.types:
        if not isinstance(t, AgentType):
            raise ParameterRangeError(f"not an AgentType: {t!r}")
        if t.gamma <= t.alpha:
            warnings.warn(f"type {t.as_tuple()} has gamma <= alpha and will never work", stacklevel=2)
    if not isinstance(p.n, (int,)) or isinstance(p.n, bool) or p.n < 2:
        raise ParameterRangeError(f"n must be an integer >= 2, got {p.n!r}")
    if any(not f >= 0 for f in p.fractions):
        raise ParameterRangeError("type fractions must be >= 0")
    if not 0 <= p.hoarder_fraction < 1:
        raise ParameterRangeError(f"hoarder_fraction must be in [0, 1), got {p.hoarder_fraction}")
    if not 0 <= p.altruist_fraction < 1:
        raise ParameterRangeError(f"altruist_fraction must be in [0, 1), got {p.altruist_fraction}")
    if p.hoarder_type is not None and not isinstance(p.hoarder_type, AgentType):
        raise ParameterRangeError("hoarder_type must be an AgentType")
    total = sum(p.fractions) + p.hoarder_fraction + p.altruist_fraction
    if abs(total - 1.0) > FRACTION_TOL:
        raise FractionSumError(f"fractions sum to {total!r}, expected 1")
    return p


def require_payoff_heterogeneous(p: Population) -> None:
    if not p.payoff_heterogeneous:
        raise NotPayoffHeterogeneous("types differ in beta or rho")


@dataclass(frozen=True)
class ToleranceConfig:
    lambda_bisection_tol: float = 1e-12
    value_iteration_tol: float = 1e-10
    inference_ratio_tol: float = 1e-6
    k_max_initial: int = 200
    k_max_cap: int = 12800

    def __post_init__(self):
        for name in ("lambda_bisection_tol", "value_iteration_tol", "inference_ratio_tol"):
            if not getattr(self, name) > 0:
                raise ParameterRangeError(f"{name} must be > 0")
        if self.k_max_initial < 1 or self.k_max_cap < self.k_max_initial:
            raise ParameterRangeError("need 1 <= k_max_initial <= k_max_cap")


DEFAULT_TOLERANCES = ToleranceConfig()


class StrategyMix(Mapping):
    """Fractions ``pi_k`` of the money-holding population playing threshold ``k``.

    Keys are non-negative ints or :data:`INFINITE`. Entries with zero mass are
    dropped.
    """

    def __init__(self, entries: Mapping, *, check: bool = True):
        clean = {}
        for k, p in entries.items():
            k = _as_threshold(k)
            p = float(p)
            if p < 0:
                raise ParameterRangeError(f"negative mass {p} at threshold {k}")
            if p > 0:
                clean[k] = clean.get(k, 0.0) + p
        if check and abs(sum(clean.values()) - 1.0) > FRACTION_TOL:
            raise FractionSumError(f"mix sums to {sum(clean.values())!r}")
        self._entries = dict(sorted(clean.items()))

    def __getitem__(self, k):
        return self._entries[k]

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def __repr__(self):
        return f"StrategyMix({self._entries!r})"

    @property
    def finite(self) -> dict:
        return {k: p for k, p in self._entries.items() if k != INFINITE}

    @property
    def hoarder_mass(self) -> float:
        return self._entries.get(INFINITE, 0.0)

    @property
    def max_mean(self) -> float:
        """Largest average money the mix can hold (inf with hoarders)."""
        if self.hoarder_mass > 0:
            return math.inf
        return sum(k * p for k, p in self._entries.items())


def _as_threshold(k):
    if k == INFINITE:
        return INFINITE
    if isinstance(k, numbers.Real) and not isinstance(k, numbers.Integral) and float(k).is_integer():
        k = int(k)
    if not isinstance(k, numbers.Integral) or isinstance(k, bool) or k < 0:
        raise ParameterRangeError(f"threshold must be a non-negative int or INFINITE, got {k!r}")
    return int(k)


def check_profile(p: Population, profile: Sequence[int]) -> tuple:
    profile = tuple(_as_threshold(k) for k in profile)
    if len(profile) != p.n_types:
        raise ParameterRangeError(f"profile has {len(profile)} thresholds for {p.n_types} types")
    if any(k == INFINITE for k in profile):
        raise ParameterRangeError("INFINITE is reserved for hoarders")
    return profile


def profile_to_mix(p: Population, profile: Sequence[int]) -> StrategyMix:
    """Aggregate per-type thresholds into a mix over the non-altruist mass."""
    profile = check_profile(p, profile)
    mass = p.moneyed_fraction
    entries: dict = {}
    for k, f in zip(profile, p.fractions):
        entries[k] = entries.get(k, 0.0) + f / mass
    if p.hoarder_fraction > 0:
        entries[INFINITE] = p.hoarder_fraction / mass
    return StrategyMix(entries)


_TYPE_KEYS = {"alpha", "beta", "gamma", "delta", "rho", "fraction"}
_TOP_KEYS = {"types", "n", "hoarder_fraction", "altruist_fraction", "hoarder_type"}


def population_from_dict(d: Mapping) -> Population:
    if not isinstance(d, Mapping):
        raise ConfigError("population config must be an object")
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown keys in population config: {sorted(unknown)}")
    if "types" not in d or "n" not in d:
        raise ConfigError("population config needs 'types' and 'n'")
    types, fracs = [], []
    for entry in d["types"]:
        bad = set(entry) - _TYPE_KEYS
        if bad:
            raise ConfigError(f"unknown keys in type entry: {sorted(bad)}")
        missing = _TYPE_KEYS - set(entry) - {"rho"}
        if missing:
            raise ConfigError(f"type entry missing {sorted(missing)}")
        types.append(AgentType(entry["alpha"], entry["beta"], entry["gamma"], entry["delta"], entry.get("rho", 1.0)))
        fracs.append(entry["fraction"])
    hoarder_type = None
    if d.get("hoarder_type") is not None:
        ht = dict(d["hoarder_type"])
        bad = set(ht) - (_TYPE_KEYS - {"fraction"})
        if bad:
            raise ConfigError(f"unknown keys in hoarder_type: {sorted(bad)}")
        hoarder_type = AgentType(**ht)
    n = d["n"]
    if isinstance(n, float) and n.is_integer():
        n = int(n)
    p = Population(
        tuple(types),
        tuple(fracs),
        n=n,
        hoarder_fraction=float(d.get("hoarder_fraction", 0.0)),
        altruist_fraction=float(d.get("altruist_fraction", 0.0)),
        hoarder_type=hoarder_type,
    )
    return validate_population(p)


def population_to_dict(p: Population) -> dict:
    d = {
        "types": [
            {"alpha": t.alpha, "beta": t.beta, "gamma": t.gamma, "delta": t.delta, "rho": t.rho, "fraction": f}
            for t, f in zip(p.types, p.fractions)
        ],
        "n": p.n,
        "hoarder_fraction": p.hoarder_fraction,
        "altruist_fraction": p.altruist_fraction,
    }
    if p.hoarder_type is not None:
        t = p.hoarder_type
        d["hoarder_type"] = {"alpha": t.alpha, "beta": t.beta, "gamma": t.gamma, "delta": t.delta, "rho": t.rho}
    return d


def load_population(path) -> Population:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read population config {path}: {exc}") from exc
    return population_from_dict(data)


def two_cost_population(n: int = 1000) -> Population:
    """Two types differing only in job cost, fractions 0.3 / 0.7."""
    return validate_population(
        Population.from_pairs([((0.05, 1, 1, 0.95, 1), 0.3), ((0.15, 1, 1, 0.95, 1), 0.7)], n=n)
    )
