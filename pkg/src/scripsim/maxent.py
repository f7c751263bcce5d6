"""Maximum-entropy distribution of money for a threshold-strategy mix.

For a mix ``pi`` (fraction ``pi_k`` playing threshold ``k``) and average money
``m`` the distribution is ``M^k_i = pi_k lam^i / Z_k(lam)`` with
``Z_k(lam) = sum_{j<=k} lam^j`` and ``lam`` fixed by the mean-money constraint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DEFAULT_TOLERANCES,
    INFINITE,
    DivergentMean,
    Infeasible,
    ParameterRangeError,
    Population,
    StrategyMix,
    check_profile,
    profile_to_mix,
    validate_population,
)

#: Mass left beyond the materialized hoarder row.
HOARDER_TAIL_MASS = 1e-12


def _weights(k: int, lam: float) -> np.ndarray:
    """``lam**i`` for i = 0..k, rescaled so the largest weight is 1."""
    logw = np.arange(k + 1) * math.log(lam)
    return np.exp(logw - logw.max())


def threshold_row(k, lam: float) -> np.ndarray:
    """Conditional money distribution of one agent playing threshold ``k``."""
    if k == INFINITE:
        if not 0 < lam < 1:
            raise DivergentMean(f"hoarder distribution needs 0 < lambda < 1, got {lam}")
        n_levels = _hoarder_levels(lam, 1.0)
        return (1 - lam) * lam ** np.arange(n_levels)
    w = _weights(k, lam)
    return w / w.sum()


def _hoarder_levels(lam: float, mass: float) -> int:
    # smallest N with mass * lam**N < HOARDER_TAIL_MASS
    if lam <= 0 or mass <= HOARDER_TAIL_MASS:
        return 1
    return max(1, int(math.ceil(math.log(HOARDER_TAIL_MASS / mass) / math.log(lam))))


def mean_money_for_threshold(k, lam: float) -> float:
    """Conditional mean money ``sum_i i lam^i / Z_k(lam)`` of an ``S_k`` player."""
    if not lam > 0:
        raise ParameterRangeError(f"lambda must be > 0, got {lam}")
    if k == INFINITE:
        if lam >= 1:
            raise DivergentMean(f"mean money of S_inf diverges for lambda={lam}")
        return lam / (1 - lam)
    if k == 0:
        return 0.0
    w = _weights(k, lam)
    return float(np.dot(np.arange(k + 1), w) / w.sum())


def mix_mean(mix: StrategyMix, lam: float) -> float:
    return sum(p * mean_money_for_threshold(k, lam) for k, p in mix.items())


def solve_lambda(mix: StrategyMix, m: float, tol: float = DEFAULT_TOLERANCES.lambda_bisection_tol) -> float:
    """Find the ``lam`` at which the mix's average money equals ``m``.

    Raises :class:`Infeasible` when ``m <= 0`` or, without hoarders, when ``m``
    reaches the most money the thresholds can hold.
    """
    if not isinstance(mix, StrategyMix):
        mix = StrategyMix(mix)
    if not m > 0:
        raise Infeasible(f"average money must be positive, got {m}")
    if m >= mix.max_mean:
        raise Infeasible(f"m={m} >= {mix.max_mean}, the most this mix can hold")
    hoarders = mix.hoarder_mass > 0

    def excess(lam):
        return mix_mean(mix, lam) - m

    lo = 1.0 if not hoarders else 0.5
    while excess(lo) >= 0:
        lo /= 2
        if lo < 1e-300:
            raise Infeasible(f"no lambda > 0 reaches m={m}")
    hi = lo
    while excess(hi) <= 0:
        if hoarders:
            hi = (1 + hi) / 2
            if hi >= 1:
                raise Infeasible(f"no lambda < 1 reaches m={m}")
        else:
            hi *= 2
            if not math.isfinite(hi):
                raise Infeasible(f"no finite lambda reaches m={m}")
    target = tol * (1 + m)
    while True:
        mid = 0.5 * (lo + hi)
        e = excess(mid)
        if abs(e) <= target or mid <= lo or mid >= hi:
            return mid
        if e < 0:
            lo = mid
        else:
            hi = mid


@dataclass
class MaxEntSolution:
    """Closed-form max-ent distribution for one mix and money supply.

    ``rows[k]`` holds ``M^k_0..M^k_k`` (population fractions, not conditional);
    ``aggregate[i]`` sums the rows at money level ``i``.
    """

    lam: float
    m: float
    mix: StrategyMix
    rows: dict
    aggregate: np.ndarray
    M0: float
    tau: float
    population: Population | None = field(default=None, repr=False)
    profile: tuple | None = None

    @property
    def constraint_residual(self) -> float:
        return abs(mix_mean(self.mix, self.lam) - self.m)

    def per_type(self) -> list:
        """Split each threshold row back over the types playing it, by fraction."""
        if self.population is None or self.profile is None:
            raise ValueError("solution was not built from a population")
        p = self.population
        out = []
        for k, f in zip(self.profile, p.fractions):
            share = (f / p.moneyed_fraction) / self.mix[k] if self.mix.get(k, 0) > 0 else 0.0
            out.append(self.rows[k] * share if k in self.rows else np.zeros(k + 1))
        return out

    def hoarder_row(self) -> np.ndarray | None:
        return self.rows.get(INFINITE)


def distribution_from_lambda(mix: StrategyMix, lam: float, m: float | None = None, **extra) -> MaxEntSolution:
    rows = {}
    for k, p in mix.items():
        if k == INFINITE:
            n_levels = _hoarder_levels(lam, p)
            rows[k] = p * (1 - lam) * lam ** np.arange(n_levels)
        else:
            rows[k] = p * threshold_row(k, lam)
    size = max(len(r) for r in rows.values())
    agg = np.zeros(size)
    tau = 0.0
    for k, r in rows.items():
        agg[: len(r)] += r
        if k != INFINITE:
            tau += r[-1]
    if m is None:
        m = mix_mean(mix, lam)
    return MaxEntSolution(lam=lam, m=m, mix=mix, rows=rows, aggregate=agg, M0=float(agg[0]), tau=float(tau), **extra)


def solve_mix(mix, m: float, tol: float = DEFAULT_TOLERANCES.lambda_bisection_tol) -> MaxEntSolution:
    if not isinstance(mix, StrategyMix):
        mix = StrategyMix(mix)
    lam = solve_lambda(mix, m, tol)
    return distribution_from_lambda(mix, lam, m)


def build_distribution(p: Population, profile, m: float, tol: float = DEFAULT_TOLERANCES.lambda_bisection_tol) -> MaxEntSolution:
    """Max-ent money distribution when type ``t`` plays threshold ``profile[t]``."""
    validate_population(p)
    profile = check_profile(p, profile)
    mix = profile_to_mix(p, profile)
    lam = solve_lambda(mix, m, tol)
    return distribution_from_lambda(mix, lam, m, population=p, profile=profile)


def entropy_of(sol) -> float:
    """Shannon entropy (nats) of the joint (threshold, money) table."""
    rows = sol.rows.values() if isinstance(sol, MaxEntSolution) else sol
    h = 0.0
    for r in rows:
        r = np.asarray(r, dtype=float)
        r = r[r > 0]
        h -= float(np.sum(r * np.log(r)))
    return h
