"""Recover threshold strategies from an observed distribution of money.

Under a max-ent distribution, ``M_i = B_i lam^i`` where ``B_i`` only drops at
levels just above a threshold in use. On a log plot the data are straight
segments of common slope ``log lam``; each break marks a threshold.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls
from scipy.special import logsumexp

from .bestreply import EnvironmentRates, best_threshold
from .core import (
    DEFAULT_TOLERANCES,
    AgentType,
    NegativeMass,
    NoExplanation,
    NoSolution,
    ParameterRangeError,
    StrategyMix,
    ThresholdUnbounded,
)
from .maxent import solve_mix


class ObservedDistribution:
    """Fractions ``M_0..M_K`` of agents holding each amount of money."""

    def __init__(self, fractions, sample_size: int | None = None, tol: float = 1e-6):
        M = np.asarray(fractions, dtype=float).ravel()
        if M.size == 0 or np.any(M < 0) or not np.all(np.isfinite(M)):
            raise ParameterRangeError("fractions must be finite and non-negative")
        if abs(M.sum() - 1) > tol:
            raise ParameterRangeError(f"fractions sum to {M.sum()!r}, expected 1")
        nz = np.flatnonzero(M)
        self.M = M[: nz[-1] + 1] / M.sum()
        self.sample_size = sample_size

    @classmethod
    def from_counts(cls, counts) -> "ObservedDistribution":
        c = np.asarray(counts, dtype=float)
        return cls(c / c.sum(), sample_size=int(round(c.sum())))

    @property
    def K(self) -> int:
        return self.M.size - 1

    @property
    def mean(self) -> float:
        return float(np.dot(np.arange(self.M.size), self.M))

    @property
    def fully_supported(self) -> bool:
        return bool(np.all(self.M > 0))

    @property
    def ratios(self) -> np.ndarray:
        """``M_i / M_{i-1}`` for i = 1..K."""
        return self.M[1:] / self.M[:-1]


def _as_observed(M) -> ObservedDistribution:
    return M if isinstance(M, ObservedDistribution) else ObservedDistribution(M)


def coefficient_matrix(lam: float, K: int) -> np.ndarray:
    """``C[i, k] = lam**i / Z_k(lam)`` for ``i <= k``; column k is the S_k row per unit mass."""
    ll = math.log(lam)
    i = np.arange(K + 1)
    logZ = np.array([logsumexp(i[: k + 1] * ll) for k in range(K + 1)])
    C = np.exp(i[:, None] * ll - logZ[None, :])
    return np.triu(C)


@dataclass
class Explanation:
    lam: float
    pi: StrategyMix
    residual: float
    rebuilt: np.ndarray

    @property
    def support(self) -> tuple:
        return tuple(sorted(self.pi))

    @property
    def support_size(self) -> int:
        return len(self.pi)

    @property
    def top(self) -> int:
        return max(self.pi)

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "support": list(self.support),
            "pi": {str(k): v for k, v in self.pi.items()},
            "residual": self.residual,
        }


def reconstruct_mix(M, lam: float, tol: float = DEFAULT_TOLERANCES.inference_ratio_tol) -> dict:
    """Unique strategy fractions explaining ``M`` at a given ``lam`` (top-down).

    Entries within ``tol`` below zero are clamped to zero; anything more
    negative means ``lam`` admits no explanation and raises NegativeMass.
    """
    obs = _as_observed(M)
    if not lam > 0:
        raise ParameterRangeError("lambda must be positive")
    if not obs.fully_supported:
        raise NoExplanation("distribution is not fully supported")
    K = obs.K
    C = coefficient_matrix(lam, K)
    pi = np.zeros(K + 1)
    for j in range(K, -1, -1):
        pi[j] = (obs.M[j] - np.dot(C[j, j + 1:], pi[j + 1:])) / C[j, j]
    if np.any(pi < -tol):
        j = int(np.argmin(pi))
        raise NegativeMass(f"lambda={lam:.6g} gives pi_{j}={pi[j]:.3g}")
    pi = np.clip(pi, 0.0, None)
    return {k: float(v) for k, v in enumerate(pi)}


def _explain(obs: ObservedDistribution, lam: float, pi: dict, drop_below: float) -> Explanation:
    pi = {k: v for k, v in pi.items() if v > drop_below}
    total = sum(pi.values())
    pi = {k: v / total for k, v in pi.items()}
    mix = StrategyMix(pi)
    m = obs.mean
    rebuilt = solve_mix(mix, m).aggregate if m < mix.max_mean else _fallback_rows(mix, lam)
    size = max(rebuilt.size, obs.M.size)
    resid = float(np.linalg.norm(np.pad(rebuilt, (0, size - rebuilt.size)) - np.pad(obs.M, (0, size - obs.M.size))))
    return Explanation(lam, mix, resid, rebuilt)


def _fallback_rows(mix, lam):
    from .maxent import distribution_from_lambda

    return distribution_from_lambda(mix, lam).aggregate


def _ratio_runs(r: np.ndarray, tol: float):
    """Maximal runs of consecutive ratios staying within ``tol`` of the run mean."""
    runs = []
    start = 0
    for i in range(1, r.size + 1):
        if i == r.size or abs(r[i] - r[start:i].mean()) > tol * r[start:i].mean():
            runs.append((start, i))
            start = i
    return runs


def estimate_lambda(obs: ObservedDistribution, tol: float, noisy: bool) -> float:
    r = obs.ratios
    if r.size == 0:
        raise NoExplanation("need money levels 0..K with K >= 1")
    if not noisy:
        return float(r.max())
    runs = _ratio_runs(r, tol)
    long_runs = [(a, b) for a, b in runs if b - a >= 2] or runs
    return float(max(r[a:b].mean() for a, b in long_runs))


def _fit_support(obs, lam, support):
    C = coefficient_matrix(lam, obs.K)
    cols = sorted(support)
    x, _ = nnls(C[:, cols], obs.M)
    return dict(zip(cols, x))


def minimal_explanation(M, tol: float | None = None, residual_tol: float | None = None, noisy: bool | None = None) -> Explanation:
    """Smallest-support explanation: breaks in the ratio ``M_i / M_{i-1}``.

    For exact inputs ``lam`` is the largest ratio, attained wherever no
    threshold sits just below. With ``noisy`` (default: when the observation
    carries a ``sample_size``) ``lam`` is the largest mean over runs of
    near-constant ratio, and ``tol`` is the run tolerance.
    """
    obs = _as_observed(M)
    if not obs.fully_supported:
        raise NoExplanation("distribution is not fully supported")
    if obs.K < 1:
        raise NoExplanation("need money levels 0..K with K >= 1")
    if noisy is None:
        noisy = obs.sample_size is not None
    if tol is None:
        tol = 0.05 if noisy else DEFAULT_TOLERANCES.inference_ratio_tol
    if residual_tol is None:
        if not noisy:
            residual_tol = 1e-8
        elif obs.sample_size:
            residual_tol = max(1e-8, 2.0 / math.sqrt(obs.sample_size))
        else:
            residual_tol = 0.02

    lam = estimate_lambda(obs, tol, noisy)
    r = obs.ratios
    support = {obs.K} | {i - 1 for i in range(1, obs.K + 1) if r[i - 1] < lam * (1 - tol)}

    def attempt(sup):
        pi = _fit_support(obs, lam, sup)
        if sum(pi.values()) <= 0:
            return None
        return _explain(obs, lam, pi, drop_below=0.0)

    best = attempt(support)
    while best is None or best.residual > residual_tol:
        rest = [j for j in range(obs.K + 1) if j not in support]
        if not rest:
            break
        trials = [(j, attempt(support | {j})) for j in rest]
        trials = [(j, e) for j, e in trials if e is not None]
        if not trials:
            break
        j, e = min(trials, key=lambda je: je[1].residual)
        support.add(j)
        best = e
    if best is None or best.residual > residual_tol:
        raise NoExplanation(f"no explanation within residual {residual_tol:g}")
    return best


def enumerate_explanations(M, lambdas, tol: float = DEFAULT_TOLERANCES.inference_ratio_tol) -> list:
    """One entry per ``lam``: an :class:`Explanation`, or the NegativeMass error raised for it."""
    obs = _as_observed(M)
    out = []
    for lam in lambdas:
        try:
            pi = reconstruct_mix(obs, lam, tol)
        except NegativeMass as exc:
            out.append(exc)
            continue
        out.append(_explain(obs, lam, pi, drop_below=tol))
    return out


def calibrate_type(k: int, r: EnvironmentRates, beta: float = 1.0, rho: float = 1.0, alpha: float = 0.05,
                   gamma: float = 1.0, xtol: float = 1e-9, k_max: int = 200, cap: int = 12800) -> tuple:
    """Interval of discount factors for which threshold ``k`` is the best reply.

    ``alpha``, ``gamma``, ``beta`` and ``rho`` stay fixed; only ``delta``
    moves. Raises NoSolution if no ``delta`` in (0, 1) gives exactly ``k``.
    """
    if k < 0:
        raise ParameterRangeError("k must be >= 0")
    seen = []

    def br(delta):
        try:
            v = best_threshold(AgentType(alpha, beta, gamma, delta, rho), r, k_max, cap)
        except ThresholdUnbounded:
            v = math.inf
        seen.append((delta, v))
        return v

    eps = 1e-12
    lo_d, hi_d = eps, 1 - 1e-6
    f_lo, f_hi = br(lo_d), br(hi_d)

    # left edge: inf{delta : br >= k}
    if f_lo >= k:
        left = lo_d
    elif f_hi < k:
        raise NoSolution(f"threshold {k} is never reached for alpha={alpha}, gamma={gamma}")
    else:
        a, b = lo_d, hi_d
        while b - a > xtol:
            mid = 0.5 * (a + b)
            if br(mid) >= k:
                b = mid
            else:
                a = mid
        left = b
    # right edge: sup{delta : br <= k}
    if f_hi <= k:
        right = hi_d
    elif br(left) > k:
        raise NoSolution(f"threshold {k} is skipped for alpha={alpha}, gamma={gamma}")
    else:
        a, b = left, hi_d
        while b - a > xtol:
            mid = 0.5 * (a + b)
            if br(mid) <= k:
                a = mid
            else:
                b = mid
        right = a
    if right < left or br(0.5 * (left + right)) != k:
        raise NoSolution(f"threshold {k} is skipped for alpha={alpha}, gamma={gamma}")
    seen.sort()
    vals = [v for _, v in seen]
    if any(b < a for a, b in zip(vals, vals[1:])):
        warnings.warn("best threshold is not monotone in delta on the probed points", RuntimeWarning, stacklevel=2)
    return left, right
