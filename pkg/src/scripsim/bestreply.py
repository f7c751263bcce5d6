"""Best replies against a mean-field environment and best-reply dynamics.

A single agent sees the rest of the system through three per-round numbers:
the chance of being picked to request (``1/n``), the chance of being picked to
serve when volunteering (``p_earn``) and the fraction ``a`` of requests served
for free. Its optimal work/idle decision by money level comes from a discounted
Bellman equation with per-round discount ``delta ** (1/n)``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .core import (
    DEFAULT_TOLERANCES,
    INFINITE,
    AgentType,
    Infeasible,
    NonConvergence,
    NonThresholdPolicy,
    ParameterRangeError,
    Population,
    StrategyMix,
    ThresholdUnbounded,
    ToleranceConfig,
    check_profile,
    require_payoff_heterogeneous,
    validate_population,
)
from .maxent import MaxEntSolution, build_distribution, distribution_from_lambda

log = logging.getLogger(__name__)

# gains below this count as indifference, which resolves to not working
_TIE_EPS = 1e-12


class ConcavityWarning(UserWarning):
    pass


@dataclass
class EnvironmentRates:
    n: int
    a: float
    M0: float
    tau: float
    p_req: float
    p_earn: float
    solution: MaxEntSolution | None = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 <= self.p_earn <= 1:
            raise ParameterRangeError(f"p_earn must be in [0, 1], got {self.p_earn}")
        if not 0 <= self.a < 1:
            raise ParameterRangeError(f"free-service fraction must be in [0, 1), got {self.a}")

    def discount(self, t: AgentType) -> float:
        """Per-round discount; rounds are ``1/n`` time units apart."""
        return t.delta ** (1.0 / self.n)

    @classmethod
    def from_distribution(cls, n: int, M0: float, tau: float, a: float = 0.0, solution=None) -> "EnvironmentRates":
        if tau >= 1:
            p_earn = 1.0
        else:
            p_earn = min(1.0, (1 - a) * (1 - M0) / (n * (1 - tau)))
        return cls(n=n, a=a, M0=M0, tau=tau, p_req=1.0 / n, p_earn=max(0.0, p_earn), solution=solution)


def environment_rates(p: Population, profile, m: float, a: float = 0.0, tol: ToleranceConfig = DEFAULT_TOLERANCES) -> EnvironmentRates:
    """Per-round request/earn probabilities induced by a threshold profile."""
    validate_population(p)
    require_payoff_heterogeneous(p)
    sol = build_distribution(p, profile, m, tol.lambda_bisection_tol)
    return EnvironmentRates.from_distribution(p.n, sol.M0, sol.tau, a, solution=sol)


@dataclass
class ValueFunction:
    values: np.ndarray
    k_max: int
    work: np.ndarray
    residual: float
    iterations: int
    method: str = "policy"

    @property
    def marginal(self) -> np.ndarray:
        return np.diff(self.values)

    @property
    def is_monotone(self) -> bool:
        return bool(np.all(self.marginal >= -1e-9 * max(1.0, np.abs(self.values).max())))

    def is_concave(self, upto: int | None = None) -> bool:
        d = self.marginal[: upto] if upto is not None else self.marginal
        scale = 1e-9 * max(1.0, np.abs(self.values).max())
        return bool(np.all(np.diff(d) <= scale))

    @property
    def threshold(self) -> int:
        """Smallest money level at which the agent stops volunteering."""
        idle = np.flatnonzero(~self.work)
        k = int(idle[0]) if idle.size else self.k_max
        if self.work[k:].any():
            raise NonThresholdPolicy(
                f"agent works at levels {np.flatnonzero(self.work[k:]) + k} above idle level {k}"
            )
        return k


def _coefficients(t: AgentType, r: EnvironmentRates):
    D = r.discount(t)
    return D, r.p_req, r.p_earn, r.a


def _bellman(V, t, r):
    """One application of the per-round Bellman operator; returns (TV, work)."""
    D, p, q, a = _coefficients(t, r)
    K = len(V) - 1
    down = np.empty_like(V)
    down[1:] = t.gamma + D * V[:-1]
    down[0] = D * V[0]
    R = a * (t.gamma + D * V) + (1 - a) * down
    up = np.empty_like(V)
    up[:-1] = V[1:]
    up[-1] = V[-1]
    gain = q * (-t.alpha + D * up - D * V)
    work = gain > _TIE_EPS
    work[K] = False
    W = D * V + np.where(work, gain, 0.0)
    return p * R + (1 - p) * W, work


def _policy_values(work, t, r, K):
    """Exact values of a fixed work/idle policy (tridiagonal solve)."""
    D, p, q, a = _coefficients(t, r)
    n = K + 1
    w = work.astype(float)
    w[K] = 0.0
    ab = np.zeros((3, n))
    diag = 1 - p * D * a - (1 - p) * D * (1 - w * q)
    diag[0] -= p * D * (1 - a)
    ab[1] = diag
    ab[2, :-1] = -p * D * (1 - a)  # sub-diagonal: coefficient of V(i-1) in row i
    ab[0, 1:] = -(1 - p) * D * w[:-1] * q  # super-diagonal: V(i+1) in row i
    b = p * (a * t.gamma + (1 - a) * t.gamma * (np.arange(n) >= 1)) - (1 - p) * w * q * t.alpha
    return solve_banded((1, 1), ab, b)


def value_iteration(t: AgentType, r: EnvironmentRates, k_max: int = 200,
                    tol: float = DEFAULT_TOLERANCES.value_iteration_tol, method: str = "policy") -> ValueFunction:
    """Fixed point of the per-round Bellman operator on money levels 0..k_max.

    ``method="policy"`` runs policy iteration with exact policy evaluation;
    ``method="value"`` runs plain successive approximation, which needs on the
    order of ``n / (1 - delta)`` sweeps and is only practical for small ``n``.
    Either way the returned values satisfy ``|TV - V| <= tol * max(1, |V|)``
    in sup norm.
    """
    K = int(k_max)
    if K < 1:
        raise ParameterRangeError("k_max must be >= 1")
    if method == "policy":
        work = np.ones(K + 1, dtype=bool)
        work[K] = False
        for it in range(1, 10 * K + 10):
            V = _policy_values(work, t, r, K)
            TV, new = _bellman(V, t, r)
            if np.array_equal(new, work):
                break
            work = new
        else:
            raise NonConvergence(f"policy iteration did not settle after {it} steps")
        residual = float(np.max(np.abs(TV - V)))
        scale = max(1.0, float(np.max(np.abs(V))))
        if residual > tol * scale:
            # polish with a few successive approximations
            for _ in range(100):
                V = TV
                TV, work = _bellman(V, t, r)
                residual = float(np.max(np.abs(TV - V)))
                if residual <= tol * scale:
                    break
            else:
                raise NonConvergence(f"Bellman residual {residual:.3g} > {tol:.3g}")
        return ValueFunction(V, K, work, residual, it, "policy")
    if method == "value":
        D = r.discount(t)
        cap = int(math.ceil(10 * math.log(tol) / math.log(D * (1 - r.p_req))))
        V = np.zeros(K + 1)
        for it in range(1, cap + 1):
            TV, work = _bellman(V, t, r)
            residual = float(np.max(np.abs(TV - V)))
            V = TV
            if residual <= tol * max(1.0, float(np.max(np.abs(V)))):
                _, work = _bellman(V, t, r)
                return ValueFunction(V, K, work, residual, it, "value")
        raise NonConvergence(f"value iteration residual {residual:.3g} > {tol:.3g} after {cap} sweeps")
    raise ValueError(f"unknown method {method!r}")


def best_threshold(t: AgentType, r: EnvironmentRates, k_max: int = DEFAULT_TOLERANCES.k_max_initial,
                   cap: int = DEFAULT_TOLERANCES.k_max_cap, tol: float = DEFAULT_TOLERANCES.value_iteration_tol) -> int:
    """Best-reply threshold; indifference resolves to the smaller threshold.

    The money grid starts at ``k_max`` levels and doubles while the threshold
    sits at the top of the grid.
    """
    K = int(k_max)
    while True:
        vf = value_iteration(t, r, K, tol)
        k = vf.threshold
        if k < K:
            if not vf.is_concave(upto=k + 1):
                warnings.warn(f"value function not concave below threshold {k} for type {t.as_tuple()}",
                              ConcavityWarning, stacklevel=2)
            return k
        if K >= cap:
            raise ThresholdUnbounded(f"threshold reached the grid cap {cap} for type {t.as_tuple()}")
        K = min(2 * K, cap)


def _best_replies(p: Population, profile, m, a, tol: ToleranceConfig):
    r = environment_rates(p, profile, m, a, tol)
    k_max = max([tol.k_max_initial, *[k + 1 for k in profile]])
    cache = {}
    out = []
    for t in p.types:
        if t not in cache:
            cache[t] = best_threshold(t, r, k_max, tol.k_max_cap, tol.value_iteration_tol)
        out.append(cache[t])
    return tuple(out), r


def best_reply_profile(p: Population, profile, m: float, a: float = 0.0, tol: ToleranceConfig = DEFAULT_TOLERANCES) -> tuple:
    """Component-wise best replies of all standard types to ``profile``."""
    profile = check_profile(p, profile)
    return _best_replies(p, profile, m, a, tol)[0]


@dataclass
class EquilibriumResult:
    profile: tuple
    solution: MaxEntSolution | None
    crashed: bool
    iterations: list
    welfare: object = None
    rates: EnvironmentRates | None = field(default=None, repr=False)
    m: float = float("nan")
    a: float = 0.0

    @property
    def nontrivial(self) -> bool:
        return not self.crashed and any(k > 0 for k in self.profile)

    @property
    def lam(self) -> float:
        return self.solution.lam if self.solution is not None else float("nan")

    @property
    def M0(self) -> float:
        return self.solution.M0 if self.solution is not None else float("nan")

    @property
    def tau(self) -> float:
        return self.solution.tau if self.solution is not None else float("nan")


def find_equilibrium(p: Population, m: float, a: float = 0.0, tol: ToleranceConfig = DEFAULT_TOLERANCES) -> EquilibriumResult:
    """Greatest threshold equilibrium, by best-reply dynamics from the top.

    Every standard type starts at ``tol.k_max_initial`` (standing in for the
    always-volunteer strategy). The map is monotone, so the iterates only go
    down; the run is flagged crashed when it reaches the all-zero profile or a
    profile that cannot hold the money supply.
    """
    from .welfare import crashed_welfare, welfare_rate

    validate_population(p)
    require_payoff_heterogeneous(p)
    if not m > 0:
        raise ParameterRangeError(f"m must be positive, got {m}")
    if not 0 <= a < 1:
        raise ParameterRangeError(f"a must be in [0, 1), got {a}")

    if p.n_types == 0 or sum(p.fractions) == 0:
        profile = tuple(0 for _ in p.types)
        mix = StrategyMix({INFINITE: 1.0})
        from .maxent import solve_lambda

        sol = distribution_from_lambda(mix, solve_lambda(mix, m, tol.lambda_bisection_tol), m,
                                       population=p, profile=profile)
        w = welfare_rate(p, sol, profile, a)
        return EquilibriumResult(profile, sol, False, [profile], w, None, m, a)

    top = tol.k_max_initial
    while True:
        current = (top,) * p.n_types
        trace = [current]
        try:
            new, rates = _best_replies(p, current, m, a, tol)
        except Infeasible:
            if top >= tol.k_max_cap:
                return EquilibriumResult(tuple(0 for _ in p.types), None, True, trace,
                                         crashed_welfare(p, a), None, m, a)
            top = min(2 * top, tol.k_max_cap)
            continue
        if max(new) > top and top < tol.k_max_cap:
            top = min(max(2 * top, max(new)), tol.k_max_cap)
            continue
        break

    crashed = False
    while new != current:
        if any(kn > kc for kn, kc in zip(new, current)):
            raise AssertionError(f"best-reply dynamics went up: {current} -> {new}")
        current = new
        trace.append(current)
        try:
            new, rates = _best_replies(p, current, m, a, tol)
        except Infeasible:
            crashed = True
            break
    if not crashed and all(k == 0 for k in current):
        crashed = True
    log.debug("m=%s a=%s: %d best-reply steps, profile %s, crashed=%s", m, a, len(trace), current, crashed)
    if crashed:
        return EquilibriumResult(tuple(0 for _ in p.types), None, True, trace, crashed_welfare(p, a), None, m, a)
    sol = rates.solution
    return EquilibriumResult(current, sol, False, trace, welfare_rate(p, sol, current, a), rates, m, a)
