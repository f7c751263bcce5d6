"""Social welfare, the monetary-crash threshold, and parameter sweeps."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bestreply import EquilibriumResult, find_equilibrium
from .core import (
    DEFAULT_TOLERANCES,
    INFINITE,
    NoUpperBound,
    ParameterRangeError,
    Population,
    ScripError,
    ToleranceConfig,
    check_profile,
    require_payoff_heterogeneous,
    validate_population,
)
from .maxent import MaxEntSolution


@dataclass
class WelfareReport:
    """Expected welfare per round (one request per round).

    ``per_type_utility`` is the expected utility per agent per unit time
    (``n`` rounds), so ``sum_t f_t u_t`` plus the hoarder share equals
    ``per_round``. ``discounted_total`` is ``per_round / (1 - delta)`` when
    every type shares one ``delta``, else None.
    """

    per_round: float
    discounted_total: float | None
    per_type_utility: tuple
    hoarder_utility: float = 0.0


def _common_delta(p: Population):
    deltas = {t.delta for t in p.types}
    return deltas.pop() if len(deltas) == 1 else None


def _report(p: Population, per_round, per_type, hoarder_u) -> WelfareReport:
    d = _common_delta(p)
    total = per_round / (1 - d) if d is not None else None
    return WelfareReport(float(per_round), total, tuple(float(u) for u in per_type), float(hoarder_u))


def welfare_rate(p: Population, sol: MaxEntSolution, profile, a: float = 0.0) -> WelfareReport:
    """Expected welfare per round of a threshold profile in its max-ent state.

    Requests are served for free with probability ``a``. Otherwise a requester
    holding at least $1 pays a volunteer drawn uniformly from the willing
    agents (below their threshold, or hoarders), who pays the job cost.
    Hoarders gain ``hoarder_type.gamma`` per service and pay
    ``hoarder_type.alpha`` per job when a hoarder type is given; otherwise both
    are 0.
    """
    profile = check_profile(p, profile)
    mass = p.moneyed_fraction
    rows = sol.per_type() if sol.population is not None else _split_rows(p, sol, profile)
    f = np.array(p.fractions) / mass
    gamma = np.array([t.gamma for t in p.types])
    alpha = np.array([t.alpha for t in p.types])
    z = np.array([r[0] if len(r) else 0.0 for r in rows])
    at_thr = np.array([r[-1] if len(r) else 0.0 for r in rows])
    willing = f - at_thr

    f_h = sol.mix.get(INFINITE, 0.0)
    ht = p.hoarder_type
    gamma_h = ht.gamma if ht is not None else 0.0
    alpha_h = ht.alpha if ht is not None else 0.0
    hrow = sol.hoarder_row()
    z_h = float(hrow[0]) if hrow is not None else 0.0

    paid = float(np.sum(f - z) + (f_h - z_h))  # prob. the requester can pay
    W = float(willing.sum() + f_h)
    safe_f = np.where(f > 0, f, 1.0)
    if W > 0:
        own_buy = np.where(f > 0, 1 - z / safe_f, 0.0)  # P(I can pay | I request)
        jobs = np.where(f > 0, paid * willing / safe_f / W, 0.0)  # paid jobs per agent per request
    else:  # nobody volunteers, so no paid service
        own_buy = jobs = np.zeros_like(f)
    u = a * gamma + (1 - a) * (own_buy * gamma - alpha * jobs)
    u_h = 0.0
    if f_h > 0:
        u_h = a * gamma_h
        if W > 0:
            u_h += (1 - a) * ((1 - z_h / f_h) * gamma_h - alpha_h * paid / W)
    per_round = float(np.dot(f, u) + f_h * u_h)
    return _report(p, per_round, u, u_h)


def _split_rows(p, sol, profile):
    out = []
    for k, ft in zip(profile, p.fractions):
        share = (ft / p.moneyed_fraction) / sol.mix[k] if sol.mix.get(k, 0) > 0 else 0.0
        out.append(sol.rows[k] * share if k in sol.rows else np.zeros(k + 1))
    return out


def crashed_welfare(p: Population, a: float = 0.0) -> WelfareReport:
    """Welfare when no one works for money: only free service remains."""
    mass = p.moneyed_fraction
    u = [a * t.gamma for t in p.types]
    f = [fr / mass for fr in p.fractions]
    ht = p.hoarder_type
    u_h = a * ht.gamma if ht is not None else 0.0
    per_round = sum(fi * ui for fi, ui in zip(f, u)) + p.hoarder_fraction / mass * u_h
    return _report(p, per_round, u, u_h)


@dataclass
class CrashSearchResult:
    """Bracket around the money supply where the greatest equilibrium turns trivial.

    ``status`` is ``"crash"`` for a finite bracket, ``"no_equilibrium"`` when
    not even ``m_lo`` supports a nontrivial equilibrium (``m_crash`` is 0), and
    ``"hoarder_stabilized"`` when hoarders keep the system alive up to the cap
    (``m_crash`` is inf).
    """

    m_crash: float
    bracket: tuple
    evaluations: int
    status: str = "crash"

    @property
    def hoarder_stabilized(self) -> bool:
        return self.status == "hoarder_stabilized"


def crash_threshold(p: Population, a: float = 0.0, width: float = 0.05, cap: float = 128.0,
                    m_start: float = 0.25, tol: ToleranceConfig = DEFAULT_TOLERANCES) -> CrashSearchResult:
    """Bisect on the money supply for the crash point of the greatest equilibrium."""
    validate_population(p)
    require_payoff_heterogeneous(p)
    if not width > 0:
        raise ParameterRangeError("width must be positive")
    evals = 0

    def alive(m):
        nonlocal evals
        evals += 1
        return find_equilibrium(p, m, a, tol).nontrivial

    m_lo = m_start
    if not alive(m_lo):
        return CrashSearchResult(0.0, (0.0, m_lo), evals, "no_equilibrium")
    m_hi = 2 * m_lo
    while alive(m_hi):
        m_lo = m_hi
        if m_hi >= cap:
            if p.hoarder_fraction > 0:
                return CrashSearchResult(math.inf, (m_lo, math.inf), evals, "hoarder_stabilized")
            raise NoUpperBound(f"no crash found up to m={cap}")
        m_hi = min(2 * m_hi, cap)
    while m_hi - m_lo > width:
        mid = 0.5 * (m_lo + m_hi)
        if alive(mid):
            m_lo = mid
        else:
            m_hi = mid
    if not alive(m_lo) or alive(m_hi):
        raise AssertionError(f"crash bracket ({m_lo}, {m_hi}) failed verification")
    return CrashSearchResult(0.5 * (m_lo + m_hi), (m_lo, m_hi), evals, "crash")


@dataclass
class SweepRow:
    x: float
    result: EquilibriumResult | None
    error: str | None = None

    @property
    def welfare(self):
        return self.result.welfare if self.result is not None else None

    @property
    def crashed(self) -> bool:
        return self.result is None or self.result.crashed


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SCRIPSIM_THREADS", "1")))
    except ValueError:
        return 1


def _run_rows(fn, xs):
    def row(x):
        try:
            return SweepRow(x, fn(x))
        except ScripError as exc:
            return SweepRow(x, None, f"{type(exc).__name__}: {exc}")

    n = _threads()
    if n == 1:
        return [row(x) for x in xs]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(row, xs))


def _check_grid(grid, lo=None, hi=None):
    grid = [float(x) for x in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ParameterRangeError("grid must be strictly increasing")
    if lo is not None and any(x < lo for x in grid):
        raise ParameterRangeError(f"grid values must be >= {lo}")
    if hi is not None and any(x >= hi for x in grid):
        raise ParameterRangeError(f"grid values must be < {hi}")
    return grid


def sweep_money(p: Population, a: float, m_grid, tol: ToleranceConfig = DEFAULT_TOLERANCES) -> list:
    grid = _check_grid(m_grid)
    if any(m <= 0 for m in grid):
        raise ParameterRangeError("money grid must be positive")
    return _run_rows(lambda m: find_equilibrium(p, m, a, tol), grid)


def sweep_altruists(p: Population, m: float, a_grid, tol: ToleranceConfig = DEFAULT_TOLERANCES) -> list:
    grid = _check_grid(a_grid, 0.0, 1.0)
    return _run_rows(lambda a: find_equilibrium(p, m, a, tol), grid)


def sweep_hoarders(p_base: Population, m: float, fh_grid, a: float = 0.0, tol: ToleranceConfig = DEFAULT_TOLERANCES) -> list:
    """Greatest equilibrium as the hoarder share grows at fixed money per moneyed agent."""
    grid = _check_grid(fh_grid, 0.0, 1.0 - p_base.altruist_fraction)
    return _run_rows(lambda fh: find_equilibrium(p_base.with_hoarders(fh), m, a, tol), grid)
