"""Round-by-round Monte Carlo of the scrip protocol and an exact chain for tiny systems."""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction

import numba
import numpy as np

from .core import (
    AgentType,
    ConfigError,
    NotPayoffHeterogeneous,
    Population,
    ScripError,
    StateSpaceTooLarge,
    validate_population,
)
from .maxent import MaxEntSolution

STANDARD, HOARDER, ALTRUIST = 0, 1, 2
DEFAULT_SEED = 20070613
_NO_CAP = np.iinfo(np.int64).max


@dataclass
class SimConfig:
    population: Population
    thresholds: tuple
    m: float
    rounds: int = 1_000_000
    burn_in: int | None = None
    seed: int = DEFAULT_SEED
    record_interval: int = 100
    hoarders_request: bool = True

    def __post_init__(self):
        try:
            validate_population(self.population)
        except ScripError as exc:
            raise ConfigError(str(exc)) from exc
        self.thresholds = tuple(int(k) for k in self.thresholds)
        if len(self.thresholds) != self.population.n_types:
            raise ConfigError("one threshold per standard type is required")
        if any(k < 0 for k in self.thresholds):
            raise ConfigError("thresholds must be >= 0")
        if not self.m >= 0:
            raise ConfigError("m must be >= 0")
        if self.rounds < 0 or self.record_interval < 1:
            raise ConfigError("rounds must be >= 0 and record_interval >= 1")
        if self.burn_in is None:
            self.burn_in = max(1_000_000, 100 * self.population.n)
        if self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")


@dataclass
class SimResult:
    distribution: np.ndarray
    welfare_rate: float
    a_hat: float
    trades: int
    free_services: int
    requests: int
    final_money: np.ndarray
    type_utility_rate: np.ndarray
    discounted_utility: np.ndarray
    total_money: int
    samples: int
    seed: int
    rounds: int
    burn_in: int
    roles: np.ndarray = field(repr=False)
    agent_types: np.ndarray = field(repr=False)

    def metadata(self) -> dict:
        return {
            "seed": self.seed,
            "rounds": self.rounds,
            "burn_in": self.burn_in,
            "samples": self.samples,
            "total_money": self.total_money,
            "a_hat": self.a_hat,
            "welfare_rate": self.welfare_rate,
            "trades": self.trades,
            "free_services": self.free_services,
            "requests": self.requests,
            "type_utility_rate": [float(u) for u in self.type_utility_rate],
            "discounted_utility": [float(u) for u in self.discounted_utility],
        }


def _apportion(fracs, n):
    """Largest-remainder rounding of fractions to integer counts summing to n."""
    raw = np.asarray(fracs, dtype=float) * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def realize_agents(p: Population):
    """Per-agent role and type index (hoarders get index n_types, altruists n_types+1)."""
    counts = _apportion([*p.fractions, p.hoarder_fraction, p.altruist_fraction], p.n)
    roles, types = [], []
    for i, c in enumerate(counts[:-2]):
        roles += [STANDARD] * c
        types += [i] * c
    roles += [HOARDER] * counts[-2]
    types += [p.n_types] * counts[-2]
    roles += [ALTRUIST] * counts[-1]
    types += [p.n_types + 1] * counts[-1]
    return np.array(roles, dtype=np.int64), np.array(types, dtype=np.int64)


@numba.njit(cache=True)
def _run(seed, money, cap, role, tix, beta, rho_cum, alpha, gamma, discount, common_beta,
         altruists, rounds, burn_in, record_interval, n_groups):
    np.random.seed(seed)
    n = money.shape[0]
    total = money.sum()
    hist = np.zeros(total + 1, dtype=np.int64)
    pool = np.empty(n, dtype=np.int64)
    pos = -np.ones(n, dtype=np.int64)
    size = 0
    for i in range(n):
        if role[i] != 2:
            hist[money[i]] += 1
            if money[i] < cap[i]:
                pool[size] = i
                pos[i] = size
                size += 1
    n_alt = altruists.shape[0]
    acc = np.zeros(total + 1)
    samples = 0
    welfare = 0.0
    utility = np.zeros(n_groups)
    disc_utility = np.zeros(n_groups)
    disc = np.ones(n_groups)
    trades = 0
    free = 0
    paid_requests = 0
    free_to_paying = 0
    requests = 0
    cand = np.empty(n, dtype=np.int64)
    rho_total = rho_cum[-1]
    for t in range(burn_in + rounds):
        recording = t >= burn_in
        if recording:
            if t > burn_in:
                for g in range(n_groups):
                    disc[g] *= discount[g]
            if (t - burn_in) % record_interval == 0:
                for j in range(total + 1):
                    acc[j] += hist[j]
                samples += 1
        if rho_total <= 0:
            continue
        u = np.searchsorted(rho_cum, np.random.random() * rho_total, side="right")
        if u >= n:
            u = n - 1
        has_money = money[u] >= 1
        # candidates: altruists, plus willing moneyed agents when the requester can pay
        m_pool = size if has_money else 0
        n_cand = n_alt + m_pool
        if m_pool > 0 and pos[u] >= 0:
            n_cand -= 1
        if recording:
            requests += 1
            if has_money:
                paid_requests += 1
        if n_cand <= 0:
            continue
        v = -1
        if common_beta > 0:
            if common_beta < 1.0 and np.random.random() >= 1.0 - (1.0 - common_beta) ** n_cand:
                continue
            while True:
                j = np.random.randint(0, n_alt + m_pool)
                v = altruists[j] if j < n_alt else pool[j - n_alt]
                if v != u:
                    break
        else:
            c = 0
            for j in range(n_alt + m_pool):
                w = altruists[j] if j < n_alt else pool[j - n_alt]
                if w != u and np.random.random() < beta[w]:
                    cand[c] = w
                    c += 1
            if c == 0:
                continue
            v = cand[np.random.randint(0, c)]
        gu = tix[u]
        gv = tix[v]
        gain = gamma[gu]
        if role[v] == 2:
            cost = 0.0
        else:
            cost = alpha[gv]
        if recording:
            welfare += gain - cost
            utility[gu] += gain
            utility[gv] -= cost
            disc_utility[gu] += disc[gu] * gain
            disc_utility[gv] -= disc[gv] * cost
        if role[v] == 2:
            if recording:
                free += 1
                if has_money:
                    free_to_paying += 1
            continue
        if recording:
            trades += 1
        # $1 moves u -> v
        for a_ in (u, v):
            hist[money[a_]] -= 1
        money[u] -= 1
        money[v] += 1
        for a_ in (u, v):
            hist[money[a_]] += 1
            if money[a_] < cap[a_]:
                if pos[a_] < 0:
                    pool[size] = a_
                    pos[a_] = size
                    size += 1
            elif pos[a_] >= 0:
                last = pool[size - 1]
                pool[pos[a_]] = last
                pos[last] = pos[a_]
                pos[a_] = -1
                size -= 1
    return acc, samples, welfare, utility, disc_utility, trades, free, paid_requests, free_to_paying, requests


def run_simulation(cfg: SimConfig) -> SimResult:
    """Simulate the protocol; reproducible for a given seed."""
    p = cfg.population
    role, tix = realize_agents(p)
    n = role.shape[0]
    T = p.n_types
    ht = p.hoarder_type
    group_types = list(p.types) + [ht or AgentType(0.0, 1.0, 1.0, 0.5, 1.0), None]
    alpha = np.array([t.alpha if t else 0.0 for t in group_types])
    gamma = np.array([t.gamma if t else 0.0 for t in group_types])
    if ht is None:
        gamma[T] = 0.0
    beta_g = np.array([t.beta if t else 1.0 for t in group_types])
    rho_g = np.array([t.rho if t else 0.0 for t in group_types])
    discount = np.array([t.delta ** (1.0 / p.n) if t else 1.0 for t in group_types])

    cap = np.empty(n, dtype=np.int64)
    for i in range(n):
        cap[i] = cfg.thresholds[tix[i]] if role[i] == STANDARD else _NO_CAP
    beta = beta_g[tix]
    rho = rho_g[tix].copy()
    rho[role == ALTRUIST] = 0.0
    if not cfg.hoarders_request:
        rho[role == HOARDER] = 0.0
    rho_cum = np.cumsum(rho)

    moneyed = np.flatnonzero(role != ALTRUIST)
    total = int(round(cfg.m * moneyed.size))
    rng = np.random.default_rng(cfg.seed)
    money = np.zeros(n, dtype=np.int64)
    if moneyed.size:
        base = total // moneyed.size
        money[moneyed] = base
        extra = total - base * moneyed.size
        money[rng.choice(moneyed, size=extra, replace=False)] += 1
    elif total:
        raise ConfigError("no agent can hold money")

    betas = {float(b) for b in beta[role != ALTRUIST]} | {float(b) for b in beta[role == ALTRUIST]}
    common = betas.pop() if len(betas) == 1 else -1.0
    altruists = np.flatnonzero(role == ALTRUIST).astype(np.int64)
    inner_seed = int(rng.integers(0, 2**31 - 1))
    acc, samples, welfare, utility, disc_u, trades, free, paid_req, free_paying, requests = _run(
        inner_seed, money, cap, role, tix, beta, rho_cum, alpha, gamma, discount, common,
        altruists, int(cfg.rounds), int(cfg.burn_in), int(cfg.record_interval), T + 2)

    if samples:
        dist = acc / samples / max(moneyed.size, 1)
    else:
        dist = np.bincount(money[moneyed], minlength=total + 1) / max(moneyed.size, 1)
    nz = np.flatnonzero(dist)
    dist = dist[: nz[-1] + 1] if nz.size else dist[:1]
    counts = np.bincount(tix, minlength=T + 2).astype(float)
    time_units = cfg.rounds / p.n if cfg.rounds else 1.0
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = np.where(counts > 0, utility / counts / time_units, 0.0)
        disc_per_agent = np.where(counts > 0, disc_u / counts, 0.0)
    return SimResult(
        distribution=dist,
        welfare_rate=welfare / cfg.rounds if cfg.rounds else 0.0,
        a_hat=free_paying / paid_req if paid_req else 0.0,
        trades=int(trades),
        free_services=int(free),
        requests=int(requests),
        final_money=money,
        type_utility_rate=rate,
        discounted_utility=disc_per_agent,
        total_money=total,
        samples=int(samples),
        seed=cfg.seed,
        rounds=cfg.rounds,
        burn_in=cfg.burn_in,
        roles=role,
        agent_types=tix,
    )


def _as_vector(x) -> np.ndarray:
    if isinstance(x, SimResult):
        return x.distribution
    if isinstance(x, MaxEntSolution):
        return x.aggregate
    return np.asarray(x, dtype=float)


def compare_to_prediction(res, sol) -> float:
    """L2 distance between two money distributions, zero-padding the shorter."""
    a, b = _as_vector(res), _as_vector(sol)
    size = max(a.size, b.size)
    a = np.pad(a, (0, size - a.size))
    b = np.pad(b, (0, size - b.size))
    return float(np.linalg.norm(a - b))


@dataclass
class ExactChainResult:
    states: list
    transitions: dict = field(repr=False)
    stationary: np.ndarray
    symmetry_residual: Fraction
    uniform_stationary: bool
    marginal: list
    pooled_marginal: list

    @property
    def n_states(self) -> int:
        return len(self.states)

    def matrix(self) -> np.ndarray:
        index = {s: i for i, s in enumerate(self.states)}
        P = np.zeros((len(self.states), len(self.states)))
        for s, row in self.transitions.items():
            for s2, pr in row.items():
                P[index[s], index[s2]] = float(pr)
        return P


def _count_allocations(caps, total):
    ways = [1] + [0] * total
    for c in caps:
        new = [0] * (total + 1)
        for t in range(total + 1):
            if ways[t]:
                for x in range(min(c, total - t) + 1):
                    new[t + x] += ways[t]
        ways = new
    return ways[total]


def _choice_probs(willing, betas):
    """Probability each willing agent ends up serving: uniform among the able ones."""
    ws = list(willing)
    if not ws:
        return {}
    bs = [betas[v] for v in ws]
    if len(set(bs)) == 1:
        b = bs[0]
        pr = (1 - (1 - b) ** len(ws)) / len(ws)
        return {v: pr for v in ws}
    out = {v: Fraction(0) for v in ws}
    for mask in itertools.product((0, 1), repeat=len(ws)):
        size = sum(mask)
        if size == 0:
            continue
        pr = Fraction(1)
        for bit, b in zip(mask, bs):
            pr *= b if bit else 1 - b
        for bit, v in zip(mask, ws):
            if bit:
                out[v] += pr / size
    return out


def exact_chain(agents, thresholds, total_money: int, check: bool = True, max_states: int = 10**6) -> ExactChainResult:
    """Exact one-round transition matrix over money allocations of a tiny system.

    ``agents`` is one :class:`AgentType` per agent (or a :class:`Population`,
    realized by count). Probabilities are exact rationals built from the float
    values of ``beta`` and ``rho``.
    """
    if isinstance(agents, Population):
        _, tix = realize_agents(agents)
        agents = [agents.types[i] for i in tix]
    agents = list(agents)
    caps = [int(k) for k in thresholds]
    n = len(agents)
    if len(caps) != n:
        raise ConfigError("one threshold per agent is required")
    if check and (len({a.beta for a in agents}) > 1 or len({a.rho for a in agents}) > 1):
        raise NotPayoffHeterogeneous("agents differ in beta or rho; the chain is not symmetric")
    if total_money < 0 or total_money > sum(caps):
        raise ConfigError(f"total money {total_money} cannot be held under caps {caps}")
    if _count_allocations(caps, total_money) > max_states:
        raise StateSpaceTooLarge(f"more than {max_states} allocations")

    betas = [Fraction(a.beta) for a in agents]
    rhos = [Fraction(a.rho) for a in agents]
    rho_total = sum(rhos)

    start, left = [], total_money
    for c in caps:
        x = min(c, left)
        start.append(x)
        left -= x
    start = tuple(start)

    transitions = {}
    seen = {start}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        row = {}
        stay = Fraction(1)
        for u in range(n):
            if s[u] == 0:
                continue
            willing = [v for v in range(n) if v != u and s[v] < caps[v]]
            for v, pr in _choice_probs(willing, betas).items():
                nxt = list(s)
                nxt[u] -= 1
                nxt[v] += 1
                nxt = tuple(nxt)
                p_move = rhos[u] / rho_total * pr
                row[nxt] = row.get(nxt, Fraction(0)) + p_move
                stay -= p_move
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        if stay:
            row[s] = row.get(s, Fraction(0)) + stay
        transitions[s] = row

    states = sorted(transitions)
    residual = Fraction(0)
    col = {s: Fraction(0) for s in states}
    for s, row in transitions.items():
        if sum(row.values()) != 1:
            raise AssertionError(f"row {s} does not sum to 1")
        for s2, pr in row.items():
            col[s2] += pr
            residual = max(residual, abs(pr - transitions[s2].get(s, Fraction(0))))
    uniform = all(c == 1 for c in col.values())

    N = len(states)
    index = {s: i for i, s in enumerate(states)}
    P = np.zeros((N, N))
    for s, row in transitions.items():
        for s2, pr in row.items():
            P[index[s], index[s2]] = float(pr)
    A = np.vstack([P.T - np.eye(N), np.ones(N)])
    b = np.zeros(N + 1)
    b[-1] = 1.0
    stationary = np.linalg.lstsq(A, b, rcond=None)[0]

    top = max(caps) if caps else 0
    marginal = []
    for i in range(n):
        counts = [0] * (top + 1)
        for s in states:
            counts[s[i]] += 1
        marginal.append([Fraction(c, N) for c in counts])
    pooled = [sum(mg[j] for mg in marginal) / n for j in range(top + 1)]
    return ExactChainResult(states, transitions, stationary, residual, uniform, marginal, pooled)
