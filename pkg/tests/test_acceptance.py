"""End-to-end acceptance checks, one per criterion.

Each test prints a single PASS/FAIL line (visible with ``pytest -v`` since the
printing bypasses capture) and then asserts.
"""
import itertools
import time
import warnings

import numpy as np
import pytest

from scripsim.bestreply import best_reply_profile, find_equilibrium
from scripsim.core import AgentType, Population, StrategyMix, two_cost_population
from scripsim.inference import ObservedDistribution, enumerate_explanations, minimal_explanation
from scripsim.maxent import build_distribution, entropy_of, solve_mix
from scripsim.simulator import SimConfig, compare_to_prediction, exact_chain, run_simulation
from scripsim.welfare import crash_threshold, sweep_altruists, sweep_hoarders, sweep_money


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def pop():
    return two_cost_population()


def test_01_two_cost_equilibrium(pop, report):
    t0 = time.perf_counter()
    res = find_equilibrium(pop, 4.0)
    dt = time.perf_counter() - t0
    ok = all(abs(k - e) <= 1 for k, e in zip(res.profile, (20, 13))) and dt < 10
    report(1, ok, f"thresholds {res.profile} (target (20,13) +-1) in {dt:.2f}s")


def test_02_infer_two_cost_distribution(pop, report):
    M = build_distribution(pop, (20, 13), 4.0).aggregate
    t0 = time.perf_counter()
    exp = minimal_explanation(M)
    dt = time.perf_counter() - t0
    r = ObservedDistribution(M).ratios
    first_break = int(np.flatnonzero(r < exp.lam * (1 - 1e-6))[0]) + 1
    ok = (set(exp.support) == {13, 20} and first_break == 14 and abs(exp.pi[13] - 0.7) <= 0.01
          and abs(exp.pi[20] - 0.3) <= 0.01 and dt < 1)
    report(2, ok, f"support {exp.support}, pi {dict(exp.pi)}, break at {first_break}, {dt * 1e3:.1f}ms")


def test_03_uniform_stationarity(report):
    t0 = time.perf_counter()
    checked = bad = 0
    for n in range(1, 5):
        for beta in (1.0, 0.5):
            agents = [AgentType(0.05 * (i + 1), beta, 1 + 0.5 * i, 0.9 - 0.1 * i, 1.0) for i in range(n)]
            for caps in itertools.product(range(4), repeat=n):
                for money in range(min(4, sum(caps)) + 1):
                    res = exact_chain(agents, caps, money)
                    checked += 1
                    bad += res.symmetry_residual != 0 or not res.uniform_stationary
    dt = time.perf_counter() - t0
    report(3, bad == 0 and dt < 300, f"{checked} chains, {bad} violations, {dt:.1f}s")


def test_04_maxent_convergence(report):
    p = Population((AgentType(0.05, 1, 1, 0.95, 1),), (1.0,), n=1000)
    t0 = time.perf_counter()
    res = run_simulation(SimConfig(p, (5,), 2.0, rounds=10_000_000, burn_in=1_000_000))
    dt = time.perf_counter() - t0
    d = compare_to_prediction(res, build_distribution(p, (5,), 2.0))
    report(4, d < 0.02 and dt < 300, f"L2 = {d:.5f} after 1e7 rounds in {dt:.1f}s")


def test_05_money_supply_laws(pop, report):
    grid = np.round(np.arange(0.25, 12.0001, 0.25), 12)
    rows = sweep_money(pop, 0.0, grid)
    first = next((i for i, r in enumerate(rows) if r.crashed), None)
    alive = rows[:first] if first is not None else rows
    mono_k = all(all(y <= x for x, y in zip(a.result.profile, b.result.profile)) for a, b in zip(alive, alive[1:]))
    mono_w = all(b.welfare.per_round >= a.welfare.per_round - 1e-12 for a, b in zip(alive, alive[1:]))
    c = crash_threshold(pop, width=0.05)
    lo, hi = c.bracket
    verified = find_equilibrium(pop, lo).nontrivial and find_equilibrium(pop, hi).crashed
    ok = first is not None and mono_k and mono_w and hi - lo <= 0.05 and verified
    crash_at = rows[first].x if first is not None else None
    report(5, ok, f"first crashed row m={crash_at}, thresholds monotone={mono_k}, welfare monotone={mono_w}, "
                  f"crash bracket ({lo:.5f}, {hi:.5f})")


def test_06_altruists(report):
    p = Population((AgentType(0.05, 1, 1, 0.95, 1),), (1.0,), n=1000)
    rows = sweep_altruists(p, 4.0, np.round(np.arange(0.0, 0.951, 0.05), 12))
    first = next((i for i, r in enumerate(rows) if r.crashed), len(rows))
    w = [r.welfare.per_round for r in rows[:first]]
    ok = len(w) >= 2 and all(b >= a - 1e-12 for a, b in zip(w, w[1:]))
    report(6, ok, f"welfare {w[0]:.4f} -> {w[-1]:.4f} over a in [0, {rows[first - 1].x}], "
                  f"crash row a={rows[first].x if first < len(rows) else None}")


def test_07_hoarders(pop, report):
    rows = sweep_hoarders(pop, 4.0, np.round(np.arange(0.0, 0.301, 0.05), 12))
    assert not any(r.crashed for r in rows)
    prof = [r.result.profile for r in rows]
    util = []
    for r in rows:
        f = np.array(r.result.solution.population.fractions)
        util.append(float(np.dot(f, r.result.welfare.per_type_utility) / f.sum()))
    per_type = np.array([r.result.welfare.per_type_utility for r in rows])
    mono_k = all(all(y >= x for x, y in zip(a, b)) for a, b in zip(prof, prof[1:]))
    mono_u = all(b <= a + 1e-12 for a, b in zip(util, util[1:])) and bool(np.all(np.diff(per_type, axis=0) <= 1e-12))
    stab = {fh: crash_threshold(pop.with_hoarders(fh)).status for fh in (0.05, 0.1, 0.2)}
    ok = mono_k and mono_u and all(s == "hoarder_stabilized" for s in stab.values())
    report(7, ok, f"thresholds {prof[0]} -> {prof[-1]}, standard utility {util[0]:.4f} -> {util[-1]:.4f}, "
                  f"crash search {stab}")


def test_08_monotone_best_replies(report):
    rng = np.random.default_rng(8)
    violations = 0
    pairs = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(100):
            T = int(rng.integers(2, 5))
            types = tuple(AgentType(float(rng.uniform(0.01, 0.5)), 1.0, float(rng.uniform(1, 3)),
                                    float(rng.uniform(0.7, 0.99)), 1.0) for _ in range(T))
            fr = rng.dirichlet(np.ones(T))
            p = Population(types, tuple(fr / fr.sum()), n=int(rng.integers(10, 1001)))
            lo = rng.integers(1, 50, size=T)
            hi = lo + rng.integers(0, 30, size=T)
            m = float(rng.uniform(0.05, 0.95) * np.dot(p.fractions, lo))
            b_lo = best_reply_profile(p, tuple(lo), m)
            b_hi = best_reply_profile(p, tuple(hi), m)
            pairs += 1
            violations += any(x > y for x, y in zip(b_lo, b_hi))
    report(8, violations == 0, f"{pairs} populations, {violations} violations")


def test_09_explanations(report):
    rng = np.random.default_rng(9)
    worst_count, too_small, trials = 10**9, 0, 0
    for _ in range(20):
        k = int(rng.integers(10, 31))
        s = int(rng.integers(1, 4))
        support = sorted(set(rng.choice(k, size=s - 1, replace=False).tolist()) | {k})
        s = len(support)
        w = rng.uniform(0.2, 1.0, size=s)
        mix = dict(zip(support, w / w.sum()))
        m = float(rng.uniform(0.3, 0.8) * sum(j * p for j, p in mix.items()))
        sol = solve_mix(mix, m)
        minimal = minimal_explanation(sol.aggregate)
        lams = [sol.lam * f for f in (1.0, 1.25, 1.5, 2, 4, 8, 16)]
        found = [e for e in enumerate_explanations(sol.aggregate, lams, tol=1e-12)
                 if not isinstance(e, Exception) and e.residual < 1e-7]
        distinct = {tuple((j, round(v, 8)) for j, v in sorted(e.pi.items())) for e in found}
        worst_count = min(worst_count, len(distinct))
        for e in found:
            if e.support_size > minimal.support_size:
                trials += 1
                too_small += e.support_size < k - s
    ok = worst_count >= 3 and too_small == 0 and trials > 0
    report(9, ok, f"min distinct valid explanations {worst_count}, {trials} non-minimal checked, "
                  f"{too_small} below k - s")


def _random_move(rows, rng):
    keys = list(rows)
    if rng.random() < 0.5 or len(keys) < 2:
        k = keys[rng.integers(len(keys))]
        r = rows[k]
        if len(r) < 3:
            return
        i = int(rng.integers(0, len(r) - 2))
        bound = min(r[i], r[i + 2], r[i + 1] / 2) if rng.random() < 0.5 else min(r[i + 1] / 2, 1.0)
        eps = rng.uniform(-1, 1) * bound
        eps = max(eps, -min(r[i], r[i + 2]))
        r[i] += eps
        r[i + 1] -= 2 * eps
        r[i + 2] += eps
    else:
        k1, k2 = rng.choice(len(keys), size=2, replace=False)
        r1, r2 = rows[keys[k1]], rows[keys[k2]]
        if len(r1) < 2 or len(r2) < 2:
            return
        i = int(rng.integers(0, len(r1) - 1))
        j = int(rng.integers(0, len(r2) - 1))
        # move eps up one level in r1 and down one level in r2
        bound = min(r1[i], r2[j + 1])
        eps = rng.uniform(0, 1) * bound
        r1[i] -= eps
        r1[i + 1] += eps
        r2[j + 1] -= eps
        r2[j] += eps


def test_10_entropy_maximal(report):
    rng = np.random.default_rng(10)
    violations = 0
    for _ in range(20):
        ks = sorted(set(rng.integers(1, 40, size=int(rng.integers(1, 4))).tolist()))
        w = rng.uniform(0.1, 1, size=len(ks))
        mix = StrategyMix(dict(zip(ks, w / w.sum())))
        m = float(rng.uniform(0.1, 0.9) * mix.max_mean)
        sol = solve_mix(mix, m)
        h = entropy_of(sol)
        for _ in range(100):
            rows = {k: r.copy() for k, r in sol.rows.items()}
            for _ in range(int(rng.integers(1, 6))):
                _random_move(rows, rng)
            assert min(r.min() for r in rows.values()) >= -1e-15
            assert sum(np.dot(np.arange(len(r)), r) for r in rows.values()) == pytest.approx(m, abs=1e-9)
            changed = any(not np.allclose(rows[k], sol.rows[k], atol=1e-13, rtol=0) for k in rows)
            violations += changed and entropy_of(rows.values()) >= h
    report(10, violations == 0, f"2000 perturbations, {violations} with entropy >= max-ent")
