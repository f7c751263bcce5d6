import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq, minimize

from scripsim.core import INFINITE, DivergentMean, Infeasible, StrategyMix
from scripsim.maxent import (
    build_distribution,
    entropy_of,
    mean_money_for_threshold,
    solve_lambda,
    solve_mix,
    threshold_row,
)


def brute_mean(k, lam):
    w = [lam ** i for i in range(k + 1)]
    return sum(i * x for i, x in enumerate(w)) / sum(w)


def test_single_threshold_closed_form():
    # mean of S_2 is (l + 2 l^2) / (1 + l + l^2); = 1/2 solves 3 l^2 + l - 1 = 0
    lam = solve_lambda(StrategyMix({2: 1.0}), 0.5)
    assert lam == pytest.approx((-1 + math.sqrt(13)) / 6, abs=1e-10)
    sol = solve_mix({2: 1.0}, 0.5)
    l = (-1 + math.sqrt(13)) / 6
    assert sol.aggregate == pytest.approx(np.array([1, l, l * l]) / (1 + l + l * l), abs=1e-10)


def test_hoarders_only():
    sol = solve_mix({INFINITE: 1.0}, 3.0)
    assert sol.lam == pytest.approx(0.75, abs=1e-10)
    assert sol.aggregate.sum() == pytest.approx(1.0, abs=1e-11)
    assert np.dot(np.arange(sol.aggregate.size), sol.aggregate) == pytest.approx(3.0, abs=1e-8)


def test_two_type_profile_matches_brentq(two_types):
    sol = build_distribution(two_types, (20, 13), 4.0)
    lam = brentq(lambda x: 0.3 * brute_mean(20, x) + 0.7 * brute_mean(13, x) - 4.0, 0.1, 1.0, xtol=1e-14)
    assert sol.lam == pytest.approx(lam, abs=1e-10)
    assert sol.lam == pytest.approx(0.83146381844, abs=1e-9)
    assert sol.M0 == pytest.approx(0.179237962615, abs=1e-9)
    assert sol.tau == pytest.approx(0.012871012325, abs=1e-9)


def test_infeasible_and_divergent():
    with pytest.raises(Infeasible):
        solve_lambda(StrategyMix({3: 1.0}), 3.0)
    with pytest.raises(Infeasible):
        solve_lambda(StrategyMix({3: 1.0}), 0.0)
    with pytest.raises(DivergentMean):
        mean_money_for_threshold(INFINITE, 1.0)
    with pytest.raises(DivergentMean):
        threshold_row(INFINITE, 1.2)


def test_large_lambda_is_stable():
    row = threshold_row(400, 50.0)
    assert np.all(np.isfinite(row))
    assert row.sum() == pytest.approx(1.0)


def test_matches_numerical_entropy_maximum():
    mix = {2: 0.4, 4: 0.6}
    m = 1.5
    idx = [(k, i) for k in mix for i in range(k + 1)]

    def neg_h(x):
        x = np.clip(x, 1e-15, None)
        return float(np.sum(x * np.log(x)))

    cons = [{"type": "eq", "fun": lambda x, k=k: sum(x[j] for j, (kk, _) in enumerate(idx) if kk == k) - mix[k]} for k in mix]
    cons.append({"type": "eq", "fun": lambda x: sum(i * x[j] for j, (_, i) in enumerate(idx)) - m})
    x0 = np.array([mix[k] / (k + 1) for k, _ in idx])
    res = minimize(neg_h, x0, constraints=cons, bounds=[(1e-12, 1)] * len(idx), method="SLSQP",
                   options={"ftol": 1e-14, "maxiter": 500})
    sol = solve_mix(mix, m)
    got = np.concatenate([sol.rows[k] for k in mix])
    assert got == pytest.approx(res.x, abs=1e-5)


def _perturb(rows, rng, steps=5):
    """Random moves that keep each row's mass and the overall mean."""
    rows = {k: r.copy() for k, r in rows.items()}
    keys = [k for k in rows if len(rows[k]) >= 3]
    for _ in range(steps):
        k = keys[rng.integers(len(keys))]
        r = rows[k]
        i = rng.integers(0, len(r) - 2)
        eps = rng.uniform(-1, 1) * 0.5 * min(r[i], r[i + 2], r[i + 1] / 2)
        r[i] += eps
        r[i + 1] -= 2 * eps
        r[i + 2] += eps
    return rows


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(2, 30), st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.integers(0, 10**6))
def test_entropy_beats_perturbations(k1, k2, w, frac, seed):
    mix = StrategyMix({k1: w, k2: 1 - w}) if k1 != k2 else StrategyMix({k1: 1.0})
    m = frac * mix.max_mean
    sol = solve_mix(mix, m)
    h = entropy_of(sol)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        rows = _perturb(sol.rows, rng)
        assert min(r.min() for r in rows.values()) >= 0
        assert sum(np.dot(np.arange(len(r)), r) for r in rows.values()) == pytest.approx(m, abs=1e-9)
        assert entropy_of(rows.values()) <= h + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.integers(0, 60), st.floats(0.01, 1.0), min_size=1, max_size=4), st.floats(0.01, 0.99))
def test_constraints_hold(weights, frac):
    total = sum(weights.values())
    mix = StrategyMix({k: v / total for k, v in weights.items()})
    if mix.max_mean == 0:
        return
    m = frac * mix.max_mean
    sol = solve_mix(mix, m)
    for k, r in sol.rows.items():
        assert r.sum() == pytest.approx(mix[k], abs=1e-12)
    assert np.dot(np.arange(sol.aggregate.size), sol.aggregate) == pytest.approx(m, abs=1e-9 * (1 + m))
    assert sol.aggregate.sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.floats(0.01, 0.49), st.floats(0.5, 0.99))
def test_lambda_increases_with_money(k, f1, f2):
    mix = StrategyMix({k: 1.0})
    assert solve_lambda(mix, f1 * k) < solve_lambda(mix, f2 * k)
