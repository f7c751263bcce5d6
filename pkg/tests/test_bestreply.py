import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scripsim.bestreply import (
    EnvironmentRates,
    best_reply_profile,
    best_threshold,
    environment_rates,
    find_equilibrium,
    value_iteration,
)
from scripsim.core import AgentType, NotPayoffHeterogeneous, ParameterRangeError, Population, ThresholdUnbounded


def dense_policy_values(t, r, k, K):
    """Values of 'work iff money < k' on 0..K, by a dense linear solve."""
    D = t.delta ** (1 / r.n)
    p, q, a = r.p_req, r.p_earn, r.a
    A = np.eye(K + 1)
    b = np.zeros(K + 1)
    for i in range(K + 1):
        # request: free with prob a, else pay if possible
        A[i, i] -= p * a * D
        b[i] += p * a * t.gamma
        if i >= 1:
            A[i, i - 1] -= p * (1 - a) * D
            b[i] += p * (1 - a) * t.gamma
        else:
            A[i, i] -= p * (1 - a) * D
        # no request: maybe volunteer
        if i < k:
            A[i, i] -= (1 - p) * (1 - q) * D
            A[i, min(i + 1, K)] -= (1 - p) * q * D
            b[i] -= (1 - p) * q * t.alpha
        else:
            A[i, i] -= (1 - p) * D
    return np.linalg.solve(A, b)


def oracle_threshold(t, r, K):
    vals = np.array([dense_policy_values(t, r, k, K) for k in range(K)])
    best = vals.max(axis=0)
    # the optimal threshold policy is optimal from every starting point
    for k in range(K):
        if np.all(vals[k] >= best - 1e-9 * max(1, np.abs(best).max())):
            return k
    raise AssertionError("no uniformly optimal threshold")


@pytest.mark.parametrize("alpha,delta,n,M0,tau,a", [
    (0.05, 0.95, 20, 0.2, 0.05, 0.0),
    (0.15, 0.95, 20, 0.2, 0.05, 0.0),
    (0.1, 0.9, 10, 0.4, 0.1, 0.3),
    (0.3, 0.99, 50, 0.3, 0.02, 0.1),
    (0.05, 0.5, 10, 0.1, 0.1, 0.0),
])
def test_threshold_matches_dense_enumeration(alpha, delta, n, M0, tau, a):
    t = AgentType(alpha, 1, 1, delta, 1)
    r = EnvironmentRates.from_distribution(n, M0, tau, a)
    K = 120
    assert best_threshold(t, r, K) == oracle_threshold(t, r, K)


def test_value_and_policy_iteration_agree():
    t = AgentType(0.1, 1, 1, 0.9, 1)
    r = EnvironmentRates.from_distribution(10, 0.3, 0.05)
    vp = value_iteration(t, r, 60, method="policy")
    vv = value_iteration(t, r, 60, tol=1e-12, method="value")
    assert vp.threshold == vv.threshold
    assert vp.values == pytest.approx(vv.values, rel=1e-8, abs=1e-8)
    assert vp.is_monotone


def test_policy_values_match_dense():
    t = AgentType(0.05, 1, 1, 0.95, 1)
    r = EnvironmentRates.from_distribution(20, 0.2, 0.05, 0.2)
    vf = value_iteration(t, r, 80)
    dense = dense_policy_values(t, r, vf.threshold, 80)
    assert vf.values == pytest.approx(dense, rel=1e-9)


def test_myopic_agent_never_works():
    for n in (100, 1000):
        for alpha in (0.05, 0.1):
            r = EnvironmentRates.from_distribution(n, 0.2, 0.05)
            assert best_threshold(AgentType(alpha, 1, 1, 1e-9, 1), r) == 0


def test_threshold_unbounded():
    r = EnvironmentRates.from_distribution(10, 0.2, 0.05)
    with pytest.raises(ThresholdUnbounded):
        best_threshold(AgentType(0.001, 1, 1, 0.999999, 1), r, k_max=4, cap=8)


def test_rates():
    r = EnvironmentRates.from_distribution(1000, 0.2, 0.1, 0.5)
    assert r.p_req == 1e-3
    assert r.p_earn == pytest.approx(0.5 * 0.8 / (1000 * 0.9))
    with pytest.raises(ParameterRangeError):
        EnvironmentRates.from_distribution(1000, 0.2, 0.1, 1.0)


def test_two_cost_equilibrium(two_types):
    res = find_equilibrium(two_types, 4.0)
    assert res.profile == (20, 13)
    assert not res.crashed
    steps = res.iterations
    for prev, nxt in zip(steps, steps[1:]):
        assert all(b <= a for a, b in zip(prev, nxt))
    assert best_reply_profile(two_types, res.profile, 4.0) == res.profile


def test_equilibrium_requires_shared_beta_rho():
    p = Population.from_pairs([((.05, 1, 1, .95, 1), .5), ((.05, .5, 1, .95, 1), .5)], n=100)
    with pytest.raises(NotPayoffHeterogeneous):
        find_equilibrium(p, 2.0)


def test_crash_at_huge_money(two_types):
    res = find_equilibrium(two_types, 100.0)
    assert res.crashed
    assert res.profile == (0, 0)
    assert res.welfare.per_round == 0


def test_mostly_hoarders():
    p = Population((AgentType(.05, 1, 1, .95, 1),), (0.1,), n=100, hoarder_fraction=0.9)
    res = find_equilibrium(p, 2.0)
    assert not res.crashed
    assert res.solution.mix.hoarder_mass == pytest.approx(0.9)


agent = st.builds(
    AgentType,
    alpha=st.floats(0.01, 0.4),
    beta=st.just(1.0),
    gamma=st.floats(1.0, 2.0),
    delta=st.floats(0.8, 0.99),
    rho=st.just(1.0),
)


@settings(max_examples=25, deadline=None)
@given(st.lists(agent, min_size=2, max_size=3), st.integers(20, 400), st.data())
def test_best_replies_are_monotone(types, n, data):
    fr = np.full(len(types), 1 / len(types))
    p = Population(tuple(types), tuple(fr), n=n)
    lo = tuple(data.draw(st.integers(1, 40)) for _ in types)
    hi = tuple(k + data.draw(st.integers(0, 20)) for k in lo)
    m = data.draw(st.floats(0.1, 0.9)) * float(np.dot(fr, lo))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b_lo = best_reply_profile(p, lo, m)
        b_hi = best_reply_profile(p, hi, m)
    assert all(x <= y for x, y in zip(b_lo, b_hi))


def test_environment_rates_use_distribution(two_types):
    r = environment_rates(two_types, (20, 13), 4.0)
    assert r.M0 == pytest.approx(0.179237962615, abs=1e-9)
    assert r.solution.lam == pytest.approx(0.83146381844, abs=1e-9)
