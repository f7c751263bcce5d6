"""scikit-learn style front ends for strategy inference and equilibrium search."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .bestreply import find_equilibrium
from .core import ParameterRangeError, Population, ToleranceConfig
from .inference import ObservedDistribution, minimal_explanation
from .simulator import compare_to_prediction


def _as_distribution(X, sample_size=None) -> ObservedDistribution:
    X = check_array(X, ensure_2d=False, dtype=np.float64)
    if X.ndim == 2:
        if 1 not in X.shape:
            raise ValueError(f"expected a single distribution, got shape {X.shape}")
        X = X.ravel()
    total = X.sum()
    if abs(total - 1) > 1e-6:
        if np.allclose(X, np.round(X)):
            return ObservedDistribution.from_counts(X)
        raise ParameterRangeError(f"expected fractions summing to 1 or integer counts, got total {total}")
    return ObservedDistribution(X, sample_size=sample_size)


class StrategyInference(BaseEstimator):
    """Fit the minimal threshold explanation to an observed money distribution.

    ``X`` is a 1-D array of fractions (or integer counts, which also set the
    sample size and switch to the noise-tolerant fit).

    Attributes
    ----------
    lambda_ : float
    support_ : tuple of thresholds in use
    pi_ : dict threshold -> fraction of agents
    residual_ : L2 distance between the rebuilt and observed distributions
    """

    def __init__(self, ratio_tol=None, residual_tol=None, noisy=None):
        self.ratio_tol = ratio_tol
        self.residual_tol = residual_tol
        self.noisy = noisy

    def fit(self, X, y=None, sample_size=None):
        obs = _as_distribution(X, sample_size)
        exp = minimal_explanation(obs, tol=self.ratio_tol, residual_tol=self.residual_tol, noisy=self.noisy)
        self.explanation_ = exp
        self.lambda_ = exp.lam
        self.support_ = exp.support
        self.pi_ = dict(exp.pi)
        self.residual_ = exp.residual
        self.mean_money_ = obs.mean
        return self

    def predict(self, X=None):
        """Max-ent distribution rebuilt from the fitted explanation."""
        check_is_fitted(self, "explanation_")
        return self.explanation_.rebuilt.copy()

    def score(self, X, y=None):
        check_is_fitted(self, "explanation_")
        return -compare_to_prediction(_as_distribution(X).M, self.explanation_.rebuilt)


class EquilibriumSolver(BaseEstimator):
    """Greatest threshold equilibrium of a population as a function of money supply."""

    def __init__(self, population: Population | None = None, a=0.0, k_max=200, lambda_tol=1e-12, vi_tol=1e-10):
        self.population = population
        self.a = a
        self.k_max = k_max
        self.lambda_tol = lambda_tol
        self.vi_tol = vi_tol

    def _tol(self):
        return ToleranceConfig(lambda_bisection_tol=self.lambda_tol, value_iteration_tol=self.vi_tol,
                               k_max_initial=self.k_max)

    def fit(self, X, y=None):
        """``X`` is the average money per agent."""
        if self.population is None:
            raise ValueError("population is required")
        m = float(np.asarray(X, dtype=float).ravel()[0])
        res = find_equilibrium(self.population, m, self.a, self._tol())
        self.result_ = res
        self.profile_ = res.profile
        self.crashed_ = res.crashed
        self.lambda_ = res.lam
        self.welfare_ = res.welfare.per_round
        return self

    def predict(self, X):
        """Thresholds of the greatest equilibrium for each money level in ``X``."""
        check_is_fitted(self, "result_")
        ms = np.asarray(X, dtype=float).ravel()
        tol = self._tol()
        return np.array([find_equilibrium(self.population, m, self.a, tol).profile for m in ms], dtype=int)
