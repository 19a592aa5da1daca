"""scikit-learn style wrappers around the distributed solver.

Both estimators fit a linear classifier without intercept on binary labels.
A random share of the rows is held out as validation data for the upper
level, and the remaining rows are spread over the simulated workers.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .engine import DelayModel, RunConfig, simulate_adbo, simulate_sdbo
from .lower_level import LowerConfig
from .problems import Dataset, make_hypercleaning, make_regcoef, partition_dataset, train_val_split
from .saddle import StepSizes

__all__ = ["HyperCleaningClassifier", "RegCoefClassifier"]


class _DistributedBilevelClassifier(ClassifierMixin, BaseEstimator):
    def _encode(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        if len(self.classes_) != 2:
            raise ValueError(f"expected exactly two classes, got {len(self.classes_)}")
        self.n_features_in_ = X.shape[1]
        return X, np.where(y == self.classes_[1], 1, -1)

    def _shards(self, X, signs):
        data = train_val_split(Dataset(X, signs), self.val_fraction, self.random_state)
        return partition_dataset(data, self.n_workers, self.random_state)

    def _solve(self, problem):
        cfg = RunConfig(
            problem,
            S=self.n_active,
            tau=self.tau,
            lower=LowerConfig(eta_y=self.lower_eta, eta_z=self.lower_eta, eta_phi=self.lower_eta),
            eps=self.eps,
            steps=StepSizes(self.eta_x, self.eta_y, self.eta_v, self.eta_z, self.eta_lambda, self.eta_theta),
            delay=DelayModel(self.delay_mu, self.delay_sigma),
            max_iter=self.max_iter,
            gap_tol=self.gap_tol,
            seed=self.random_state or 0,
        )
        if self.solver not in ("adbo", "sdbo"):
            raise ValueError(f"solver must be 'adbo' or 'sdbo', got {self.solver!r}")
        run = simulate_adbo if self.solver == "adbo" else simulate_sdbo
        result = run(cfg)
        self.trace_ = result.trace
        self.n_iter_ = len(result.trace)
        self.coef_ = np.mean(result.state.y, axis=0)
        return result

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores > 0).astype(int)]


class HyperCleaningClassifier(_DistributedBilevelClassifier):
    """Learn per-sample weights that suppress mislabelled training rows.

    After fitting, ``sample_weight_[j]`` is the learned weight of row ``j``
    and ``NaN`` for rows held out as validation data.
    """

    def __init__(self, n_workers=4, n_active=2, tau=15, eps=1e-4, eta_x=0.1, eta_y=0.1,
                 eta_v=10.0, eta_z=0.1, eta_lambda=0.1, eta_theta=0.1, lower_eta=1.0,
                 C_r=1e-3, val_fraction=0.2, delay_mu=3.5, delay_sigma=1.0, max_iter=2000,
                 gap_tol=0.0, solver="adbo", random_state=None):
        self.n_workers = n_workers
        self.n_active = n_active
        self.tau = tau
        self.eps = eps
        self.eta_x = eta_x
        self.eta_y = eta_y
        self.eta_v = eta_v
        self.eta_z = eta_z
        self.eta_lambda = eta_lambda
        self.eta_theta = eta_theta
        self.lower_eta = lower_eta
        self.C_r = C_r
        self.val_fraction = val_fraction
        self.delay_mu = delay_mu
        self.delay_sigma = delay_sigma
        self.max_iter = max_iter
        self.gap_tol = gap_tol
        self.solver = solver
        self.random_state = random_state

    def fit(self, X, y):
        X, signs = self._encode(X, y)
        problem = make_hypercleaning(self._shards(X, signs), self.C_r)
        result = self._solve(problem)
        weights = np.full(X.shape[0], np.nan)
        weights[problem.train_index] = expit(result.state.v)
        self.sample_weight_ = weights
        return self


class RegCoefClassifier(_DistributedBilevelClassifier):
    """Learn one L2 penalty coefficient per feature on held-out data.

    ``reg_coef_`` holds the learned coefficients.
    """

    def __init__(self, n_workers=4, n_active=2, tau=15, eps=0.01, eta_x=0.01, eta_y=0.02,
                 eta_v=0.01, eta_z=0.02, eta_lambda=0.1, eta_theta=0.01, lower_eta=0.1,
                 val_fraction=0.2, delay_mu=3.5, delay_sigma=1.0, max_iter=2000,
                 gap_tol=1e-3, solver="adbo", random_state=None):
        self.n_workers = n_workers
        self.n_active = n_active
        self.tau = tau
        self.eps = eps
        self.eta_x = eta_x
        self.eta_y = eta_y
        self.eta_v = eta_v
        self.eta_z = eta_z
        self.eta_lambda = eta_lambda
        self.eta_theta = eta_theta
        self.lower_eta = lower_eta
        self.val_fraction = val_fraction
        self.delay_mu = delay_mu
        self.delay_sigma = delay_sigma
        self.max_iter = max_iter
        self.gap_tol = gap_tol
        self.solver = solver
        self.random_state = random_state

    def fit(self, X, y):
        X, signs = self._encode(X, y)
        result = self._solve(make_regcoef(self._shards(X, signs)))
        self.reg_coef_ = result.state.v.copy()
        return self
