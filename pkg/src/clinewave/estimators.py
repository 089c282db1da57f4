"""Thin scikit-learn style wrappers over the solvers.

Hyperparameters go to ``__init__``; ``fit`` runs the computation and stores
results in trailing-underscore attributes.  Only the classifier maps an input
matrix to predictions: its rows are ``(A, B)`` pairs of the quadratic model.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .discretize import Grid2D
from .eigen import Invading, classify, solve_line
from .model import quadratic_model

LABELS = np.array(["extinct", "invading", "marginal"])


class ExtinctionClassifier(ClassifierMixin, BaseEstimator):
    """Extinct / invading / marginal from the sign of the principal eigenvalue.

    Nothing is learned: ``fit`` only validates inputs and records the label
    set, so that the estimator composes with sklearn tooling.
    """

    def __init__(self, k: float = 1.0, rmax: float = 1.0, h: float = 0.05, tol: float = 1e-7):
        self.k = k
        self.rmax = rmax
        self.h = h
        self.tol = tol

    def fit(self, X, y=None):
        check_array(X, ensure_min_features=2)
        self.classes_ = LABELS.copy()
        self.n_features_in_ = 2
        return self

    def _rows(self, X):
        check_is_fitted(self, "classes_")
        X = check_array(X)
        if X.shape[1] != 2:
            raise ValueError(f"expected 2 columns (A, B), got {X.shape[1]}")
        return [classify(quadratic_model(A, B, self.k, self.rmax), self.tol, h=self.h) for A, B in X]

    def decision_function(self, X) -> np.ndarray:
        """Principal eigenvalue on the line; negative means invasion."""
        return np.array([c.lambda_inf for c in self._rows(X)])

    def predict(self, X) -> np.ndarray:
        return np.array([c.label for c in self._rows(X)])

    def predict_speed(self, X) -> np.ndarray:
        """Minimal wave speed, NaN where no front exists."""
        return np.array([c.c_star if isinstance(c, Invading) else np.nan for c in self._rows(X)])


class PrincipalEigenvalue(BaseEstimator):
    """Principal eigenpair of the confined trait operator for one model."""

    def __init__(self, A: float = 0.25, B: float = 1.0, rmax: float = 1.0, nu: float = 0.0,
                 h: float = 0.02, tol: float = 1e-10):
        self.A = A
        self.B = B
        self.rmax = rmax
        self.nu = nu
        self.h = h
        self.tol = tol

    def fit(self, X=None, y=None):
        pair = solve_line(quadratic_model(self.A, self.B, 1.0, self.rmax), self.nu, self.tol, h=self.h)
        self.lambda_ = pair.lam
        self.z_ = pair.z
        self.gamma_ = pair.gamma
        self.pair_ = pair
        return self

    def transform(self, z) -> np.ndarray:
        """Eigenfunction interpolated at trait values ``z`` (zero outside the solved range)."""
        check_is_fitted(self, "pair_")
        return np.interp(np.asarray(z, float), self.z_, self.gamma_, left=0.0, right=0.0)


class TravellingWave(BaseEstimator):
    """Wave profile in a box: the minimal-speed homotopy or the fast-wave construction."""

    def __init__(self, A: float = 0.25, B: float = 1.0, k: float = 1.0, mode: str = "minimal",
                 c_factor: float = 1.2, a: float = 20.0, b: float = 8.0, h: float = 0.2,
                 epsilon: float | None = None):
        self.A = A
        self.B = B
        self.k = k
        self.mode = mode
        self.c_factor = c_factor
        self.a = a
        self.b = b
        self.h = h
        self.epsilon = epsilon

    def fit(self, X=None, y=None):
        from .waves import FastWaveConfig, HomotopyConfig, solve_box_homotopy, solve_fast_wave
        p = quadratic_model(self.A, self.B, self.k)
        g = Grid2D.with_spacing(self.a, self.b, self.h, self.h)
        if self.mode == "minimal":
            sol = solve_box_homotopy(p, g, HomotopyConfig(epsilon=self.epsilon))
        elif self.mode == "fast":
            cls = classify(p)
            if not isinstance(cls, Invading):
                raise ValueError(f"no travelling wave: population is {cls.label}")
            sol = solve_fast_wave(p, self.c_factor * cls.c_star, g, FastWaveConfig())
        else:
            raise ValueError("mode must be 'minimal' or 'fast'")
        self.speed_ = sol.c
        self.profile_ = sol.u
        self.grid_ = sol.grid
        self.diagnostics_ = sol.diagnostics
        self.solution_ = sol
        return self

    def predict(self, X) -> np.ndarray:
        """Profile at points ``X[:, 0] = x``, ``X[:, 1] = z`` (moving frame)."""
        check_is_fitted(self, "solution_")
        X = check_array(X)
        return self.solution_.interpolator()(X)


class InvasionSimulator(BaseEstimator):
    """Time integration; ``fit`` measures the front speed or the extinction rate."""

    def __init__(self, A: float = 0.25, B: float = 1.0, T: float | None = None, dt: float = 0.05,
                 h: float = 0.25, theta: float = 0.01):
        self.A = A
        self.B = B
        self.T = T
        self.dt = dt
        self.h = h
        self.theta = theta

    def fit(self, X=None, y=None):
        from .simulate import (StepScheme, extinction_grid, invasion_grid, run_extinction,
                               run_invasion)
        p = quadratic_model(self.A, self.B)
        cls = classify(p)
        sch = StepScheme(self.dt)
        if isinstance(cls, Invading):
            T = self.T or 100.0
            g, x0 = invasion_grid(p, T, cls.c_star, self.h)
            res = run_invasion(p, g, sch, T, self.theta, x0=x0)
            self.speed_, self.rate_ = res.speed, None
        else:
            T = self.T or 20.0
            res = run_extinction(p, extinction_grid(p, self.h), sch, T)
            self.speed_, self.rate_ = None, res.rate
        self.regime_ = cls.label
        self.r2_ = res.r2
        self.result_ = res
        return self
