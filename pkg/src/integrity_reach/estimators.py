"""scikit-learn style wrappers around the steady-state filter and residual detectors."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .calibration import DetectorSpec
from .errors import ValidationError
from .model import PlantModel, solve_steady_state_filter


def _as_sequences(Y, width, name):
    arr = np.asarray(Y, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim not in (2, 3) or arr.shape[-1] != width:
        raise ValidationError(f"{name} must have shape (steps, {width}) or (runs, steps, {width})")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


class SteadyStateKalmanFilter(TransformerMixin, BaseEstimator):
    """Steady-state Kalman filter that maps measurement sequences to innovations.

    ``fit`` solves the Riccati equation for the given plant matrices.
    ``transform`` returns the innovation sequence ``z_k = y_k - C A xhat_{k-1}``
    starting from ``xhat_0 = 0``; :meth:`estimate` returns the state estimates.
    """

    def __init__(self, A=None, C=None, W=None, R=None, tol=1e-12):
        self.A = A
        self.C = C
        self.W = W
        self.R = R
        self.tol = tol

    def fit(self, X=None, y=None):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        model = PlantModel(A, np.zeros((A.shape[0], 1)), C, self.W, self.R)
        self.filter_ = solve_steady_state_filter(model, tol=self.tol)
        self.K_ = np.array(self.filter_.K)
        self.Sigma_ = np.array(self.filter_.Sigma)
        self.Q_ = np.array(self.filter_.Q)
        self.n_features_in_ = model.p
        return self

    def _run(self, Y):
        check_is_fitted(self, "filter_")
        Y = _as_sequences(Y, self.n_features_in_, "Y")
        squeeze = Y.ndim == 2
        if squeeze:
            Y = Y[None]
        A, CA, K = self.filter_.A, self.filter_.CA, self.K_
        runs, steps, _ = Y.shape
        xhat = np.zeros((runs, A.shape[0]))
        Z = np.empty_like(Y)
        X = np.empty((runs, steps, A.shape[0]))
        for k in range(steps):
            z = Y[:, k] - xhat @ CA.T
            xhat = xhat @ A.T + z @ K.T
            Z[:, k], X[:, k] = z, xhat
        return (Z[0], X[0]) if squeeze else (Z, X)

    def transform(self, Y):
        return self._run(Y)[0]

    def estimate(self, Y):
        return self._run(Y)[1]


class ResidualDetector(BaseEstimator):
    """Chi-square window or SPRT alarm on innovation sequences.

    ``fit`` estimates the innovation covariance from attack-free residuals
    unless ``residual_cov`` is given, then calibrates the threshold from
    ``beta``. ``decision_function`` returns the detector statistic and
    ``predict`` the alarm flags.
    """

    def __init__(self, kind="chi2", beta=0.05, coefficients=None, threshold=None, residual_cov=None):
        self.kind = kind
        self.beta = beta
        self.coefficients = coefficients
        self.threshold = threshold
        self.residual_cov = residual_cov

    def fit(self, Z, y=None):
        Z = np.asarray(Z, dtype=float)
        p = Z.shape[-1]
        if self.residual_cov is not None:
            Q = np.atleast_2d(np.asarray(self.residual_cov, dtype=float))
        else:
            flat = Z.reshape(-1, p)
            if flat.shape[0] < 2:
                raise ValidationError("need at least two residual samples to estimate their covariance")
            Q = np.atleast_2d(np.cov(flat, rowvar=False))
        if self.kind == "sprt":
            spec = DetectorSpec.sprt(self.beta, p)
        elif self.kind == "chi2":
            coeffs = tuple(self.coefficients) if self.coefficients is not None else (1.0,)
            if self.threshold is None and coeffs == (1.0,):
                spec = DetectorSpec.chi_square(self.beta, p)
            elif self.threshold is None:
                raise ValidationError("weighted windows need an explicit threshold")
            else:
                spec = DetectorSpec("windowed", self.threshold, self.beta, p, coeffs)
        else:
            raise ValidationError(f"unknown detector kind {self.kind!r}")
        if self.threshold is not None and self.kind == "sprt":
            spec = DetectorSpec("sprt", self.threshold, self.beta, p)
        self.spec_ = spec
        self.residual_cov_ = Q
        self.Q_inv_ = np.linalg.inv(Q)
        self.threshold_ = spec.threshold_h
        self.n_features_in_ = p
        return self

    def decision_function(self, Z):
        check_is_fitted(self, "spec_")
        Z = _as_sequences(Z, self.n_features_in_, "Z")
        return self.spec_.statistic(Z, self.Q_inv_)

    def predict(self, Z):
        return (self.decision_function(Z) > self.threshold_).astype(int)


__all__ = ["ResidualDetector", "SteadyStateKalmanFilter"]
