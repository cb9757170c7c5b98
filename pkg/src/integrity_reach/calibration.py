"""Detector calibration: chi-square thresholds and stealthiness radii."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammainc, gammainccinv, gammaln

from ._validation import check_positive_int, check_probability
from .errors import DomainError, ValidationError

POISSON_TAIL = 1e-14
ROOT_TOL = 1e-9
_MAX_BISECTIONS = 400


def chi2_cdf(x, dof):
    """Central chi-square CDF via the regularized lower incomplete gamma function."""
    if x <= 0.0:
        return 0.0
    return float(gammainc(0.5 * dof, 0.5 * x))


def chi2_sf(x, dof):
    return 1.0 - chi2_cdf(x, dof)


def _poisson_window(mean):
    """Index range holding all but ``POISSON_TAIL`` of a Poisson(mean) mass."""
    if mean == 0.0:
        return 0, 0
    spread = 12.0 * math.sqrt(mean) + 40.0
    lo = max(0, int(math.floor(mean - spread)))
    hi = int(math.ceil(mean + spread))
    while True:
        j = np.arange(lo, hi + 1)
        logw = j * math.log(mean) - mean - gammaln(j + 1.0)
        mass = float(np.exp(logw).sum())
        if 1.0 - mass < POISSON_TAIL or hi > mean + 1e6:
            return lo, hi
        hi = int(hi * 1.5) + 10
        lo = max(0, lo - int(spread))


def noncentral_chi2_cdf(x, dof, lam):
    """CDF of the noncentral chi-square distribution as a Poisson mixture of central CDFs."""
    x = float(x)
    lam = float(lam)
    if dof <= 0:
        raise ValidationError("dof must be positive")
    if lam < 0.0:
        raise ValidationError("noncentrality must be nonnegative")
    if x <= 0.0:
        return 0.0
    mean = 0.5 * lam
    if mean == 0.0:
        return chi2_cdf(x, dof)
    lo, hi = _poisson_window(mean)
    j = np.arange(lo, hi + 1, dtype=float)
    weights = np.exp(j * math.log(mean) - mean - gammaln(j + 1.0))
    central = gammainc(0.5 * dof + j, 0.5 * x)
    return float(min(1.0, max(0.0, np.dot(weights, central))))


def noncentral_chi2_sf(x, dof, lam):
    return 1.0 - noncentral_chi2_cdf(x, dof, lam)


def threshold_from_false_alarm(beta, dof):
    """Threshold ``h`` with ``P(chi2_dof > h) = beta``."""
    beta = check_probability(beta, "beta")
    dof = check_positive_int(dof, "dof")
    return float(2.0 * gammainccinv(0.5 * dof, beta))


def false_alarm_from_threshold(h, dof):
    return chi2_sf(h, dof)


@dataclass(frozen=True)
class StealthRadius:
    """Residual-deviation bound in the ``Q^{-1}`` norm together with its calibration inputs."""

    alpha: float
    dof: int
    threshold_used: float
    epsilon: float = 0.0
    beta: float = 0.0

    def __float__(self):
        return self.alpha


def _bisect_increasing(fn, target, tol=ROOT_TOL):
    """Smallest-bracket root of a nondecreasing ``fn(a) = target`` on a >= 0."""
    lo, hi = 0.0, 1.0
    while fn(hi) < target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e12:
            raise DomainError("stealth radius bracket exceeded 1e12")
    for _ in range(_MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        val = fn(mid)
        if abs(val - target) <= tol * 1e-3 or hi - lo <= 1e-15 * max(1.0, hi):
            return mid
        if val < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def alpha_chi2(epsilon, dof, h) -> StealthRadius:
    """Largest ``Q^{-1}``-norm residual shift that raises the alarm rate by at most ``epsilon``."""
    dof = check_positive_int(dof, "dof")
    h = float(h)
    if not h > 0.0:
        raise ValidationError("threshold h must be positive")
    eps = check_probability(epsilon, "epsilon", low_open=False, high_open=False)
    beta = chi2_sf(h, dof)
    headroom = 1.0 - beta
    if eps > headroom:
        raise DomainError(f"epsilon={eps} exceeds 1 - beta = {headroom}")
    if eps == 0.0:
        return StealthRadius(0.0, dof, h, eps, beta)
    if eps == headroom:
        return StealthRadius(math.inf, dof, h, eps, beta)
    target = beta + eps
    a = _bisect_increasing(lambda a: noncentral_chi2_sf(h, dof, a * a), target)
    return StealthRadius(a, dof, h, eps, beta)


def exceedance_probability(h, dof, alpha):
    """Alarm probability when the residual mean is shifted by ``alpha`` in the ``Q^{-1}`` norm."""
    return noncentral_chi2_sf(h, dof, float(alpha) ** 2)


@dataclass(frozen=True)
class DetectorSpec:
    """Residual detector description.

    ``kind`` is ``"windowed"`` (weighted chi-square sum over ``len(coefficients)``
    steps, the last coefficient weighting the current residual) or ``"sprt"``
    (cumulative statistic ``0.5 * sum z'Q^-1 z - k p / 2``). For SPRT detectors
    ``budget`` selects how the cumulative stealth radius evolves over time.
    """

    kind: str
    threshold_h: float
    beta: float
    dof: int
    coefficients: tuple = (1.0,)
    budget: str = "cumulative"

    def __post_init__(self):
        if self.kind not in ("windowed", "sprt"):
            raise ValidationError(f"unknown detector kind {self.kind!r}")
        check_positive_int(self.dof, "dof")
        if not float(self.threshold_h) > 0.0:
            raise ValidationError("threshold_h must be positive")
        check_probability(self.beta, "beta")
        coeffs = tuple(float(c) for c in self.coefficients)
        if self.kind == "windowed":
            if not coeffs or any(c < 0.0 or not math.isfinite(c) for c in coeffs):
                raise ValidationError("window coefficients must be nonnegative")
            if coeffs[-1] <= 0.0:
                raise ValidationError("the current-step coefficient c_T must be strictly positive")
        if self.budget not in BUDGET_MODES:
            raise ValidationError(f"budget must be one of {BUDGET_MODES}")
        object.__setattr__(self, "coefficients", coeffs)
        object.__setattr__(self, "threshold_h", float(self.threshold_h))
        object.__setattr__(self, "beta", float(self.beta))

    @classmethod
    def chi_square(cls, beta, dof):
        return cls("windowed", threshold_from_false_alarm(beta, dof), beta, dof, (1.0,))

    @classmethod
    def windowed(cls, coefficients, threshold_h, dof, beta=None):
        if beta is None:
            beta = chi2_sf(threshold_h / coefficients[-1], dof) if coefficients else 0.5
        return cls("windowed", threshold_h, beta, dof, tuple(coefficients))

    @classmethod
    def sprt(cls, beta, dof, budget="cumulative"):
        h = 0.5 * (threshold_from_false_alarm(beta, dof) - dof)
        if h <= 0.0:
            raise ValidationError(f"beta={beta} gives a nonpositive SPRT threshold for dof={dof}")
        return cls("sprt", h, beta, dof, (1.0,), budget)

    @property
    def window(self):
        return len(self.coefficients)

    def stealth_budget(self, epsilon):
        if self.kind != "sprt":
            raise ValidationError("reachable regions are defined for SPRT detectors only")
        return StealthBudget(float(epsilon), self.dof, self.threshold_h, self.budget)

    def statistic(self, residuals, Q_inv):
        """Detector statistic for residual sequences of shape ``(..., steps, p)``."""
        z = np.asarray(residuals, dtype=float)
        energy = np.einsum("...i,ij,...j->...", z, Q_inv, z)
        if self.kind == "sprt":
            k = np.arange(1, energy.shape[-1] + 1)
            return 0.5 * np.cumsum(energy, axis=-1) - 0.5 * k * self.dof
        g = np.zeros_like(energy)
        T = self.window
        for i, c in enumerate(self.coefficients):
            lag = T - 1 - i
            if c == 0.0:
                continue
            if lag == 0:
                g += c * energy
            elif lag < energy.shape[-1]:
                g[..., lag:] += c * energy[..., :-lag]
        return g

    def alarms(self, residuals, Q_inv):
        return self.statistic(residuals, Q_inv) > self.threshold_h


def window_bounds(spec: DetectorSpec, epsilon, p):
    """Inner and outer stealth radii for a windowed chi-square detector."""
    if spec.kind != "windowed":
        raise ValidationError("window_bounds needs a windowed detector")
    coeffs = spec.coefficients
    c_max = max(coeffs)
    if c_max <= 0.0:
        raise ValidationError("all-zero coefficient vector")
    T = len(coeffs)
    under = alpha_chi2(epsilon, T * p, spec.threshold_h / c_max).alpha / math.sqrt(T)
    over = alpha_chi2(epsilon, p, spec.threshold_h / coeffs[-1]).alpha
    return under, over


@lru_cache(maxsize=200_000)
def _sprt_radius_cached(epsilon, p, h, k):
    return alpha_chi2(epsilon, k * p, 2.0 * h + k * p).alpha


def sprt_radius(epsilon, p, h, k):
    """Cumulative SPRT stealth radius after ``k`` attacked steps."""
    k = check_positive_int(k, "k")
    p = check_positive_int(p, "p")
    return _sprt_radius_cached(float(epsilon), p, float(h), k)


BUDGET_MODES = ("cumulative", "stationary")


@dataclass(frozen=True)
class StealthBudget:
    """Maps an anchor time ``t`` to the radius bounding the cumulative residual energy.

    ``"cumulative"`` evaluates the SPRT radius at ``t``; ``"stationary"`` keeps
    the single-step value for every ``t``, which is what a time-invariant
    residual bound requires.
    """

    epsilon: float
    dof: int
    threshold_h: float
    mode: str = "cumulative"

    def __post_init__(self):
        if self.mode not in BUDGET_MODES:
            raise ValidationError(f"budget mode must be one of {BUDGET_MODES}")

    @property
    def time_invariant(self):
        return self.mode == "stationary" or self.epsilon == 0.0

    def radius(self, t):
        t = 1 if self.mode == "stationary" else t
        return sprt_radius(self.epsilon, self.dof, self.threshold_h, t)

    def with_mode(self, mode):
        return StealthBudget(self.epsilon, self.dof, self.threshold_h, mode)


@dataclass(frozen=True)
class FixedBudget:
    """Budget with a user-supplied constant radius, handy for normalized analyses."""

    alpha: float
    mode: str = "stationary"

    @property
    def time_invariant(self):
        return True

    def radius(self, t):
        return float(self.alpha)


__all__ = [
    "BUDGET_MODES",
    "DetectorSpec",
    "FixedBudget",
    "StealthBudget",
    "StealthRadius",
    "alpha_chi2",
    "chi2_cdf",
    "chi2_sf",
    "exceedance_probability",
    "false_alarm_from_threshold",
    "noncentral_chi2_cdf",
    "noncentral_chi2_sf",
    "sprt_radius",
    "threshold_from_false_alarm",
    "window_bounds",
]
