"""Reachable estimation-error regions under intermittent integrity enforcement.

Two routes compute the same ellipsoids. The dense route stacks the whole
attack sequence, builds the residual Gram matrix and solves against it. The
recursive route propagates an arrival shape forward and a cost-to-go backward
from each anchor, which keeps the cost linear in the horizon. Both are public;
the dense route doubles as the reference for the recursive one.
"""

from __future__ import annotations

import logging
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._validation import PSD_TOL, readonly
from .errors import NumericalError, ValidationError

log = logging.getLogger(__name__)

SHAPE_RANK_TOL = 1e-13

CurvePoint = namedtuple("CurvePoint", ["k", "bound", "anchor"])


@dataclass(frozen=True)
class SupportPattern:
    """Per-step compromised supports ``K~_1..K~_t`` and the enforcement-block ends.

    ``supports[j - 1]`` lists the sensors the attacker may write at step ``j``.
    ``block_ends`` are the steps at which an enforcement block finishes; they
    serve as planning anchors. An empty ``block_ends`` means no enforcement.
    """

    supports: tuple
    compromised: tuple
    block_ends: tuple = ()

    def __post_init__(self):
        sup = tuple(tuple(sorted(int(i) for i in s)) for s in self.supports)
        comp = tuple(sorted(int(i) for i in self.compromised))
        allowed = set(comp)
        for j, s in enumerate(sup, start=1):
            if not set(s) <= allowed:
                raise ValidationError(f"support at step {j} leaves the compromised set")
        ends = tuple(sorted({int(t) for t in self.block_ends}))
        object.__setattr__(self, "supports", sup)
        object.__setattr__(self, "compromised", comp)
        object.__setattr__(self, "block_ends", ends)
        offsets = np.concatenate([[0], np.cumsum([len(s) for s in sup])]).astype(int)
        object.__setattr__(self, "_offsets", offsets)

    @classmethod
    def no_enforcement(cls, compromised, horizon):
        return cls(tuple(tuple(compromised) for _ in range(horizon)), compromised, ())

    @property
    def horizon(self):
        return len(self.supports)

    def support(self, j):
        return self.supports[j - 1]

    def cumulative_size(self, k):
        """``|Q_k|``, the number of attack coordinates in steps ``1..k``."""
        return int(self._offsets[k])

    def columns(self, j):
        """Slice of the stacked attack vector holding step ``j``."""
        return slice(int(self._offsets[j - 1]), int(self._offsets[j]))

    def anchor(self, k):
        """Earliest block end at or after ``k``; ``k`` itself when nothing is enforced."""
        if not self.block_ends:
            return k
        idx = np.searchsorted(self.block_ends, k)
        if idx == len(self.block_ends):
            raise ValidationError(f"pattern of horizon {self.horizon} has no anchor for step {k}")
        return int(self.block_ends[idx])

    def selection(self, j, p):
        """``p x |K~_j|`` matrix of unit columns for the sensors writable at step ``j``."""
        return np.eye(p)[:, list(self.support(j))]


@dataclass(frozen=True)
class ReachableRegion:
    """Centered ellipsoid ``{e : e' Y^+ e <= 1}`` of reachable estimation errors at step ``k``."""

    Y: np.ndarray
    gamma: float
    k: int
    t_anchor: int
    alpha: float = 0.0

    @property
    def dim(self):
        return self.Y.shape[0]


def _selection(p, support):
    return np.eye(p)[:, list(support)]


def _check_step(pattern, k):
    if not 1 <= k <= pattern.horizon:
        raise ValidationError(f"step {k} outside pattern horizon 1..{pattern.horizon}")


def error_map(filt, pattern, k):
    """Stacked map from the attack coordinates of steps ``1..k`` to ``-Delta e_k``."""
    _check_step(pattern, k)
    transition = filt.closed_loop
    n, p = filt.n, filt.p
    out = np.zeros((n, pattern.cumulative_size(k)))
    carry = np.eye(n)
    for j in range(k, 0, -1):
        out[:, pattern.columns(j)] = carry @ filt.K @ _selection(p, pattern.support(j))
        carry = carry @ transition
    return out


def residual_map(filt, pattern, k):
    """Stacked map from the attack coordinates of steps ``1..k`` to ``Delta z_k``."""
    _check_step(pattern, k)
    p = filt.p
    out = np.zeros((p, pattern.cumulative_size(k)))
    if k > 1:
        prev = error_map(filt, pattern, k - 1)
        out[:, : prev.shape[1]] = -filt.CA @ prev
    out[:, pattern.columns(k)] = _selection(p, pattern.support(k))
    return out


def theta_matrix(filt, pattern, t):
    """Gram matrix of the residual maps of steps ``1..t`` in the ``Q^{-1}`` metric."""
    _check_step(pattern, t)
    size = pattern.cumulative_size(t)
    p = filt.p
    theta = np.zeros((size, size))
    state = np.zeros((filt.n, size))
    transition, CA, Q_inv = filt.closed_loop, filt.CA, filt.Q_inv
    for tau in range(1, t + 1):
        cols = pattern.columns(tau)
        N = -CA @ state
        N[:, cols] += _selection(p, pattern.support(tau))
        theta += N.T @ Q_inv @ N
        state = transition @ state
        state[:, cols] += filt.K @ _selection(p, pattern.support(tau))
    theta = 0.5 * (theta + theta.T)
    return theta


def _cholesky(theta):
    try:
        return scipy.linalg.cholesky(theta, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("stealthiness Gram matrix is not positive definite") from exc


def _resolve_budget(detector, scenario):
    if hasattr(detector, "radius"):
        return detector
    return detector.stealth_budget(scenario.epsilon)


def reachable_region(filt, pattern, budget, k, gamma=0.0, anchor=None):
    """Reachable-error ellipsoid at step ``k`` built from the dense Gram matrix.

    ``budget`` maps the anchor time to the stealth radius (see
    :class:`integrity_reach.calibration.StealthBudget`).
    """
    _check_step(pattern, k)
    t = pattern.anchor(k) if anchor is None else int(anchor)
    if t < k:
        raise ValidationError("anchor must not precede the evaluated step")
    _check_step(pattern, t)
    alpha = float(budget.radius(t))
    Y = gamma * np.array(filt.Sigma)
    size = pattern.cumulative_size(t)
    if size > 0 and alpha > 0.0:
        theta = theta_matrix(filt, pattern, t)
        L = _cholesky(theta)
        if log.isEnabledFor(logging.DEBUG):
            log.debug("Gram matrix size %d, condition %.3e", size, np.linalg.cond(theta))
        M = np.zeros((filt.n, size))
        Mk = error_map(filt, pattern, k)
        M[:, : Mk.shape[1]] = Mk
        X = scipy.linalg.solve_triangular(L, M.T, lower=True)
        Y = Y + alpha**2 * (X.T @ X)
    Y = 0.5 * (Y + Y.T)
    return ReachableRegion(readonly(Y), float(gamma), int(k), int(t), alpha)


def region_extent(Y):
    """Largest semi-axis ``sqrt(lambda_max(Y))`` of a centered ellipsoid."""
    Y = np.asarray(Y)
    if Y.size == 0:
        return 0.0
    return float(np.sqrt(max(np.linalg.eigvalsh(Y)[-1], 0.0)))


def max_expected_error(region):
    """Largest expected error norm inside a pure-attack (``gamma = 0``) region."""
    Y = region.Y if isinstance(region, ReachableRegion) else np.asarray(region)
    if isinstance(region, ReachableRegion) and region.gamma != 0.0:
        raise ValidationError("max_expected_error needs a region built with gamma = 0")
    return region_extent(Y)


def loewner_leq(inner, outer, tol=PSD_TOL):
    """``inner <= outer`` in the Loewner order, up to ``tol`` relative to ``outer``."""
    diff = np.asarray(outer) - np.asarray(inner)
    if diff.size == 0:
        return True
    floor = -tol * (1.0 + np.linalg.norm(outer, 2))
    return bool(np.linalg.eigvalsh(0.5 * (diff + diff.T))[0] >= floor)


def region_contained(inner, outer, tol=PSD_TOL):
    """Containment of two centered ellipsoids with the same confidence scaling."""
    if inner.Y.shape != outer.Y.shape:
        raise ValidationError("regions have different dimensions")
    if inner.gamma != outer.gamma:
        raise ValidationError("regions use different gamma")
    return loewner_leq(inner.Y, outer.Y, tol)


class ShapeRecursion:
    """Budget-normalized reachable shapes computed step by step.

    ``support_at(j)`` gives the writable sensors at step ``j``. Call
    :meth:`segment` with consecutive ``(first, anchor)`` ranges; it returns the
    normalized shapes ``G_k`` for ``k = first..anchor`` so that the region is
    ``alpha(anchor)^2 G_k``.
    """

    def __init__(self, filt, support_at):
        self.filt = filt
        self.support_at = support_at
        self.step = 0
        self.factor = np.zeros((filt.n, 0))
        self._A = filt.closed_loop
        self._CA = filt.CA
        self._Qi = np.array(filt.Q_inv)
        self._K = np.array(filt.K)

    def _forward(self, support):
        F = self.factor
        p = self.filt.p
        D = _selection(p, support)
        r, d = F.shape[1], D.shape[1]
        if r + d == 0:
            return np.zeros((self.filt.n, 0))
        J = np.hstack([self._CA @ F, D])
        omega = J.T @ self._Qi @ J
        omega[:r, :r] += np.eye(r)
        T = np.hstack([self._A @ F, -self._K @ D])
        L = _cholesky(0.5 * (omega + omega.T))
        X = scipy.linalg.solve_triangular(L, T.T, lower=True)
        Pi = X.T @ X
        w, V = np.linalg.eigh(0.5 * (Pi + Pi.T))
        keep = w > SHAPE_RANK_TOL * max(w[-1], 0.0) if w.size and w[-1] > 0 else np.zeros(w.shape, bool)
        return V[:, keep] * np.sqrt(w[keep])

    def _cost_step(self, S, support):
        """Cost-to-go before a step with the given support, from the cost-to-go after it."""
        CA, A, K, Qi = self._CA, self._A, self._K, self._Qi
        S_prev = CA.T @ Qi @ CA + A.T @ S @ A
        if support:
            D = _selection(self.filt.p, support)
            KD = K @ D
            H = D.T @ Qi @ D + KD.T @ S @ KD
            G = D.T @ Qi @ CA - KD.T @ S @ A
            S_prev = S_prev - G.T @ np.linalg.solve(H, G)
        return 0.5 * (S_prev + S_prev.T)

    def segment(self, first, anchor):
        if first != self.step + 1 or anchor < first:
            raise ValidationError("segments must be consecutive and non-empty")
        factors = []
        for j in range(first, anchor + 1):
            self.factor = self._forward(self.support_at(j))
            factors.append(self.factor)
        self.step = anchor
        n = self.filt.n
        shapes = [None] * len(factors)
        S = np.zeros((n, n))
        for idx in range(len(factors) - 1, -1, -1):
            F = factors[idx]
            if F.shape[1] == 0:
                shapes[idx] = np.zeros((n, n))
            else:
                inner = np.eye(F.shape[1]) + F.T @ S @ F
                G = F @ np.linalg.solve(inner, F.T)
                shapes[idx] = 0.5 * (G + G.T)
            if idx > 0:
                S = self._cost_step(S, self.support_at(first + idx))
        return shapes


def _policy_pattern(policy, compromised, horizon):
    if policy is None:
        return SupportPattern.no_enforcement(compromised, horizon)
    return policy.support_pattern(compromised, horizon)


def region_sequence(filt, pattern, budget, horizon=None, gamma=0.0):
    """Yield ``(k, anchor, Y_k)`` for ``k = 1..horizon`` via the recursive route."""
    horizon = pattern.horizon if horizon is None else horizon
    rec = ShapeRecursion(filt, pattern.support)
    Sigma = np.array(filt.Sigma)
    k = 1
    while k <= horizon:
        t = pattern.anchor(k)
        alpha = float(budget.radius(t))
        for offset, G in enumerate(rec.segment(k, t)):
            step = k + offset
            if step > horizon:
                break
            yield step, t, alpha**2 * G + gamma * Sigma
        k = t + 1


def error_curve(filt, policy, scenario, detector, horizon, gamma=None):
    """Per-step bound on the expected estimation error, ``[(k, bound, anchor), ...]``.

    ``policy=None`` means no enforcement. ``detector`` may be a
    :class:`DetectorSpec` or a budget object exposing ``radius(t)``.
    With ``gamma = 0`` the bound is the largest expected error; otherwise
    it is the largest semi-axis of the confidence-scaled region.
    """
    gamma = scenario.gamma if gamma is None else float(gamma)
    budget = _resolve_budget(detector, scenario)
    pattern = _policy_pattern(policy, scenario.compromised, horizon)
    return [
        CurvePoint(k, region_extent(Y), t)
        for k, t, Y in region_sequence(filt, pattern, budget, horizon, gamma)
    ]


__all__ = [
    "CurvePoint",
    "ReachableRegion",
    "ShapeRecursion",
    "SupportPattern",
    "error_curve",
    "error_map",
    "loewner_leq",
    "max_expected_error",
    "reachable_region",
    "region_contained",
    "region_extent",
    "region_sequence",
    "residual_map",
    "theta_matrix",
]
