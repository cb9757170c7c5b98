"""Intermittent integrity-enforcement policies, their evaluation and period synthesis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import PSD_TOL, check_positive_int
from .errors import NoFeasiblePolicyError, ValidationError
from .model import structural_report
from .reachability import (
    CurvePoint,
    ShapeRecursion,
    SupportPattern,
    _resolve_budget,
    loewner_leq,
    region_extent,
)

MAX_PERIOD = 512
MAX_PERIODS_EVALUATED = 200
MAX_EXTRAPOLATION_STEP = 10**7


@dataclass(frozen=True)
class SensorSchedule:
    sensor: int
    f: int
    L: int
    t0: int

    def __post_init__(self):
        check_positive_int(self.f, "f")
        check_positive_int(self.L, "L")
        check_positive_int(self.t0, "t0", minimum=2)

    @property
    def continuous(self):
        return self.L <= self.f

    def enforced(self, j):
        if self.continuous:
            return True
        return j >= self.t0 and (j - self.t0) % self.L < self.f

    def block_ends(self, upto):
        if self.continuous:
            return range(1, upto + 1)
        return range(self.t0 + self.f - 1, upto + 1, self.L)


@dataclass(frozen=True)
class EnforcementPolicy:
    """Integrity-enforcement schedule.

    ``kind`` is ``"none"``, ``"global"`` (blocks of ``f`` authenticated steps
    starting at ``t0, t0 + L, ...``) or ``"sensorwise"`` (one schedule per
    sensor). ``L <= f`` means every step is authenticated.
    """

    kind: str
    f: int = 0
    L: int = 0
    t0: int = 0
    schedules: tuple = field(default=())

    def __post_init__(self):
        if self.kind == "global":
            check_positive_int(self.f, "f")
            check_positive_int(self.L, "L")
            check_positive_int(self.t0, "t0", minimum=2)
        elif self.kind == "sensorwise":
            if not self.schedules:
                raise ValidationError("sensor-wise policy needs at least one schedule")
            sensors = [s.sensor for s in self.schedules]
            if len(set(sensors)) != len(sensors):
                raise ValidationError("duplicate sensor in sensor-wise policy")
        elif self.kind != "none":
            raise ValidationError(f"unknown policy kind {self.kind!r}")

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def periodic(cls, f, L, t0=None):
        return cls("global", f, L, max(L, 2) if t0 is None else t0)

    @classmethod
    def sensorwise(cls, schedules):
        return cls("sensorwise", schedules=tuple(schedules))

    @property
    def continuous(self):
        return self.kind == "global" and self.L <= self.f

    def enforced_sensors(self, j, compromised):
        if self.kind == "none":
            return frozenset()
        if self.kind == "global":
            if self.continuous or (j >= self.t0 and (j - self.t0) % self.L < self.f):
                return frozenset(compromised)
            return frozenset()
        return frozenset(s.sensor for s in self.schedules if s.enforced(j))

    def support_at(self, j, compromised):
        blocked = self.enforced_sensors(j, compromised)
        return tuple(i for i in compromised if i not in blocked)

    def block_ends(self, upto):
        if self.kind == "none":
            return []
        if self.kind == "global":
            if self.continuous:
                return list(range(1, upto + 1))
            return list(range(self.t0 + self.f - 1, upto + 1, self.L))
        ends = set()
        for s in self.schedules:
            ends.update(s.block_ends(upto))
        return sorted(ends)

    def anchor(self, k):
        """Earliest block end at or after step ``k`` (``k`` itself without enforcement)."""
        if self.kind == "none":
            return k
        if self.kind == "global":
            if self.continuous:
                return k
            first = self.t0 + self.f - 1
            if k <= first:
                return first
            return first + math.ceil((k - first) / self.L) * self.L
        return min(
            (k if s.continuous else (s.t0 + s.f - 1 if k <= s.t0 + s.f - 1
                                     else s.t0 + s.f - 1 + math.ceil((k - s.t0 - s.f + 1) / s.L) * s.L))
            for s in self.schedules
        )

    def cycle_length(self):
        """Steps after which the support pattern repeats."""
        if self.kind == "global":
            return 1 if self.continuous else self.L
        if self.kind == "sensorwise":
            return math.lcm(*[1 if s.continuous else s.L for s in self.schedules])
        return 1

    def settle_step(self):
        """First step from which the pattern is periodic with :meth:`cycle_length`."""
        if self.kind == "global":
            return 1 if self.continuous else self.t0 + self.f - 1
        if self.kind == "sensorwise":
            return max(1 if s.continuous else s.t0 + s.f - 1 for s in self.schedules)
        return 1

    def support_pattern(self, compromised, horizon):
        """Support pattern long enough to contain the anchor of step ``horizon``."""
        end = self.anchor(horizon)
        supports = [self.support_at(j, compromised) for j in range(1, end + 1)]
        return SupportPattern(tuple(supports), tuple(compromised), tuple(self.block_ends(end)))

    def describe(self):
        if self.kind == "none":
            return "none"
        if self.kind == "global":
            return f"{self.f}:{self.L}:{self.t0}"
        return ";".join(f"{s.sensor}={s.f}:{s.L}:{s.t0}" for s in self.schedules)


@dataclass(frozen=True)
class PolicyVerdict:
    """Outcome of evaluating one policy against a safety threshold.

    ``status`` is ``"safe"``, ``"unsafe"`` or ``"unknown"`` (iteration cap hit
    before the reachable regions stopped growing). ``curve`` holds the explicitly
    computed per-step bounds; ``crossing_step`` is set when an unsafe verdict is
    reached by extrapolating a growing stealth budget past the computed curve.
    """

    status: str
    sup_error: float
    threshold: float
    fixpoint_horizon: int | None
    curve: tuple
    policy: EnforcementPolicy
    crossing_step: int | None = None
    periods_evaluated: int = 0

    @property
    def safe(self):
        return self.status == "safe"

    @property
    def unsafe(self):
        return self.status == "unsafe"

    def to_dict(self):
        return {
            "policy": self.policy.describe(),
            "status": self.status,
            "safe": self.safe,
            "sup_error": self.sup_error,
            "threshold": self.threshold,
            "fixpoint_horizon": self.fixpoint_horizon,
            "crossing_step": self.crossing_step,
            "periods_evaluated": self.periods_evaluated,
        }


def _phase_contained(new, old, tol=PSD_TOL):
    return len(new) == len(old) and all(loewner_leq(a, b, tol) for a, b in zip(new, old))


def _extrapolate_growth(budget, anchors_from, period, shape_extent, gamma_part, threshold, horizon):
    """Scan anchors with doubling strides for a growing budget that pushes a fixed shape over ``threshold``.

    Returns ``(largest value seen, its anchor)``; the scan stops at the first crossing found.
    """

    def value(t):
        return math.sqrt(budget.radius(t) ** 2 * shape_extent**2 + gamma_part)

    last = MAX_EXTRAPOLATION_STEP if horizon is None else horizon
    t = anchors_from
    stride = period
    best = (0.0, None)
    while t <= last:
        v = value(t)
        if v > best[0]:
            best = (v, t)
        if v > threshold:
            return best
        nxt = t + stride
        stride *= 2
        t = nxt
    if horizon is not None:
        # the radius is eventually increasing, so the last anchor inside the horizon dominates
        t_last = anchors_from + ((horizon - anchors_from) // period) * period
        if t_last >= anchors_from:
            v = value(t_last)
            if v > best[0]:
                best = (v, t_last)
    return best


def _verdict_status(sup, threshold):
    return "safe" if sup <= threshold else "unsafe"


def _evaluate_no_enforcement(filt, budget, scenario, policy, threshold, horizon, max_steps):
    rec = ShapeRecursion(filt, lambda j: scenario.compromised)
    Sigma = np.array(filt.Sigma)
    gamma = scenario.gamma
    curve = []
    sup = 0.0
    prev = None
    limit = max_steps if horizon is None else min(horizon, max_steps)
    for k in range(1, limit + 1):
        (G,) = rec.segment(k, k)
        bound = region_extent(budget.radius(k) ** 2 * G + gamma * Sigma)
        curve.append(CurvePoint(k, bound, k))
        sup = max(sup, bound)
        if sup > threshold:
            return PolicyVerdict("unsafe", sup, threshold, None, tuple(curve), policy, None, k)
        if prev is not None and loewner_leq(G, prev):
            if budget.time_invariant:
                return PolicyVerdict("safe", sup, threshold, k, tuple(curve), policy, None, k)
            value, t_cross = _extrapolate_growth(
                budget, k + 1, 1, region_extent(G), gamma * float(np.linalg.eigvalsh(Sigma)[-1]), threshold, horizon
            )
            status = _verdict_status(max(sup, value), threshold)
            return PolicyVerdict(status, max(sup, value), threshold, k, tuple(curve), policy,
                                 t_cross if status == "unsafe" else None, k)
        prev = G
    status = "safe" if horizon is not None and limit == horizon else "unknown"
    return PolicyVerdict(status, sup, threshold, None, tuple(curve), policy, None, limit)


def evaluate_policy(
    model,
    filt,
    detector,
    scenario,
    policy,
    safe_threshold,
    horizon=None,
    max_periods=MAX_PERIODS_EVALUATED,
):
    """Decide whether the reachable estimation error stays below ``safe_threshold``.

    Regions are accumulated period by period until the shapes of a period are
    contained, phase by phase, in those of the previous period. With a
    time-invariant budget that is the termination test for an infinite horizon.
    With a growing budget the normalized shapes still settle; the remaining
    curve then only scales with the radius and is extrapolated, or bounded by
    ``horizon`` when a finite mission length is given.
    """
    scenario.check_against(model)
    budget = _resolve_budget(detector, scenario)
    threshold = float(safe_threshold)
    if not threshold > 0.0:
        raise ValidationError("safe_threshold must be positive")
    if policy is None or policy.kind == "none":
        policy = EnforcementPolicy.none() if policy is None else policy
        return _evaluate_no_enforcement(
            filt, budget, scenario, policy, threshold, horizon, max_periods * 64
        )
    comp = scenario.compromised
    gamma = scenario.gamma
    Sigma = np.array(filt.Sigma)
    if policy.continuous:
        bound = region_extent(gamma * Sigma)
        status = _verdict_status(bound, threshold)
        return PolicyVerdict(status, bound, threshold, 1, (CurvePoint(1, bound, 1),), policy, None, 1)

    rec = ShapeRecursion(filt, lambda j: policy.support_at(j, comp))
    cycle = policy.cycle_length()
    settle = policy.settle_step()
    last_step = settle + max_periods * cycle
    curve = []
    shapes_by_step = {}
    sup = 0.0
    first = 1
    segments = 0
    while first <= last_step:
        anchor = policy.anchor(first)
        shapes = rec.segment(first, anchor)
        segments += 1
        alpha = budget.radius(anchor)
        for offset, G in enumerate(shapes):
            k = first + offset
            shapes_by_step[k] = G
            if horizon is not None and k > horizon:
                continue
            bound = region_extent(alpha**2 * G + gamma * Sigma)
            curve.append(CurvePoint(k, bound, anchor))
            sup = max(sup, bound)
        for stale in [k for k in shapes_by_step if k <= anchor - 2 * cycle]:
            del shapes_by_step[stale]
        if sup > threshold:
            return PolicyVerdict("unsafe", sup, threshold, None, tuple(curve), policy, None, segments)
        if horizon is not None and anchor >= horizon:
            return PolicyVerdict("safe", sup, threshold, None, tuple(curve), policy, None, segments)
        if anchor - 2 * cycle >= settle and (anchor - settle) % cycle == 0:
            new = [shapes_by_step[k] for k in range(anchor - cycle + 1, anchor + 1)]
            old = [shapes_by_step[k - cycle] for k in range(anchor - cycle + 1, anchor + 1)]
            if _phase_contained(new, old):
                if budget.time_invariant:
                    return PolicyVerdict("safe", sup, threshold, anchor, tuple(curve), policy, None, segments)
                extent = max(region_extent(G) for G in new)
                gamma_part = gamma * float(np.linalg.eigvalsh(Sigma)[-1])
                value, t_cross = _extrapolate_growth(
                    budget, anchor + cycle, cycle, extent, gamma_part, threshold, horizon
                )
                if value > threshold:
                    return PolicyVerdict(
                        "unsafe", value, threshold, anchor, tuple(curve), policy, t_cross, segments
                    )
                return PolicyVerdict(
                    "safe", max(sup, value), threshold, anchor, tuple(curve), policy, None, segments
                )
        first = anchor + 1
    return PolicyVerdict("unknown", sup, threshold, None, tuple(curve), policy, None, segments)


@dataclass(frozen=True)
class DesignResult:
    policy: EnforcementPolicy
    verdict: PolicyVerdict
    history: tuple
    f: int

    @property
    def period(self):
        return self.policy.L if self.policy.kind == "global" else None


def design_periodic_policy(
    model,
    filt,
    detector,
    scenario,
    safe_threshold,
    max_period=MAX_PERIOD,
    horizon=None,
    f=None,
    max_periods=MAX_PERIODS_EVALUATED,
):
    """Largest period ``L`` for which the periodic policy ``(f, L)`` is safe.

    ``L`` is increased from 1 until the first unsafe period; the previous one is
    returned. ``f`` defaults to the required block length of the structural
    report for the compromised sensors. An ``unknown`` verdict stops the search
    and is reported through the history.
    """
    scenario.check_against(model)
    if f is None:
        comp = None if len(scenario.compromised) == model.p else scenario.compromised
        f = structural_report(model, comp).f_required
    history = []
    if f == 0:
        verdict = evaluate_policy(
            model, filt, detector, scenario, EnforcementPolicy.none(), safe_threshold, horizon, max_periods
        )
        history.append(verdict)
        if verdict.safe:
            return DesignResult(verdict.policy, verdict, tuple(history), 0)
        f = 1
    accepted = None
    for L in range(1, max_period + 1):
        policy = EnforcementPolicy.periodic(f, L)
        verdict = evaluate_policy(model, filt, detector, scenario, policy, safe_threshold, horizon, max_periods)
        history.append(verdict)
        if verdict.status == "safe":
            accepted = verdict
            continue
        break
    if accepted is None:
        raise NoFeasiblePolicyError(
            f"no safe periodic policy with f={f}: L=1 gives {history[-1].status} "
            f"(sup error {history[-1].sup_error:.6g} vs threshold {safe_threshold})"
        )
    return DesignResult(accepted.policy, accepted, tuple(history), f)


def sweep_periods(model, filt, detector, scenario, safe_threshold, periods, f, horizon=None):
    """Evaluate every period in ``periods`` independently (no early stop)."""
    return [
        evaluate_policy(model, filt, detector, scenario, EnforcementPolicy.periodic(f, L), safe_threshold, horizon)
        for L in periods
    ]


__all__ = [
    "DesignResult",
    "EnforcementPolicy",
    "PolicyVerdict",
    "SensorSchedule",
    "design_periodic_policy",
    "evaluate_policy",
    "sweep_periods",
]
