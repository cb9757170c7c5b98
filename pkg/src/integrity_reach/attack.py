"""Worst-case stealthy attack synthesis and Monte Carlo closed-loop simulation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.signal import place_poles

from ._validation import check_positive_int, readonly
from .errors import ValidationError
from .reachability import SupportPattern, _cholesky, error_map, theta_matrix

AWARE = "aware"
UNAWARE = "unaware"
MODES = (AWARE, UNAWARE)


@dataclass(frozen=True)
class AttackSequence:
    """Stacked sensor-attack vector on a support pattern, aimed at one step.

    ``vector`` holds the attack coordinates of steps ``1..anchor`` in pattern
    order. ``achieved_error`` is ``||Delta e_target||`` of the noise-free
    attack-error dynamics.
    """

    pattern: SupportPattern
    vector: np.ndarray
    target_step: int
    anchor: int
    alpha: float
    achieved_error: float
    p: int

    @property
    def horizon(self):
        return self.anchor

    def per_step(self, steps=None):
        """Attack as a ``(steps, p)`` array, zero outside the supports and after the anchor."""
        steps = self.anchor if steps is None else steps
        out = np.zeros((steps, self.p))
        for j in range(1, min(steps, self.anchor) + 1):
            cols = self.pattern.columns(j)
            out[j - 1, list(self.pattern.support(j))] = self.vector[cols]
        return out

    def prefix_costs(self, filt):
        """Cumulative residual energy ``sum_{tau<=k} ||Delta z_tau||^2_{Q^-1}`` for each prefix."""
        _, dz = propagate_attack(filt, self.per_step())
        energy = np.einsum("ki,ij,kj->k", dz, filt.Q_inv, dz)
        return np.cumsum(energy)

    def prefix_feasible(self, filt, budget, rtol=1e-9):
        """Per-prefix stealthiness flags against ``budget.radius(tau)``."""
        costs = self.prefix_costs(filt)
        radii = np.array([budget.radius(tau) for tau in range(1, len(costs) + 1)])
        return costs <= radii**2 * (1.0 + rtol) + 1e-300


def propagate_attack(filt, attacks):
    """Noise-free attack-error dynamics: returns ``Delta e_0..Delta e_t`` and ``Delta z_1..Delta z_t``."""
    a = np.asarray(attacks, dtype=float)
    steps = a.shape[0]
    de = np.zeros((steps + 1, filt.n))
    dz = np.zeros((steps, filt.p))
    transition, K, CA = filt.closed_loop, filt.K, filt.CA
    for k in range(1, steps + 1):
        dz[k - 1] = CA @ de[k - 1] + a[k - 1]
        de[k] = transition @ de[k - 1] - K @ a[k - 1]
    return de, dz


def synthesize_worst_attack(filt, pattern, budget, target_step, anchor=None):
    """Attack on ``pattern`` maximizing ``||Delta e_k||`` under the anchor's stealth budget.

    The maximizer is the top right singular direction of the error map whitened
    by the Cholesky factor of the residual Gram matrix, scaled to the boundary.
    """
    k = int(target_step)
    t = pattern.anchor(k) if anchor is None else int(anchor)
    if t < k or t > pattern.horizon:
        raise ValidationError(f"anchor {t} invalid for target step {k}")
    alpha = float(budget.radius(t))
    size = pattern.cumulative_size(t)
    vector = np.zeros(size)
    if size == 0 or alpha == 0.0:
        return AttackSequence(pattern, readonly(vector), k, t, alpha, 0.0, filt.p)
    L = _cholesky(theta_matrix(filt, pattern, t))
    M = np.zeros((filt.n, size))
    Mk = error_map(filt, pattern, k)
    M[:, : Mk.shape[1]] = Mk
    whitened = scipy.linalg.solve_triangular(L, M.T, lower=True).T
    _, s, vh = np.linalg.svd(whitened, full_matrices=False)
    if s[0] == 0.0:
        return AttackSequence(pattern, readonly(vector), k, t, alpha, 0.0, filt.p)
    vector = alpha * scipy.linalg.solve_triangular(L.T, vh[0], lower=False)
    # fix the sign so the synthesized attack is deterministic
    direction = Mk @ vector[: Mk.shape[1]]
    if direction[np.argmax(np.abs(direction))] > 0:
        vector = -vector
    seq = AttackSequence(pattern, readonly(vector), k, t, alpha, 0.0, filt.p)
    de, _ = propagate_attack(filt, seq.per_step())
    return AttackSequence(pattern, readonly(vector), k, t, alpha, float(np.linalg.norm(de[k])), filt.p)


def _noise_factor(cov):
    cov = np.asarray(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.clip(w, 0.0, None))


class _StatisticTracker:
    """Streaming version of :meth:`DetectorSpec.statistic` for a batch of runs."""

    def __init__(self, detector, batch):
        self.detector = detector
        self.k = 0
        self.total = np.zeros(batch)
        self.history = np.zeros((detector.window, batch))

    def update(self, energy):
        self.k += 1
        det = self.detector
        if det.kind == "sprt":
            self.total += energy
            return 0.5 * self.total - 0.5 * self.k * det.dof
        self.history = np.roll(self.history, -1, axis=0)
        self.history[-1] = energy
        return np.asarray(det.coefficients) @ self.history


@dataclass(frozen=True)
class SimulationTrace:
    """Per-run arrays of shape ``(runs, steps, ...)`` from one ensemble."""

    x: np.ndarray
    xhat: np.ndarray
    residual: np.ndarray
    statistic: np.ndarray
    alarms: np.ndarray
    seed: int


@dataclass(frozen=True)
class SimulationSummary:
    runs: int
    steps: int
    alarm_rate: np.ndarray
    alarm_stderr: np.ndarray
    error_mean: np.ndarray
    error_cov: np.ndarray
    prediction_error_cov: np.ndarray
    residual_cov: np.ndarray

    def alarm_interval(self, z=3.0):
        return self.alarm_rate - z * self.alarm_stderr, self.alarm_rate + z * self.alarm_stderr


@dataclass(frozen=True)
class SimulationResult:
    summary: SimulationSummary
    trace: SimulationTrace | None
    injected: np.ndarray
    deterministic_error: np.ndarray
    mode: str
    seed: int


def injected_attack(attack, steps, p, mode=AWARE, policy=None, compromised=None):
    """Per-step attack actually reaching the filter under the chosen attacker mode."""
    if attack is None:
        return np.zeros((steps, p))
    a = attack.per_step(steps) if isinstance(attack, AttackSequence) else np.array(attack, dtype=float)
    if a.shape != (steps, p):
        pad = np.zeros((steps, p))
        n = min(steps, a.shape[0])
        if a.ndim != 2 or a.shape[1] != p:
            raise ValidationError(f"attack must have shape (steps, {p})")
        pad[:n] = a[:n]
        a = pad
    if policy is None or policy.kind == "none":
        return a
    comp = tuple(range(p)) if compromised is None else tuple(compromised)
    for j in range(1, steps + 1):
        blocked = list(policy.enforced_sensors(j, comp))
        if not blocked:
            continue
        if mode == AWARE and np.any(a[j - 1, blocked] != 0.0):
            raise ValidationError(f"policy-aware attack writes an authenticated sensor at step {j}")
        a[j - 1, blocked] = 0.0
    return a


def simulate(
    model,
    filt,
    detector,
    attack=None,
    mode=AWARE,
    runs=1000,
    steps=None,
    seed=0,
    policy=None,
    store_traces=False,
    batch_size=20_000,
):
    """Monte Carlo ensemble of plant, steady-state filter, detector and attacker.

    The filter starts in steady state (initial error drawn from the filtered
    error covariance). In ``"aware"`` mode the attack is injected as given and
    must respect ``policy``; in ``"unaware"`` mode enforcement silently zeroes
    the attack at authenticated steps.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    runs = check_positive_int(runs, "runs")
    if steps is None:
        steps = attack.anchor if isinstance(attack, AttackSequence) else None
    if steps is None:
        raise ValidationError("steps is required without an attack sequence")
    steps = check_positive_int(steps, "steps")
    if mode == UNAWARE and policy is None:
        raise ValidationError("unaware mode needs the enforcement policy")
    n, p = model.n, model.p
    a = injected_attack(attack, steps, p, mode, policy)
    de_det, _ = propagate_attack(filt, a)

    A, C, K = model.A, model.C, np.array(filt.K)
    Q_inv = np.array(filt.Q_inv)
    w_factor, v_factor = _noise_factor(model.W), _noise_factor(model.R)
    e0_factor = _noise_factor(filt.posterior_covariance)
    CA = C @ A

    alarm_count = np.zeros(steps)
    err_sum = np.zeros((steps, n))
    err_outer = np.zeros((steps, n, n))
    pred_outer = np.zeros((steps, n, n))
    pred_sum = np.zeros((steps, n))
    res_sum = np.zeros((steps, p))
    res_outer = np.zeros((steps, p, p))
    traces = []

    children = np.random.SeedSequence(seed).spawn(math.ceil(runs / batch_size))
    done = 0
    for child in children:
        rng = np.random.default_rng(child)
        b = min(batch_size, runs - done)
        done += b
        e0 = rng.standard_normal((b, n)) @ e0_factor.T
        xhat = np.zeros((b, n))
        x = e0.copy()
        tracker = _StatisticTracker(detector, b)
        if store_traces:
            xs, xhs = np.empty((b, steps, n)), np.empty((b, steps, n))
            zs, gs = np.empty((b, steps, p)), np.empty((b, steps))
        for k in range(steps):
            x = x @ A.T + rng.standard_normal((b, n)) @ w_factor.T
            y = x @ C.T + rng.standard_normal((b, p)) @ v_factor.T + a[k]
            prior = xhat @ A.T
            z = y - xhat @ CA.T
            xhat = prior + z @ K.T
            g = tracker.update(np.einsum("bi,ij,bj->b", z, Q_inv, z))
            alarm_count[k] += np.count_nonzero(g > detector.threshold_h)
            e = x - xhat
            pe = x - prior
            err_sum[k] += e.sum(axis=0)
            err_outer[k] += e.T @ e
            pred_sum[k] += pe.sum(axis=0)
            pred_outer[k] += pe.T @ pe
            res_sum[k] += z.sum(axis=0)
            res_outer[k] += z.T @ z
            if store_traces:
                xs[:, k], xhs[:, k], zs[:, k], gs[:, k] = x, xhat, z, g
        if store_traces:
            traces.append((xs, xhs, zs, gs, gs > detector.threshold_h))

    mean = err_sum / runs
    cov = err_outer / runs - np.einsum("ki,kj->kij", mean, mean)
    pmean = pred_sum / runs
    pcov = pred_outer / runs - np.einsum("ki,kj->kij", pmean, pmean)
    rmean = res_sum / runs
    rcov = res_outer / runs - np.einsum("ki,kj->kij", rmean, rmean)
    rate = alarm_count / runs
    stderr = np.sqrt(np.clip(rate * (1.0 - rate), 0.0, None) / runs)
    summary = SimulationSummary(runs, steps, rate, stderr, mean, cov, pcov, rcov)
    trace = None
    if store_traces:
        trace = SimulationTrace(*(np.concatenate(parts) for parts in zip(*traces)), seed=seed)
    return SimulationResult(summary, trace, a, de_det, mode, seed)


@dataclass(frozen=True)
class ScenarioTrace:
    """Single closed-loop run of the planar vehicle, paired with its attack-free twin."""

    time: np.ndarray
    reference: np.ndarray
    position: np.ndarray
    estimate: np.ndarray
    clean_position: np.ndarray
    estimation_deviation: np.ndarray
    path_deviation: np.ndarray
    tracking_error: np.ndarray
    seed: int


def tracking_gain(A, B, poles=(0.9, 0.85)):
    return place_poles(np.asarray(A), np.asarray(B), list(poles)).gain_matrix


def trajectory_scenario(
    model,
    filt,
    attacks=(None, None),
    policy=None,
    duration=2000,
    seed=0,
    radius=100.0,
    speed=3.14,
    dt=0.01,
    poles=(0.9, 0.85),
    noise=True,
    mode=AWARE,
):
    """Planar vehicle (two copies of a per-axis model) following a circle.

    Each axis runs its own steady-state filter; ``attacks`` gives the sensor
    attack for the x and y axes. The same noise drives an attack-free twin so
    the attack's effect on the estimate and on the true path can be separated.
    """
    if model.n != 2 or model.m != 1:
        raise ValidationError("trajectory scenario expects a per-axis model with n=2, m=1")
    steps = check_positive_int(duration, "duration")
    A, B, C = model.A, model.B, model.C
    G = tracking_gain(A, B, poles)
    B_pinv = np.linalg.pinv(B)
    omega = speed / radius
    t = np.arange(steps + 1) * dt
    ref = np.stack(
        [
            np.stack([radius * np.cos(omega * t), -radius * omega * np.sin(omega * t)], axis=-1),
            np.stack([radius * np.sin(omega * t), radius * omega * np.cos(omega * t)], axis=-1),
        ],
        axis=1,
    )  # (steps+1, axis, state)
    a = np.stack(
        [injected_attack(att, steps, model.p, mode, policy) for att in attacks],
        axis=1,
    )  # (steps, axis, p)
    rng = np.random.default_rng(seed)
    w_factor, v_factor = _noise_factor(model.W), _noise_factor(model.R)
    scale = 1.0 if noise else 0.0
    w = scale * rng.standard_normal((steps, 2, model.n)) @ w_factor.T
    v = scale * rng.standard_normal((steps, 2, model.p)) @ v_factor.T
    K = np.array(filt.K)

    def run(attack):
        x = ref[0].copy()
        xhat = ref[0].copy()
        xs, xhs = [x.copy()], [xhat.copy()]
        for k in range(steps):
            u_ff = (ref[k + 1] - ref[k] @ A.T) @ B_pinv.T
            u = u_ff - (xhat - ref[k]) @ G.T
            x = x @ A.T + u @ B.T + w[k]
            prior = xhat @ A.T + u @ B.T
            y = x @ C.T + v[k] + attack[k]
            xhat = prior + (y - prior @ C.T) @ K.T
            xs.append(x.copy())
            xhs.append(xhat.copy())
        return np.array(xs), np.array(xhs)

    xs, xhs = run(a)
    cs, chs = run(np.zeros_like(a))
    delta_e = (xs - xhs) - (cs - chs)
    est_dev = np.linalg.norm(delta_e, axis=-1).max(axis=-1)
    path_dev = np.linalg.norm(xs[:, :, 0] - cs[:, :, 0], axis=-1)
    tracking = np.linalg.norm(xs[:, :, 0] - ref[:, :, 0], axis=-1)
    return ScenarioTrace(t, ref[:, :, 0], xs[:, :, 0], xhs[:, :, 0], cs[:, :, 0], est_dev, path_dev, tracking, seed)


__all__ = [
    "AttackSequence",
    "ScenarioTrace",
    "SimulationResult",
    "SimulationSummary",
    "SimulationTrace",
    "injected_attack",
    "propagate_attack",
    "simulate",
    "synthesize_worst_attack",
    "tracking_gain",
    "trajectory_scenario",
]
