"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line with the measured
quantities, then asserts.
"""

import math
import time

import numpy as np
import pytest

from integrity_reach import (
    AttackScenario,
    DetectorSpec,
    EnforcementPolicy,
    PlantModel,
    StealthBudget,
    SupportPattern,
    alpha_chi2,
    design_periodic_policy,
    error_curve,
    evaluate_policy,
    is_perfectly_attackable,
    max_expected_error,
    reachable_region,
    simulate,
    solve_steady_state_filter,
    structural_report,
    synthesize_worst_attack,
    theta_matrix,
)
from integrity_reach.calibration import exceedance_probability, threshold_from_false_alarm

from conftest import random_observable_system
from oracles import brute_force_max_error, dense_error_bounds

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return emit


def test_criterion_1_calibration_roundtrip(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_roundtrip = 0.0
    mc_misses = []
    for _ in range(20):
        dof = int(rng.integers(1, 11))
        beta = float(10 ** rng.uniform(-3, -0.7))
        eps = float(10 ** rng.uniform(-4, -1.3))
        h = threshold_from_false_alarm(beta, dof)
        alpha = alpha_chi2(eps, dof, h).alpha
        target = beta + eps
        worst_roundtrip = max(worst_roundtrip, abs(exceedance_probability(h, dof, alpha) - target))
        samples = rng.noncentral_chisquare(dof, alpha**2, size=1_000_000)
        freq = float(np.mean(samples > h))
        sigma = math.sqrt(target * (1 - target) / samples.size)
        if abs(freq - target) > 3 * sigma:
            mc_misses.append((dof, beta, eps, freq, target))
    elapsed = time.perf_counter() - start
    ok = worst_roundtrip <= 1e-8 and not mc_misses and elapsed < 30
    report(1, ok, f"max |P - (beta+eps)| = {worst_roundtrip:.2e}, Monte Carlo misses {len(mc_misses)}/20, {elapsed:.1f}s")
    assert ok, mc_misses


def _oracle_case(rng, one_dimensional):
    """Random system, pattern and step with at most six attack coordinates up to the anchor."""
    while True:
        n, p = (1, 1) if one_dimensional else (2, int(rng.integers(1, 3)))
        A, C, W, R = random_observable_system(rng, n, p, scale=float(rng.uniform(0.6, 1.5)))
        model = PlantModel(A, np.ones((n, 1)), C, W, R)
        filt = solve_steady_state_filter(model)
        horizon = int(rng.integers(1, 6))
        if rng.random() < 0.5:
            policy = EnforcementPolicy.periodic(1, int(rng.integers(2, 4)))
            pattern = policy.support_pattern(tuple(range(p)), horizon)
        else:
            pattern = SupportPattern.no_enforcement(tuple(range(p)), horizon)
        k = int(rng.integers(1, horizon + 1))
        t = pattern.anchor(k)
        if t <= 5 and 0 < pattern.cumulative_size(t) <= 6:
            return model, filt, pattern, k, t


def test_criterion_2_oracle_equivalence(report):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for case in range(50):
        model, filt, pattern, k, t = _oracle_case(rng, one_dimensional=case < 25)
        h = DetectorSpec.sprt(float(rng.uniform(0.005, 0.05)), model.p).threshold_h
        budget = StealthBudget(float(rng.uniform(1e-3, 5e-2)), model.p, h, "cumulative")
        ours = max_expected_error(reachable_region(filt, pattern, budget, k))
        oracle = brute_force_max_error(
            model.A, model.C, filt.K, filt.Q_inv, pattern.supports[:t], k, budget.radius(t), rng,
            samples=1500, polish=4,
        )
        worst = max(worst, abs(ours - oracle) / max(oracle, 1e-300))
    elapsed = time.perf_counter() - start
    ok = worst <= 5e-3 and elapsed < 120
    report(2, ok, f"worst relative gap to brute force {worst:.2e} over 50 cases, {elapsed:.1f}s")
    assert ok


def test_criterion_3_gram_matrix_positive_definite(report):
    rng = np.random.default_rng(99)
    worst = math.inf
    for _ in range(100):
        n, p = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        A, C, W, R = random_observable_system(rng, n, p)
        filt = solve_steady_state_filter(PlantModel(A, np.ones((n, 1)), C, W, R))
        for _ in range(5):
            # f < L and t0 >= 2 keep step 1 writable, the setting the property covers
            L = int(rng.integers(2, 12))
            f = int(rng.integers(1, L))
            policy = EnforcementPolicy.periodic(f, L, int(rng.integers(2, 15)))
            t = int(rng.integers(1, 41))
            pattern = policy.support_pattern(tuple(range(p)), t)
            theta = theta_matrix(filt, pattern, t)
            eig = np.linalg.eigvalsh(theta)
            worst = min(worst, eig[0] / np.linalg.norm(theta, 2))
    ok = worst > 1e-12
    report(3, ok, f"smallest lambda_min / ||Theta|| = {worst:.3e} over 500 system/policy pairs")
    assert ok


def test_criterion_4_boundedness_and_divergence(report, vehicle, vehicle_filter):
    policy = EnforcementPolicy.periodic(1, 30)
    scenario = vehicle.scenario
    L = policy.L
    horizon = policy.t0 + 51 * L
    bounds = np.array([pt.bound for pt in error_curve(vehicle_filter, policy, scenario, vehicle.detector, horizon)])

    def window(first, last):
        return bounds[policy.t0 - 1 + first * L : policy.t0 - 1 + (last + 1) * L].max()

    early, late = window(10, 20), window(40, 50)
    bounded = late <= (1 + 1e-6) * early
    base = error_curve(vehicle_filter, None, scenario, vehicle.detector, 100)
    growth = base[99].bound / base[9].bound
    diverges = growth >= 10.0
    ok = bounded and diverges
    report(
        4,
        ok,
        f"policy 1:30 sup periods 40-50 {late:.6f} vs 10-20 {early:.6f} ({'bounded' if bounded else 'grows'}); "
        f"no-enforcement growth step 10 -> 100 is {growth:.2f}x (needs >= 10x)",
    )
    assert bounded, "enforced curve keeps growing"
    assert diverges, f"no-enforcement bound grows only {growth:.2f}x between steps 10 and 100"


def test_criterion_5_structural_facts(report, vehicle, vehicle_filter, cacc):
    veh = structural_report(vehicle.model)
    pa = bool(is_perfectly_attackable(vehicle.model, vehicle_filter, AttackScenario.all_sensors(vehicle.model, 1e-3)))
    acc = structural_report(cacc.model)
    ok = pa and veh.f_required == 1 and (acc.psi, acc.q_un, acc.f_required) == (2, 2, 2)
    report(5, ok, f"vehicle PA={pa} f={veh.f_required}; CACC psi={acc.psi} q_un={acc.q_un} f={acc.f_required}")
    assert ok


def test_criterion_6_design_matches_exhaustive_sweep(report):
    start = time.perf_counter()
    model = PlantModel([[1.2]], [[1.0]], [[1.0]], [[1.0]], [[1.0]])
    filt = solve_steady_state_filter(model)
    scenario = AttackScenario((0,), 1e-3)
    detector = DetectorSpec.sprt(0.015, 1, budget="stationary")
    threshold = 0.2
    result = design_periodic_policy(model, filt, detector, scenario, threshold)
    L_star = result.period
    nxt = evaluate_policy(model, filt, detector, scenario, EnforcementPolicy.periodic(1, L_star + 1), threshold)

    alpha = detector.stealth_budget(scenario.epsilon).radius(1)
    oracle_safe = []
    for L in range(1, 21):
        t0 = max(L, 2)
        horizon = t0 + 14 * L
        enforced = [L == 1 or (j >= t0 and (j - t0) % L == 0) for j in range(1, horizon + L + 1)]
        supports = [() if e else (0,) for e in enforced]
        ends = [j for j, e in enumerate(enforced, start=1) if e]
        anchors = [min(e for e in ends if e >= k) for k in range(1, horizon + 1)]
        sup = max(dense_error_bounds(model.A, model.C, filt.K, filt.Q_inv, supports, anchors, alpha))
        oracle_safe.append(sup <= threshold)
    oracle_L = next((i for i, s in enumerate(oracle_safe) if not s), len(oracle_safe))
    elapsed = time.perf_counter() - start
    ok = result.verdict.safe and not nxt.safe and L_star == oracle_L and elapsed < 60
    report(6, ok, f"design L*={L_star}, safe(L*)={result.verdict.safe}, safe(L*+1)={nxt.safe}, "
                  f"exhaustive sweep L*={oracle_L}, {elapsed:.1f}s")
    assert ok


def test_criterion_7_vehicle_case_study(report, vehicle, vehicle_filter):
    scenario = vehicle.scenario
    assert vehicle.detector.beta == 0.015 and scenario.epsilon == 0.001 and vehicle.safe_threshold == 0.7
    base = error_curve(vehicle_filter, None, scenario, vehicle.detector, 10)
    crossing = next((pt.k for pt in base if pt.bound > 0.7), None)
    sups = {}
    verdicts = {}
    for L in (20, 30, 35):
        v = evaluate_policy(vehicle.model, vehicle_filter, vehicle.detector, scenario, EnforcementPolicy.periodic(1, L), 0.7)
        sups[L], verdicts[L] = v.sup_error, v.status
    ordered = sups[20] <= sups[30] <= sups[35]
    some_safe = any(s == "safe" for s in verdicts.values())
    design = design_periodic_policy(vehicle.model, vehicle_filter, vehicle.detector, scenario, 0.7)
    crosses = design.history[-1].unsafe
    ok = crossing is not None and ordered and some_safe and crosses
    report(7, ok, f"no-enforcement crosses 0.7 at step {crossing}; sup L=20/30/35 = "
                  f"{sups[20]:.4f}/{sups[30]:.4f}/{sups[35]:.4f} ({verdicts[20]}/{verdicts[30]}/{verdicts[35]}); "
                  f"first unsafe L = {design.history[-1].policy.L}")
    assert ok


def test_criterion_8_simulation_calibration(report, vehicle, vehicle_filter):
    start = time.perf_counter()
    runs, steps = 100_000, 30
    chi2 = DetectorSpec.chi_square(0.015, 2)
    clean = simulate(vehicle.model, vehicle_filter, chi2, runs=runs, steps=steps, seed=17).summary
    sigma = math.sqrt(0.015 * 0.985 / runs)
    alarm_ok = bool(np.all(np.abs(clean.alarm_rate - 0.015) <= 3 * sigma))
    cov_gap = max(
        np.linalg.norm(clean.prediction_error_cov[k] - vehicle_filter.Sigma) / np.linalg.norm(vehicle_filter.Sigma)
        for k in range(steps)
    )

    policy = EnforcementPolicy.periodic(1, 30)
    pattern = policy.support_pattern(vehicle.scenario.compromised, 29)
    budget = vehicle.detector.stealth_budget(vehicle.scenario.epsilon)
    attack = synthesize_worst_attack(vehicle_filter, pattern, budget, 29)
    hit = simulate(vehicle.model, vehicle_filter, chi2, attack, runs=runs, steps=steps, seed=18, policy=policy)
    spread = np.sqrt(np.einsum("kii->ki", hit.summary.error_cov))
    mean_gap = np.abs(hit.summary.error_mean - hit.deterministic_error[1:])
    mean_ok = bool(np.all(mean_gap <= 3 * spread / math.sqrt(runs)))
    elapsed = time.perf_counter() - start
    ok = alarm_ok and cov_gap <= 0.05 and mean_ok and elapsed < 300
    report(8, ok, f"alarm rates in 3-sigma band: {alarm_ok} (range {clean.alarm_rate.min():.4f}-{clean.alarm_rate.max():.4f}); "
                  f"prediction covariance gap {cov_gap:.3%}; attacked mean within 3-sigma/sqrt(runs): {mean_ok}; {elapsed:.1f}s")
    assert ok


def test_criterion_9_unaware_attacker(report, vehicle, vehicle_filter):
    policy = EnforcementPolicy.periodic(1, 30)
    scenario = vehicle.scenario
    steps = 120
    budget = vehicle.detector.stealth_budget(scenario.epsilon)
    pattern = SupportPattern.no_enforcement(scenario.compromised, steps)
    attack = synthesize_worst_attack(vehicle_filter, pattern, budget, steps)
    chi2 = DetectorSpec.chi_square(0.015, 2)
    runs = 20_000
    result = simulate(vehicle.model, vehicle_filter, chi2, attack, "unaware", runs, steps, seed=9, policy=policy)
    mean_norm = np.linalg.norm(result.summary.error_mean, axis=1)
    early = mean_norm[30:60].max()
    late = mean_norm[90:120].max()
    bounded = late <= (1 + 1e-6) * early + 3 * math.sqrt(np.trace(vehicle_filter.Sigma) / runs)
    enforced = [j for j in range(1, steps + 1) if policy.enforced_sensors(j, scenario.compromised)]
    limit = chi2.beta + scenario.epsilon
    lower = {j: result.summary.alarm_rate[j - 1] - 3 * result.summary.alarm_stderr[j - 1] for j in enforced}
    detected = [j for j, lo in lower.items() if lo > limit]
    ok = bounded or bool(detected)
    rates = ", ".join(f"{j}:{result.summary.alarm_rate[j - 1]:.4f}" for j in enforced)
    report(9, ok, f"mean error bounded={bounded} ({early:.3f} -> {late:.3f}); enforcement-step alarm rates {rates} "
                  f"vs beta+eps={limit:.3f}, significant at steps {detected}")
    assert ok
