import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from integrity_reach import (
    AttackScenario,
    DetectorSpec,
    EnforcementPolicy,
    FixedBudget,
    PlantModel,
    SupportPattern,
    max_expected_error,
    propagate_attack,
    reachable_region,
    simulate,
    solve_steady_state_filter,
    synthesize_worst_attack,
    trajectory_scenario,
)
from integrity_reach.attack import injected_attack
from integrity_reach.errors import ValidationError

from conftest import random_observable_system
from oracles import attack_response, brute_force_max_error


def _system(seed, n=2, p=2):
    rng = np.random.default_rng(seed)
    A, C, W, R = random_observable_system(rng, n, p)
    model = PlantModel(A, np.ones((n, 1)), C, W, R)
    return model, solve_steady_state_filter(model)


def test_zero_budget_gives_zero_attack(vehicle_filter):
    pattern = SupportPattern.no_enforcement((0, 1), 5)
    attack = synthesize_worst_attack(vehicle_filter, pattern, FixedBudget(0.0), 5)
    assert attack.achieved_error == 0.0
    assert not np.any(attack.vector)


def test_fully_enforced_horizon_gives_zero_attack(vehicle_filter):
    policy = EnforcementPolicy.periodic(10, 10, t0=2)
    pattern = policy.support_pattern((0, 1), 8)
    # step 1 stays writable; target a step inside the enforced stretch after the anchor
    attack = synthesize_worst_attack(vehicle_filter, pattern, FixedBudget(1.0), 5, anchor=5)
    per_step = attack.per_step()
    assert not np.any(per_step[1:])


def test_one_dimensional_matches_brute_force():
    model = PlantModel([[1.2]], [[1.0]], [[1.0]], [[1.0]], [[1.0]])
    filt = solve_steady_state_filter(model)
    pattern = SupportPattern.no_enforcement((0,), 3)
    attack = synthesize_worst_attack(filt, pattern, FixedBudget(0.5), 3)
    oracle = brute_force_max_error(
        model.A, model.C, filt.K, filt.Q_inv, pattern.supports, 3, 0.5, np.random.default_rng(0)
    )
    assert attack.achieved_error == pytest.approx(oracle, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), L=st.integers(2, 6), k=st.integers(1, 20))
def test_synthesis_attains_region_extent(seed, L, k):
    _, filt = _system(seed, 3, 2)
    policy = EnforcementPolicy.periodic(1, L)
    pattern = policy.support_pattern((0, 1), k)
    budget = FixedBudget(0.8)
    attack = synthesize_worst_attack(filt, pattern, budget, k)
    bound = max_expected_error(reachable_region(filt, pattern, budget, k))
    assert attack.achieved_error == pytest.approx(bound, rel=1e-8, abs=1e-14)
    assert np.all(attack.prefix_feasible(filt, budget))
    per_step = attack.per_step()
    for j in range(1, attack.anchor + 1):
        if policy.enforced_sensors(j, (0, 1)):
            assert not np.any(per_step[j - 1])


def test_propagation_matches_reference():
    model, filt = _system(2, 3, 2)
    a = np.random.default_rng(1).standard_normal((7, 2))
    de, dz = propagate_attack(filt, a)
    errs, resid = attack_response(model.A, model.C, filt.K, a)
    assert np.allclose(de[1:], errs) and np.allclose(dz, resid)


def test_simulation_is_deterministic(vehicle, vehicle_filter):
    args = (vehicle.model, vehicle_filter, vehicle.detector)
    one = simulate(*args, runs=300, steps=12, seed=4, store_traces=True)
    two = simulate(*args, runs=300, steps=12, seed=4, store_traces=True)
    other = simulate(*args, runs=300, steps=12, seed=5)
    assert np.array_equal(one.trace.residual, two.trace.residual)
    assert np.array_equal(one.summary.error_cov, two.summary.error_cov)
    assert not np.array_equal(one.summary.error_cov, other.summary.error_cov)


def test_linearity_split(vehicle, vehicle_filter):
    pattern = SupportPattern.no_enforcement((0, 1), 15)
    attack = synthesize_worst_attack(vehicle_filter, pattern, FixedBudget(0.3), 15)
    args = (vehicle.model, vehicle_filter, vehicle.detector)
    clean = simulate(*args, runs=50, steps=15, seed=8, store_traces=True)
    hit = simulate(*args, attack=attack, runs=50, steps=15, seed=8, store_traces=True)
    de, dz = propagate_attack(vehicle_filter, attack.per_step())
    assert np.allclose(hit.trace.x, clean.trace.x, atol=0)
    assert np.allclose(clean.trace.xhat - hit.trace.xhat, de[1:], atol=1e-10)
    assert np.allclose(hit.trace.residual - clean.trace.residual, dz, atol=1e-10)


@pytest.mark.parametrize("runs", [2_000, 32_000])
def test_residual_covariance_converges(vehicle, vehicle_filter, runs):
    result = simulate(vehicle.model, vehicle_filter, vehicle.detector, runs=runs, steps=3, seed=2)
    gap = np.linalg.norm(result.summary.residual_cov[-1] - vehicle_filter.Q) / np.linalg.norm(vehicle_filter.Q)
    # standard error of a sample covariance shrinks like 1/sqrt(runs)
    assert gap < 6.0 / np.sqrt(runs)


def test_aware_mode_rejects_writes_on_enforced_steps(vehicle):
    policy = EnforcementPolicy.periodic(1, 3)
    attack = np.ones((6, 2))
    with pytest.raises(ValidationError):
        injected_attack(attack, 6, 2, "aware", policy)
    cut = injected_attack(attack, 6, 2, "unaware", policy)
    assert np.array_equal(cut[:, 0], [1, 1, 0, 1, 1, 0])


def test_simulation_argument_checks(vehicle, vehicle_filter):
    with pytest.raises(ValidationError):
        simulate(vehicle.model, vehicle_filter, vehicle.detector, runs=0, steps=3)
    with pytest.raises(ValidationError):
        simulate(vehicle.model, vehicle_filter, vehicle.detector, runs=10)
    with pytest.raises(ValidationError):
        simulate(vehicle.model, vehicle_filter, vehicle.detector, runs=10, steps=3, mode="unaware")


def test_closed_loop_deviation_follows_attack_dynamics(vehicle, vehicle_filter):
    pattern = SupportPattern.no_enforcement((0, 1), 40)
    attack = synthesize_worst_attack(vehicle_filter, pattern, FixedBudget(0.2), 40)
    trace = trajectory_scenario(vehicle.model, vehicle_filter, (attack, None), duration=60, seed=1)
    de, _ = propagate_attack(vehicle_filter, attack.per_step(60))
    assert np.allclose(trace.estimation_deviation[1:], np.linalg.norm(de[1:], axis=1), atol=1e-9)
    clean = trajectory_scenario(vehicle.model, vehicle_filter, duration=60, seed=1, noise=False)
    # pseudo-inverse feedforward leaves a small steady offset on the circle
    assert clean.tracking_error.max() < 1e-3
    assert np.all(clean.path_deviation == 0.0)
