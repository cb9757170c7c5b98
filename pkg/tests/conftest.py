import numpy as np
import pytest

from integrity_reach import load_fixture, solve_steady_state_filter


def random_observable_system(rng, n, p, scale=1.3):
    """Random (A, C, W, R) with an observable pair and SPD noise."""
    while True:
        A = rng.normal(size=(n, n))
        A *= scale / max(abs(np.linalg.eigvals(A)))
        C = rng.normal(size=(p, n))
        obs = np.vstack([C @ np.linalg.matrix_power(A, i) for i in range(n)])
        if np.linalg.matrix_rank(obs) == n and np.linalg.svd(obs, compute_uv=False)[-1] > 1e-3:
            break
    G = rng.normal(size=(n, n))
    H = rng.normal(size=(p, p))
    W = G @ G.T + 0.1 * np.eye(n)
    R = H @ H.T + 0.1 * np.eye(p)
    return A, C, W, R


@pytest.fixture(scope="session")
def vehicle():
    return load_fixture("vehicle")


@pytest.fixture(scope="session")
def vehicle_filter(vehicle):
    return solve_steady_state_filter(vehicle.model)


@pytest.fixture(scope="session")
def cacc():
    return load_fixture("cacc")
