"""Plant and steady-state Kalman filter models plus structural analysis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    as_matrix,
    check_probability,
    check_psd,
    readonly,
    symmetrized,
)
from .errors import NumericalError, StructuralError, ValidationError

UNSTABLE_GUARD = 1e-9
RANK_TOL = 1e-9
REACHABILITY_TOL = 1e-8
EIGEN_CLUSTER_TOL = 1e-6


def _observability_matrix(A, C, blocks):
    rows = [C]
    for _ in range(blocks - 1):
        rows.append(rows[-1] @ A)
    return np.vstack(rows)


def _rank(M, tol=RANK_TOL):
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * max(1.0, s[0])))


def _null_space(M, tol=RANK_TOL):
    """Orthonormal basis of the null space of M (complex-safe)."""
    n = M.shape[1]
    if M.shape[0] == 0:
        return np.eye(n, dtype=M.dtype)
    _, s, vh = np.linalg.svd(M)
    scale = max(1.0, s[0]) if s.size else 1.0
    rank = int(np.sum(s > tol * scale))
    return vh[rank:].conj().T


@dataclass(frozen=True)
class PlantModel:
    """Discrete LTI plant with Gaussian process and measurement noise."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    W: np.ndarray
    R: np.ndarray
    sensor_names: tuple = ()

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        n = A.shape[0]
        if n < 1 or A.shape[1] != n:
            raise ValidationError(f"A must be square and non-empty, got {A.shape}")
        B = as_matrix(self.B, "B", shape=(n, None))
        C = as_matrix(self.C, "C", shape=(None, n))
        p = C.shape[0]
        if B.shape[1] < 1 or p < 1:
            raise ValidationError("B and C need at least one column/row")
        W = check_psd(symmetrized(as_matrix(self.W, "W", shape=(n, n)), "W"), "W")
        R = check_psd(symmetrized(as_matrix(self.R, "R", shape=(p, p)), "R"), "R", strict=True)
        names = tuple(self.sensor_names) or tuple(f"y{i}" for i in range(p))
        if len(names) != p or len(set(names)) != p:
            raise ValidationError(f"need {p} distinct sensor names, got {names!r}")
        for attr, val in (("A", A), ("B", B), ("C", C), ("W", W), ("R", R), ("sensor_names", names)):
            object.__setattr__(self, attr, val)
        if _rank(_observability_matrix(A, C, n)) != n:
            raise StructuralError("(A, C) is not observable")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def sensor_index(self, name):
        try:
            return self.sensor_names.index(name)
        except ValueError:
            raise ValidationError(f"unknown sensor {name!r}") from None

    def __eq__(self, other):
        if not isinstance(other, PlantModel):
            return NotImplemented
        return self.sensor_names == other.sensor_names and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in "ABCWR"
        )

    __hash__ = None


@dataclass(frozen=True)
class SteadyStateFilter:
    """Steady-state Kalman filter for a :class:`PlantModel`.

    ``Sigma`` is the one-step prediction covariance, ``K`` the gain applied to
    the innovation ``y_k - C A xhat_{k-1}`` and ``Q`` the innovation covariance.
    ``A`` and ``C`` are kept so the attack-error dynamics can be formed.
    """

    Sigma: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    A: np.ndarray
    C: np.ndarray
    iterations: int = 0
    Q_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "Q_inv", readonly(np.linalg.inv(self.Q)))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def closed_loop(self):
        """Attack-error transition matrix ``A - K C A``."""
        return self.A - self.K @ self.C @ self.A

    @property
    def CA(self):
        return self.C @ self.A

    @property
    def posterior_covariance(self):
        return (np.eye(self.n) - self.K @ self.C) @ self.Sigma

    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.closed_loop))))


def riccati_step(Sigma, A, C, W, R):
    """One prediction-form Riccati update."""
    S = C @ Sigma @ C.T + R
    gain = A @ Sigma @ C.T
    nxt = A @ Sigma @ A.T + W - gain @ np.linalg.solve(S, gain.T)
    return 0.5 * (nxt + nxt.T)


def _iterate_riccati(model, start, tol, max_iter):
    A, C, W, R = model.A, model.C, model.W, model.R
    Sigma = start
    for it in range(1, max_iter + 1):
        nxt = riccati_step(Sigma, A, C, W, R)
        if not np.all(np.isfinite(nxt)):
            raise NumericalError("Riccati iteration diverged")
        delta = np.linalg.norm(nxt - Sigma)
        Sigma = nxt
        if delta <= tol * max(1.0, np.linalg.norm(Sigma)):
            return Sigma, it
    raise NumericalError(f"Riccati iteration did not converge in {max_iter} steps")


def solve_steady_state_filter(model: PlantModel, tol=1e-12, max_iter=1_000_000) -> SteadyStateFilter:
    """Solve the filtering Riccati equation by fixed-point iteration."""
    starts = [np.array(model.W), np.array(model.W) + max(1.0, np.linalg.norm(model.W)) * np.eye(model.n)]
    for start in starts:
        Sigma, its = _iterate_riccati(model, start, tol, max_iter)
        C = model.C
        Q = C @ Sigma @ C.T + model.R
        Q = 0.5 * (Q + Q.T)
        K = np.linalg.solve(Q, C @ Sigma).T
        filt = SteadyStateFilter(
            Sigma=readonly(Sigma), K=readonly(K), Q=readonly(Q), A=model.A, C=model.C, iterations=its
        )
        if filt.spectral_radius() < 1.0:
            return filt
    raise NumericalError("no stabilizing Riccati solution found")


@dataclass(frozen=True)
class JordanChain:
    """Eigenvalue with a chain ``v_1 (eigenvector), v_2, ...`` of generalized eigenvectors."""

    eigenvalue: complex
    vectors: tuple

    @property
    def eigenvector(self):
        return self.vectors[0]

    def __len__(self):
        return len(self.vectors)


@dataclass(frozen=True)
class StructuralReport:
    psi: int
    q_un: int
    f_required: int
    unstable_eigenstructure: tuple
    compromised: tuple | None = None


@dataclass(frozen=True)
class AttackScenario:
    """Compromised sensor set (0-based indices), stealth slack and confidence scaling."""

    compromised: tuple
    epsilon: float
    gamma: float = 0.0

    def __post_init__(self):
        comp = tuple(sorted({int(i) for i in self.compromised}))
        if not comp:
            raise ValidationError("compromised set must be non-empty")
        if comp[0] < 0:
            raise ValidationError("sensor indices must be nonnegative")
        eps = check_probability(self.epsilon, "epsilon", low_open=False, high_open=False)
        gamma = float(self.gamma)
        if not gamma >= 0.0:
            raise ValidationError("gamma must be >= 0")
        object.__setattr__(self, "compromised", comp)
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def all_sensors(cls, model, epsilon, gamma=0.0):
        return cls(tuple(range(model.p)), epsilon, gamma)

    def check_against(self, model):
        if self.compromised[-1] >= model.p:
            raise ValidationError(f"sensor index {self.compromised[-1]} out of range for p={model.p}")
        return self


def observability_index(A, C):
    n = A.shape[0]
    for i in range(1, n + 1):
        if _rank(_observability_matrix(A, C, i)) == n:
            return i
    raise StructuralError("(A, C) is not observable")


def _cluster_eigenvalues(eigs):
    clusters = []
    for lam in sorted(eigs, key=lambda z: (-abs(z), z.real, z.imag)):
        for c in clusters:
            if abs(c[0] - lam) <= EIGEN_CLUSTER_TOL * max(1.0, abs(lam)):
                c.append(lam)
                break
        else:
            clusters.append([lam])
    return [(complex(np.mean(c)), len(c)) for c in clusters]


def jordan_chains(A, eigenvalue, multiplicity):
    """Jordan chains of ``A`` for one eigenvalue with the given algebraic multiplicity."""
    n = A.shape[0]
    N = A.astype(complex) - eigenvalue * np.eye(n)
    powers = [np.eye(n, dtype=complex)]
    for _ in range(multiplicity):
        powers.append(N @ powers[-1])
    ranks = [_rank(P) for P in powers]
    # chains of length >= j number ranks[j-1] - ranks[j]
    at_least = [0] + [ranks[j - 1] - ranks[j] for j in range(1, multiplicity + 1)]
    chains = []
    for length in range(multiplicity, 0, -1):
        longer = at_least[length + 1] if length + 1 <= multiplicity else 0
        new = at_least[length] - longer
        if new <= 0:
            continue
        top = _null_space(powers[length])
        blocked = [_null_space(powers[length - 1])]
        for ch in chains:
            blocked.append(ch[length - 1].reshape(-1, 1))
        span = np.hstack(blocked) if blocked else np.zeros((n, 0), dtype=complex)
        if span.shape[1]:
            q, _ = np.linalg.qr(span)
            q = q[:, : _rank(span)]
            residual = top - q @ (q.conj().T @ top)
        else:
            residual = top
        u, s, _ = np.linalg.svd(residual, full_matrices=False)
        for idx in range(min(new, u.shape[1])):
            head = u[:, idx]
            chain = [head]
            for _ in range(length - 1):
                chain.append(N @ chain[-1])
            chain.reverse()
            chain = [v / np.linalg.norm(chain[0]) for v in chain]
            chains.append(chain)
    return [JordanChain(eigenvalue, tuple(readonly_c(v) for v in ch)) for ch in chains]


def readonly_c(v):
    v = np.array(v, dtype=complex)
    if np.allclose(v.imag, 0.0, atol=1e-13):
        v = v.real.copy()
    v.setflags(write=False)
    return v


def unstable_eigenvalues(A):
    eigs = np.linalg.eigvals(A)
    return [(lam, mult) for lam, mult in _cluster_eigenvalues(eigs) if abs(lam) >= 1.0 - UNSTABLE_GUARD]


def _outside_support_rows(C, compromised):
    rows = [i for i in range(C.shape[0]) if i not in set(compromised)]
    return C[rows]


def _head_supported(C, compromised, v):
    outside = _outside_support_rows(C, compromised)
    if outside.shape[0] == 0:
        return True
    return np.linalg.norm(outside @ v) <= REACHABILITY_TOL * max(1.0, np.linalg.norm(C) * np.linalg.norm(v))


def structural_report(model: PlantModel, compromised=None) -> StructuralReport:
    """Observability index, unstable-mode count and required enforcement block length."""
    psi = observability_index(model.A, model.C)
    structure = []
    q_un = 0
    for lam, mult in unstable_eigenvalues(model.A):
        chains = jordan_chains(model.A, lam, mult)
        structure.extend(chains)
        if compromised is None:
            q_un += mult
        else:
            q_un += sum(len(ch) for ch in chains if _head_supported(model.C, compromised, ch.eigenvector))
    f_required = min(psi, q_un) if q_un > 0 else 0
    comp = None if compromised is None else tuple(sorted(compromised))
    return StructuralReport(psi, q_un, f_required, tuple(structure), comp)


@dataclass(frozen=True)
class AttackabilityVerdict:
    attackable: bool
    witness: np.ndarray | None = None
    eigenvalue: complex | None = None

    def __bool__(self):
        return self.attackable


def controllability_basis(F, G, steps):
    """Orthonormal basis for the span of ``[G, F G, ..., F^{steps-1} G]``."""
    n = F.shape[0]
    if G.shape[1] == 0:
        return np.zeros((n, 0))
    blocks = [G]
    for _ in range(steps - 1):
        blocks.append(F @ blocks[-1])
    ctrb = np.hstack(blocks)
    u, s, _ = np.linalg.svd(ctrb, full_matrices=False)
    rank = int(np.sum(s > RANK_TOL * max(1.0, s[0]))) if s.size else 0
    return u[:, :rank]


def is_perfectly_attackable(model: PlantModel, filt: SteadyStateFilter, scenario: AttackScenario) -> AttackabilityVerdict:
    """Test whether stealthy attacks on ``scenario.compromised`` can drive the error unbounded.

    Looks for an unstable eigenvector ``v`` whose output ``C v`` lives on the
    compromised sensors and which is reachable by the attack-error dynamics
    ``(A - K C A, K restricted to compromised columns)``.
    """
    scenario.check_against(model)
    comp = list(scenario.compromised)
    reach = controllability_basis(filt.closed_loop, filt.K[:, comp], 2 * model.n)
    if reach.shape[1] == 0:
        return AttackabilityVerdict(False)
    outside = _outside_support_rows(model.C, comp)
    for lam, _ in unstable_eigenvalues(model.A):
        stacked = np.vstack([model.A - lam * np.eye(model.n), outside.astype(complex)])
        candidates = _null_space(stacked.astype(complex))
        if candidates.shape[1] == 0:
            continue
        # intersect span(candidates) with the reachable subspace
        joint = np.hstack([candidates, -reach.astype(complex)])
        coeffs = _null_space(joint)
        for j in range(coeffs.shape[1]):
            v = candidates @ coeffs[: candidates.shape[1], j]
            norm = np.linalg.norm(v)
            if norm == 0.0:
                continue
            v = v / norm
            residual = v - reach @ (reach.T @ v)
            if np.linalg.norm(residual) <= REACHABILITY_TOL:
                return AttackabilityVerdict(True, readonly_c(v), lam)
    return AttackabilityVerdict(False)


__all__ = [
    "AttackScenario",
    "AttackabilityVerdict",
    "JordanChain",
    "PlantModel",
    "SteadyStateFilter",
    "StructuralReport",
    "controllability_basis",
    "is_perfectly_attackable",
    "jordan_chains",
    "observability_index",
    "riccati_step",
    "solve_steady_state_filter",
    "structural_report",
    "unstable_eigenvalues",
]
