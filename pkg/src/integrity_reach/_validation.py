"""Array validation helpers used at every public entry point."""

import numpy as np

from .errors import ValidationError

SYMMETRY_TOL = 1e-9
PSD_TOL = 1e-9


def as_matrix(value, name, shape=None):
    """Return ``value`` as a finite 2-D float array, optionally checking its shape."""
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D matrix, got ndim={arr.ndim}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    if shape is not None:
        expected = tuple(arr.shape[i] if s is None else s for i, s in enumerate(shape))
        if arr.shape != expected:
            raise ValidationError(f"{name} has shape {arr.shape}, expected {expected}")
    arr.setflags(write=False)
    return arr


def symmetrized(matrix, name):
    """Accept a nearly symmetric matrix and return its symmetric part."""
    m = np.asarray(matrix, dtype=float)
    if m.shape[0] != m.shape[1]:
        raise ValidationError(f"{name} must be square, got {m.shape}")
    scale = 1.0 + np.linalg.norm(m)
    if np.linalg.norm(m - m.T) > SYMMETRY_TOL * scale:
        raise ValidationError(f"{name} is not symmetric")
    out = 0.5 * (m + m.T)
    out.setflags(write=False)
    return out


def check_psd(matrix, name, strict=False):
    """Raise unless ``matrix`` is positive semidefinite (definite if ``strict``)."""
    if matrix.size == 0:
        return matrix
    eig = np.linalg.eigvalsh(matrix)
    floor = -PSD_TOL * (1.0 + np.max(np.abs(eig)))
    if strict and eig[0] <= 0.0:
        raise ValidationError(f"{name} must be positive definite (min eigenvalue {eig[0]:.3g})")
    if eig[0] < floor:
        raise ValidationError(f"{name} must be positive semidefinite (min eigenvalue {eig[0]:.3g})")
    return matrix


def check_probability(value, name, low_open=True, high_open=True):
    v = float(value)
    low_ok = v > 0.0 if low_open else v >= 0.0
    high_ok = v < 1.0 if high_open else v <= 1.0
    if not (low_ok and high_ok and np.isfinite(v)):
        raise ValidationError(f"{name}={value!r} is not a valid probability")
    return v


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or int(value) != value or int(value) < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def readonly(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr
