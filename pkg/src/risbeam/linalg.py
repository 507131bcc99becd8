"""Dense complex linear algebra primitives used throughout the package.

Conventions: vectors are 1-D numpy arrays, matrices 2-D complex arrays.
``vec`` is column-stacking, so the usual trace/Kronecker identities hold
with the standard Kronecker product.
"""
from __future__ import annotations

import numpy as np

from .errors import NotPSDError, ValidationError

HERMITIAN_RTOL = 1e-12


def vec(a: np.ndarray) -> np.ndarray:
    """Column-stack a matrix: vec(A)[i + j*rows] = A[i, j]."""
    a = np.asarray(a)
    if a.size == 0:
        raise ValidationError("vec of an empty matrix")
    return np.ravel(a, order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    if v.size != rows * cols:
        raise ValidationError(f"cannot reshape length {v.size} into {rows}x{cols}")
    return np.reshape(v, (rows, cols), order="F")


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product, size (rA*rB) x (cA*cB)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size == 0 or b.size == 0:
        raise ValidationError("kron of an empty matrix")
    return np.kron(a, b)


def hermitian_part(a: np.ndarray) -> np.ndarray:
    """(A + A^H) / 2."""
    a = np.asarray(a, dtype=complex)
    return 0.5 * (a + a.conj().T)


def skew_hermitian_part(a: np.ndarray) -> np.ndarray:
    """(A - A^H) / (2i); Hermitian, and tr(. X) picks Im tr(A X) for Hermitian X."""
    a = np.asarray(a, dtype=complex)
    return (a - a.conj().T) / 2j


def is_hermitian(a: np.ndarray, rtol: float = HERMITIAN_RTOL) -> bool:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    scale = max(np.max(np.abs(a)), 1e-300)
    return float(np.max(np.abs(a - a.conj().T))) <= rtol * scale


def check_hermitian(a: np.ndarray, name: str = "matrix", rtol: float = HERMITIAN_RTOL) -> np.ndarray:
    """Validate Hermitian-ness within tolerance and return the symmetrized matrix."""
    if not is_hermitian(a, rtol=rtol):
        raise ValidationError(f"{name} is not Hermitian within tolerance {rtol:g}")
    return hermitian_part(a)


def eigh_hermitian(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix, symmetrizing first.

    Returns (w, V) with ascending real eigenvalues, A = V diag(w) V^H.
    """
    a = check_hermitian(a)
    w, v = np.linalg.eigh(a)
    return w, v


def inv_sqrt_psd(s: np.ndarray, reg: float = 0.0) -> np.ndarray:
    """(S + reg*I)^{-1/2} of a Hermitian PSD matrix via eigendecomposition.

    Eigenvalues below the clamp floor are raised to it before inversion so a
    sample covariance built from few observations cannot blow the result up.
    When ``reg`` is 0 and the input is near-singular, the floor falls back to
    1e-10 * trace/dim.
    """
    if reg < 0:
        raise ValidationError("reg must be nonnegative")
    w, v = eigh_hermitian(s)
    lam_max = float(np.max(w)) if w.size else 0.0
    if lam_max > 0 and float(np.min(w)) < -1e-8 * lam_max:
        raise NotPSDError(f"matrix has negative eigenvalue {np.min(w):.3e} (max {lam_max:.3e})")
    w = np.maximum(w, 0.0)
    floor = reg
    if floor == 0.0:
        trace = float(np.sum(w))
        near_singular = lam_max == 0.0 or float(np.min(w)) < 1e-12 * lam_max
        if near_singular:
            floor = 1e-10 * trace / s.shape[0] if trace > 0 else 1e-300
    shifted = np.maximum(w + reg, floor if floor > 0 else np.min(w + reg))
    if np.min(shifted) <= 0:
        raise NotPSDError("matrix is singular and no regularizer was supplied")
    t = (v * (shifted ** -0.5)) @ v.conj().T
    return hermitian_part(t)


def psd_sqrt(s: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root, clamping round-off negatives at zero."""
    w, v = eigh_hermitian(s)
    w = np.maximum(w, 0.0)
    return (v * np.sqrt(w)) @ v.conj().T


def complex_normal(rng: np.random.Generator, shape, scale: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian, per-entry variance scale**2."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (scale / np.sqrt(2.0)) * (re + 1j * im)


def assert_finite(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} contains NaN or Inf entries")
    return a
