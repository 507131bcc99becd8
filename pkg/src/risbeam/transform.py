"""Lifting machinery for the quadratic link terms.

A link quadratic ||(D + G diag(theta) H) f||^2 is rewritten per receive
antenna r as tr(Upsilon_r^H E Upsilon_r F) with the stacked channel
Upsilon_r = [D_r ; diag(G_r) H], the lifted phase matrix E = th'^H th'
(th' = [1, theta]) and the beamformer Gram F = f f^H. Both trace orderings
agree, which is what makes the alternating SDPs linear in whichever factor
is free. The same expansion with an additive channel error produces the
Gaussian quadratic form consumed by the robust design.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularMatrixError, ValidationError
from .linalg import check_hermitian, hermitian_part, kron, vec


@dataclass(frozen=True)
class StackedChannel:
    """One receive antenna's stacked channel [D_r ; diag(G_r) H]."""
    upsilon: np.ndarray  # (m_ris + 1) x n_tx

    @property
    def n_rows(self) -> int:
        return self.upsilon.shape[0]

    @property
    def n_tx(self) -> int:
        return self.upsilon.shape[1]


@dataclass(frozen=True)
class LiftedPhase:
    """Hermitian PSD lifted phase matrix with unit diagonal."""
    e: np.ndarray

    def validate(self, rtol: float = 1e-9) -> "LiftedPhase":
        e = check_hermitian(self.e, name="lifted phase")
        if np.max(np.abs(np.diag(e) - 1.0)) > rtol:
            raise ValidationError("lifted phase matrix must have unit diagonal")
        return self

    @property
    def dim(self) -> int:
        return self.e.shape[0]


@dataclass(frozen=True)
class BeamGram:
    """Hermitian PSD Gram of a beamformer; trace is the beam power."""
    f_gram: np.ndarray

    @property
    def power(self) -> float:
        return float(np.real(np.trace(self.f_gram)))


def lift_phase(theta: np.ndarray) -> LiftedPhase:
    """E = th'^H th' for th' = [1, theta]; rank one with unit diagonal."""
    theta = np.asarray(theta, dtype=complex).ravel()
    thp = np.concatenate(([1.0 + 0.0j], theta))[None, :]
    return LiftedPhase(thp.conj().T @ thp)


def beam_gram(f: np.ndarray) -> BeamGram:
    f = np.asarray(f, dtype=complex).ravel()[:, None]
    return BeamGram(f @ f.conj().T)


def build_upsilon(d: np.ndarray, g: np.ndarray, h: np.ndarray) -> list[StackedChannel]:
    """Stack [D_r ; diag(G_r) H] for each receive antenna r.

    Pass g = 0 (scalar or zero matrix) for a direct-only link and d = 0 for
    an RIS-only link.
    """
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    m, n_tx = h.shape
    d = np.asarray(d, dtype=complex)
    g = np.asarray(g, dtype=complex)
    d_is_scalar = d.ndim == 0 or d.size == 1 and d.ndim < 2
    g_is_scalar = g.ndim == 0 or g.size == 1 and g.ndim < 2
    if d_is_scalar and g_is_scalar:
        raise ValidationError("at least one of d, g must be a matrix")
    if d_is_scalar:
        if complex(d.ravel()[0] if d.ndim else d) != 0:
            raise ValidationError("scalar d stands for an absent direct link; must be 0")
        n_r = np.atleast_2d(g).shape[0]
        d = np.zeros((n_r, n_tx), dtype=complex)
    d = np.atleast_2d(d)
    n_r = d.shape[0]
    if g_is_scalar:
        if complex(g.ravel()[0] if g.ndim else g) != 0:
            raise ValidationError("scalar g stands for an absent RIS link; must be 0")
        g = np.zeros((n_r, m), dtype=complex)
    g = np.atleast_2d(g)
    if d.shape[1] != n_tx:
        raise ValidationError(f"direct link has {d.shape[1]} columns, expected {n_tx}")
    if g.shape != (n_r, m):
        raise ValidationError(f"RIS link has shape {g.shape}, expected {(n_r, m)}")
    out = []
    for r in range(n_r):
        bottom = g[r, :, None] * h  # diag(G_r) @ H without forming the diagonal
        out.append(StackedChannel(np.vstack([d[r : r + 1, :], bottom])))
    return out


def lifted_quadratic(
    ups: list[StackedChannel] | StackedChannel,
    e: LiftedPhase | np.ndarray,
    f: BeamGram | np.ndarray,
) -> float:
    """sum_r tr(Upsilon_r^H E Upsilon_r F), real and nonnegative for PSD E, F."""
    if isinstance(ups, StackedChannel):
        ups = [ups]
    emat = e.e if isinstance(e, LiftedPhase) else np.asarray(e)
    fmat = f.f_gram if isinstance(f, BeamGram) else np.asarray(f)
    total = 0.0
    for u in ups:
        gamma = u.upsilon.conj().T @ emat @ u.upsilon
        total += float(np.real(np.trace(gamma @ fmat)))
    return total


def gamma_beam(ups: list[StackedChannel], e: LiftedPhase | np.ndarray) -> np.ndarray:
    """sum_r Upsilon_r^H E Upsilon_r: coefficient of F in the lifted quadratic."""
    emat = e.e if isinstance(e, LiftedPhase) else np.asarray(e)
    total = np.zeros((ups[0].n_tx, ups[0].n_tx), dtype=complex)
    for u in ups:
        total += u.upsilon.conj().T @ emat @ u.upsilon
    return hermitian_part(total)


def gamma_phase(ups: list[StackedChannel], f: BeamGram | np.ndarray) -> np.ndarray:
    """sum_r Upsilon_r F Upsilon_r^H: coefficient of E in the lifted quadratic."""
    fmat = f.f_gram if isinstance(f, BeamGram) else np.asarray(f)
    total = np.zeros((ups[0].n_rows, ups[0].n_rows), dtype=complex)
    for u in ups:
        total += u.upsilon @ fmat @ u.upsilon.conj().T
    return hermitian_part(total)


def bernstein_params(
    ups_tilde: StackedChannel,
    e: LiftedPhase | np.ndarray,
    f: BeamGram | np.ndarray,
    t_whiten: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Quadratic-form parameters of the perturbed link term.

    With x = T vec(dUps^H) the perturbed quadratic satisfies

        || th' (Ups~ + dUps) f ||^2 = x^H U x + 2 Re{u^H x} + u0,

    U = T^{-H} (E^T kron F) T^{-1},  u = T^{-H} vec(F Ups~^H E),
    u0 = tr(E Ups~ F Ups~^H). The conjugate transpose on the u factor keeps
    the identity exact for any invertible whitening T (for the Hermitian
    ZCA choice it coincides with T^{-1}).
    """
    emat = e.e if isinstance(e, LiftedPhase) else np.asarray(e)
    fmat = f.f_gram if isinstance(f, BeamGram) else np.asarray(f)
    ups = ups_tilde.upsilon
    d = ups.size
    t_whiten = np.asarray(t_whiten, dtype=complex)
    if t_whiten.shape != (d, d):
        raise ValidationError(
            f"whitening matrix has shape {t_whiten.shape}, expected {(d, d)}"
        )
    try:
        ti = np.linalg.inv(t_whiten)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("whitening matrix is singular") from exc
    if not np.all(np.isfinite(ti)):
        raise SingularMatrixError("whitening matrix inverse is not finite")
    big_u = hermitian_part(ti.conj().T @ kron(emat.T, fmat) @ ti)
    small_u = ti.conj().T @ vec(fmat @ ups.conj().T @ emat)
    u0 = float(np.real(np.trace(emat @ ups @ fmat @ ups.conj().T)))
    return big_u, small_u, u0


def quad_form(big_u: np.ndarray, small_u: np.ndarray, u0: float, x: np.ndarray) -> float:
    """Evaluate x^H U x + 2 Re{u^H x} + u0 for a single sample x."""
    x = np.asarray(x, dtype=complex).ravel()
    return float(np.real(x.conj() @ big_u @ x + 2.0 * np.real(small_u.conj() @ x) + u0))
