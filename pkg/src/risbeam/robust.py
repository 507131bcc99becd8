"""Chance-constrained robust design against channel approximation errors.

The twin's error on the user-1 direct link is modeled zero-mean complex
Gaussian with an empirically learned covariance (a streaming sample
covariance over coherence blocks). Whitening turns the error into a
standard Gaussian, the perturbed signal constraint becomes a Gaussian
quadratic form, and a Bernstein-type deterministic restriction with slack
variables (x, y) makes the 1-rho chance constraint convex in the beam Gram.
The alternating loop is the nominal one with the user-1 signal constraint
swapped for the restriction, plus the margin-based surrogates for rank-one
recovery.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .conic import (
    AffineScalar,
    ConicProgram,
    LinearConstraint,
    MatrixVar,
    ProgramFragments,
    ScalarVar,
    SocConstraint,
    solve,
)
from .errors import SingularMatrixError, ValidationError
from .linalg import (
    check_hermitian,
    eigh_hermitian,
    hermitian_part,
    inv_sqrt_psd,
    skew_hermitian_part,
    vec,
)
from .optimizer import (
    AoOptions,
    DesignSolution,
    DesignTargets,
    _AoHooks,
    run_alternating,
    se_values,
    solve_beam_step,
)
from .scenario import ChannelSet, channel_error
from .transform import BeamGram, LiftedPhase, StackedChannel, bernstein_params

SQRT2 = math.sqrt(2.0)

COVARIANCE_PRIOR_SCALE = 1e-6


@dataclass(frozen=True)
class ErrorStatistics:
    """Zero-mean error second moment of vec(dUps^H) and its sample count."""
    sigma: np.ndarray
    n: int = 0

    def __post_init__(self):
        check_hermitian(self.sigma, name="error covariance", rtol=1e-10)
        if self.n < 0:
            raise ValidationError("sample count must be nonnegative")

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return np.zeros(self.dim, dtype=complex)

    @classmethod
    def initial(cls, dim: int, prior_scale: float = COVARIANCE_PRIOR_SCALE) -> "ErrorStatistics":
        return cls(prior_scale * np.eye(dim, dtype=complex), 0)


@dataclass(frozen=True)
class RobustOptions:
    rho: float = 0.05
    whitening: str = "zca"
    reg: float | None = None  # None: 1e-8 * tr(sigma)/dim at whitening time
    conv_window: int = 10

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValidationError("outage probability must lie in (0, 1)")
        if self.whitening not in ("zca", "cholesky", "pca"):
            raise ValidationError(f"unknown whitening kind {self.whitening!r}")
        if self.conv_window < 1:
            raise ValidationError("conv_window must be >= 1")


def update_covariance(st: ErrorStatistics, delta_ups: np.ndarray) -> ErrorStatistics:
    """Streaming second-moment update with the new error sample.

    sigma_n = (1 - 1/n) sigma_{n-1} + (1/n) vec(dUps^H) vec(dUps^H)^H; at
    n = 1 the prior is discarded entirely.
    """
    delta = np.atleast_2d(np.asarray(delta_ups, dtype=complex))
    v = vec(delta.conj().T)
    if v.size != st.dim:
        raise ValidationError(
            f"error sample has dimension {v.size}, statistics expect {st.dim}"
        )
    n = st.n + 1
    outer = np.outer(v, v.conj())
    sigma = (1.0 - 1.0 / n) * st.sigma + (1.0 / n) * outer
    return ErrorStatistics(hermitian_part(sigma), n)


def whitening(sigma: np.ndarray, kind: str = "zca", reg: float = 0.0) -> np.ndarray:
    """T with T sigma T^H ~= I; zca (Hermitian inverse square root) by default."""
    sigma = check_hermitian(sigma, name="covariance", rtol=1e-10)
    w = np.linalg.eigvalsh(sigma)
    lam_max = float(w[-1]) if w.size else 0.0
    if reg == 0.0 and (lam_max <= 0.0 or float(w[0]) < 1e-12 * lam_max):
        raise SingularMatrixError("covariance is rank deficient and reg is zero")
    dim = sigma.shape[0]
    if kind == "zca":
        return inv_sqrt_psd(sigma, reg)
    if kind == "cholesky":
        low = np.linalg.cholesky(sigma + reg * np.eye(dim))
        return np.linalg.inv(low)
    if kind == "pca":
        w, v = eigh_hermitian(sigma)
        w = np.maximum(w + reg, 1e-300)
        return (w ** -0.5)[:, None] * v.conj().T
    raise ValidationError(f"unknown whitening kind {kind!r}")


# ---------------------------------------------------------------------------
# Bernstein restriction
# ---------------------------------------------------------------------------

def bernstein_coefficients(rho: float) -> tuple[float, float]:
    """(sqrt(2 ln(1/rho)), ln(rho)) guarding the tail of the quadratic form."""
    return math.sqrt(2.0 * math.log(1.0 / rho)), math.log(rho)


def bernstein_margin(big_u: np.ndarray, small_u: np.ndarray, u0: float, rho: float) -> float:
    """Deterministic lower confidence level of the quadratic form.

    tr(U) - sqrt(2 ln(1/rho)) sqrt(||U||_F^2 + 2||u||^2)
    + ln(rho) lambda_max^+(-U) + u0; the chance constraint at level 1-rho
    holds whenever this is nonnegative.
    """
    c_tail, c_eig = bernstein_coefficients(rho)
    tr_u = float(np.real(np.trace(big_u)))
    x_star = math.sqrt(float(np.linalg.norm(big_u, "fro") ** 2 + 2.0 * np.linalg.norm(small_u) ** 2))
    lam = np.linalg.eigvalsh(hermitian_part(big_u))
    y_star = max(float(-lam[0]), 0.0)
    return tr_u - c_tail * x_star + c_eig * y_star + u0


def bernstein_feasible_slack_form(
    big_u: np.ndarray, small_u: np.ndarray, u0: float, rho: float
) -> bool:
    """Feasibility of the slack-variable restriction, checked by the solver.

    Exists (x, y >= 0) with tr(U) - sqrt(2 ln(1/rho)) x + ln(rho) y + u0 >= 0,
    sqrt(||U||_F^2 + 2||u||^2) <= x, and yI + U psd. Used as a cross-check of
    the eigenvalue (middle) form, which it must agree with.
    """
    dim = big_u.shape[0]
    c_tail, c_eig = bernstein_coefficients(rho)
    p = ConicProgram()
    p.add_matrix_var("z", dim, psd=True)
    p.add_scalar_var("x", nonneg=True)
    p.add_scalar_var("y", nonneg=True)
    tr_u = float(np.real(np.trace(big_u)))
    p.add_linear({}, {"x": -c_tail, "y": c_eig}, ">=", -tr_u - u0, "confidence")
    norm_vec = math.sqrt(float(np.linalg.norm(big_u, "fro") ** 2 + 2.0 * np.linalg.norm(small_u) ** 2))
    p.add_soc([AffineScalar(offset=norm_vec)], AffineScalar(scalar_coeffs={"x": 1.0}), "tail")
    # z == yI + U entrywise
    for i in range(dim):
        basis = np.zeros((dim, dim), dtype=complex)
        basis[i, i] = 1.0
        p.add_linear({"z": basis}, {"y": -1.0}, "==", float(np.real(big_u[i, i])))
    for i in range(dim):
        for j in range(i + 1, dim):
            sym = np.zeros((dim, dim), dtype=complex)
            sym[i, j] = 0.5
            sym[j, i] = 0.5
            p.add_linear({"z": sym}, {}, "==", float(np.real(big_u[i, j])))
            skew = np.zeros((dim, dim), dtype=complex)
            skew[i, j] = 0.5j
            skew[j, i] = -0.5j
            p.add_linear({"z": skew}, {}, "==", float(np.imag(big_u[i, j])))
    p.set_objective(scalar_coeffs={"x": 1.0})
    res = solve(p)
    return res.status == "optimal"


def _entry_coeff_matrices(s_rows: np.ndarray, emat: np.ndarray, n_tx: int) -> list[np.ndarray]:
    """Per-row reshapes Z_i of S = T^{-H}, so U(F)_ij = tr(Z_j^H E Z_i F)."""
    dim = s_rows.shape[0]
    n_blocks = emat.shape[0]
    return [s_rows[i].reshape(n_blocks, n_tx) for i in range(dim)]


def bernstein_restrict(
    ups_tilde: StackedChannel,
    e: LiftedPhase | np.ndarray,
    t_whiten: np.ndarray,
    tg: DesignTargets,
    rho: float,
    var_beam: str = "f1",
    var_eps: str = "eps1",
    snr_floor: float | None = None,
) -> ProgramFragments:
    """Convex fragments enforcing the chance constraint on the user-1 signal.

    Emits, over variables (F1, eps1) plus slacks x >= 0, y >= 0 and the
    auxiliary PSD matrix Z standing for yI + U(F1):

        tr(U) - sqrt(2 ln(1/rho)) x + ln(rho) y + u0 - eps1 (2^g1 - 1) >= 0
        || (entries of U, sqrt(2) entries of u) || <= x
        Z = yI + U,  Z psd

    where U = T^{-H} (E^T kron F1) T^{-1} and u = T^{-H} vec(F1 Ups~^H E)
    are linear in F1 for fixed phases and whitening.
    """
    emat = e.e if isinstance(e, LiftedPhase) else np.asarray(e, dtype=complex)
    ups = ups_tilde.upsilon
    n_rows, n_tx = ups.shape
    dim = n_rows * n_tx
    t_whiten = np.asarray(t_whiten, dtype=complex)
    if t_whiten.shape != (dim, dim):
        raise ValidationError(f"whitening matrix must be {dim}x{dim}")
    s_big = np.linalg.inv(t_whiten).conj().T  # S = T^{-H}
    if not np.all(np.isfinite(s_big)):
        raise SingularMatrixError("whitening matrix is singular")
    z_rows = _entry_coeff_matrices(s_big, emat, n_tx)
    t1 = snr_floor if snr_floor is not None else tg.snr_floor1
    c_tail, c_eig = bernstein_coefficients(rho)

    # coefficient matrices: U_ij = tr(B_ij F), u_i = tr(D_i F), u0 = tr(G0 F)
    b_mats = [[z_rows[j].conj().T @ emat @ z_rows[i] for j in range(dim)] for i in range(dim)]
    d_mats = [ups.conj().T @ emat @ z_rows[i] for i in range(dim)]
    g0 = hermitian_part(ups.conj().T @ emat @ ups)
    w_trace = hermitian_part(sum(b_mats[i][i] for i in range(dim)))

    frag = ProgramFragments()
    zname, xname, yname = "bern_z", "bern_x", "bern_y"
    frag.matrix_vars.append(MatrixVar(zname, dim, psd=True))
    frag.scalar_vars.append(ScalarVar(xname, nonneg=True))
    frag.scalar_vars.append(ScalarVar(yname, nonneg=True))

    # (i) confidence level covers the required slack
    frag.linear_constraints.append(
        LinearConstraint(
            {var_beam: hermitian_part(w_trace + g0)},
            {xname: -c_tail, yname: c_eig, var_eps: -t1},
            ">=",
            0.0,
            "bernstein_confidence",
        )
    )

    # (ii) second-order bound on the quadratic form's dispersion
    comps: list[AffineScalar] = []
    for i in range(dim):
        comps.append(AffineScalar({var_beam: hermitian_part(b_mats[i][i])}))
    for i in range(dim):
        for j in range(i + 1, dim):
            comps.append(AffineScalar({var_beam: SQRT2 * hermitian_part(b_mats[i][j])}))
            comps.append(AffineScalar({var_beam: SQRT2 * skew_hermitian_part(b_mats[i][j])}))
    for i in range(dim):
        comps.append(AffineScalar({var_beam: SQRT2 * hermitian_part(d_mats[i])}))
        comps.append(AffineScalar({var_beam: SQRT2 * skew_hermitian_part(d_mats[i])}))
    frag.soc_constraints.append(
        SocConstraint(comps, AffineScalar(scalar_coeffs={xname: 1.0}), "bernstein_tail")
    )

    # (iii) Z = yI + U(F), entrywise via a Hermitian basis
    for i in range(dim):
        basis = np.zeros((dim, dim), dtype=complex)
        basis[i, i] = 1.0
        frag.linear_constraints.append(
            LinearConstraint(
                {zname: basis, var_beam: -hermitian_part(b_mats[i][i])},
                {yname: -1.0},
                "==",
                0.0,
            )
        )
    for i in range(dim):
        for j in range(i + 1, dim):
            # tr(sym Z) = Re Z_ij and tr(Her(B_ij) F) = Re U_ij, likewise Im
            b_sym = hermitian_part(b_mats[i][j])
            b_skew = skew_hermitian_part(b_mats[i][j])
            sym = np.zeros((dim, dim), dtype=complex)
            sym[i, j] = 0.5
            sym[j, i] = 0.5
            frag.linear_constraints.append(
                LinearConstraint({zname: sym, var_beam: -b_sym}, {}, "==", 0.0)
            )
            skew = np.zeros((dim, dim), dtype=complex)
            skew[i, j] = 0.5j
            skew[j, i] = -0.5j
            frag.linear_constraints.append(
                LinearConstraint({zname: skew, var_beam: -b_skew}, {}, "==", 0.0)
            )
    return frag


# ---------------------------------------------------------------------------
# Robust alternating optimization
# ---------------------------------------------------------------------------

def _direct_stack(ch_dt: ChannelSet) -> tuple[StackedChannel, LiftedPhase]:
    """Direct-link-only stack (scalar lift), the shipped robust error scope."""
    return StackedChannel(ch_dt.h1), LiftedPhase(np.ones((1, 1), dtype=complex))


def effective_regularizer(sigma: np.ndarray, reg: float | None) -> float:
    if reg is not None:
        return reg
    dim = sigma.shape[0]
    return 1e-8 * float(np.real(np.trace(sigma))) / dim


def robust_optimize(
    ch_dt: ChannelSet,
    tg: DesignTargets,
    st: ErrorStatistics,
    opt: AoOptions,
    ropt: RobustOptions,
) -> DesignSolution:
    """Alternating design with the user-1 signal constraint robustified."""
    if ch_dt.n_rx != 1:
        raise ValidationError("the robust design ships for single-antenna users")
    n_t = ch_dt.n_tx
    if st.sigma.shape != (n_t, n_t):
        raise ValidationError(
            f"error statistics have dimension {st.sigma.shape[0]}, expected {n_t}"
        )
    reg = effective_regularizer(st.sigma, ropt.reg)
    t_mat = whitening(st.sigma, ropt.whitening, reg)
    ups_red, e_red = _direct_stack(ch_dt)
    frag = bernstein_restrict(ups_red, e_red, t_mat, tg, ropt.rho)

    def margin_of_gram(gram: np.ndarray) -> float:
        big_u, small_u, u0 = bernstein_params(ups_red, e_red, BeamGram(gram), t_mat)
        return bernstein_margin(big_u, small_u, u0, ropt.rho)

    hooks = _AoHooks(
        beam_step=lambda e: solve_beam_step(ch_dt, e, tg, signal1_fragments=frag),
        signal1_unit=lambda u: margin_of_gram(np.outer(u, u.conj())),
        signal1_gram=lambda f1g: margin_of_gram(f1g.f_gram),
    )
    return run_alternating(ch_dt, tg, opt, hooks)


# ---------------------------------------------------------------------------
# Learning loop over coherence blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoherenceBlock:
    dt: ChannelSet
    real: ChannelSet


@dataclass
class Algorithm1Result:
    solutions: list[DesignSolution] = field(default_factory=list)
    stats_trajectory: list[ErrorStatistics] = field(default_factory=list)
    acquired: list[bool] = field(default_factory=list)

    @property
    def final_stats(self) -> ErrorStatistics:
        return self.stats_trajectory[-1]


def _series_settled(values: list[float], window: int, rel: float = 0.01) -> bool:
    if len(values) < window:
        return False
    tail = values[-window:]
    if any(not math.isfinite(v) for v in tail):
        return False
    lo, hi = min(tail), max(tail)
    scale = max(abs(hi), 1e-30)
    return (hi - lo) <= rel * scale


def algorithm1_run(
    stream: Iterable[CoherenceBlock],
    tg: DesignTargets,
    opt: AoOptions,
    ropt: RobustOptions,
    stats0: ErrorStatistics | None = None,
) -> Algorithm1Result:
    """Per-block robust design with on-line covariance learning.

    Until both the covariance trace and the robust power settle (relative
    span below 1% over ``conv_window`` blocks), each block acquires the real
    channel and feeds the twin's error into the running covariance;
    afterwards the statistics are frozen. Per-block design failures are
    recorded (infeasible solutions), not raised; the run ends with the
    stream.
    """
    result = Algorithm1Result()
    stats = stats0
    trace_hist: list[float] = []
    power_hist: list[float] = []
    for block in stream:
        if stats is None:
            stats = ErrorStatistics.initial(block.dt.n_tx * block.dt.n_rx)
        settled = _series_settled(trace_hist, ropt.conv_window) and _series_settled(
            power_hist, ropt.conv_window
        )
        if not settled:
            delta = channel_error(block.real.h1, block.dt.h1)
            stats = update_covariance(stats, delta)
            result.acquired.append(True)
        else:
            result.acquired.append(False)
        sol = robust_optimize(block.dt, tg, stats, opt, ropt)
        result.solutions.append(sol)
        result.stats_trajectory.append(stats)
        trace_hist.append(float(np.real(np.trace(stats.sigma))))
        power_hist.append(sol.power if sol.feasible else math.nan)
    if not result.solutions:
        raise ValidationError("coherence-block stream is empty")
    return result


# ---------------------------------------------------------------------------
# Monte-Carlo outage
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutageEstimate:
    outage1: float
    outage2: float
    stderr1: float
    stderr2: float
    n_samples: int

    @property
    def worst(self) -> float:
        return max(self.outage1, self.outage2)


def monte_carlo_outage(
    sol: DesignSolution,
    error_sampler: Callable[[np.random.Generator], ChannelSet],
    tg: DesignTargets,
    n_samples: int,
    rng: np.random.Generator | None = None,
) -> OutageEstimate:
    """Fraction of sampled real channels whose SE falls below the targets."""
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    miss1 = miss2 = 0
    for _ in range(n_samples):
        ch = error_sampler(rng)
        se1, se2 = se_values(ch, sol.f1, sol.f2, sol.theta, tg.sigma1_sq, tg.sigma2_sq)
        miss1 += se1 < tg.gamma1 - 1e-9
        miss2 += se2 < tg.gamma2 - 1e-9
    o1 = miss1 / n_samples
    o2 = miss2 / n_samples
    return OutageEstimate(
        o1,
        o2,
        math.sqrt(o1 * (1 - o1) / n_samples),
        math.sqrt(o2 * (1 - o2) / n_samples),
        n_samples,
    )
