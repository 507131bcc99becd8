"""Alternating power-minimization over beamformers and RIS phases.

The design problem: serve user 1 from the BS direct link and user 2 through
the RIS, meeting per-user spectral-efficiency floors gamma_k at minimum
total transmit power. With the slack variables eps_k standing for each
user's interference-plus-noise budget, all four quadratic constraints are
linear in either the beam Grams (phases fixed) or the lifted phase matrix
(Grams fixed), so the loop alternates two SDPs, recovering rank-one
beams/phases by Gaussian randomization after each, and keeps the best
feasible rank-one solution found.

Power control for fixed directions is closed-form: with per-unit-power
signal/leakage coefficients, the componentwise-least feasible power pair
solves a 2x2 fixed point, and that pair is used both to score randomization
candidates and to restore feasibility of the accepted solution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .conic import ConicProgram, ProgramFragments, randomize_rank1, solve
from .errors import RecoveryFailureError, StepInfeasibleError, ValidationError
from .linalg import hermitian_part
from .scenario import ChannelSet
from .transform import (
    BeamGram,
    LiftedPhase,
    beam_gram,
    build_upsilon,
    gamma_beam,
    gamma_phase,
    lift_phase,
)

SE_FEASIBILITY_TOL = 1e-3  # bit/s/Hz slack when flagging a solution feasible


@dataclass(frozen=True)
class DesignTargets:
    gamma1: float
    gamma2: float
    sigma1_sq: float
    sigma2_sq: float

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValidationError("SE targets must be nonnegative")
        if self.sigma1_sq <= 0 or self.sigma2_sq <= 0:
            raise ValidationError("noise powers must be positive")

    @property
    def snr_floor1(self) -> float:
        return 2.0 ** self.gamma1 - 1.0

    @property
    def snr_floor2(self) -> float:
        return 2.0 ** self.gamma2 - 1.0


@dataclass
class AoOptions:
    max_iters: int = 20
    rel_tol: float = 1e-3
    n_cand: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.rel_tol <= 0:
            raise ValidationError("rel_tol must be positive")


@dataclass
class DesignSolution:
    f1: np.ndarray
    f2: np.ndarray
    theta: np.ndarray
    eps1: float
    eps2: float
    power: float
    feasible: bool
    iterations: int
    diagnostics: str = ""


def make_solution(f1, f2, theta, eps1, eps2, feasible, iterations, diagnostics="") -> DesignSolution:
    f1 = np.asarray(f1, dtype=complex).ravel()
    f2 = np.asarray(f2, dtype=complex).ravel()
    theta = np.asarray(theta, dtype=complex).ravel()
    power = float(np.linalg.norm(f1) ** 2 + np.linalg.norm(f2) ** 2)
    return DesignSolution(f1, f2, theta, float(eps1), float(eps2), power,
                          bool(feasible), int(iterations), diagnostics)


# ---------------------------------------------------------------------------
# Effective spectral efficiency
# ---------------------------------------------------------------------------

def effective_channels(ch: ChannelSet, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(H1 + G1 diag(theta) H_BR, G2 diag(theta) H_BR); user 2 has no direct link."""
    theta = np.asarray(theta, dtype=complex).ravel()
    reflected = theta[:, None] * ch.h_br
    return ch.h1 + ch.g1 @ reflected, ch.g2 @ reflected


def se_values(ch: ChannelSet, f1, f2, theta, sigma1_sq: float, sigma2_sq: float) -> tuple[float, float]:
    eff1, eff2 = effective_channels(ch, theta)
    s1 = float(np.linalg.norm(eff1 @ f1) ** 2)
    i1 = float(np.linalg.norm(eff1 @ f2) ** 2)
    s2 = float(np.linalg.norm(eff2 @ f2) ** 2)
    i2 = float(np.linalg.norm(eff2 @ f1) ** 2)
    se1 = math.log2(1.0 + s1 / (i1 + sigma1_sq))
    se2 = math.log2(1.0 + s2 / (i2 + sigma2_sq))
    return se1, se2


def effective_se(ch: ChannelSet, sol: DesignSolution, tg: DesignTargets) -> tuple[float, float]:
    """Per-user SE = log2(1 + signal / (interference + noise)) on the given channels."""
    return se_values(ch, sol.f1, sol.f2, sol.theta, tg.sigma1_sq, tg.sigma2_sq)


# ---------------------------------------------------------------------------
# Closed-form power control for fixed directions and phases
# ---------------------------------------------------------------------------

class PowerSplit(NamedTuple):
    p1: float
    p2: float
    eps1: float
    eps2: float

    @property
    def total(self) -> float:
        return self.p1 + self.p2


def minimal_powers(
    a1: float, c12: float, s2: float, c21: float,
    t1: float, t2: float, sigma1_sq: float, sigma2_sq: float,
) -> PowerSplit | None:
    """Least feasible (p1, p2) for fixed beams/phases, or None.

    a1: user-1 signal per unit p1 (its robust surrogate in the robust loop);
    s2: user-2 signal per unit p2; c12/c21: leakage per unit p1/p2 into the
    other user; t_k: SINR floors 2^gamma_k - 1.
    """
    if t1 <= 0.0 and t2 <= 0.0:
        p1 = p2 = 0.0
    elif t1 <= 0.0:
        if s2 <= 0.0:
            return None
        p1, p2 = 0.0, t2 * sigma2_sq / s2
    elif t2 <= 0.0:
        if a1 <= 0.0:
            return None
        p1, p2 = t1 * sigma1_sq / a1, 0.0
    else:
        if a1 <= 0.0 or s2 <= 0.0:
            return None
        k = (t1 * c21 / a1) * (t2 * c12 / s2)
        if k >= 1.0 - 1e-12:
            return None
        p2 = ((t2 * sigma2_sq / s2) + (t2 * c12 / s2) * (t1 * sigma1_sq / a1)) / (1.0 - k)
        p1 = (t1 / a1) * (sigma1_sq + c21 * p2)
    return PowerSplit(p1, p2, sigma1_sq + c21 * p2, sigma2_sq + c12 * p1)


# ---------------------------------------------------------------------------
# SDP steps
# ---------------------------------------------------------------------------

class BeamStepResult(NamedTuple):
    f1_gram: BeamGram
    f2_gram: BeamGram
    eps1: float
    eps2: float
    objective: float


def _user_stacks(ch: ChannelSet):
    ups1 = build_upsilon(ch.h1, ch.g1, ch.h_br)
    ups2 = build_upsilon(0, ch.g2, ch.h_br)
    return ups1, ups2


def solve_beam_step(
    ch_dt: ChannelSet,
    e_fixed: LiftedPhase,
    tg: DesignTargets,
    signal1_fragments: ProgramFragments | None = None,
) -> BeamStepResult:
    """Minimize tr(F1) + tr(F2) with the lifted phase matrix held fixed.

    ``signal1_fragments`` replaces the nominal user-1 signal constraint
    (used by the robust design); it must reference variables 'f1' and 'eps1'.
    """
    n_t = ch_dt.n_tx
    ups1, ups2 = _user_stacks(ch_dt)
    g2e = gamma_beam(ups2, e_fixed)
    g1e = gamma_beam(ups1, e_fixed)
    gdir = hermitian_part(ch_dt.h1.conj().T @ ch_dt.h1)
    t1, t2 = tg.snr_floor1, tg.snr_floor2

    p = ConicProgram()
    p.add_matrix_var("f1", n_t, psd=True)
    p.add_matrix_var("f2", n_t, psd=True)
    p.add_scalar_var("eps1")
    p.add_scalar_var("eps2")
    p.add_linear({"f1": g2e}, {"eps2": -1.0}, "<=", -tg.sigma2_sq, "leak_to_user2")
    p.add_linear({"f2": g2e}, {"eps2": -t2}, ">=", 0.0, "signal_user2")
    p.add_linear({"f2": g1e}, {"eps1": -1.0}, "<=", -tg.sigma1_sq, "leak_to_user1")
    if signal1_fragments is None:
        p.add_linear({"f1": gdir}, {"eps1": -t1}, ">=", 0.0, "signal_user1")
    else:
        signal1_fragments.apply(p)
    p.add_linear({}, {"eps1": 1.0}, ">=", tg.sigma1_sq, "eps1_floor")
    p.add_linear({}, {"eps2": 1.0}, ">=", tg.sigma2_sq, "eps2_floor")
    p.set_objective({"f1": np.eye(n_t), "f2": np.eye(n_t)})

    res = solve(p)
    if not res.is_optimal:
        raise StepInfeasibleError(f"beam step: solver status {res.status}", status=res.status)
    return BeamStepResult(
        BeamGram(res.matrices["f1"]),
        BeamGram(res.matrices["f2"]),
        res.scalars["eps1"],
        res.scalars["eps2"],
        res.objective,
    )


def solve_phase_step(
    ch_dt: ChannelSet,
    f1: BeamGram,
    f2: BeamGram,
    tg: DesignTargets,
    signal1_value: float | None = None,
) -> LiftedPhase:
    """Optimize the relaxed lifted phase matrix with the Grams held fixed.

    Stage 1 minimizes eps1 + eps2 (the interference-plus-noise budgets).
    Stage 2 re-solves with the budgets pinned at their optimum and maximizes
    the user-2 signal term, so the returned matrix stays informative for
    rank-one recovery instead of an arbitrary point of the optimal face.

    ``signal1_value`` is the phase-free user-1 signal level that caps eps1
    (its robust surrogate in the robust loop); default tr(Gdir F1).
    """
    m = ch_dt.n_ris
    ups1, ups2 = _user_stacks(ch_dt)
    l2_f1 = gamma_phase(ups2, f1)
    l2_f2 = gamma_phase(ups2, f2)
    l1_f2 = gamma_phase(ups1, f2)
    gdir = hermitian_part(ch_dt.h1.conj().T @ ch_dt.h1)
    if signal1_value is None:
        signal1_value = float(np.real(np.trace(gdir @ f1.f_gram)))
    t1, t2 = tg.snr_floor1, tg.snr_floor2

    def base_program() -> ConicProgram:
        p = ConicProgram()
        p.add_matrix_var("e", m + 1, psd=True)
        for i in range(m + 1):
            basis = np.zeros((m + 1, m + 1), dtype=complex)
            basis[i, i] = 1.0
            p.add_linear({"e": basis}, {}, "==", 1.0, f"unit_diag_{i}")
        return p

    # stage 1: minimize the budgets
    p = base_program()
    p.add_scalar_var("eps1")
    p.add_scalar_var("eps2")
    p.add_linear({"e": l2_f1}, {"eps2": -1.0}, "<=", -tg.sigma2_sq, "leak_to_user2")
    p.add_linear({"e": l2_f2}, {"eps2": -t2}, ">=", 0.0, "signal_user2")
    p.add_linear({"e": l1_f2}, {"eps1": -1.0}, "<=", -tg.sigma1_sq, "leak_to_user1")
    if t1 > 0.0:
        p.add_linear({}, {"eps1": t1}, "<=", signal1_value, "signal_user1_cap")
    p.add_linear({}, {"eps1": 1.0}, ">=", tg.sigma1_sq, "eps1_floor")
    p.add_linear({}, {"eps2": 1.0}, ">=", tg.sigma2_sq, "eps2_floor")
    p.set_objective(scalar_coeffs={"eps1": 1.0, "eps2": 1.0})
    res = solve(p)
    if not res.is_optimal:
        raise StepInfeasibleError(f"phase step: solver status {res.status}", status=res.status)
    eps1 = res.scalars["eps1"]
    eps2 = res.scalars["eps2"]
    e_stage1 = res.matrices["e"]

    # stage 2: pin the budgets (tiny slack keeps stage 1's point feasible)
    slack = 1e-9
    p2 = base_program()
    p2.add_linear({"e": l2_f1}, {}, "<=", eps2 * (1 + slack) + slack - tg.sigma2_sq, "leak_to_user2")
    p2.add_linear({"e": l2_f2}, {}, ">=", t2 * eps2 * (1 - slack) - slack, "signal_user2")
    p2.add_linear({"e": l1_f2}, {}, "<=", eps1 * (1 + slack) + slack - tg.sigma1_sq, "leak_to_user1")
    p2.set_objective({"e": -l2_f2})
    res2 = solve(p2)
    e_mat = res2.matrices["e"] if res2.is_optimal else e_stage1
    return LiftedPhase(hermitian_part(e_mat))


# ---------------------------------------------------------------------------
# Alternating optimization
# ---------------------------------------------------------------------------

@dataclass
class _AoHooks:
    """Strategy points that differ between the nominal and robust designs.

    The user-1 signal coefficient is what the two designs disagree on: the
    nominal design uses the direct-link term of the signal constraint, the
    robust design its Bernstein margin. Either way, recovery additionally
    caps the credited signal at the effective-channel value so accepted
    solutions meet the SE they were designed for (the RIS reflection can
    interfere destructively with the direct link).
    """
    beam_step: Callable[[LiftedPhase], BeamStepResult]
    signal1_unit: Callable[[np.ndarray], float]  # direction -> per-unit-power signal coefficient
    signal1_gram: Callable[[BeamGram], float]    # gram -> signal level (phase-step cap)


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0x7FFFFFFF, *tags])


@dataclass
class _Candidate:
    u1: np.ndarray | None  # unit direction or None when the beam carries no power
    u2: np.ndarray | None
    theta: np.ndarray
    split: PowerSplit


class _AoState:
    def __init__(self, ch: ChannelSet, tg: DesignTargets, hooks: _AoHooks):
        self.ch = ch
        self.tg = tg
        self.hooks = hooks
        self.best: DesignSolution | None = None
        self.best_margin = -np.inf
        self.notes: list[str] = []

    def link_coeffs(self, theta: np.ndarray):
        eff1, eff2 = effective_channels(self.ch, theta)
        return eff1, eff2

    def rebalance(self, u1, u2, theta) -> _Candidate | None:
        """Least-power feasible candidate for fixed directions and phases."""
        eff1, eff2 = self.link_coeffs(theta)
        a1 = 0.0
        if u1 is not None:
            a1 = min(
                self.hooks.signal1_unit(u1),
                float(np.linalg.norm(eff1 @ u1) ** 2),
            )
        c12 = float(np.linalg.norm(eff2 @ u1) ** 2) if u1 is not None else 0.0
        s2 = float(np.linalg.norm(eff2 @ u2) ** 2) if u2 is not None else 0.0
        c21 = float(np.linalg.norm(eff1 @ u2) ** 2) if u2 is not None else 0.0
        if self.tg.snr_floor1 > 0 and u1 is None:
            return None
        if self.tg.snr_floor2 > 0 and u2 is None:
            return None
        split = minimal_powers(
            a1, c12, s2, c21, self.tg.snr_floor1, self.tg.snr_floor2,
            self.tg.sigma1_sq, self.tg.sigma2_sq,
        )
        if split is None:
            return None
        return _Candidate(u1, u2, theta, split)

    def vectors(self, cand: _Candidate) -> tuple[np.ndarray, np.ndarray]:
        n_t = self.ch.n_tx
        f1 = math.sqrt(cand.split.p1) * cand.u1 if cand.u1 is not None else np.zeros(n_t, complex)
        f2 = math.sqrt(cand.split.p2) * cand.u2 if cand.u2 is not None else np.zeros(n_t, complex)
        return f1, f2

    def consider(self, cand: _Candidate | None, iteration: int) -> float:
        """Accept the candidate if it beats the incumbent; return its power."""
        if cand is None:
            return math.inf
        f1, f2 = self.vectors(cand)
        se1, se2 = se_values(self.ch, f1, f2, cand.theta, self.tg.sigma1_sq, self.tg.sigma2_sq)
        margin = min(se1 - self.tg.gamma1, se2 - self.tg.gamma2)
        if margin < -SE_FEASIBILITY_TOL:
            return math.inf
        power = cand.split.total
        better = self.best is None or power < self.best.power - 1e-15 or (
            abs(power - self.best.power) <= 1e-15 and margin > self.best_margin
        )
        if better:
            self.best = make_solution(
                f1, f2, cand.theta, cand.split.eps1, cand.split.eps2, True, iteration
            )
            self.best_margin = margin
        return power


def _direction(gram: BeamGram, recover) -> np.ndarray | None:
    """Unit-norm direction from a Gram, or None when it carries no power."""
    if gram.power <= 1e-18:
        return None
    vec = recover(gram)
    nrm = float(np.linalg.norm(vec))
    if nrm == 0.0:
        return None
    return vec / nrm


def run_alternating(ch: ChannelSet, tg: DesignTargets, opt: AoOptions, hooks: _AoHooks) -> DesignSolution:
    m = ch.n_ris
    state = _AoState(ch, tg, hooks)
    theta = np.ones(m, dtype=complex)
    t1, t2 = tg.snr_floor1, tg.snr_floor2
    prev_power: float | None = None
    iteration = 0
    init_retries = 0

    while iteration < opt.max_iters:
        iteration += 1
        e_fix = lift_phase(theta)
        try:
            step = hooks.beam_step(e_fix)
        except StepInfeasibleError as exc:
            if iteration == 1 and init_retries < 3:
                init_retries += 1
                rng = _rng(opt.seed, 0xA11CE, init_retries)
                theta = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, m))
                iteration = 0
                state.notes.append(f"initial beam step infeasible ({exc.status}); re-seeding phases")
                continue
            state.notes.append(f"beam step failed at iteration {iteration}: {exc.status}")
            break

        eff1, eff2 = state.link_coeffs(theta)

        def recover_beam(gram: BeamGram, which: int) -> np.ndarray | None:
            def feas_interval(u: np.ndarray) -> tuple[float, float]:
                """Admissible power range for direction u at the step's budgets."""
                if which == 1:
                    sig = min(hooks.signal1_unit(u), float(np.linalg.norm(eff1 @ u) ** 2))
                    floor, eps_own = t1, step.eps1
                    leak = float(np.linalg.norm(eff2 @ u) ** 2)
                    headroom = step.eps2 - tg.sigma2_sq
                else:
                    sig, floor, eps_own = float(np.linalg.norm(eff2 @ u) ** 2), t2, step.eps2
                    leak = float(np.linalg.norm(eff1 @ u) ** 2)
                    headroom = step.eps1 - tg.sigma1_sq
                if floor <= 0.0:
                    lo = 0.0
                elif sig <= 0.0:
                    lo = math.inf
                else:
                    lo = floor * eps_own / sig
                up = headroom / leak if leak > 0.0 else math.inf
                return lo, up

            def feasible(v: np.ndarray) -> bool:
                # at the SDP optimum every constraint is tight, so the
                # admissible interval degenerates to a point and rank-one
                # extraction error can overshoot it; this is only a
                # pre-filter, the joint power rebalance restores exact
                # feasibility afterwards, so allow a generous factor
                nrm = np.linalg.norm(v)
                if nrm == 0:
                    return (t1 if which == 1 else t2) <= 0
                lo, up = feas_interval(v / nrm)
                return lo <= up * 2.0 + 1e-18

            def score(v: np.ndarray) -> float:
                nrm = np.linalg.norm(v)
                if nrm == 0:
                    return 0.0
                lo, _ = feas_interval(v / nrm)
                return -lo

            def run(g: BeamGram) -> np.ndarray:
                res = randomize_rank1(
                    g.f_gram, "beam", opt.n_cand, feasible, score,
                    rng=_rng(opt.seed, 0xBEA0 + which, iteration),
                )
                return res.vector

            return _direction(gram, run)

        try:
            u1 = recover_beam(step.f1_gram, 1)
            u2 = recover_beam(step.f2_gram, 2)
        except RecoveryFailureError as exc:
            state.notes.append(f"beam recovery failed at iteration {iteration}: {exc}")
            prev_power = None
            continue

        cand_a = state.rebalance(u1, u2, theta)
        power_a = state.consider(cand_a, iteration)
        if state.best is not None and state.best.power <= 1e-15:
            break  # zero-power optimum; nothing left to improve

        # phase update with the recovered rank-one Grams; fall back to the
        # relaxed Grams when the recovered pair could not be rebalanced
        if u2 is not None or u1 is not None:
            if cand_a is not None:
                f1_vec, f2_vec = state.vectors(cand_a)
                f1g, f2g = beam_gram(f1_vec), beam_gram(f2_vec)
            else:
                f1g, f2g = step.f1_gram, step.f2_gram
                state.notes.append(f"iteration {iteration}: phase step on relaxed Grams")
            try:
                eff_gram = hermitian_part(eff1.conj().T @ eff1)
                cap = min(
                    hooks.signal1_gram(f1g),
                    float(np.real(np.trace(eff_gram @ f1g.f_gram))),
                )
                e_star = solve_phase_step(ch, f1g, f2g, tg, signal1_value=cap)

                def theta_feasible(th: np.ndarray) -> bool:
                    return state.rebalance(u1, u2, th) is not None

                def theta_score(th: np.ndarray) -> float:
                    cand = state.rebalance(u1, u2, th)
                    return -cand.split.total if cand is not None else -math.inf

                res = randomize_rank1(
                    e_star.e, "phase", opt.n_cand, theta_feasible, theta_score,
                    rng=_rng(opt.seed, 0x9A5E, iteration),
                )
                if theta_score(res.vector) >= theta_score(theta):
                    theta = res.vector
            except (StepInfeasibleError, RecoveryFailureError) as exc:
                state.notes.append(f"phase step skipped at iteration {iteration}: {exc}")

        power_b = state.consider(state.rebalance(u1, u2, theta), iteration)
        power_now = min(power_a, power_b)
        if prev_power is not None and math.isfinite(power_now) and math.isfinite(prev_power):
            denom = max(abs(prev_power), 1e-30)
            if abs(power_now - prev_power) <= opt.rel_tol * denom:
                break
        prev_power = power_now if math.isfinite(power_now) else None

    if state.best is not None:
        state.best.iterations = iteration
        return state.best
    return make_solution(
        np.zeros(ch.n_tx), np.zeros(ch.n_tx), theta, tg.sigma1_sq, tg.sigma2_sq,
        feasible=False, iterations=iteration,
        diagnostics="; ".join(state.notes) or "no feasible rank-one solution found",
    )


def alternating_optimize(ch_dt: ChannelSet, tg: DesignTargets, opt: AoOptions) -> DesignSolution:
    """Full alternating design on the given (twin) channels."""
    gdir = hermitian_part(ch_dt.h1.conj().T @ ch_dt.h1)
    hooks = _AoHooks(
        beam_step=lambda e: solve_beam_step(ch_dt, e, tg),
        signal1_unit=lambda u: float(np.real(u.conj() @ gdir @ u)),
        signal1_gram=lambda f1g: float(np.real(np.trace(gdir @ f1g.f_gram))),
    )
    return run_alternating(ch_dt, tg, opt, hooks)
