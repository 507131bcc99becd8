"""Solver-agnostic conic program IR and rank-one recovery.

The IR supports Hermitian matrix variables (optionally constrained PSD),
real scalar variables, linear trace constraints, second-order-cone
constraints on real affine expressions, and a linear objective. ``solve``
lowers the IR onto Clarabel's standard form ``min q'x  s.t. Ax + s = b,
s in K``: every Hermitian variable of dimension n becomes n^2 real
parameters, and its PSD constraint becomes the scaled upper triangle of
the real embedding [[Re X, -Im X], [Im X, Re X]] in a PSD-triangle cone
of dimension 2n. The lowering is deterministic, so identical programs
produce identical results.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import sparse

import clarabel

from .errors import RecoveryFailureError, ValidationError
from .linalg import check_hermitian, eigh_hermitian

_SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# IR data model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatrixVar:
    """Hermitian matrix variable of size dim x dim; psd adds the cone constraint."""
    name: str
    dim: int
    psd: bool = True


@dataclass(frozen=True)
class ScalarVar:
    name: str
    nonneg: bool = False


@dataclass
class AffineScalar:
    """Real affine expression sum_i tr(A_i X_i) + sum_j c_j s_j + offset.

    Coefficient matrices must be Hermitian so each trace term is real.
    """
    matrix_coeffs: dict[str, np.ndarray] = field(default_factory=dict)
    scalar_coeffs: dict[str, float] = field(default_factory=dict)
    offset: float = 0.0


@dataclass
class LinearConstraint:
    """sum_i tr(A_i X_i) + sum_j c_j s_j  {<=,==,>=}  rhs."""
    matrix_coeffs: dict[str, np.ndarray]
    scalar_coeffs: dict[str, float]
    sense: str
    rhs: float
    label: str = ""


@dataclass
class SocConstraint:
    """|| components ||_2 <= bound, all entries real affine expressions."""
    components: list[AffineScalar]
    bound: AffineScalar
    label: str = ""


@dataclass
class ConicProgram:
    matrix_vars: list[MatrixVar] = field(default_factory=list)
    scalar_vars: list[ScalarVar] = field(default_factory=list)
    linear_constraints: list[LinearConstraint] = field(default_factory=list)
    soc_constraints: list[SocConstraint] = field(default_factory=list)
    objective_matrix: dict[str, np.ndarray] = field(default_factory=dict)
    objective_scalar: dict[str, float] = field(default_factory=dict)

    # -- construction helpers ------------------------------------------------
    def add_matrix_var(self, name: str, dim: int, psd: bool = True) -> MatrixVar:
        if any(v.name == name for v in self.matrix_vars) or any(
            v.name == name for v in self.scalar_vars
        ):
            raise ValidationError(f"duplicate variable name {name!r}")
        var = MatrixVar(name, dim, psd)
        self.matrix_vars.append(var)
        return var

    def add_scalar_var(self, name: str, nonneg: bool = False) -> ScalarVar:
        if any(v.name == name for v in self.scalar_vars) or any(
            v.name == name for v in self.matrix_vars
        ):
            raise ValidationError(f"duplicate variable name {name!r}")
        var = ScalarVar(name, nonneg)
        self.scalar_vars.append(var)
        return var

    def add_linear(
        self,
        matrix_coeffs: dict[str, np.ndarray] | None,
        scalar_coeffs: dict[str, float] | None,
        sense: str,
        rhs: float,
        label: str = "",
    ) -> None:
        if sense not in ("<=", ">=", "=="):
            raise ValidationError(f"unknown sense {sense!r}")
        self.linear_constraints.append(
            LinearConstraint(dict(matrix_coeffs or {}), dict(scalar_coeffs or {}), sense, float(rhs), label)
        )

    def add_soc(self, components: Sequence[AffineScalar], bound: AffineScalar, label: str = "") -> None:
        self.soc_constraints.append(SocConstraint(list(components), bound, label))

    def set_objective(
        self,
        matrix_coeffs: dict[str, np.ndarray] | None = None,
        scalar_coeffs: dict[str, float] | None = None,
    ) -> None:
        self.objective_matrix = dict(matrix_coeffs or {})
        self.objective_scalar = dict(scalar_coeffs or {})

    # -- validation -----------------------------------------------------------
    def validate(self) -> None:
        mdims = {v.name: v.dim for v in self.matrix_vars}
        snames = {v.name for v in self.scalar_vars}

        def _check_coeffs(mats: dict[str, np.ndarray], scals: dict[str, float], where: str) -> None:
            for name, a in mats.items():
                if name not in mdims:
                    raise ValidationError(f"{where}: unknown matrix variable {name!r}")
                a = np.asarray(a)
                if a.shape != (mdims[name], mdims[name]):
                    raise ValidationError(f"{where}: coefficient for {name!r} has shape {a.shape}")
                check_hermitian(a, name=f"{where} coefficient for {name!r}", rtol=1e-10)
            for name in scals:
                if name not in snames:
                    raise ValidationError(f"{where}: unknown scalar variable {name!r}")

        for k, con in enumerate(self.linear_constraints):
            _check_coeffs(con.matrix_coeffs, con.scalar_coeffs, con.label or f"linear[{k}]")
        for k, con in enumerate(self.soc_constraints):
            for i, comp in enumerate(con.components):
                _check_coeffs(comp.matrix_coeffs, comp.scalar_coeffs, con.label or f"soc[{k}].comp[{i}]")
            _check_coeffs(con.bound.matrix_coeffs, con.bound.scalar_coeffs, con.label or f"soc[{k}].bound")
        _check_coeffs(self.objective_matrix, self.objective_scalar, "objective")


@dataclass
class ProgramFragments:
    """A bundle of variables and constraints to graft onto a program."""
    matrix_vars: list[MatrixVar] = field(default_factory=list)
    scalar_vars: list[ScalarVar] = field(default_factory=list)
    linear_constraints: list[LinearConstraint] = field(default_factory=list)
    soc_constraints: list[SocConstraint] = field(default_factory=list)

    def apply(self, program: ConicProgram) -> None:
        for v in self.matrix_vars:
            program.add_matrix_var(v.name, v.dim, v.psd)
        for v in self.scalar_vars:
            program.add_scalar_var(v.name, v.nonneg)
        program.linear_constraints.extend(self.linear_constraints)
        program.soc_constraints.extend(self.soc_constraints)


@dataclass
class SolverResult:
    status: str  # optimal | infeasible | unbounded | numerical_failure
    matrices: dict[str, np.ndarray]
    scalars: dict[str, float]
    objective: float | None
    raw_status: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status == "optimal"


# ---------------------------------------------------------------------------
# Hermitian <-> real parameter packing
# ---------------------------------------------------------------------------

def _n_params(dim: int) -> int:
    return dim * dim


def _trace_coeff_row(a: np.ndarray) -> np.ndarray:
    """Real coefficients of tr(A X) in X's parameter vector (A Hermitian).

    Parameter order: Re diag (dim), Re upper triangle row-major, Im upper
    triangle row-major.
    """
    dim = a.shape[0]
    out = np.empty(_n_params(dim))
    out[:dim] = np.real(np.diag(a))
    iu, ju = np.triu_indices(dim, k=1)
    noff = iu.size
    out[dim : dim + noff] = 2.0 * np.real(a[iu, ju])
    out[dim + noff :] = 2.0 * np.imag(a[iu, ju])
    return out


def params_to_herm(x: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros((dim, dim), dtype=complex)
    out[np.diag_indices(dim)] = x[:dim]
    iu, ju = np.triu_indices(dim, k=1)
    noff = iu.size
    upper = x[dim : dim + noff] + 1j * x[dim + noff :]
    out[iu, ju] = upper
    out[ju, iu] = np.conj(upper)
    return out


def herm_to_params(a: np.ndarray) -> np.ndarray:
    dim = a.shape[0]
    out = np.empty(_n_params(dim))
    out[:dim] = np.real(np.diag(a))
    iu, ju = np.triu_indices(dim, k=1)
    noff = iu.size
    out[dim : dim + noff] = np.real(a[iu, ju])
    out[dim + noff :] = np.imag(a[iu, ju])
    return out


def _embedding_triplets(dim: int, col_offset: int, row_offset: int):
    """Sparse triplets mapping Hermitian params to svec of the real embedding.

    The embedding R = [[Re X, -Im X], [Im X, Re X]] is 2*dim x 2*dim; svec
    stacks its upper triangle column-wise with off-diagonal entries scaled
    by sqrt(2) (Clarabel's PSD-triangle convention).
    """
    n = dim
    noff = n * (n - 1) // 2

    def p_diag(i: int) -> int:
        return col_offset + i

    def p_re(i: int, j: int) -> int:  # i < j
        return col_offset + n + (i * n - i * (i + 1) // 2 + (j - i - 1))

    def p_im(i: int, j: int) -> int:  # i < j
        return col_offset + n + noff + (i * n - i * (i + 1) // 2 + (j - i - 1))

    rows, cols, vals = [], [], []
    m = 2 * n
    r = row_offset
    for jj in range(m):
        for ii in range(jj + 1):
            scale = 1.0 if ii == jj else _SQRT2
            bi, i = divmod(ii, n) if ii >= n else (0, ii)
            bj, j = divmod(jj, n) if jj >= n else (0, jj)
            if bi == bj:  # Re X block
                if i == j:
                    rows.append(r); cols.append(p_diag(i)); vals.append(scale)
                else:
                    a, b = (i, j) if i < j else (j, i)
                    rows.append(r); cols.append(p_re(a, b)); vals.append(scale)
            else:  # bi == 0, bj == 1 in the upper triangle: entry -Im X[i, j]
                if i < j:
                    rows.append(r); cols.append(p_im(i, j)); vals.append(-scale)
                elif i > j:  # -Im X[i, j] = +Im X[j, i]
                    rows.append(r); cols.append(p_im(j, i)); vals.append(scale)
                # i == j: Im of a diagonal entry is zero; no coefficient
            r += 1
    return rows, cols, vals, r - row_offset


# ---------------------------------------------------------------------------
# Solve
# ---------------------------------------------------------------------------

_STATUS_MAP = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


def solve(program: ConicProgram, max_iter: int = 200) -> SolverResult:
    """Solve the conic program with Clarabel; deterministic for fixed input."""
    program.validate()

    offsets: dict[str, int] = {}
    ncols = 0
    for v in program.matrix_vars:
        offsets[v.name] = ncols
        ncols += _n_params(v.dim)
    for v in program.scalar_vars:
        offsets[v.name] = ncols
        ncols += 1
    if ncols == 0:
        raise ValidationError("program has no variables")
    mdims = {v.name: v.dim for v in program.matrix_vars}

    def expr_row(mats: dict[str, np.ndarray], scals: dict[str, float]):
        cols: list[int] = []
        vals: list[float] = []
        for name, a in mats.items():
            row = _trace_coeff_row(np.asarray(a, dtype=complex))
            nz = np.nonzero(row)[0]
            cols.extend((offsets[name] + nz).tolist())
            vals.extend(row[nz].tolist())
        for name, c in scals.items():
            if c != 0.0:
                cols.append(offsets[name])
                vals.append(float(c))
        return cols, vals

    a_rows: list[int] = []
    a_cols: list[int] = []
    a_vals: list[float] = []
    b: list[float] = []
    cones: list = []
    nrows = 0

    def push_row(cols, vals, rhs):
        nonlocal nrows
        a_rows.extend([nrows] * len(cols))
        a_cols.extend(cols)
        a_vals.extend(vals)
        b.append(rhs)
        nrows += 1

    # equalities -> zero cone
    eqs = [c for c in program.linear_constraints if c.sense == "=="]
    for con in eqs:
        cols, vals = expr_row(con.matrix_coeffs, con.scalar_coeffs)
        push_row(cols, vals, con.rhs)
    if eqs:
        cones.append(clarabel.ZeroConeT(len(eqs)))

    # inequalities and scalar signs -> nonnegative cone (s = b - Ax >= 0)
    n_ineq = 0
    for con in program.linear_constraints:
        if con.sense == "==":
            continue
        cols, vals = expr_row(con.matrix_coeffs, con.scalar_coeffs)
        if con.sense == ">=":
            vals = [-v for v in vals]
            push_row(cols, vals, -con.rhs)
        else:
            push_row(cols, vals, con.rhs)
        n_ineq += 1
    for v in program.scalar_vars:
        if v.nonneg:
            push_row([offsets[v.name]], [-1.0], 0.0)
            n_ineq += 1
    if n_ineq:
        cones.append(clarabel.NonnegativeConeT(n_ineq))

    # second-order cones: s = (bound, components)
    for con in program.soc_constraints:
        cols, vals = expr_row(con.bound.matrix_coeffs, con.bound.scalar_coeffs)
        push_row(cols, [-v for v in vals], con.bound.offset)
        for comp in con.components:
            cols, vals = expr_row(comp.matrix_coeffs, comp.scalar_coeffs)
            push_row(cols, [-v for v in vals], comp.offset)
        cones.append(clarabel.SecondOrderConeT(1 + len(con.components)))

    # PSD cones via real embedding
    for v in program.matrix_vars:
        if not v.psd:
            continue
        rows, cols, vals, count = _embedding_triplets(v.dim, offsets[v.name], nrows)
        a_rows.extend(rows)
        a_cols.extend(cols)
        a_vals.extend([-val for val in vals])
        b.extend([0.0] * count)
        nrows += count
        cones.append(clarabel.PSDTriangleConeT(2 * v.dim))

    q = np.zeros(ncols)
    for name, a in program.objective_matrix.items():
        row = _trace_coeff_row(np.asarray(a, dtype=complex))
        q[offsets[name] : offsets[name] + row.size] += row
    for name, c in program.objective_scalar.items():
        q[offsets[name]] += float(c)

    amat = sparse.csc_matrix(
        (a_vals, (a_rows, a_cols)), shape=(nrows, ncols)
    )
    pmat = sparse.csc_matrix((ncols, ncols))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    # objectives live on the noise-power scale (~1e-3), so tighten the
    # absolute gap below the default 1e-8
    settings.tol_gap_abs = 1e-10
    settings.tol_gap_rel = 1e-9
    settings.tol_feas = 1e-9
    solver = clarabel.DefaultSolver(pmat, q, amat, np.asarray(b), cones, settings)
    sol = solver.solve()

    raw = str(sol.status)
    status = _STATUS_MAP.get(raw, "numerical_failure")
    matrices: dict[str, np.ndarray] = {}
    scalars: dict[str, float] = {}
    objective = None
    if status == "optimal":
        x = np.asarray(sol.x)
        for v in program.matrix_vars:
            off = offsets[v.name]
            matrices[v.name] = params_to_herm(x[off : off + _n_params(v.dim)], v.dim)
        for v in program.scalar_vars:
            scalars[v.name] = float(x[offsets[v.name]])
        objective = float(sol.obj_val)
    return SolverResult(status, matrices, scalars, objective, raw_status=raw)


# ---------------------------------------------------------------------------
# Gaussian randomization
# ---------------------------------------------------------------------------

class Rank1Result(NamedTuple):
    vector: np.ndarray
    fallback: bool  # True when no randomized draw was feasible (eigenvector used)


def randomize_rank1(
    x_star: np.ndarray,
    mode: str,
    n_cand: int,
    feasible: Callable[[np.ndarray], bool],
    score: Callable[[np.ndarray], float],
    rng: np.random.Generator | None = None,
    extra_candidates: Sequence[np.ndarray] | None = None,
) -> Rank1Result:
    """Recover a rank-one candidate from a relaxed PSD solution.

    Draws ``n_cand`` samples from CN(0, x_star). ``mode='phase'`` maps each
    draw to unit modulus entrywise, normalizes its first entry to one and
    returns the trailing entries; ``mode='beam'`` rescales each draw to the
    relaxed power tr(x_star). The dominant-eigenvector candidate is always
    part of the pool, as are any caller-provided warm candidates (useful
    when the relaxed optimum is far from rank one and sampling around it
    misses the feasible directions). Returns the feasible candidate with
    the highest score; raises RecoveryFailureError when nothing in the pool
    is feasible.
    """
    if mode not in ("phase", "beam"):
        raise ValidationError(f"unknown randomization mode {mode!r}")
    if n_cand < 1:
        raise ValidationError("n_cand must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    w, v = eigh_hermitian(x_star)
    w = np.maximum(w, 0.0)
    dim = x_star.shape[0]
    total = float(np.sum(w))
    root = v * np.sqrt(w)

    def _project(xi: np.ndarray) -> np.ndarray:
        if mode == "phase":
            # a rank-one lift E = th'^H th' factors through conj(th'), so the
            # candidate phases are the negated sample phases
            phases = -np.angle(xi)
            return np.exp(1j * (phases[1:] - phases[0]))
        nrm = np.linalg.norm(xi)
        if nrm == 0.0 or total == 0.0:
            return np.zeros(dim, dtype=complex)
        return xi * (math.sqrt(total) / nrm)

    eig_candidate = _project(v[:, -1] * math.sqrt(max(w[-1], 0.0)) if total > 0 else v[:, -1])
    pool = [eig_candidate]
    n_warm = 0
    if extra_candidates is not None:
        for cand in extra_candidates:
            cand = np.asarray(cand, dtype=complex).ravel()
            if mode == "phase":
                pool.append(np.exp(1j * np.angle(cand)) if cand.size == dim - 1 else _project(cand))
            else:
                pool.append(_project(cand))
            n_warm += 1
    z = (rng.standard_normal((dim, n_cand)) + 1j * rng.standard_normal((dim, n_cand))) / np.sqrt(2.0)
    draws = root @ z
    pool.extend(_project(draws[:, k]) for k in range(n_cand))

    best = None
    best_score = -np.inf
    any_draw_feasible = False
    for k, cand in enumerate(pool):
        if not feasible(cand):
            continue
        if k > n_warm:
            any_draw_feasible = True
        s = float(score(cand))
        if s > best_score:
            best = cand
            best_score = s
    if best is None:
        raise RecoveryFailureError(
            "no feasible rank-one candidate (dominant eigenvector included)"
        )
    return Rank1Result(best, fallback=not any_draw_feasible)
