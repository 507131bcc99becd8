import numpy as np
import pytest

from risbeam.conic import (
    AffineScalar,
    ConicProgram,
    Rank1Result,
    herm_to_params,
    params_to_herm,
    randomize_rank1,
    solve,
)
from risbeam.errors import RecoveryFailureError, ValidationError
from risbeam.linalg import hermitian_part
from risbeam.transform import lift_phase, lifted_quadratic, StackedChannel


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_param_packing_roundtrip():
    rng = np.random.default_rng(2)
    a = hermitian_part(crandn(rng, 5, 5))
    assert np.allclose(params_to_herm(herm_to_params(a), 5), a)


def test_min_trace_with_floor():
    p = ConicProgram()
    p.add_matrix_var("x", 2, psd=True)
    p.add_linear({"x": np.eye(2)}, {}, ">=", 1.0)
    p.set_objective({"x": np.eye(2)})
    res = solve(p)
    assert res.status == "optimal"
    assert abs(res.objective - 1.0) <= 1e-6
    assert np.min(np.linalg.eigvalsh(res.matrices["x"])) >= -1e-7


def test_psd_trace_upper_bound_infeasible():
    p = ConicProgram()
    p.add_matrix_var("x", 2, psd=True)
    p.add_linear({"x": np.eye(2)}, {}, "<=", -1.0)
    p.set_objective({"x": np.eye(2)})
    res = solve(p)
    assert res.status == "infeasible"


def test_min_eigenvalue_program():
    rng = np.random.default_rng(4)
    c = hermitian_part(crandn(rng, 3, 3))
    lam_min = np.linalg.eigvalsh(c)[0]
    p = ConicProgram()
    p.add_matrix_var("x", 3, psd=True)
    p.add_linear({"x": np.eye(3)}, {}, "==", 1.0)
    p.set_objective({"x": c})
    res = solve(p)
    assert res.status == "optimal"
    assert abs(res.objective - lam_min) <= 1e-6


def test_unbounded_program():
    p = ConicProgram()
    p.add_scalar_var("t")
    p.set_objective(scalar_coeffs={"t": 1.0})
    res = solve(p)
    assert res.status == "unbounded"


def test_soc_constraint_simple():
    # minimize t subject to ||(a, b)|| <= t with fixed a=3, b=4 via offsets
    p = ConicProgram()
    p.add_scalar_var("t", nonneg=True)
    comps = [AffineScalar(offset=3.0), AffineScalar(offset=4.0)]
    p.add_soc(comps, AffineScalar(scalar_coeffs={"t": 1.0}))
    p.set_objective(scalar_coeffs={"t": 1.0})
    res = solve(p)
    assert res.status == "optimal"
    assert abs(res.scalars["t"] - 5.0) <= 1e-6


def test_soc_with_matrix_entries():
    # minimize tr(X) s.t. ||vec entries of X - target|| <= 0.5 in two coords
    rng = np.random.default_rng(8)
    p = ConicProgram()
    p.add_matrix_var("x", 2, psd=True)
    e01_re = np.zeros((2, 2), dtype=complex)
    e01_re[0, 1] = 0.5
    e01_re[1, 0] = 0.5
    comps = [
        AffineScalar(matrix_coeffs={"x": e01_re}, offset=-0.3),
        AffineScalar(matrix_coeffs={"x": np.diag([1.0, 0.0]).astype(complex)}, offset=-1.0),
    ]
    p.add_soc(comps, AffineScalar(offset=0.5))
    p.set_objective({"x": np.eye(2)})
    res = solve(p)
    assert res.status == "optimal"
    x = res.matrices["x"]
    # the ball allows X00 as low as 0.5; PSD with X01 then forces X11
    assert x[0, 0].real >= 0.5 - 1e-6
    dev = np.hypot(x[0, 1].real - 0.3, x[0, 0].real - 1.0)
    assert dev <= 0.5 + 1e-6


def test_solver_constraint_satisfaction_tolerance():
    rng = np.random.default_rng(9)
    m = crandn(rng, 4, 4)
    c = hermitian_part(m @ m.conj().T)  # PSD keeps the program bounded
    a1 = hermitian_part(crandn(rng, 4, 4))
    p = ConicProgram()
    p.add_matrix_var("x", 4, psd=True)
    p.add_scalar_var("s", nonneg=True)
    p.add_linear({"x": np.eye(4)}, {"s": -1.0}, "==", 1.0)
    p.add_linear({"x": a1}, {}, "<=", 0.7)
    p.set_objective({"x": c}, {"s": 0.1})
    res = solve(p)
    assert res.status == "optimal"
    x = res.matrices["x"]
    s = res.scalars["s"]
    assert abs(np.trace(x).real - s - 1.0) <= 1e-7
    assert np.trace(a1 @ x).real <= 0.7 + 1e-7
    assert np.min(np.linalg.eigvalsh(x)) >= -1e-7
    assert s >= -1e-9


def test_solve_deterministic():
    rng = np.random.default_rng(10)
    c = hermitian_part(crandn(rng, 3, 3))

    def build():
        p = ConicProgram()
        p.add_matrix_var("x", 3, psd=True)
        p.add_linear({"x": np.eye(3)}, {}, "==", 1.0)
        p.set_objective({"x": c})
        return p

    r1 = solve(build())
    r2 = solve(build())
    assert np.array_equal(r1.matrices["x"], r2.matrices["x"])
    assert r1.objective == r2.objective


def test_validation_rejects_non_hermitian_coeff():
    p = ConicProgram()
    p.add_matrix_var("x", 2, psd=True)
    p.add_linear({"x": np.array([[0.0, 1.0], [0.0, 0.0]])}, {}, "<=", 1.0)
    with pytest.raises(ValidationError):
        solve(p)


def test_randomize_phase_rank_one_recovery():
    rng = np.random.default_rng(3)
    m = 6
    theta = np.exp(1j * rng.uniform(0, 2 * np.pi, m))
    e = lift_phase(theta).e
    res = randomize_rank1(e, "phase", 8, lambda v: True, lambda v: 0.0, rng=rng)
    assert isinstance(res, Rank1Result)
    out = res.vector
    assert np.max(np.abs(np.abs(out) - 1.0)) <= 5e-16
    # recovered up to the (normalized-away) global phase
    assert np.max(np.abs(out - theta)) <= 1e-9


def test_randomize_beam_power_and_span():
    rng = np.random.default_rng(5)
    v = crandn(rng, 4)
    x_star = np.outer(v, v.conj())
    res = randomize_rank1(x_star, "beam", 16, lambda u: True, lambda u: 0.0, rng=rng)
    out = res.vector
    assert abs(np.linalg.norm(out) ** 2 - np.trace(x_star).real) <= 1e-10
    corr = abs(v.conj() @ out) / (np.linalg.norm(v) * np.linalg.norm(out))
    assert corr >= 1.0 - 1e-9


def test_randomize_beats_eigenvector_projection():
    # the eigenvector candidate is in the pool, so the winner never scores
    # below the projected dominant eigenvector
    wins = 0
    trials = 100
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        m = crandn(rng, 5, 5)
        x_star = hermitian_part(m @ m.conj().T)
        ups = StackedChannel(crandn(rng, 5, 3))
        f = crandn(rng, 3)
        fg = np.outer(f, f.conj())

        def score(th):
            return lifted_quadratic([ups], lift_phase(th).e, fg)

        w, vv = np.linalg.eigh(x_star)
        eig = vv[:, -1]
        eig_theta = np.exp(1j * (np.angle(eig[1:]) - np.angle(eig[0])))
        res = randomize_rank1(x_star, "phase", 200, lambda v: True, score, rng=rng)
        if score(res.vector) >= score(eig_theta) - 1e-12:
            wins += 1
    assert wins >= 95


def test_randomize_recovery_failure():
    with pytest.raises(RecoveryFailureError):
        randomize_rank1(
            np.eye(3).astype(complex), "phase", 4, lambda v: False, lambda v: 0.0,
            rng=np.random.default_rng(0),
        )
