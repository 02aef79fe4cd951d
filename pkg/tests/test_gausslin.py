import math

import numpy as np
import pytest

from gpmle.covariance import Family, KernelSpec, ParamVector
from gpmle.gausslin import (
    CholPolicy,
    NotPositiveDefiniteError,
    build_cov,
    chol,
    eig_extremes,
    gershgorin_upper,
    qf_cov,
    qf_mean,
    quad_form_inv,
    solve,
)
from gpmle.simulate import Design, Regime, SeedSpec, gen_fixed, gen_increasing

EXP = KernelSpec(Family.EXPONENTIAL)


def line_design(points):
    pts = np.asarray(points, dtype=float).reshape(-1, 1)
    return Design(points=pts, regime=Regime.FIXED, box=[[pts.min() - 1.0, pts.max() + 1.0]])


def random_spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def test_build_cov_small_cases():
    theta = ParamVector(3.0, 1.0)
    one = build_cov(EXP, theta, line_design([0.0]))
    assert one.shape == (1, 1) and one[0, 0] == 3.0

    two = build_cov(EXP, ParamVector(1.0, 1.0), line_design([0.0, 1.0]))
    expected = np.array([[1.0, math.exp(-1.0)], [math.exp(-1.0), 1.0]])
    assert np.allclose(two, expected, rtol=1e-15)


def test_build_cov_exactly_symmetric():
    design = gen_increasing(60, 2, 1.0, 0.3, SeedSpec(5, 0))
    cov = build_cov(KernelSpec(Family.MATERN, 1.5), ParamVector(1.4, 0.9), design)
    assert np.array_equal(cov, cov.T)
    assert np.allclose(np.diag(cov), 1.4, rtol=0, atol=0)


def test_build_cov_rejects_duplicates():
    pts = np.array([[0.0], [1.0], [1.0]])
    with pytest.raises(ValueError):
        Design(points=pts, regime=Regime.FIXED, box=[[-1.0, 2.0]])


def test_chol_identity():
    factor = chol(np.eye(3), CholPolicy.STRICT)
    assert np.array_equal(factor.lower, np.eye(3))
    assert factor.logdet == 0.0
    assert factor.jitter_used == 0.0


def test_chol_two_by_two_logdet():
    e = math.exp(-1.0)
    factor = chol(np.array([[1.0, e], [e, 1.0]]))
    assert factor.logdet == pytest.approx(math.log(1.0 - math.exp(-2.0)), rel=1e-12)


def test_chol_strict_reports_pivot():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigenvalues 3, -1
    with pytest.raises(NotPositiveDefiniteError) as exc:
        chol(bad, CholPolicy.STRICT)
    assert exc.value.pivot == 2


def test_chol_jitter_ladder_exhausts_on_indefinite_input():
    bad = np.array([[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPositiveDefiniteError):
        chol(bad, CholPolicy.JITTER)


def test_chol_policies_on_ill_conditioned_fixed_domain():
    # Smooth Matern on a crowded interval: strict may fail, jitter must
    # succeed with a recorded, capped jitter.
    design = gen_fixed(200, 1, [(0.0, 1.0)], "uniform", SeedSpec(31, 0))
    cov = build_cov(KernelSpec(Family.MATERN, 2.5), ParamVector(1.0, 1.0), design)
    try:
        strict = chol(cov, CholPolicy.STRICT)
        assert strict.jitter_used == 0.0
    except NotPositiveDefiniteError as err:
        assert err.pivot >= 1
    factor = chol(cov, CholPolicy.JITTER)
    assert factor.jitter_used <= 1e-6 * float(np.mean(np.diag(cov)))


def test_reconstruction_invariant():
    rng = np.random.default_rng(11)
    for n in (5, 20, 60):
        mat = random_spd(rng, n)
        factor = chol(mat)
        assert factor.jitter_used == 0.0
        rel = np.linalg.norm(factor.lower @ factor.lower.T - mat) / np.linalg.norm(mat)
        assert rel <= 1e-8
        assert factor.logdet == pytest.approx(2.0 * np.sum(np.log(np.diag(factor.lower))), rel=1e-15)


def test_quad_form_inv_cases():
    assert quad_form_inv(chol(np.eye(2)), np.array([3.0, 4.0])) == 25.0
    n = 6
    assert quad_form_inv(chol(2.0 * np.eye(n)), np.ones(n)) == pytest.approx(n / 2.0, rel=1e-14)

    rng = np.random.default_rng(3)
    mat = random_spd(rng, 5)
    y = rng.standard_normal(5)
    oracle = float(y @ np.linalg.inv(mat) @ y)  # explicit inverse, test-only
    assert quad_form_inv(chol(mat), y) == pytest.approx(oracle, rel=1e-10)


def test_quad_form_dimension_mismatch():
    with pytest.raises(ValueError):
        quad_form_inv(chol(np.eye(3)), np.ones(4))


def test_solve_cases():
    b = np.array([1.0, -2.0, 0.5])
    assert np.allclose(solve(chol(np.eye(3)), b), b)
    assert np.allclose(solve(chol(np.array([[2.0]])), np.array([4.0])), [2.0])

    rng = np.random.default_rng(8)
    mat = random_spd(rng, 7)
    rhs = rng.standard_normal((7, 3))
    oracle = np.linalg.inv(mat) @ rhs
    assert np.allclose(solve(chol(mat), rhs), oracle, rtol=1e-10)


def test_qf_mean_cases():
    assert qf_mean(np.eye(2), np.eye(2)) == 2.0
    assert qf_mean(np.zeros((3, 3)), np.eye(3)) == 0.0


def test_qf_cov_cases():
    n = 4
    assert qf_cov(np.eye(n), np.eye(n), np.eye(n)) == 2.0 * n
    assert qf_cov(np.eye(2), np.zeros((2, 2)), np.eye(2)) == 0.0


def test_qf_moments_against_monte_carlo():
    # Batch-mean Monte Carlo oracle for the trace formulas, n=5, 1e6 draws.
    rng = np.random.default_rng(77)
    n, n_draws, n_batches = 5, 1_000_000, 100
    a = rng.standard_normal((n, n))
    b = rng.standard_normal((n, n))
    sigma = random_spd(rng, n)
    lower = np.linalg.cholesky(sigma)

    v = rng.standard_normal((n_draws, n)) @ lower.T
    qa = np.einsum("ij,jk,ik->i", v, a, v)
    qb = np.einsum("ij,jk,ik->i", v, b, v)

    batches_a = qa.reshape(n_batches, -1).mean(axis=1)
    se_mean = batches_a.std(ddof=1) / math.sqrt(n_batches)
    assert abs(qf_mean(a, sigma) - qa.mean()) <= 3.0 * se_mean

    prod = qa.reshape(n_batches, -1)
    prod_b = qb.reshape(n_batches, -1)
    batch_covs = np.array(
        [np.cov(prod[i], prod_b[i], ddof=1)[0, 1] for i in range(n_batches)]
    )
    se_cov = batch_covs.std(ddof=1) / math.sqrt(n_batches)
    assert abs(qf_cov(a, b, sigma) - batch_covs.mean()) <= 3.0 * se_cov


def test_eig_extremes_cases():
    assert eig_extremes(np.eye(4)) == (1.0, 1.0)
    lo, hi = eig_extremes(np.diag([1.0, 3.0]))
    assert (lo, hi) == (1.0, 3.0)
    e = math.exp(-1.0)
    lo, hi = eig_extremes(np.array([[1.0, e], [e, 1.0]]))
    assert lo == pytest.approx(1.0 - e, rel=1e-12)
    assert hi == pytest.approx(1.0 + e, rel=1e-12)


def test_gershgorin_cases():
    assert gershgorin_upper(np.eye(3)) == 1.0
    e = math.exp(-1.0)
    assert gershgorin_upper(np.array([[1.0, e], [e, 1.0]])) == pytest.approx(1.0 + e, rel=1e-15)


def test_gershgorin_dominates_lambda_max():
    rng = np.random.default_rng(21)
    for _ in range(5):
        design = gen_increasing(40, 1, 1.0, float(rng.uniform(0, 0.4)), SeedSpec(int(rng.integers(1e6)), 0))
        cov = build_cov(EXP, ParamVector(1.0, 0.7), design)
        _, lam_max = eig_extremes(cov)
        assert gershgorin_upper(cov) >= lam_max - 1e-12


def test_interlacing_on_nested_designs():
    # Appending a point never increases the smallest eigenvalue.
    design = gen_increasing(30, 1, 1.0, 0.2, SeedSpec(13, 0))
    lam_prev = None
    for m in range(2, design.n + 1):
        cov = build_cov(EXP, ParamVector(1.0, 0.5), design.prefix(m))
        lam_min, _ = eig_extremes(cov)
        if lam_prev is not None:
            assert lam_min <= lam_prev + 1e-12
        lam_prev = lam_min
