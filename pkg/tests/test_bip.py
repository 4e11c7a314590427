import numpy as np
import pytest

from gqoed import criteria as cr
from gqoed.bip import CGError, Design, conjugate_gradient
from gqoed.linop import MassMatrix, lanczos_eigs, m_inner


def test_forward_linear_and_adjoint(ex1, rng):
    F = ex1.problem.forward
    M = ex1.prior.mass
    assert np.all(F.apply(np.zeros(ex1.problem.N)) == 0)
    for _ in range(50):
        u, z = rng.standard_normal(64), rng.standard_normal(9)
        lhs, rhs = F.apply(u) @ z, m_inner(u, F.adjoint(z), M)
        assert lhs == pytest.approx(rhs, rel=1e-9)


def test_forward_matches_dense(ex1):
    P = ex1.problem
    m = np.full(P.N, 1.0)
    assert np.allclose(P.dense_forward @ m, P.forward.apply(m), atol=1e-13)


def test_gamma_po_no_data_is_prior(ex1, rng):
    P = ex1.problem
    v = rng.standard_normal(P.N)
    w0 = P.design(np.zeros(P.d, dtype=int))
    assert np.allclose(P.apply_Gamma_po(w0, v), ex1.prior.apply_Cpr(v), atol=1e-8)


def test_gamma_po_one_sensor_sherman_morrison(ex1, rng):
    P = ex1.problem
    M = P.mass.matrix.toarray()
    design = P.design_from_indices([4])
    f = P.dense_forward[4]
    C = ex1.prior.dense_covariance
    # Gamma_po = C - C a a^T M C / (sigma2 + a^T M C a) with a = M^{-1} f
    a = np.linalg.solve(M, f)
    Ca = C @ a
    G = C - np.outer(Ca, f @ C) / (P.sigma2 + f @ Ca)
    v = rng.standard_normal(P.N)
    assert np.allclose(P.apply_Gamma_po(design, v), G @ v, atol=1e-8 * np.abs(G @ v).max())


def test_gamma_po_shrinks(ex1, rng):
    P = ex1.problem
    full, part = P.design(), P.design_from_indices([0, 4, 8])
    none = P.design(np.zeros(P.d, dtype=int))
    for _ in range(5):
        v = rng.standard_normal(P.N)
        q = [m_inner(P.apply_Gamma_po(d, v), v, P.mass) for d in (full, part, none)]
        assert q[0] <= q[1] + 1e-9 and q[1] <= q[2] + 1e-9


def test_gamma_po_representation(ex1, rng):
    P = ex1.problem
    design = P.design_from_indices([1, 2, 7])
    G = P.dense_posterior_covariance(design)
    assert np.allclose(G, cr._dense_posterior_literal(P, design), atol=1e-10 * np.abs(G).max())
    v = rng.standard_normal(P.N)
    assert np.allclose(P.apply_Gamma_po(design, v), G @ v, atol=1e-8 * np.abs(G @ v).max())


def test_map_no_data_and_consistent_data(ex1):
    P = ex1.problem
    y = P.synthesize_data(ex1.m_true, 0)
    assert np.array_equal(P.compute_map(P.design(np.zeros(P.d, dtype=int)), y), P.prior.mean)
    y0 = P.synthesize_data(P.prior.mean, 0, noiseless=True)
    assert np.allclose(P.compute_map(P.design(), y0), P.prior.mean, atol=1e-8)


def test_map_dense_oracle(ex1):
    P = ex1.problem
    design = P.design_from_indices([0, 3, 5, 8])
    y = P.synthesize_data(ex1.m_true, 1)
    M = P.mass.matrix.toarray()
    F = P.dense_forward
    Cinv = np.linalg.inv(ex1.prior.dense_covariance)
    W = np.diag(design.weights)
    lhs = M @ Cinv + F.T @ W @ F
    rhs = F.T @ W @ (y - P.forward.offset) + M @ Cinv @ P.prior.mean
    ref = np.linalg.solve(lhs, rhs)
    assert np.allclose(P.compute_map(design, y), ref, rtol=1e-8, atol=1e-8)


def test_map_directional_stationarity(ex1, rng):
    P = ex1.problem
    design = P.design_from_indices([2, 6])
    y = P.synthesize_data(ex1.m_true, 2)
    m = P.compute_map(design, y)
    g = P.objective_gradient(design, y, m)
    scale = P.mass.norm(P.objective_gradient(design, y, P.prior.mean))
    for _ in range(10):
        d = rng.standard_normal(P.N)
        assert abs(m_inner(g, d, P.mass)) <= 1e-7 * scale * P.mass.norm(d)


def test_map_wrong_data_length(ex1):
    with pytest.raises(ValueError):
        ex1.problem.compute_map(ex1.problem.design(), np.zeros(3))


def test_misfit_zero_and_rank(ex1, rng):
    P = ex1.problem
    w0 = P.design(np.zeros(P.d, dtype=int))
    assert np.all(P.apply_misfit_hessian(w0, rng.standard_normal(P.N)) == 0)
    design = P.design_from_indices([1, 5, 6])
    sdec = lanczos_eigs(P.prior_preconditioned_misfit(design), 6, tol=1e-10)
    assert np.sum(sdec.eigenvalues > 1e-8 * sdec.eigenvalues[0]) <= 3


def test_misfit_dense_congruence(ex1):
    P = ex1.problem
    design = P.design_from_indices([0, 2, 4])
    E = ex1.prior.dense_sqrt
    F = P.dense_forward
    M = P.mass.matrix.toarray()
    ref = E @ np.linalg.solve(M, F.T @ (design.weights[:, None] * F)) @ E
    got = P.prior_preconditioned_misfit(design).dense()
    assert np.allclose(got, ref, atol=1e-9 * np.abs(ref).max())


def test_noise_variance(ex1):
    P = ex1.problem
    base = P.synthesize_data(ex1.m_true, 0, noiseless=True)
    e = np.array([P.synthesize_data(ex1.m_true, s) - base for s in range(10_000 // 9 + 1)]).ravel()
    var = e.var(ddof=1)
    se = np.sqrt(2 / (len(e) - 1)) * P.sigma2
    assert abs(var - P.sigma2) <= 4 * se


def test_design_validation_and_json():
    coords = np.zeros((3, 2))
    d = Design(np.array([1, 0, 1]), 1e-4, coords)
    assert d.size == 2 and list(d.active) == [0, 2]
    assert Design.from_json(d.to_json()).hash() == d.hash()
    with pytest.raises(ValueError):
        Design(np.array([1, 2, 0]), 1e-4, coords)
    with pytest.raises(ValueError):
        Design(np.array([1, 0, 1]), -1.0, coords)


def test_design_size_mismatch(ex1):
    with pytest.raises(ValueError):
        ex1.problem.apply_misfit_hessian(Design(np.ones(4, dtype=int), 1e-4, np.zeros((4, 2))), np.zeros(64))


def test_cg_matches_solve(rng):
    X = rng.standard_normal((20, 20))
    A = X @ X.T + 20 * np.eye(20)
    b = rng.standard_normal(20)
    x, _ = conjugate_gradient(lambda v: A @ v, b, np.dot, tol=1e-12)
    assert np.allclose(x, np.linalg.solve(A, b), atol=1e-10)


def test_cg_raises_when_capped(rng):
    X = rng.standard_normal((30, 30))
    A = X @ X.T + 1e-3 * np.eye(30)
    with pytest.raises(CGError):
        conjugate_gradient(lambda v: A @ v, rng.standard_normal(30), np.dot, tol=1e-14, maxiter=2)
