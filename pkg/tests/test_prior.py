import numpy as np
import pytest

from gqoed import fem
from gqoed.linop import LinearMap, MassMatrix, SAMPLE, m_inner, mc_trace, substream
from gqoed.prior import BiLaplacianPrior, GaussianMeasure


@pytest.fixture(scope="module")
def prior():
    return BiLaplacianPrior(fem.build_mesh(8), 0.8, 1 / 16)


def test_constant_modes(prior):
    one = np.ones(prior.N)
    assert np.allclose(prior.apply_Cpr(one), 1.5625, atol=1e-10)
    assert np.allclose(prior.apply_sqrt_Cpr(one), 1.25, atol=1e-10)


def test_zero(prior):
    assert np.all(prior.apply_Cpr(np.zeros(prior.N)) == 0)


def test_spd(prior, rng):
    M = prior.mass
    u, v = rng.standard_normal((2, prior.N))
    assert m_inner(prior.apply_Cpr(v), v, M) > 0
    assert m_inner(prior.apply_Cpr(u), v, M) == pytest.approx(m_inner(u, prior.apply_Cpr(v), M), rel=1e-10)


def test_sqrt_and_inverse(prior, rng):
    v = rng.standard_normal(prior.N)
    assert np.allclose(prior.apply_sqrt_Cpr(prior.apply_sqrt_Cpr(v)), prior.apply_Cpr(v), atol=1e-10)
    assert np.allclose(prior.apply_inv_Cpr(prior.apply_Cpr(v)), v, atol=1e-8)
    assert np.allclose(prior.dense_covariance @ v, prior.apply_Cpr(v), atol=1e-10)


def test_bad_coefficients():
    with pytest.raises(ValueError):
        BiLaplacianPrior(fem.build_mesh(4), -0.8, 0.1)


def test_sample_empty_and_reproducible(prior):
    assert prior.sample(0, 1) == []
    a, b = prior.sample(3, 9), prior.sample(3, 9)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_sample_moments():
    p = BiLaplacianPrior(fem.build_mesh(6), 0.8, 1 / 16)
    S = np.array(p.sample(10_000, 0))
    se = S.std(axis=0, ddof=1) / np.sqrt(len(S))
    assert np.all(np.abs(S.mean(axis=0) - p.mean) <= 4 * se)
    rng = substream(5, SAMPLE, 0)
    u, v = rng.standard_normal((2, p.N))
    a = (S - p.mean) @ (p.mass @ u)
    b = (S - p.mean) @ (p.mass @ v)
    prod = a * b
    target = m_inner(p.apply_Cpr(u), v, p.mass)
    assert abs(prod.mean() - target) <= 4 * prod.std(ddof=1) / np.sqrt(len(prod))


def test_trace_class_decreases_with_smoothness():
    for n in (8, 16):
        traces = []
        for a2 in (0.01, 0.05, 0.2):
            p = BiLaplacianPrior(fem.build_mesh(n), 0.8, a2)
            traces.append(mc_trace(p.covariance, 200, 0))
        assert np.all(np.isfinite(traces)) and traces[0] > traces[1] > traces[2]


def test_gaussian_lemma_moments():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((5, 5))
    C = X @ X.T / 5 + 0.5 * np.eye(5)
    K = rng.standard_normal((5, 5))
    A = K + K.T
    b = rng.standard_normal(5)
    s = np.linalg.cholesky(C) @ rng.standard_normal((5, 10**6))
    q = np.einsum("ij,ij->j", s, A @ s)
    cross = q * (b @ s)
    assert abs(cross.mean()) <= 4 * cross.std(ddof=1) / np.sqrt(s.shape[1])
    CA = C @ A
    assert np.mean(q ** 2) == pytest.approx(np.trace(CA) ** 2 + 2 * np.trace(CA @ CA), rel=0.01)


def test_measure_requires_self_adjoint():
    with pytest.raises(ValueError):
        GaussianMeasure(np.zeros(2), LinearMap.from_matrix(np.eye(2)))
