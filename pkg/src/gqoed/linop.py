"""Linear maps over mass-weighted coefficient spaces and the randomized/Krylov kernels.

Parameter vectors live in R^N with the inner product ``<u, v>_M = u^T M v``;
observation vectors use the Euclidean product. A map ``T`` is self-adjoint when
``M T`` is symmetric, and the adjoint of ``T: (R^n, M_in) -> (R^m, M_out)`` is
``M_in^{-1} T^T M_out``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

# stream tags for independent substreams of one seed
PROBE, START, SKETCH, SAMPLE, NOISE, DESIGN = 1, 2, 3, 4, 5, 6


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator keyed by ``(seed, *keys)``; evaluation order does not matter."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))


class MassMatrix:
    """Sparse SPD mass matrix with a banded Cholesky factor ``M = U^T U``."""

    def __init__(self, matrix):
        M = sp.csr_matrix(matrix, dtype=float)
        if M.shape[0] != M.shape[1]:
            raise ValueError("mass matrix must be square")
        self.matrix = M
        self.N = M.shape[0]
        coo = M.tocoo()
        self.bandwidth = int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0
        u = self.bandwidth
        ab = np.zeros((u + 1, self.N))
        for k in range(u + 1):
            ab[u - k, k:] = M.diagonal(k)
        try:
            self._ab = sla.cholesky_banded(ab, lower=False)
        except np.linalg.LinAlgError as exc:
            raise ValueError("mass matrix is not positive definite") from exc
        diags = [self._ab[u - k, k:] for k in range(u + 1)]
        self._U = sp.diags(diags, list(range(u + 1)), shape=(self.N, self.N), format="csr")

    @classmethod
    def identity(cls, n: int) -> "MassMatrix":
        return cls(sp.identity(n, format="csr"))

    def __matmul__(self, x):
        return self.matrix @ x

    def inner(self, u, v):
        return m_inner(u, v, self)

    def norm(self, u) -> float:
        return float(np.sqrt(max(m_inner(u, u, self), 0.0)))

    def solve(self, x):
        return sla.cho_solve_banded((self._ab, False), x)

    def sqrt_apply(self, x):
        """``U x``: maps M-orthonormal coordinates to Euclidean ones."""
        return self._U @ x

    def inv_sqrt_apply(self, x):
        """``U^{-1} x``."""
        return sla.solve_banded((0, self.bandwidth), self._ab, x)

    def white_noise(self, rng: np.random.Generator, size: Optional[int] = None):
        """Draws from N(0, M^{-1}), the law whose M-weighted second moment is the identity."""
        shape = (self.N,) if size is None else (self.N, size)
        return self.inv_sqrt_apply(rng.standard_normal(shape))

    def area(self) -> float:
        return float(self.matrix.sum())


def m_inner(u, v, M: Optional[MassMatrix]):
    """``u^T M v``; ``M=None`` is the Euclidean product. Works columnwise on 2D arrays."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[0] != v.shape[0]:
        raise ValueError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    if M is not None and u.shape[0] != M.N:
        raise ValueError(f"vector dimension {u.shape[0]} does not match mass matrix {M.N}")
    Mv = v if M is None else M.matrix @ v
    if u.ndim == 1 and Mv.ndim == 1:
        return float(u @ Mv)
    return u.T @ Mv


class LinearMap:
    """Vector-to-vector linear operator with an adjoint in the spaces' inner products.

    ``n_applies`` counts forward plus adjoint applications (one per vector).
    """

    def __init__(self, apply: Callable, in_dim: int, out_dim: Optional[int] = None,
                 adjoint_apply: Optional[Callable] = None, in_mass: Optional[MassMatrix] = None,
                 out_mass: Optional[MassMatrix] = None, self_adjoint: bool = False,
                 name: str = ""):
        out_dim = in_dim if out_dim is None else out_dim
        if self_adjoint:
            if in_dim != out_dim:
                raise ValueError("a self-adjoint map must be square")
            out_mass = in_mass if out_mass is None else out_mass
            adjoint_apply = apply if adjoint_apply is None else adjoint_apply
        self._apply = apply
        self._adjoint = adjoint_apply
        self.in_dim, self.out_dim = int(in_dim), int(out_dim)
        self.in_mass, self.out_mass = in_mass, out_mass
        self.self_adjoint = self_adjoint
        self.name = name
        self.n_applies = 0

    def __repr__(self):
        return f"LinearMap({self.name or '?'}: {self.in_dim} -> {self.out_dim})"

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            return np.column_stack([self.apply(c) for c in x.T]) if x.shape[1] else np.zeros((self.out_dim, 0))
        if x.shape != (self.in_dim,):
            raise ValueError(f"{self!r} got vector of shape {x.shape}")
        self.n_applies += 1
        return np.asarray(self._apply(x), dtype=float)

    __call__ = apply

    def adjoint(self, z):
        if self._adjoint is None:
            raise NotImplementedError(f"{self!r} has no adjoint")
        z = np.asarray(z, dtype=float)
        if z.ndim == 2:
            return np.column_stack([self.adjoint(c) for c in z.T]) if z.shape[1] else np.zeros((self.in_dim, 0))
        if z.shape != (self.out_dim,):
            raise ValueError(f"adjoint of {self!r} got vector of shape {z.shape}")
        self.n_applies += 1
        return np.asarray(self._adjoint(z), dtype=float)

    def dense(self) -> np.ndarray:
        """Matrix representation acting on coefficient vectors."""
        return self.apply(np.eye(self.in_dim))

    def reset_count(self):
        self.n_applies = 0

    @classmethod
    def from_matrix(cls, A, in_mass: Optional[MassMatrix] = None,
                    out_mass: Optional[MassMatrix] = None, self_adjoint: bool = False,
                    name: str = "") -> "LinearMap":
        A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        if self_adjoint:
            out_mass = in_mass

        def adjoint(z):
            y = A.T @ (z if out_mass is None else out_mass.matrix @ z)
            return y if in_mass is None else in_mass.solve(y)

        return cls(lambda x: A @ x, A.shape[1], A.shape[0], adjoint, in_mass, out_mass,
                   self_adjoint, name)


def compose(*maps: LinearMap, self_adjoint: bool = False, name: str = "") -> LinearMap:
    """``compose(A, B, C)`` applies ``C`` first."""
    maps = list(maps)

    def apply(x):
        for T in reversed(maps):
            x = T.apply(x)
        return x

    def adjoint(z):
        for T in maps:
            z = T.adjoint(z)
        return z

    return LinearMap(apply, maps[-1].in_dim, maps[0].out_dim, adjoint, maps[-1].in_mass,
                     maps[0].out_mass, self_adjoint, name)


def _require_self_adjoint(T: LinearMap, what: str):
    if not T.self_adjoint:
        raise TypeError(f"{what} requires a self-adjoint map, got {T!r}")


def mc_trace_samples(T: LinearMap, p: int, seed: int) -> np.ndarray:
    """Per-probe values ``<T xi_j, xi_j>_M`` with ``xi_j ~ N(0, M^{-1})``."""
    if p < 1:
        raise ValueError("need at least one probe")
    _require_self_adjoint(T, "mc_trace")
    M = T.in_mass or MassMatrix.identity(T.in_dim)
    out = np.empty(p)
    for j in range(p):
        xi = M.white_noise(substream(seed, PROBE, j))
        out[j] = m_inner(T.apply(xi), xi, M)
    return out


def mc_trace(T: LinearMap, p: int, seed: int) -> float:
    """Gaussian Monte Carlo trace estimate with ``p`` probes."""
    return float(np.mean(mc_trace_samples(T, p, seed)))


@dataclass
class SpectralDecomposition:
    """Leading eigenpairs with M-orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    breakdown: bool = False
    converged: bool = True
    iterations: int = 0

    @property
    def rank_deficient(self) -> bool:
        return self.breakdown

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    @property
    def gammas(self) -> np.ndarray:
        lam = np.maximum(self.eigenvalues, 0.0)
        return lam / (1.0 + lam)


def lanczos_eigs(T: LinearMap, k: int, tol: float = 1e-8, seed: int = 0,
                 max_iter: Optional[int] = None) -> SpectralDecomposition:
    """Leading ``k`` eigenpairs of a self-adjoint PSD map by Lanczos with full reorthogonalization.

    An invariant Krylov subspace (breakdown) restarts from a fresh random vector
    orthogonal to the current basis, so rank-deficient maps still return ``k``
    pairs; ``breakdown`` records that this happened. ``max_iter`` caps the Krylov
    dimension (default ``N``); if it is hit first only converged pairs are kept.
    """
    _require_self_adjoint(T, "lanczos_eigs")
    N = T.in_dim
    if not 1 <= k <= N:
        raise ValueError(f"need 1 <= k <= {N}, got {k}")
    M = T.in_mass or MassMatrix.identity(N)
    max_iter = N if max_iter is None else min(int(max_iter), N)
    Q = np.zeros((N, max_iter))
    alpha = np.zeros(max_iter)
    beta = np.zeros(max_iter)
    rng = substream(seed, START)

    def fresh(m):
        for _ in range(5):
            q = M.white_noise(rng)
            for _ in range(2):
                q -= Q[:, :m] @ (Q[:, :m].T @ (M @ q))
            nrm = M.norm(q)
            if nrm > 1e-8:
                return q / nrm
        raise RuntimeError("could not draw a vector outside the Krylov basis")

    Q[:, 0] = fresh(0)
    breakdown = False
    scale = 0.0
    m = 0
    theta = y = None
    done = False
    for j in range(max_iter):
        m = j + 1
        w = T.apply(Q[:, j])
        alpha[j] = m_inner(w, Q[:, j], M)
        w = w - alpha[j] * Q[:, j]
        if j > 0:
            w -= beta[j - 1] * Q[:, j - 1]
        for _ in range(2):
            w -= Q[:, :m] @ (Q[:, :m].T @ (M @ w))
        b = M.norm(w)
        scale = max(scale, abs(alpha[j]), b)
        theta, y = sla.eigh_tridiagonal(alpha[:m], beta[:m - 1]) if m > 1 else (alpha[:1], np.ones((1, 1)))
        theta, y = theta[::-1], y[:, ::-1]
        lam1 = max(theta[0], 1.0)
        resid = b * np.abs(y[-1, :])
        exhausted = m == N
        if m >= k and (exhausted or np.all(resid[:k] <= tol * lam1)):
            done = True
            break
        if m == max_iter:
            break
        if b <= 1e-11 * max(scale, 1e-300):
            breakdown = True
            beta[j] = 0.0
            Q[:, j + 1] = fresh(m)
        else:
            beta[j] = b
            Q[:, j + 1] = w / b

    if done:
        keep = np.arange(k)
    else:
        lam1 = max(theta[0], 1.0)
        keep = np.flatnonzero(resid[:k] <= tol * lam1)
    vals = np.maximum(theta[keep], 0.0)
    vecs = Q[:, :m] @ y[:, keep]
    return SpectralDecomposition(vals, vecs, breakdown=breakdown, converged=done,
                                 iterations=m)


@dataclass
class LowRankSVD:
    """``F ~ U diag(s) V^T M``: U Euclidean-orthonormal, V M-orthonormal."""

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray
    mass: MassMatrix
    residual_estimate: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return len(self.s)

    def apply(self, m):
        return self.U @ (self.s * (self.V.T @ (self.mass @ m)))

    def adjoint(self, z):
        return self.V @ (self.s * (self.U.T @ z))

    def as_map(self) -> LinearMap:
        return LinearMap(self.apply, self.V.shape[0], self.U.shape[0], self.adjoint,
                         in_mass=self.mass, name="low-rank SVD")


def m_orthonormalize(X: np.ndarray, M: MassMatrix) -> np.ndarray:
    """M-orthonormal basis of the column span of ``X``."""
    Z = M.sqrt_apply(X)
    P, _ = np.linalg.qr(Z)
    return M.inv_sqrt_apply(P)


def randomized_svd(Ft: LinearMap, r: int, oversample: int = 8, seed: int = 0,
                   n_power: int = 2) -> LowRankSVD:
    """Rank-``r`` SVD of a map from M-space to Euclidean space (randomized range finder)."""
    N, d = Ft.in_dim, Ft.out_dim
    if not 1 <= r <= min(d, N):
        raise ValueError(f"rank {r} must be in [1, {min(d, N)}]")
    if oversample < 0:
        raise ValueError("oversample must be non-negative")
    M = Ft.in_mass or MassMatrix.identity(N)
    ell = min(r + oversample, d, N)
    omega = M.white_noise(substream(seed, SKETCH), ell)
    Qy, _ = np.linalg.qr(Ft.apply(omega))
    for _ in range(n_power):
        Z = m_orthonormalize(Ft.adjoint(Qy), M)
        Qy, _ = np.linalg.qr(Ft.apply(Z))
    X = Ft.adjoint(Qy)  # = B^*, with B = Qy^T Ft
    P, s, RT = np.linalg.svd(M.sqrt_apply(X), full_matrices=False)
    V = M.inv_sqrt_apply(P)
    U = Qy @ RT.T
    tail = float(s[r]) if len(s) > r else None
    return LowRankSVD(U[:, :r], s[:r], V[:, :r], M, tail)
