"""Linear Bayesian inverse problem with binary sensor-activation designs."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg as sla

from . import fem
from .linop import NOISE, LinearMap, MassMatrix, compose, m_inner, substream
from .prior import BiLaplacianPrior, GaussianMeasure


class CGError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Design:
    """Binary activation ``w`` over candidate sensors and the noise variance."""

    w: np.ndarray
    sigma2: float
    coords: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w)
        if w.ndim != 1 or not np.all((w == 0) | (w == 1)):
            raise ValueError("design weights must be a 0/1 vector")
        if self.sigma2 <= 0:
            raise ValueError("noise variance must be positive")
        coords = np.asarray(self.coords, dtype=float).reshape(-1, 2)
        if len(coords) != len(w):
            raise ValueError(f"{len(w)} weights for {len(coords)} candidate sensors")
        object.__setattr__(self, "w", w.astype(np.int64))
        object.__setattr__(self, "coords", coords)

    @property
    def d(self) -> int:
        return len(self.w)

    @property
    def size(self) -> int:
        return int(self.w.sum())

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.w)

    @property
    def weights(self) -> np.ndarray:
        """Diagonal of ``W_sigma = diag(w) / sigma^2``."""
        return self.w / self.sigma2

    def with_weights(self, w) -> "Design":
        return Design(np.asarray(w), self.sigma2, self.coords)

    def hash(self) -> str:
        h = hashlib.sha1(self.w.tobytes())
        h.update(repr(float(self.sigma2)).encode())
        return h.hexdigest()[:12]

    def to_json(self) -> str:
        return json.dumps({"w": self.w.tolist(), "sigma2": self.sigma2,
                           "coords": self.coords.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Design":
        obj = json.loads(text)
        return cls(np.array(obj["w"]), float(obj["sigma2"]), np.array(obj["coords"]))


class ForwardMap:
    """``F = B S`` with an optional affine offset ``d`` (from inhomogeneous Dirichlet data)."""

    def __init__(self, solver: fem.LinearSolver, B, mass: MassMatrix,
                 offset: Optional[np.ndarray] = None):
        self.solver = solver
        self.B = B.tocsr()
        self.mass = mass
        self.d, self.N = self.B.shape
        self.offset = np.zeros(self.d) if offset is None else np.asarray(offset, float)

    @property
    def n_pde_solves(self) -> int:
        return self.solver.n_solves

    def state(self, m):
        """Linear part of the state, zero Dirichlet data."""
        return self.solver.solve(self.mass @ m)

    def apply(self, m):
        return self.B @ self.state(m)

    def adjoint(self, z):
        return self.solver.solve_transpose(self.B.T @ z)

    def observe(self, m):
        """Affine observation ``G(m) = F m + d``."""
        return self.apply(m) + self.offset

    @cached_property
    def linear_map(self) -> LinearMap:
        return LinearMap(self.apply, self.N, self.d, self.adjoint, in_mass=self.mass, name="F")

    def dense(self) -> np.ndarray:
        """``B S`` as a d x N matrix (via d adjoint solves)."""
        Ft = np.column_stack([self.adjoint(e) for e in np.eye(self.d)])  # M^{-1} F^T
        return (self.mass @ Ft).T


def conjugate_gradient(apply_A, b, inner, tol=1e-10, maxiter=None, x0=None):
    """CG for a map self-adjoint and positive in ``inner``; relative residual stopping."""
    maxiter = maxiter or 5 * len(b)
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply_A(x) if x0 is not None else b.copy()
    bnorm = np.sqrt(inner(b, b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    p = r.copy()
    rr = inner(r, r)
    for it in range(1, maxiter + 1):
        if np.sqrt(rr) <= tol * bnorm:
            return x, it - 1
        Ap = apply_A(p)
        alpha = rr / inner(p, Ap)
        x += alpha * p
        if it % 50 == 0:
            r = b - apply_A(x)
        else:
            r -= alpha * Ap
        rr_new = inner(r, r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    if np.sqrt(rr) <= tol * bnorm:
        return x, maxiter
    raise CGError(f"CG did not converge in {maxiter} iterations: "
                  f"relative residual {np.sqrt(rr) / bnorm:.3e} > {tol:.1e}")


@dataclass
class Posterior:
    measure: GaussianMeasure
    map_point: np.ndarray
    design: Design
    data: np.ndarray


class InverseProblem:
    """Prior + forward map + candidate sensors + noise level."""

    def __init__(self, forward: ForwardMap, prior: BiLaplacianPrior, coords, sigma2: float,
                 cg_tol: float = 1e-10):
        self.forward = forward
        self.prior = prior
        self.mass = prior.mass
        self.coords = np.asarray(coords, dtype=float)
        self.sigma2 = float(sigma2)
        self.N = prior.N
        self.d = forward.d
        self.cg_tol = cg_tol
        if len(self.coords) != self.d:
            raise ValueError("sensor coordinates do not match the observation operator")

    def design(self, w=None, sigma2: Optional[float] = None) -> Design:
        w = np.ones(self.d, dtype=np.int64) if w is None else np.asarray(w)
        return Design(w, self.sigma2 if sigma2 is None else sigma2, self.coords)

    def design_from_indices(self, idx) -> Design:
        w = np.zeros(self.d, dtype=np.int64)
        w[list(idx)] = 1
        return self.design(w)

    def _check(self, design: Design):
        if design.d != self.d:
            raise ValueError(f"design has {design.d} weights, problem has {self.d} sensors")

    # misfit Hessians
    def apply_misfit_hessian(self, design: Design, v):
        """``F* W_sigma F v``."""
        self._check(design)
        if design.size == 0:
            return np.zeros_like(v)
        return self.forward.adjoint(design.weights * self.forward.apply(v))

    def misfit_hessian(self, design: Design) -> LinearMap:
        return LinearMap(lambda v: self.apply_misfit_hessian(design, v), self.N,
                         in_mass=self.mass, self_adjoint=True, name="H_mis")

    def prior_preconditioned_misfit(self, design: Design) -> LinearMap:
        """``E F* W_sigma F E``."""
        E = self.prior.apply_sqrt_Cpr
        return LinearMap(lambda v: E(self.apply_misfit_hessian(design, E(v))), self.N,
                         in_mass=self.mass, self_adjoint=True, name="H_mis~")

    # posterior covariance
    def apply_Gamma_po(self, design: Design, v, tol: Optional[float] = None):
        """``(F* W F + C_pr^{-1})^{-1} v`` by CG preconditioned with the prior.

        The prior enters as the symmetric split ``C = E E``: CG runs on
        ``(I + E H_mis E) y = E v`` in the M-inner product and ``x = E y``.
        Each iteration costs one forward and one adjoint solve plus two prior
        applications.
        """
        self._check(design)
        E = self.prior.apply_sqrt_Cpr
        rhs = E(v)
        if design.size == 0:
            return E(rhs)
        Ht = lambda y: y + E(self.apply_misfit_hessian(design, E(y)))  # noqa: E731
        y, _ = conjugate_gradient(Ht, rhs, lambda a, b: m_inner(a, b, self.mass),
                                  tol=self.cg_tol if tol is None else tol, maxiter=5 * self.N)
        return E(y)

    def posterior_covariance(self, design: Design) -> LinearMap:
        return LinearMap(lambda v: self.apply_Gamma_po(design, v), self.N, in_mass=self.mass,
                         self_adjoint=True, name="Gamma_po")

    # point estimates and data
    def compute_map(self, design: Design, y):
        """MAP point ``m_pr + Gamma_po F* W (y - d - F m_pr)``."""
        self._check(design)
        y = np.asarray(y, dtype=float)
        if y.shape != (self.d,):
            raise ValueError(f"data must have length {self.d} (full candidate grid)")
        m_pr = self.prior.mean
        if design.size == 0:
            return m_pr.copy()
        resid = y - self.forward.observe(m_pr)
        return m_pr + self.apply_Gamma_po(design, self.forward.adjoint(design.weights * resid))

    def objective(self, design: Design, y, m) -> float:
        r = self.forward.observe(m) - y
        dm = m - self.prior.mean
        return 0.5 * float(r @ (design.weights * r)) + 0.5 * m_inner(self.prior.apply_inv_Cpr(dm), dm, self.mass)

    def objective_gradient(self, design: Design, y, m):
        """M-Riesz gradient of the MAP objective."""
        r = self.forward.observe(m) - y
        return self.forward.adjoint(design.weights * r) + self.prior.apply_inv_Cpr(m - self.prior.mean)

    def synthesize_data(self, m_true, seed: int, sigma2: Optional[float] = None,
                        noiseless: bool = False):
        """``F m_true + d + sigma * eta`` on every candidate sensor."""
        y = self.forward.observe(m_true)
        if noiseless:
            return y
        s2 = self.sigma2 if sigma2 is None else sigma2
        return y + np.sqrt(s2) * substream(seed, NOISE).standard_normal(self.d)

    def posterior(self, design: Design, y) -> Posterior:
        mean = self.compute_map(design, y)
        return Posterior(GaussianMeasure(mean, self.posterior_covariance(design)), mean, design, y)

    # dense desk-scale helpers
    @cached_property
    def dense_forward(self) -> np.ndarray:
        return self.forward.dense()

    @cached_property
    def _dense_Ft(self) -> np.ndarray:
        """``F E`` as a d x N matrix."""
        return self.dense_forward @ self.prior.dense_sqrt

    def dense_posterior_covariance(self, design: Design) -> np.ndarray:
        """Matrix of ``Gamma_po`` from ``E (I + E F* W F E)^{-1} E`` with cached dense factors."""
        E = self.prior.dense_sqrt
        Ft = self._dense_Ft
        Minv_FtT = self.mass.solve(Ft.T)
        Ht = Minv_FtT @ (design.weights[:, None] * Ft)
        return E @ np.linalg.solve(np.eye(self.N) + Ht, E)

    def dense_posterior_measure(self, design: Design, y) -> GaussianMeasure:
        G = self.dense_posterior_covariance(design)
        mean = self.compute_map(design, y)
        return GaussianMeasure(mean, LinearMap.from_matrix(G, self.mass, self_adjoint=True,
                                                            name="Gamma_po (dense)"))

    def posterior_sample_factor(self, design: Design) -> np.ndarray:
        """``L`` with ``L L^T`` the coefficient covariance ``Gamma_po M^{-1}``."""
        G = self.dense_posterior_covariance(design)
        Sigma = G @ self.mass.solve(np.eye(self.N))
        Sigma = 0.5 * (Sigma + Sigma.T)
        try:
            return sla.cholesky(Sigma, lower=True)
        except np.linalg.LinAlgError:
            lam, Q = np.linalg.eigh(Sigma)
            return Q * np.sqrt(np.maximum(lam, 0.0))


def build_problem(mesh: fem.Mesh, state_solver: fem.LinearSolver, prior: BiLaplacianPrior,
                  coords, sigma2: float, offset_state: Optional[np.ndarray] = None) -> InverseProblem:
    """Inverse problem observing the state of ``state_solver`` at ``coords``."""
    B = fem.observation_matrix(mesh, coords)
    offset = None if offset_state is None else B @ offset_state
    fwd = ForwardMap(state_solver, B, prior.mass, offset)
    return InverseProblem(fwd, prior, coords, sigma2)


__all__ = [
    "CGError", "Design", "ForwardMap", "InverseProblem", "Posterior", "build_problem",
    "conjugate_gradient", "compose",
]
