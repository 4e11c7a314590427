"""Design criteria: the G_q criterion and its estimators, A-optimality, G_l, goal variances.

The spectral, SVD and A-optimal criteria return the design-dependent part only;
the missing constant for G_q is ``1/2 tr(H~_z^2)`` (see :func:`hz_tilde_trace_sq`).
All criteria take the inverse problem as their first argument.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .bip import Design, InverseProblem
from .goal import GoalFunctional
from .linop import (NOISE, PROBE, SAMPLE, LinearMap, LowRankSVD, MassMatrix, SpectralDecomposition,
                    lanczos_eigs, m_inner, mc_trace, randomized_svd, substream)

DENSE_TRACE_LIMIT = 512
DENSE_ORACLE_LIMIT = 1500


class DegenerateCV(ValueError):
    pass


class IndefiniteCovariance(ValueError):
    pass


class GoalDerivatives:
    """Gradient and Hessian of a goal at an expansion point ``m_bar``.

    ``bbar = H (m_pr - m_bar) + g`` is computed lazily (one Hessian action) and
    kept; so are the dense Hessian and ``tr(H~_z^2)`` once requested.
    """

    def __init__(self, m_bar, gradient, hessian: LinearMap, m_pr, value: float = 0.0):
        if not hessian.self_adjoint:
            raise TypeError("goal Hessian must be self-adjoint")
        self.m_bar = np.array(m_bar, dtype=float)
        self.gradient = np.array(gradient, dtype=float)
        self.hessian = hessian
        self.m_pr = np.array(m_pr, dtype=float)
        self.value = float(value)
        self._trace_sq: dict = {}
        self._sqrt_bbar: dict = {}

    @classmethod
    def from_goal(cls, goal: GoalFunctional, m_bar, m_pr) -> "GoalDerivatives":
        m_bar = np.array(m_bar, dtype=float)
        return cls(m_bar, goal.gradient(m_bar), goal.hessian(m_bar), m_pr, goal.value(m_bar))

    @property
    def N(self) -> int:
        return len(self.m_bar)

    @property
    def mass(self) -> MassMatrix:
        return self.hessian.in_mass or MassMatrix.identity(self.N)

    @cached_property
    def bbar(self) -> np.ndarray:
        return self.hessian.apply(self.m_pr - self.m_bar) + self.gradient

    @cached_property
    def dense_hessian(self) -> np.ndarray:
        return self.hessian.dense()

    def sqrt_prior_bbar(self, prior) -> np.ndarray:
        """``E bbar``, cached per prior."""
        key = id(prior)
        if key not in self._sqrt_bbar:
            self._sqrt_bbar[key] = prior.apply_sqrt_Cpr(self.bbar)
        return self._sqrt_bbar[key]

    def materialize(self) -> "GoalDerivatives":
        """Copy whose Hessian is an explicit matrix (N actions once, then free)."""
        H = LinearMap.from_matrix(self.dense_hessian, self.mass, self_adjoint=True, name="H_Z")
        out = GoalDerivatives(self.m_bar, self.gradient, H, self.m_pr, self.value)
        out.__dict__["dense_hessian"] = self.dense_hessian
        out._trace_sq = self._trace_sq
        return out

    def quadratic_form(self) -> "QuadraticForm":
        """Second-order Taylor model ``1/2 <H m, m> + <b, m> + c`` of the goal."""
        H = self.hessian
        Hm = H.apply(self.m_bar)
        b = self.gradient - Hm
        c = self.value - m_inner(self.gradient, self.m_bar, self.mass) + 0.5 * m_inner(Hm, self.m_bar, self.mass)
        return QuadraticForm(H, b, c)


@dataclass(frozen=True)
class QuadraticForm:
    A: LinearMap
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        if not self.A.self_adjoint:
            raise TypeError("quadratic form needs a self-adjoint operator")

    def __call__(self, m) -> float:
        M = self.A.in_mass
        return 0.5 * m_inner(self.A.apply(m), m, M) + m_inner(self.b, m, M) + self.c


@dataclass
class CriterionEstimate:
    value: float
    method: str
    rank_or_probes: int
    seed: int
    design_hash: str
    stderr: Optional[float] = None
    flags: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)

    def to_json(self) -> str:
        return json.dumps({
            "value": self.value, "method": self.method, "rank_or_probes": self.rank_or_probes,
            "seed": self.seed, "design": self.design_hash, "stderr": self.stderr,
            "flags": self.flags,
        }, sort_keys=True)


# Gaussian quadratic variance
def _dense_op(T: LinearMap) -> np.ndarray:
    return T.dense()


def _check_covariance(C: np.ndarray, M: MassMatrix):
    MC = M.matrix @ C
    MC = 0.5 * (MC + MC.T)
    lam = sla.eigh(MC, M.matrix.toarray(), eigvals_only=True)
    if lam[0] < -1e-10 * max(abs(lam[-1]), 1e-300):
        raise IndefiniteCovariance(f"covariance has eigenvalue {lam[0]:.3e}")


def quad_variance(measure, q: QuadraticForm, lanczos_tol: float = 1e-10) -> float:
    """``||A m0 + b||_C^2 + 1/2 tr((C A)^2)`` for ``Z = 1/2 <A s, s> + <b, s> + c`` under ``N(m0, C)``."""
    C = measure.covariance
    M = C.in_mass or MassMatrix.identity(C.in_dim)
    x = q.A.apply(measure.mean) + q.b
    first = m_inner(C.apply(x), x, M)
    N = C.in_dim
    if N <= DENSE_TRACE_LIMIT:
        Cd = _dense_op(C)
        _check_covariance(Cd, M)
        CA = Cd @ _dense_op(q.A)
        return float(first + 0.5 * np.sum(CA * CA.T))
    if measure.sqrt_covariance is None:
        raise ValueError("large-scale variance needs a covariance square root")
    S = measure.sqrt_covariance
    T = LinearMap(lambda v: S.apply(q.A.apply(S.apply(v))), N, in_mass=M, self_adjoint=True)
    sdec = lanczos_eigs(T, N, tol=lanczos_tol)
    return float(first + 0.5 * np.sum(sdec.eigenvalues ** 2))


# G_q criterion
def _dense_posterior_literal(problem: InverseProblem, design: Design) -> np.ndarray:
    """``(M^{-1} F^T W F + (M^{-1} R)^2)^{-1}`` formed entrywise."""
    M = problem.mass.matrix.toarray()
    Minv = np.linalg.inv(M)
    F = problem.dense_forward
    R = problem.prior.R.toarray()
    MR = Minv @ R
    return np.linalg.inv(Minv @ F.T @ (design.weights[:, None] * F) + MR @ MR)


def gq_dense_oracle(problem: InverseProblem, design: Design, gd: GoalDerivatives) -> float:
    """Dense reference value of the G_q criterion (all terms, no truncation)."""
    N = problem.N
    if N > DENSE_ORACLE_LIMIT:
        raise MemoryError(f"dense oracle limited to N <= {DENSE_ORACLE_LIMIT}, got {N}")
    M = problem.mass.matrix.toarray()
    Gpr = problem.prior.dense_covariance
    Gpo = _dense_posterior_literal(problem, design)
    H = gd.dense_hessian
    b = gd.bbar
    GpoH = Gpo @ H
    first = b @ M @ Gpo @ b
    second = np.trace(Gpr @ H @ GpoH)
    third = np.sum(GpoH * GpoH.T)
    return float(first + second - 0.5 * third)


def hz_tilde_trace_sq(problem: InverseProblem, gd: GoalDerivatives, p: int = 200,
                      seed: int = 0) -> float:
    """``tr(H~_z^2)`` with ``H~_z = E H E``; dense for small N, otherwise Monte Carlo. Cached."""
    key = "dense" if problem.N <= DENSE_TRACE_LIMIT else ("mc", p, seed)
    if key in gd._trace_sq:
        return gd._trace_sq[key]
    if key == "dense":
        E = problem.prior.dense_sqrt
        T = E @ gd.dense_hessian @ E
        val = float(np.sum(T * T.T))
    else:
        E = problem.prior.apply_sqrt_Cpr
        H = gd.hessian
        Ht = LinearMap(lambda v: E(H.apply(E(v))), problem.N, in_mass=problem.mass,
                       self_adjoint=True)
        T2 = LinearMap(lambda v: Ht.apply(Ht.apply(v)), problem.N, in_mass=problem.mass,
                       self_adjoint=True)
        val = mc_trace(T2, p, seed)
    gd._trace_sq[key] = val
    return val


def gq_randomized_terms(problem: InverseProblem, design: Design, gd: GoalDerivatives, p: int,
                        seed: int = 0, start: int = 0) -> np.ndarray:
    """Per-probe trace terms ``<H Gpo H xi_j, (Gpr - Gpo/2) xi_j>_M`` for ``j = start..start+p-1``."""
    H = gd.hessian
    M = problem.mass
    T = np.empty(p)
    for i, j in enumerate(range(start, start + p)):
        xi = M.white_noise(substream(seed, PROBE, j))
        t1 = H.apply(problem.apply_Gamma_po(design, H.apply(xi)))
        t2 = problem.prior.apply_Cpr(xi) - 0.5 * problem.apply_Gamma_po(design, xi)
        T[i] = m_inner(t1, t2, M)
    return T


def gq_randomized(problem: InverseProblem, design: Design, gd: GoalDerivatives, p: int,
                  seed: int = 0) -> CriterionEstimate:
    """Randomized-trace estimate; ``2p + 1`` Hessian actions for a fresh ``gd``."""
    if p < 1:
        raise ValueError("need at least one probe")
    M = problem.mass
    b = gd.bbar
    s = problem.apply_Gamma_po(design, b)
    T = gq_randomized_terms(problem, design, gd, p, seed)
    se = float(np.std(T, ddof=1) / np.sqrt(p)) if p > 1 else float("nan")
    return CriterionEstimate(float(m_inner(s, b, M) + T.mean()), "randomized", p, seed,
                             design.hash(), stderr=se)


def spectral_decomposition(problem: InverseProblem, design: Design, k: int, seed: int = 0,
                           tol: float = 1e-10) -> SpectralDecomposition:
    """Leading eigenpairs of the prior-preconditioned misfit Hessian."""
    return lanczos_eigs(problem.prior_preconditioned_misfit(design), k, tol=tol, seed=seed)


def _spectral(problem, design, k, seed, sdec):
    if design.size == 0:
        return None
    if sdec is None:
        sdec = spectral_decomposition(problem, design, k, seed)
    return sdec


def gq_spectral(problem: InverseProblem, design: Design, gd: GoalDerivatives, k: int,
                seed: int = 0, sdec: Optional[SpectralDecomposition] = None) -> CriterionEstimate:
    """Low-rank spectral estimate (design-dependent part); ``k + 1`` Hessian actions."""
    M = problem.mass
    b = gd.bbar
    Cb = problem.prior.apply_Cpr(b)
    sdec = _spectral(problem, design, k, seed, sdec)
    if sdec is None:
        return CriterionEstimate(float(m_inner(Cb, b, M)), "spectral", 0, seed, design.hash())
    gam = sdec.gammas
    Vt = problem.prior.apply_sqrt_Cpr(sdec.eigenvectors)
    proj = Vt.T @ (M @ b)
    first = m_inner(Cb, b, M) - float(np.sum(gam * proj ** 2))
    Q = gd.hessian.apply(Vt)
    G = Q.T @ (M @ Vt)
    G = 0.5 * (G + G.T)
    second = float(gam @ (G ** 2) @ gam)
    flags = {"breakdown": sdec.breakdown, "converged": sdec.converged}
    return CriterionEstimate(first - 0.5 * second, "spectral", sdec.k, seed, design.hash(),
                             flags=flags)


def a_opt(problem: InverseProblem, design: Design, k: int, seed: int = 0,
          sdec: Optional[SpectralDecomposition] = None) -> float:
    """``tr(Gamma_po,k) - tr(Gamma_pr)``, i.e. minus the low-rank trace reduction."""
    sdec = _spectral(problem, design, k, seed, sdec)
    if sdec is None:
        return 0.0
    Vt = problem.prior.apply_sqrt_Cpr(sdec.eigenvectors)
    return -float(np.sum(sdec.gammas * np.einsum("ij,ij->j", Vt, problem.mass @ Vt)))


def gl_crit(problem: InverseProblem, design: Design, gd: GoalDerivatives, k: int,
            seed: int = 0, sdec: Optional[SpectralDecomposition] = None) -> float:
    """Reduction in the linearized goal variance ``<Gamma_po g, g>_M - <Gamma_pr g, g>_M``."""
    sdec = _spectral(problem, design, k, seed, sdec)
    if sdec is None:
        return 0.0
    Vt = problem.prior.apply_sqrt_Cpr(sdec.eigenvectors)
    proj = Vt.T @ (problem.mass @ gd.gradient)
    return -float(np.sum(sdec.gammas * proj ** 2))


@dataclass
class SVDPrecompute:
    """Low-rank SVD of ``F E`` with ``E V`` kept for Hessian actions."""

    svd: LowRankSVD
    EV: np.ndarray

    @property
    def rank(self) -> int:
        return self.svd.rank


def precompute_svd(problem: InverseProblem, r: int, seed: int = 0, oversample: int = 8,
                   n_power: int = 2) -> SVDPrecompute:
    E = problem.prior.apply_sqrt_Cpr
    F = problem.forward
    Ft = LinearMap(lambda m: F.apply(E(m)), problem.N, problem.d, lambda z: E(F.adjoint(z)),
                   in_mass=problem.mass, name="F~")
    svd = randomized_svd(Ft, r, oversample=oversample, seed=seed, n_power=n_power)
    return SVDPrecompute(svd, E(svd.V))


def gq_svd(problem: InverseProblem, design: Design, gd: GoalDerivatives, pre: SVDPrecompute,
           seed: int = 0) -> CriterionEstimate:
    """SVD-based estimate (design-dependent part); ``d`` Hessian actions, no PDE solves
    beyond one prior application per expansion point."""
    M = problem.mass
    svd = pre.svd
    s = gd.sqrt_prior_bbar(problem.prior)
    Wh = np.sqrt(design.weights)
    Fws = Wh[:, None] * svd.U * svd.s
    D = np.linalg.inv(np.eye(problem.d) + Fws @ Fws.T)
    Fs = Fws @ (svd.V.T @ (M @ s))
    first = m_inner(s, s, M) - float(Fs @ D @ Fs)
    G = pre.EV @ Fws.T
    Q = G.T @ (M @ gd.hessian.apply(G))
    Q = 0.5 * (Q + Q.T)
    DQ = D @ Q
    trace = float(np.sum(DQ * (Q @ D)))
    return CriterionEstimate(first - 0.5 * trace, "svd", svd.rank, seed, design.hash())


# variances of goals under the posterior
def posterior_goal_variance(problem: InverseProblem, design: Design, y, goal) -> float:
    """Posterior variance of a quadratic goal (exact for quadratic goals)."""
    q = goal if isinstance(goal, QuadraticForm) else QuadraticForm(goal.A, goal.b, goal.c)
    if problem.N <= DENSE_TRACE_LIMIT:
        measure = problem.dense_posterior_measure(design, y)
    else:
        post = problem.posterior(design, y)
        measure = post.measure
    return quad_variance(measure, q)


def nested_mc_psi(problem: InverseProblem, design: Design, gd: GoalDerivatives, n_outer: int,
                  seed: int = 0, trace_scale: float = 1.0) -> tuple[float, float]:
    """Data-averaged posterior variance of the quadratic goal model by nested sampling.

    Draws ``m`` from the prior and ``y`` from the likelihood, computes the MAP point
    and evaluates the closed-form posterior variance of the Taylor model for each
    draw. ``trace_scale`` multiplies the trace term (used for mutation tests).
    """
    if n_outer < 1:
        raise ValueError("need at least one outer sample")
    M = problem.mass
    Mm = M.matrix.toarray()
    N = problem.N
    H = gd.dense_hessian
    q = gd.quadratic_form()
    b = q.b
    Gpo = problem.dense_posterior_covariance(design)
    E = problem.prior.dense_sqrt
    F = problem.dense_forward
    m_pr = problem.prior.mean
    Xi = M.white_noise(substream(seed, SAMPLE), n_outer)
    m = m_pr[:, None] + E @ Xi
    eta = np.sqrt(design.sigma2) * substream(seed, NOISE).standard_normal((problem.d, n_outer))
    y = F @ m + eta + problem.forward.offset[:, None]
    resid = y - (F @ m_pr + problem.forward.offset)[:, None]
    Fadj = M.solve(F.T)
    m_map = m_pr[:, None] + Gpo @ (Fadj @ (design.weights[:, None] * resid))
    x = H @ m_map + b[:, None]
    first = np.einsum("ij,ij->j", Gpo @ x, Mm @ x)
    GH = Gpo @ H
    trace = 0.5 * np.sum(GH * GH.T)
    vals = first + trace_scale * trace
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_outer)) if n_outer > 1 else float("nan")


def cv(samples) -> float:
    """Sample coefficient of variation (unbiased standard deviation over mean)."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("coefficient of variation needs at least two samples")
    sd = float(np.std(x, ddof=1))
    mu = float(np.mean(x))
    if abs(mu) <= 1e-12 * sd or (sd == 0.0 and mu == 0.0):
        raise DegenerateCV(f"mean {mu:.3e} too small relative to std {sd:.3e}")
    return sd / mu
