"""Goal functionals with value, M-Riesz gradient and Hessian action.

Every goal exposes ``value(m)``, ``gradient(m)`` and ``hess_action(m, mhat)``;
gradients and Hessian actions are representatives with respect to the
mass-weighted inner product.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fem
from .linop import LinearMap, MassMatrix, m_inner


class GoalFunctional:
    """Base class; subclasses implement the three derivative levels."""

    mass: MassMatrix
    N: int

    def value(self, m) -> float:
        raise NotImplementedError

    def gradient(self, m) -> np.ndarray:
        raise NotImplementedError

    def hess_action(self, m, mhat) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, m) -> LinearMap:
        m = np.array(m, dtype=float)
        return LinearMap(lambda v: self.hess_action(m, v), self.N, in_mass=self.mass,
                         self_adjoint=True, name="H_Z")

    def dense_hessian(self, m) -> np.ndarray:
        """Hessian matrix, one action per column."""
        return np.column_stack([self.hess_action(m, e) for e in np.eye(self.N)])

    def values(self, samples) -> np.ndarray:
        return np.array([self.value(s) for s in samples])


class QuadraticGoal(GoalFunctional):
    """``Z(m) = 1/2 <A m, m>_M + <b, m>_M + c`` with ``A`` self-adjoint."""

    def __init__(self, A: LinearMap, b=None, c: float = 0.0):
        if not A.self_adjoint:
            raise TypeError("quadratic goal needs a self-adjoint operator")
        self.A = A
        self.N = A.in_dim
        self.mass = A.in_mass or MassMatrix.identity(self.N)
        self.b = np.zeros(self.N) if b is None else np.asarray(b, dtype=float)
        self.c = float(c)

    def value(self, m) -> float:
        return 0.5 * m_inner(self.A.apply(m), m, self.mass) + m_inner(self.b, m, self.mass) + self.c

    def values(self, samples) -> np.ndarray:
        S = np.asarray(samples, dtype=float).T
        AS = self.A.apply(S)
        MS = self.mass @ S
        return 0.5 * np.einsum("ij,ij->j", AS, MS) + self.b @ MS + self.c

    def gradient(self, m) -> np.ndarray:
        return self.A.apply(m) + self.b

    def hess_action(self, m, mhat) -> np.ndarray:
        return self.A.apply(mhat)

    def hessian(self, m=None) -> LinearMap:
        return self.A


def restricted_energy_goal(solver: fem.LinearSolver, mass: MassMatrix,
                           subdomain_mass) -> QuadraticGoal:
    """``Z(m) = 1/2 int_{Omega*} u(m)^2`` with ``u = S m`` the state of ``solver``.

    ``A m = S^* M_Omega S m``; two PDE solves per application.
    """
    M_sub = subdomain_mass.tocsr()

    def apply(m):
        return solver.solve_transpose(M_sub @ solver.solve(mass @ m))

    A = LinearMap(apply, mass.matrix.shape[0], in_mass=mass, self_adjoint=True, name="A")
    return QuadraticGoal(A)


@dataclass(frozen=True)
class _TracerPoint:
    """States and adjoints at one parameter value; never mutated."""

    p: np.ndarray
    c: np.ndarray
    zeta: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None


class TracerGoal(GoalFunctional):
    """Integral of a tracer concentration over a subdomain.

    The pressure solves ``-div(kappa grad p) = m`` with ``p = p_left`` on the left
    edge, ``p = 0`` on the right edge and no flux elsewhere. The tracer solves
    ``-alpha lap c - div(c kappa grad p) = f`` with ``c = 0`` on top, bottom and
    right, assembled in the conservative weak form so that the discrete adjoint
    is exact.
    """

    def __init__(self, mesh: fem.Mesh, kappa, alpha: float, source, subdomain,
                 p_left: float = 0.5, mass: Optional[MassMatrix] = None, cache_size: int = 8):
        if alpha <= 0:
            raise ValueError("tracer diffusion must be positive")
        self.mesh = mesh
        self.N = mesh.num_nodes
        self.mass = mass or MassMatrix(fem.assemble_mass(mesh))
        self.kappa = mesh.element_values(kappa)
        if np.any(self.kappa <= 0):
            raise ValueError("permeability must be positive")
        self.alpha = float(alpha)
        self.load = self.mass @ np.broadcast_to(np.asarray(source, float), (self.N,))
        self.subdomain = np.asarray(subdomain, dtype=float)
        self.omega = fem.assemble_mass(mesh, self.subdomain) @ np.ones(self.N)
        self.pressure_bcs = fem.BoundarySpec((("left", p_left), ("right", 0.0)))
        self.tracer_bcs = fem.BoundarySpec(((("top", "bottom", "right"), 0.0),))
        self.pressure = fem.elliptic_solver(mesh, self.kappa, bcs=self.pressure_bcs)
        _, self._p_values = self.pressure_bcs.constrained(mesh)
        self._tracer_dofs, _ = self.tracer_bcs.constrained(mesh)
        self._K_alpha = fem.assemble_stiffness(mesh, self.alpha)
        self._cache: OrderedDict[bytes, _TracerPoint] = OrderedDict()
        self._cache_size = cache_size
        self._tracer_solvers: OrderedDict[bytes, fem.LinearSolver] = OrderedDict()
        self._evicted_solves = 0

    @property
    def n_solves(self) -> int:
        """Total PDE solves (pressure and tracer systems)."""
        live = sum(s.n_solves for s in self._tracer_solvers.values())
        return self.pressure.n_solves + live + self._evicted_solves

    # element-level helpers
    def _element_grad(self, u):
        return fem.element_gradient(self.mesh, u)

    def _weighted_stiffness_action(self, weight, u):
        """``K_w u`` with element weights ``w``, without assembling."""
        mesh = self.mesh
        flux = (weight * mesh.areas)[:, None] * self._element_grad(u)
        local = np.einsum("ei,eai->ea", flux, mesh.grads)
        return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=self.N)

    def _advection_transpose_action(self, p, z):
        """``T_p^T z``: entry ``j`` is sum over elements at ``j`` of ``A/3 kappa grad p . grad z``."""
        mesh = self.mesh
        s = mesh.areas / 3.0 * self.kappa * np.einsum(
            "ei,ei->e", self._element_grad(p), self._element_grad(z))
        return np.bincount(mesh.elements.ravel(), weights=np.repeat(s, 3), minlength=self.N)

    def _tracer_solver(self, p) -> fem.LinearSolver:
        key = p.tobytes()
        solver = self._tracer_solvers.get(key)
        if solver is None:
            vel = self.kappa[:, None] * self._element_grad(p)
            A = self._K_alpha + fem.assemble_advection(self.mesh, vel, conservative=True)
            solver = fem.LinearSolver(A.tocsr(), self._tracer_dofs)
            self._tracer_solvers[key] = solver
            while len(self._tracer_solvers) > self._cache_size:
                _, old = self._tracer_solvers.popitem(last=False)
                self._evicted_solves += old.n_solves
        return solver

    def _point(self, m, adjoint: bool) -> _TracerPoint:
        m = np.ascontiguousarray(m, dtype=float)
        key = m.tobytes()
        pt = self._cache.get(key)
        if pt is None:
            p = self.pressure.solve(self.mass @ m, self._p_values)
            c = self._tracer_solver(p).solve(self.load)
            pt = _TracerPoint(p, c)
        if adjoint and pt.zeta is None:
            zeta = self._tracer_solver(pt.p).solve_transpose(-self.omega)
            w = self.kappa * self.mesh.element_values(pt.c)
            lam = self.pressure.solve_transpose(-self._weighted_stiffness_action(w, zeta))
            pt = _TracerPoint(pt.p, pt.c, zeta, lam)
        self._cache[key] = pt
        self._cache.move_to_end(key)
        while len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return pt

    def state(self, m):
        """Pressure and concentration at ``m``."""
        pt = self._point(m, adjoint=False)
        return pt.p, pt.c

    def value(self, m) -> float:
        return float(self.omega @ self._point(m, adjoint=False).c)

    def gradient(self, m) -> np.ndarray:
        return -self._point(m, adjoint=True).lam

    def hess_action(self, m, mhat) -> np.ndarray:
        pt = self._point(m, adjoint=True)
        tracer = self._tracer_solver(pt.p)
        w_c = self.kappa * self.mesh.element_values(pt.c)
        phat = self.pressure.solve(self.mass @ np.asarray(mhat, float))
        chat = tracer.solve(-self._weighted_stiffness_action(w_c, phat))
        zhat = tracer.solve_transpose(-self._advection_transpose_action(phat, pt.zeta))
        w_chat = self.kappa * self.mesh.element_values(chat)
        rhs = self._weighted_stiffness_action(w_c, zhat) + self._weighted_stiffness_action(w_chat, pt.zeta)
        return -self.pressure.solve_transpose(-rhs)


def gaussian_bump(mesh: fem.Mesh, center, width: float, amplitude: float = 1.0) -> np.ndarray:
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2
    return amplitude * np.exp(-0.5 * r2 / width ** 2)


def channel_permeability(mesh: fem.Mesh, center: float = 0.5, width: float = 0.12,
                         contrast: float = 10.0, low: float = 1.0) -> np.ndarray:
    """Element permeability: smooth horizontal channel of ``contrast * low`` over ``low``."""
    y = mesh.centroids[:, 1]
    return low * (1.0 + (contrast - 1.0) * np.exp(-0.5 * ((y - center) / width) ** 2))
