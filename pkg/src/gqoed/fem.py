"""Piecewise-linear finite elements on a structured triangulation of the unit square.

Node ``j * n + i`` sits at ``(i / (n - 1), j / (n - 1))`` (x fastest). Each grid
cell is split along its lower-left to upper-right diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels

EDGES = ("left", "right", "bottom", "top")


class SolverError(RuntimeError):
    pass


class Mesh:
    """Uniform triangulation of [0, 1]^2 with ``n`` nodes per side."""

    def __init__(self, n: int):
        if n < 2:
            raise ValueError(f"need at least 2 nodes per side, got {n}")
        self.n = int(n)
        h = 1.0 / (n - 1)
        self.h = h
        ii, jj = np.meshgrid(np.arange(n), np.arange(n))
        self.nodes = np.column_stack([ii.ravel() * h, jj.ravel() * h])
        c = np.arange(n - 1)
        ci, cj = np.meshgrid(c, c)
        n00 = (cj * n + ci).ravel()
        n10, n01, n11 = n00 + 1, n00 + n, n00 + n + 1
        lower = np.column_stack([n00, n10, n11])
        upper = np.column_stack([n00, n11, n01])
        self.elements = np.ascontiguousarray(
            np.stack([lower, upper], axis=1).reshape(-1, 3), dtype=np.int64
        )
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        tol = 1e-12
        self.boundary = {
            "left": np.flatnonzero(x < tol),
            "right": np.flatnonzero(x > 1 - tol),
            "bottom": np.flatnonzero(y < tol),
            "top": np.flatnonzero(y > 1 - tol),
        }

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    def edge_nodes(self, edges: Sequence[str]) -> np.ndarray:
        if isinstance(edges, str):
            edges = (edges,)
        unknown = set(edges) - set(EDGES)
        if unknown:
            raise ValueError(f"unknown boundary edges {sorted(unknown)}")
        return np.unique(np.concatenate([self.boundary[e] for e in edges]))

    @cached_property
    def _geometry(self):
        p = self.nodes[self.elements]  # (E, 3, 2)
        x, y = p[..., 0], p[..., 1]
        det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
        grads = np.empty((len(det), 3, 2))
        grads[:, 0, 0] = y[:, 1] - y[:, 2]
        grads[:, 0, 1] = x[:, 2] - x[:, 1]
        grads[:, 1, 0] = y[:, 2] - y[:, 0]
        grads[:, 1, 1] = x[:, 0] - x[:, 2]
        grads[:, 2, 0] = y[:, 0] - y[:, 1]
        grads[:, 2, 1] = x[:, 1] - x[:, 0]
        grads /= det[:, None, None]
        return 0.5 * det, np.ascontiguousarray(grads)

    @property
    def areas(self) -> np.ndarray:
        return self._geometry[0]

    @property
    def grads(self) -> np.ndarray:
        """Constant gradients of the three barycentric basis functions, shape (E, 3, 2)."""
        return self._geometry[1]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def _pattern(self):
        N = self.num_nodes
        rows = np.repeat(self.elements, 3, axis=1).ravel()
        cols = np.tile(self.elements, (1, 3)).ravel()
        keys = rows * N + cols
        uniq, inverse = np.unique(keys, return_inverse=True)
        indptr = np.searchsorted(uniq // N, np.arange(N + 1)).astype(np.int32)
        indices = (uniq % N).astype(np.int32)
        scatter = np.ascontiguousarray(inverse.reshape(-1, 9), dtype=np.int64)
        return indptr, indices, scatter

    def csr(self, data: np.ndarray) -> sp.csr_matrix:
        indptr, indices, _ = self._pattern
        N = self.num_nodes
        return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(N, N))

    @property
    def scatter(self) -> np.ndarray:
        return self._pattern[2]

    @property
    def nnz(self) -> int:
        return len(self._pattern[1])

    def element_values(self, coef) -> np.ndarray:
        """Element-constant coefficient from a scalar, nodal field, or element array."""
        if np.isscalar(coef):
            return np.full(self.num_elements, float(coef))
        coef = np.asarray(coef, dtype=float)
        if coef.shape == (self.num_nodes,):
            return np.ascontiguousarray(coef[self.elements].mean(axis=1))
        if coef.shape == (self.num_elements,):
            return np.ascontiguousarray(coef)
        raise ValueError(f"coefficient shape {coef.shape} matches neither nodes nor elements")

    def element_vectors(self, vec) -> np.ndarray:
        """Element-constant vector field from a constant 2-vector or nodal (N, 2) field."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape == (2,):
            return np.ascontiguousarray(np.broadcast_to(vec, (self.num_elements, 2)))
        if vec.shape == (self.num_nodes, 2):
            return np.ascontiguousarray(vec[self.elements].mean(axis=1))
        if vec.shape == (self.num_elements, 2):
            return np.ascontiguousarray(vec)
        raise ValueError(f"vector field shape {vec.shape} not understood")

    def interpolate(self, func) -> np.ndarray:
        return np.asarray(func(self.nodes[:, 0], self.nodes[:, 1]), dtype=float)


def build_mesh(n: int) -> Mesh:
    return Mesh(n)


def _diffusion_reaction(mesh: Mesh, diff, react) -> sp.csr_matrix:
    data = kernels.diffusion_reaction_data(
        mesh.areas, mesh.grads, mesh.element_values(diff), mesh.element_values(react),
        mesh.scatter, mesh.nnz,
    )
    return mesh.csr(data)


def assemble_mass(mesh: Mesh, weight=1.0) -> sp.csr_matrix:
    """Mass matrix; ``weight`` (element array) restricts or scales the integrand."""
    return _diffusion_reaction(mesh, 0.0, weight)


def assemble_stiffness(mesh: Mesh, coef=1.0) -> sp.csr_matrix:
    return _diffusion_reaction(mesh, coef, 0.0)


def assemble_advection(mesh: Mesh, velocity, conservative: bool = False) -> sp.csr_matrix:
    """Galerkin advection matrix.

    ``conservative=False`` gives ``(v . grad u, zeta)``; ``True`` gives
    ``(u v, grad zeta)`` with rows indexed by the test function.
    """
    data = kernels.advection_data(
        mesh.areas, mesh.grads, mesh.element_vectors(velocity), mesh.scatter, mesh.nnz,
        bool(conservative),
    )
    return mesh.csr(data)


def element_gradient(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    return kernels.element_gradients(mesh.elements, mesh.grads, np.ascontiguousarray(u, dtype=float))


def subdomain_weight(mesh: Mesh, rectangles) -> np.ndarray:
    """Element indicator of a union of rectangles ``(x0, x1, y0, y1)``, by centroid."""
    cx, cy = mesh.centroids[:, 0], mesh.centroids[:, 1]
    inside = np.zeros(mesh.num_elements, dtype=bool)
    for x0, x1, y0, y1 in rectangles:
        inside |= (cx >= x0) & (cx <= x1) & (cy >= y0) & (cy <= y1)
    return inside.astype(float)


@dataclass(frozen=True)
class BoundarySpec:
    """Dirichlet data as ``(edges, value)`` pairs; other edges are zero-flux."""

    dirichlet: tuple = ()

    def __post_init__(self):
        seen = set()
        for edges, _ in self.dirichlet:
            edges = (edges,) if isinstance(edges, str) else tuple(edges)
            if seen & set(edges):
                raise ValueError("Dirichlet edge sets must be disjoint")
            seen |= set(edges)

    def constrained(self, mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
        """Constrained node indices and their values (later entries win at corners)."""
        values = np.full(mesh.num_nodes, np.nan)
        for edges, val in self.dirichlet:
            values[mesh.edge_nodes(edges)] = val
        dofs = np.flatnonzero(~np.isnan(values))
        return dofs, values[dofs]


@lru_cache(maxsize=32)
def _selectors(N: int, constrained_key: bytes):
    """Row-selection matrices for the free and constrained index sets."""
    constrained = np.frombuffer(constrained_key, dtype=np.int64)
    mask = np.ones(N, dtype=bool)
    mask[constrained] = False
    free = np.flatnonzero(mask)

    def sel(idx):
        return sp.csr_matrix((np.ones(len(idx)), (np.arange(len(idx)), idx)), shape=(len(idx), N))

    return sel(free), sel(constrained)


@dataclass
class LinearSolver:
    """Factorized system with Dirichlet rows/columns eliminated.

    ``n_solves`` counts every call to :meth:`solve` or :meth:`solve_transpose`.
    """

    matrix: sp.csr_matrix
    constrained: np.ndarray
    n_solves: int = field(default=0, init=False)

    def __post_init__(self):
        N = self.matrix.shape[0]
        self.constrained = np.asarray(self.constrained, dtype=np.int64)
        mask = np.ones(N, dtype=bool)
        mask[self.constrained] = False
        self.free = np.flatnonzero(mask)
        A = self.matrix.tocsr()
        S_free, S_con = _selectors(N, self.constrained.tobytes())
        A_f = S_free @ A
        self._A_fc = A_f @ S_con.T
        try:
            self._lu = spla.splu((A_f @ S_free.T).tocsc())
        except RuntimeError as exc:
            raise SolverError(
                f"singular system with {len(self.constrained)} constrained nodes "
                f"{self.constrained[:10].tolist()}...: {exc}"
            ) from exc

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def solve(self, load: np.ndarray, dirichlet_values=None) -> np.ndarray:
        load = np.asarray(load, dtype=float)
        u = np.zeros(load.shape)
        rhs = load[self.free]
        if dirichlet_values is not None and len(self.constrained):
            g = np.broadcast_to(np.asarray(dirichlet_values, dtype=float), (len(self.constrained),))
            u[self.constrained] = g
            rhs = rhs - self._A_fc @ g
        u[self.free] = self._lu.solve(rhs)
        self.n_solves += 1
        return u

    def solve_transpose(self, load: np.ndarray) -> np.ndarray:
        """Solve with the transposed free block; constrained entries are zero."""
        load = np.asarray(load, dtype=float)
        u = np.zeros(load.shape)
        u[self.free] = self._lu.solve(load[self.free], trans="T")
        self.n_solves += 1
        return u


def elliptic_matrix(mesh: Mesh, diffusion=1.0, velocity=None, reaction=0.0,
                    conservative: bool = False) -> sp.csr_matrix:
    kappa = mesh.element_values(diffusion)
    if np.any(kappa <= 0):
        raise ValueError("diffusion must be positive everywhere")
    A = _diffusion_reaction(mesh, kappa, reaction)
    if velocity is not None:
        A = A + assemble_advection(mesh, velocity, conservative=conservative)
    return A


def elliptic_solver(mesh: Mesh, diffusion=1.0, velocity=None, reaction=0.0,
                    bcs: BoundarySpec = BoundarySpec(), conservative: bool = False) -> LinearSolver:
    dofs, _ = bcs.constrained(mesh)
    if len(dofs) == 0 and np.all(mesh.element_values(reaction) <= 0):
        raise SolverError("pure Neumann problem without reaction is singular (no constrained nodes)")
    A = elliptic_matrix(mesh, diffusion, velocity, reaction, conservative)
    return LinearSolver(A, dofs)


def solve_elliptic(mesh: Mesh, diffusion=1.0, velocity=None, reaction=0.0, rhs=None,
                   bcs: BoundarySpec = BoundarySpec(), load=None) -> np.ndarray:
    """Galerkin solution of ``-div(k grad u) + v . grad u + r u = rhs``.

    ``rhs`` is a nodal field (integrated against the mass matrix); ``load`` is an
    already assembled right-hand-side functional. Dirichlet data from ``bcs``.
    """
    solver = elliptic_solver(mesh, diffusion, velocity, reaction, bcs)
    b = np.zeros(mesh.num_nodes)
    if rhs is not None:
        b = b + assemble_mass(mesh) @ np.broadcast_to(np.asarray(rhs, float), (mesh.num_nodes,))
    if load is not None:
        b = b + np.asarray(load, float)
    _, values = bcs.constrained(mesh)
    return solver.solve(b, values)


def observation_matrix(mesh: Mesh, coords) -> sp.csr_matrix:
    """Rows of barycentric weights of the P1 interpolant at each point."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    if coords.shape[1] != 2:
        raise ValueError("sensor coordinates must be (x, y) pairs")
    if np.any(coords < -1e-12) or np.any(coords > 1 + 1e-12):
        raise ValueError("sensor coordinates must lie in [0, 1]^2")
    n, h = mesh.n, mesh.h
    sx, sy = coords[:, 0] / h, coords[:, 1] / h
    i = np.clip(np.floor(sx).astype(np.int64), 0, n - 2)
    j = np.clip(np.floor(sy).astype(np.int64), 0, n - 2)
    s, t = sx - i, sy - j
    n00 = j * n + i
    lower = s >= t
    cols = np.where(lower[:, None],
                    np.column_stack([n00, n00 + 1, n00 + n + 1]),
                    np.column_stack([n00, n00 + n + 1, n00 + n]))
    w = np.where(lower[:, None],
                 np.column_stack([1 - s, s - t, t]),
                 np.column_stack([1 - t, s, t - s]))
    w[np.abs(w) < 1e-14] = 0.0
    rows = np.repeat(np.arange(len(coords)), 3)
    B = sp.csr_matrix((w.ravel(), (rows, cols.ravel())), shape=(len(coords), mesh.num_nodes))
    B.eliminate_zeros()
    return B


def apply_observation(mesh: Mesh, sensor_coords, state: np.ndarray) -> np.ndarray:
    return observation_matrix(mesh, sensor_coords) @ state


def sensor_grid(per_side: int, margin: float = 0.1) -> np.ndarray:
    """Uniform ``per_side x per_side`` grid of points in [margin, 1 - margin]^2, x fastest."""
    t = np.linspace(margin, 1.0 - margin, per_side)
    X, Y = np.meshgrid(t, t)
    return np.column_stack([X.ravel(), Y.ravel()])
