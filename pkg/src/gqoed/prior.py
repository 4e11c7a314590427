"""Gaussian prior whose covariance is the square of an elliptic solution operator.

``E`` maps a source ``s`` to the solution of ``a1 (m - a2 lap m) = s`` with
zero-flux boundaries; in weak form ``a1 (M + a2 K) m = M s``. The covariance is
``C = E^2`` and ``E`` is its M-self-adjoint square root.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from . import fem
from .linop import SAMPLE, LinearMap, MassMatrix, substream


@dataclass
class GaussianMeasure:
    mean: np.ndarray
    covariance: LinearMap
    sqrt_covariance: Optional[LinearMap] = None

    def __post_init__(self):
        if not self.covariance.self_adjoint:
            raise ValueError("covariance must be a self-adjoint map")


class BiLaplacianPrior:
    def __init__(self, mesh: fem.Mesh, a1: float, a2: float, mean=4.0,
                 mass: Optional[MassMatrix] = None):
        if a1 <= 0 or a2 <= 0:
            raise ValueError("prior coefficients a1, a2 must be positive")
        self.mesh = mesh
        self.a1, self.a2 = float(a1), float(a2)
        self.mass = mass or MassMatrix(fem.assemble_mass(mesh))
        self.N = mesh.num_nodes
        self.mean = np.broadcast_to(np.asarray(mean, dtype=float), (self.N,)).copy()
        K = fem.assemble_stiffness(mesh)
        self.R = (self.a1 * (self.mass.matrix + self.a2 * K)).tocsr()
        self.solver = fem.LinearSolver(self.R, np.empty(0, dtype=np.int64))

    def apply_sqrt_Cpr(self, v):
        """One application of ``E``."""
        return self.solver.solve(self.mass @ v)

    def apply_Cpr(self, v):
        return self.apply_sqrt_Cpr(self.apply_sqrt_Cpr(v))

    def apply_inv_sqrt_Cpr(self, v):
        return self.mass.solve(self.R @ v)

    def apply_inv_Cpr(self, v):
        return self.apply_inv_sqrt_Cpr(self.apply_inv_sqrt_Cpr(v))

    @cached_property
    def covariance(self) -> LinearMap:
        return LinearMap(self.apply_Cpr, self.N, in_mass=self.mass, self_adjoint=True, name="C_pr")

    @cached_property
    def sqrt_covariance(self) -> LinearMap:
        return LinearMap(self.apply_sqrt_Cpr, self.N, in_mass=self.mass, self_adjoint=True,
                         name="C_pr^1/2")

    @cached_property
    def measure(self) -> GaussianMeasure:
        return GaussianMeasure(self.mean, self.covariance, self.sqrt_covariance)

    def sample(self, count: int, seed: int) -> list[np.ndarray]:
        """``count`` draws ``m_pr + E xi`` with ``xi ~ N(0, M^{-1})``; draw ``j`` uses its own substream."""
        return [self.mean + self.apply_sqrt_Cpr(self.mass.white_noise(substream(seed, SAMPLE, j)))
                for j in range(count)]

    @cached_property
    def dense_sqrt(self) -> np.ndarray:
        """Matrix of ``E`` (desk-scale only)."""
        import scipy.linalg as sla

        return sla.solve(self.R.toarray(), self.mass.matrix.toarray(), assume_a="sym")

    @cached_property
    def dense_covariance(self) -> np.ndarray:
        E = self.dense_sqrt
        return E @ E
