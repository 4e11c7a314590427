"""Pure numpy implementations of the P1 element kernels.

Every function writes element contributions straight into the data array of a
precomputed CSR pattern; ``scatter[e, 3*a + b]`` is the position of the local
entry (a, b) of element ``e``.
"""
import numpy as np


def diffusion_reaction_data(areas, grads, diff, react, scatter, nnz):
    """CSR data for sum_e diff_e*(grad phi_a . grad phi_b)*A_e + react_e*M_e."""
    local = np.einsum("eai,ebi->eab", grads, grads) * (diff * areas)[:, None, None]
    mloc = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    local += (react * areas)[:, None, None] * mloc
    return np.bincount(scatter.ravel(), weights=local.ravel(), minlength=nnz)


def advection_data(areas, grads, vel, scatter, nnz, conservative):
    """CSR data for the advection form with element-constant velocity ``vel``.

    convective:   int (v . grad u) zeta  -> local[a, b] = A/3 * v . grad phi_b
    conservative: int u v . grad zeta    -> local[a, b] = A/3 * v . grad phi_a
    """
    vg = np.einsum("ei,eai->ea", vel, grads) * (areas / 3.0)[:, None]
    if conservative:
        local = np.repeat(vg[:, :, None], 3, axis=2)
    else:
        local = np.repeat(vg[:, None, :], 3, axis=1)
    return np.bincount(scatter.ravel(), weights=local.ravel(), minlength=nnz)


def element_gradients(elements, grads, u):
    return np.einsum("ea,eai->ei", u[elements], grads)
