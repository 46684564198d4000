"""Matrices and load vectors of the discrete weak forms.

Vector fields are (N, 2) nodal arrays; operators act on the component-major
flattening produced by :func:`vesiflow.fem.flat`.  On a curve every tangential
derivative reduces to an arclength derivative: for a field ``v``,
``grad_G v = t (x) v_s`` (row index = derivative direction) and
``div_G v = t . v_s``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import flat, scatter_load, scatter_vector, unflat
from .functionals import BarrierSpec, DistanceField, inverse_distance
from .mesh import REFERENCE, CurveMesh

EYE = np.eye(2)


def mass_local(mesh: CurveMesh) -> np.ndarray:
    """Element blocks (E, 3, 2, 3, 2) of the vector mass matrix."""
    m = np.einsum("eq,qi,qj->eij", mesh.quad.wjac, REFERENCE.phi, REFERENCE.phi)
    return np.einsum("eij,ab->eiajb", m, EYE)


def stiffness_local(mesh: CurveMesh) -> np.ndarray:
    k = np.einsum("eq,qi,qj->eij", _derivative_weights(mesh), REFERENCE.dphi, REFERENCE.dphi)
    return np.einsum("eij,ab->eiajb", k, EYE)


def assemble_mass(mesh: CurveMesh) -> sp.csr_matrix:
    """Vector L2 mass matrix, 2N x 2N."""
    return fem.scalar_operators(mesh).vector("mass")


def assemble_stiffness(mesh: CurveMesh) -> sp.csr_matrix:
    """Vector Laplace-Beltrami stiffness, 2N x 2N."""
    return fem.scalar_operators(mesh).vector("stiffness")


def assemble_dA(mesh: CurveMesh) -> sp.csr_matrix:
    """Bilinear form (H, Phi) -> int H . Phi; the same matrix as the mass."""
    return assemble_mass(mesh)


def _derivative_weights(mesh: CurveMesh):
    # w_q / J: turns dphi_i dphi_j into int (phi_i)_s (phi_j)_s ds
    return REFERENCE.quad_weights[None, :] / mesh.quad.jac


def dW_term_operators(mesh: CurveMesh):
    """The three bending-derivative terms as separate 2N x 2N operators.

    term1: int grad Phi : grad H
    term2: int grad Phi (grad Id + grad Id^T) : grad H
    term3: 1/2 int div H div Phi
    """
    w = _derivative_weights(mesh)
    t = mesh.quad.tangent
    dd = np.einsum("eq,qi,qj->eqij", w, REFERENCE.dphi, REFERENCE.dphi)
    tt = np.einsum("eqa,eqb->eqab", t, t)
    t1 = np.einsum("eqij,ab->eiajb", dd, EYE)
    t2 = 2.0 * np.einsum("eqij,eqab->eiajb", dd, tt)
    t3 = 0.5 * np.einsum("eqij,eqab->eiajb", dd, tt)
    return scatter_vector(mesh, t1), scatter_vector(mesh, t2), scatter_vector(mesh, t3)


def dW_local(mesh: CurveMesh) -> np.ndarray:
    """Element blocks of A_W: int Phi_s . H_s - 3/2 int (t . Phi_s)(t . H_s)."""
    w = _derivative_weights(mesh)
    t = mesh.quad.tangent
    kernel = EYE[None, None] - 1.5 * np.einsum("eqa,eqb->eqab", t, t)
    return np.einsum("eq,qi,qj,eqab->eiajb", w, REFERENCE.dphi, REFERENCE.dphi, kernel)


def assemble_dW_operator(mesh: CurveMesh) -> sp.csr_matrix:
    """A_W with (A_W H)[Phi] = dW(Gamma; Phi) for curvature coefficients H.

    The sum of the three terms of :func:`dW_term_operators`; on a curve it
    reduces to int Phi_s . H_s - 3/2 int (t . Phi_s)(t . H_s).
    """
    return scatter_vector(mesh, dW_local(mesh))


def assemble_split_rhs(mesh: CurveMesh) -> np.ndarray:
    """-int grad x : grad Phi as an (N, 2) nodal vector."""
    return -(fem.scalar_operators(mesh).stiffness @ mesh.nodes)


def dH_local(mesh: CurveMesh, barrier: BarrierSpec, tau: float):
    """Element blocks of C_H and element loads of g_H."""
    q = mesh.quad
    shape = q.jac.shape
    val, grad, hess = barrier.evaluate(q.x.reshape(-1, 2))
    return _pointwise_local(mesh, val.reshape(shape), grad.reshape(shape + (2,)),
                            hess.reshape(shape + (2, 2)), tau)


def dD_local(mesh: CurveMesh, field: DistanceField, tau: float):
    """Element blocks of C_D and element loads of g_D."""
    f, grad, hess = inverse_distance(mesh.quad.x, field.witness[:, None, :])
    return _pointwise_local(mesh, f, grad, hess, tau)


def assemble_dH_terms(mesh: CurveMesh, barrier: BarrierSpec, tau: float):
    """Linearized barrier derivative, returned as (C_H, g_H).

    ``g_H`` holds the explicit part int grad1_B . Phi + int 1_B div Phi as an
    (N, 2) vector; ``C_H`` (2N x 2N, already scaled by tau) holds
    tau int [D grad1_B] V . Phi + tau int (grad1_B . V) div Phi.
    """
    c_local, g_local = dH_local(mesh, barrier, tau)
    return scatter_vector(mesh, c_local), scatter_load(mesh, g_local)


def assemble_dD_terms(mesh: CurveMesh, field: DistanceField, tau: float):
    """Linearized distance derivative with frozen witnesses, as (C_D, g_D).

    Explicit part: -2 int (x - y_K)/d_K^2 . Phi + int (1/d_K) div Phi.
    Implicit part: the consistent first-order expansion of both integrands
    around the current curve, i.e. tau int [Hess(1/d_K)] V . Phi plus
    -2 tau int (x - y_K)/d_K^2 . V div Phi.
    """
    c_local, g_local = dD_local(mesh, field, tau)
    return scatter_vector(mesh, c_local), scatter_load(mesh, g_local)


def _pointwise_local(mesh, val, grad, hess, tau):
    # derivative of int g(x) over the curve, g given with gradient and Hessian
    q = mesh.quad
    phi, dphi = REFERENCE.phi, REFERENCE.dphi
    wq = REFERENCE.quad_weights
    g_local = (np.einsum("eq,eqa,qi->eia", q.wjac, grad, phi)
               + np.einsum("q,eq,qi,eqa->eia", wq, val, dphi, q.tangent))
    c_local = tau * (np.einsum("eq,eqab,qi,qj->eiajb", q.wjac, hess, phi, phi)
                     + np.einsum("q,eqb,qj,qi,eqa->eiajb", wq, grad, phi, dphi, q.tangent))
    return c_local, g_local


def assemble_dW2_diagnostic(mesh: CurveMesh, curvature: np.ndarray) -> np.ndarray:
    """Second bending-derivative form evaluated against every test function.

    -int grad Phi : grad h + int D(Phi) grad Id : grad h - int div h div Phi
    - 1/2 int |h|^2 div Phi, with ``h`` the curvature vector in the
    ``Laplace x = h`` orientation (the negative of ``curvature``).
    """
    q = mesh.quad
    phi, dphi = REFERENCE.phi, REFERENCE.dphi
    wq = REFERENCE.quad_weights
    h = -np.asarray(curvature)[mesh.elements]              # (E, 3, 2)
    hq = np.einsum("qj,ejd->eqd", phi, h)
    hs = np.einsum("qj,ejd->eqd", dphi, h) / q.jac[..., None]
    t = q.tangent
    th = np.einsum("eqa,eqa->eq", t, hs)
    h2 = np.einsum("eqa,eqa->eq", hq, hq)
    # Phi = phi_i e_a: Phi_s = dphi_i / J e_a, weighted by w J
    local = (-np.einsum("q,qi,eqa->eia", wq, dphi, hs)
             + np.einsum("q,qi,eqa,eq->eia", wq, dphi, t, th)
             - 0.5 * np.einsum("q,qi,eqa,eq->eia", wq, dphi, t, h2))
    return scatter_load(mesh, local)


def apply(op: sp.spmatrix, field: np.ndarray) -> np.ndarray:
    """Apply a 2N x 2N operator to an (N, 2) field."""
    return unflat(op @ flat(field))
