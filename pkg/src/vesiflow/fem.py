"""Low-level finite element plumbing: scatter helpers and cached scalar operators."""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import REFERENCE, CurveMesh

_CACHE: "weakref.WeakKeyDictionary[CurveMesh, ScalarOperators]" = weakref.WeakKeyDictionary()


class _Pattern:
    """CSR structure of an assembled operator plus the map from local entries to it."""

    def __init__(self, rows, cols, n):
        key = rows.astype(np.int64) * n + cols
        uniq, self.inverse = np.unique(key, return_inverse=True)
        self.indices = (uniq % n).astype(np.int32)
        counts = np.bincount(uniq // n, minlength=n)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        self.n = n

    def matrix(self, values) -> sp.csr_matrix:
        data = np.bincount(self.inverse, weights=values.ravel(), minlength=len(self.indices))
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


_PATTERNS: dict = {}


def _pattern(kind: str, elements: np.ndarray, n: int) -> _Pattern:
    key = (kind, n, elements.tobytes())
    pat = _PATTERNS.get(key)
    if pat is None:
        if kind == "scalar":
            rows = np.broadcast_to(elements[:, :, None], (len(elements), 3, 3)).ravel()
            cols = np.broadcast_to(elements[:, None, :], (len(elements), 3, 3)).ravel()
            pat = _Pattern(rows, cols, n)
        elif kind == "system":
            shape = (len(elements), 3, 4, 3, 4)
            row = 4 * elements[:, :, None] + np.arange(4)[None, None, :]     # (E, 3, 4)
            rows = np.broadcast_to(row[:, :, :, None, None], shape).ravel()
            cols = np.broadcast_to(row[:, None, None, :, :], shape).ravel()
            pat = _Pattern(rows, cols, 4 * n)
        else:
            shape = (len(elements), 3, 2, 3, 2)
            row = np.arange(2)[None, None, :] * n + elements[:, :, None]     # (E, 3, 2)
            rows = np.broadcast_to(row[:, :, :, None, None], shape).ravel()
            cols = np.broadcast_to(row[:, None, None, :, :], shape).ravel()
            pat = _Pattern(rows, cols, 2 * n)
        if len(_PATTERNS) > 64:
            _PATTERNS.clear()
        _PATTERNS[key] = pat
    return pat


def scatter_scalar(mesh: CurveMesh, local: np.ndarray) -> sp.csr_matrix:
    """Assemble (E, 3, 3) element matrices into an N x N sparse matrix."""
    return _pattern("scalar", mesh.elements, mesh.n_nodes).matrix(local)


def scatter_vector(mesh: CurveMesh, local: np.ndarray) -> sp.csr_matrix:
    """Assemble (E, 3, 2, 3, 2) blocks into a 2N x 2N matrix (component-major dofs)."""
    return _pattern("vector", mesh.elements, mesh.n_nodes).matrix(local)


def scatter_system(mesh: CurveMesh, blocks) -> sp.csr_matrix:
    """Assemble a 2 x 2 block system of vector operators in node-major order.

    ``blocks[r][c]`` is an (E, 3, 2, 3, 2) local array or ``None``; unknown
    ``k`` of node ``i`` (V_x, V_y, H_x, H_y) sits at index ``4 i + k``.
    """
    E = mesh.n_elements
    local = np.zeros((E, 3, 4, 3, 4))
    for r in range(2):
        for c in range(2):
            if blocks[r][c] is not None:
                local[:, :, 2 * r:2 * r + 2, :, 2 * c:2 * c + 2] = blocks[r][c]
    return _pattern("system", mesh.elements, mesh.n_nodes).matrix(local)


def scatter_load(mesh: CurveMesh, local: np.ndarray) -> np.ndarray:
    """Assemble (E, 3, 2) element vectors into an (N, 2) nodal array."""
    out = np.zeros((mesh.n_nodes, 2))
    np.add.at(out, mesh.elements, local)
    return out


def flat(field: np.ndarray) -> np.ndarray:
    """(N, 2) nodal field -> component-major vector of length 2N."""
    return np.ascontiguousarray(field.T).reshape(-1)


def unflat(vec: np.ndarray) -> np.ndarray:
    return vec.reshape(2, -1).T.copy()


def vector_operator(scalar: sp.spmatrix) -> sp.csr_matrix:
    return sp.block_diag([scalar, scalar], format="csr")


@dataclass(eq=False)
class ScalarOperators:
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    _mass_lu: object = None
    _vector: dict = None

    def vector(self, name: str) -> sp.csr_matrix:
        """Block-diagonal 2N x 2N version of ``mass`` or ``stiffness`` (cached)."""
        if self._vector is None:
            self._vector = {}
        if name not in self._vector:
            self._vector[name] = vector_operator(getattr(self, name))
        return self._vector[name]

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        if self._mass_lu is None:
            self._mass_lu = spla.splu(self.mass.tocsc())
        return self._mass_lu.solve(np.asarray(rhs, dtype=float))


def scalar_operators(mesh: CurveMesh) -> ScalarOperators:
    ops = _CACHE.get(mesh)
    if ops is None:
        q = mesh.quad
        phi, dphi = REFERENCE.phi, REFERENCE.dphi
        m_loc = np.einsum("eq,qi,qj->eij", q.wjac, phi, phi)
        k_loc = np.einsum("eq,qi,qj->eij", REFERENCE.quad_weights[None, :] / q.jac, dphi, dphi)
        ops = ScalarOperators(scatter_scalar(mesh, m_loc), scatter_scalar(mesh, k_loc))
        _CACHE[mesh] = ops
    return ops
