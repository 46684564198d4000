"""Quadratic isoparametric discretization of closed planar curves.

Nodes are stored in traversal order: element ``e`` owns the endpoint node
``2e``, the midpoint node ``2e + 1`` and shares the endpoint ``2e + 2`` (mod
the node count) with its successor.  Curves are oriented counterclockwise so
that the normal ``(t_y, -t_x)`` points outward.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

JACOBIAN_FLOOR = 1e-14


class MeshError(ValueError):
    """Raised for invalid or degenerate curve meshes."""


class DegenerateElementError(MeshError):
    pass


class SelfIntersectionError(MeshError):
    pass


class ReferenceElement:
    """Quadratic Lagrange element on [0, 1] with nodes 0, 1/2, 1."""

    nodes = np.array([0.0, 0.5, 1.0])

    def __init__(self, n_quad: int = 4):
        x, w = np.polynomial.legendre.leggauss(n_quad)
        self.quad_points = 0.5 * (x + 1.0)
        self.quad_weights = 0.5 * w
        self.phi, self.dphi = self.basis(self.quad_points)

    @staticmethod
    def basis(s):
        """Basis values and parameter derivatives at ``s``, each shaped (..., 3)."""
        s = np.asarray(s, dtype=float)
        phi = np.stack([2.0 * (s - 0.5) * (s - 1.0),
                        -4.0 * s * (s - 1.0),
                        2.0 * s * (s - 0.5)], axis=-1)
        dphi = np.stack([4.0 * s - 3.0,
                         4.0 - 8.0 * s,
                         4.0 * s - 1.0], axis=-1)
        return phi, dphi


REFERENCE = ReferenceElement()


def eval_reference_basis(s: float):
    """Return the three basis values and derivatives at parameter ``s``."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"parameter {s} outside [0, 1]")
    phi, dphi = ReferenceElement.basis(s)
    return phi, dphi


def standard_elements(n_elements: int) -> np.ndarray:
    e = np.arange(n_elements)
    return np.stack([2 * e, 2 * e + 1, (2 * e + 2) % (2 * n_elements)], axis=1)


class _TrustedElements:
    """Wrapper marking an element array that already passed the cycle check."""

    def __init__(self, array):
        self.array = array


@dataclass(frozen=True, eq=False)
class CurveMesh:
    """A closed curve made of quadratic elements.

    Treat instances as immutable: node updates go through :meth:`with_nodes`.
    """

    nodes: np.ndarray
    elements: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        trusted = isinstance(self.elements, _TrustedElements)
        elements = self.elements.array if trusted else np.array(self.elements, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must have shape (N, 2)")
        if elements.ndim != 2 or elements.shape[1] != 3:
            raise MeshError("elements must have shape (E, 3)")
        nodes.setflags(write=False)
        elements.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        if trusted:
            if elements.max() >= len(nodes) or len(nodes) + len(elements) != elements.size:
                raise MeshError("node count does not match the element layout")
        else:
            _check_single_cycle(elements, len(nodes))

    @classmethod
    def from_nodes(cls, nodes) -> "CurveMesh":
        nodes = np.asarray(nodes, dtype=float)
        if len(nodes) % 2:
            raise MeshError("standard layout needs an even node count")
        return cls(nodes, standard_elements(len(nodes) // 2))

    def with_nodes(self, nodes) -> "CurveMesh":
        # the element layout was validated when this mesh was built
        return CurveMesh(nodes, _TrustedElements(self.elements))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def is_midpoint(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.elements[:, 1]] = True
        return mask

    @cached_property
    def element_nodes(self) -> np.ndarray:
        """Coordinates per element, shape (E, 3, 2)."""
        return self.nodes[self.elements]

    @cached_property
    def quad(self) -> "QuadData":
        return QuadData.build(self)

    def ordered_polygon(self) -> np.ndarray:
        """All nodes in traversal order (A, mid, A, mid, ...)."""
        return self.element_nodes[:, :2].reshape(-1, 2)

    def validate(self) -> "CurveMesh":
        if np.min(self.quad.jac) < JACOBIAN_FLOOR:
            raise DegenerateElementError("element jacobian below threshold")
        if not is_simple_polygon(self.ordered_polygon()):
            raise SelfIntersectionError("curve intersects itself")
        return self


def _check_single_cycle(elements: np.ndarray, n_nodes: int) -> None:
    if len(elements) < 1:
        raise MeshError("mesh has no elements")
    used = np.concatenate([elements.ravel()])
    if used.min() < 0 or used.max() >= n_nodes:
        raise MeshError("element references unknown node")
    if len(np.unique(used)) != n_nodes or len(used) != n_nodes + len(elements):
        raise MeshError("every node must be used; endpoints shared by two elements")
    successor = dict()
    for a, _, b in elements:
        if a in successor:
            raise MeshError("endpoint starts two elements")
        successor[int(a)] = int(b)
    start = int(elements[0, 0])
    node, count = start, 0
    while True:
        node = successor.get(node)
        count += 1
        if node is None:
            raise MeshError("element chain is open")
        if node == start:
            break
        if count > len(elements):
            raise MeshError("element graph is not a single cycle")
    if count != len(elements):
        raise MeshError("element graph is not a single cycle")


@dataclass(frozen=True, eq=False)
class QuadData:
    """Per element, per quadrature point geometry."""

    x: np.ndarray        # (E, Q, 2) positions
    dx: np.ndarray       # (E, Q, 2) parameter derivatives
    jac: np.ndarray      # (E, Q)
    tangent: np.ndarray  # (E, Q, 2)
    normal: np.ndarray   # (E, Q, 2)
    wjac: np.ndarray     # (E, Q) quadrature weight times jacobian

    @classmethod
    def build(cls, mesh: CurveMesh, ref: ReferenceElement = REFERENCE) -> "QuadData":
        xe = mesh.element_nodes
        x = np.einsum("qi,eid->eqd", ref.phi, xe)
        dx = np.einsum("qi,eid->eqd", ref.dphi, xe)
        jac = np.linalg.norm(dx, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = dx / jac[..., None]
        nu = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        return cls(x, dx, jac, t, nu, jac * ref.quad_weights[None, :])


def element_geometry(mesh: CurveMesh, e: int, s: float):
    """Position, unit tangent, outward unit normal and jacobian at ``s`` on element ``e``."""
    phi, dphi = ReferenceElement.basis(s)
    xe = mesh.element_nodes[e]
    pos = phi @ xe
    d = dphi @ xe
    jac = float(np.hypot(*d))
    if jac < JACOBIAN_FLOOR:
        raise DegenerateElementError(f"element {e} degenerate at s={s}")
    t = d / jac
    return pos, t, np.array([t[1], -t[0]]), jac


def mesh_length(mesh: CurveMesh) -> float:
    return float(mesh.quad.wjac.sum())


def signed_area(mesh: CurveMesh) -> float:
    q = mesh.quad
    return 0.5 * float(np.sum(np.einsum("eqd,eqd->eq", q.x, q.normal) * q.wjac))


def adjust_midpoints(mesh: CurveMesh) -> CurveMesh:
    """Move each midpoint onto its element, level with the chord midpoint.

    The chord midpoint ``c`` is projected onto the element's quadratic and the
    result is slid along the chord direction onto the perpendicular bisector
    of the chord.  Every point of that bisector is a fixed point of the
    projection (the quadratic through ``a, m, b`` has derivative ``b - a`` at
    ``s = 1/2``), so the operation is idempotent.
    """
    xe = mesh.element_nodes
    a, m, b = xe[:, 0], xe[:, 1], xe[:, 2]
    c = 0.5 * (a + b)
    chord = b - a
    clen = np.linalg.norm(chord, axis=1)
    if np.min(clen) < JACOBIAN_FLOOR:
        raise DegenerateElementError("element with coincident endpoints")
    e = chord / clen[:, None]
    s = _project_on_quadratic(a, m, b, c)
    phi, _ = ReferenceElement.basis(s)
    p = phi[:, 0, None] * a + phi[:, 1, None] * m + phi[:, 2, None] * b
    p = p - np.sum((p - c) * e, axis=1)[:, None] * e
    nodes = np.array(mesh.nodes)
    nodes[mesh.elements[:, 1]] = p
    out = mesh.with_nodes(nodes)
    if np.min(out.quad.jac) < JACOBIAN_FLOOR:
        raise DegenerateElementError("midpoint adjustment produced a degenerate element")
    return out


def _project_on_quadratic(a, m, b, c, iters: int = 30):
    # closest parameter to c on x(s) = a*phi0 + m*phi1 + b*phi2, Newton from s = 1/2
    d2 = 4.0 * a - 8.0 * m + 4.0 * b
    s = np.full(len(a), 0.5)
    for _ in range(iters):
        phi, dphi = ReferenceElement.basis(s)
        x = phi[:, 0, None] * a + phi[:, 1, None] * m + phi[:, 2, None] * b
        dx = dphi[:, 0, None] * a + dphi[:, 1, None] * m + dphi[:, 2, None] * b
        r = x - c
        g = np.sum(r * dx, axis=1)
        gp = np.sum(dx * dx, axis=1) + np.sum(r * d2, axis=1)
        gp = np.where(gp > 0, gp, np.sum(dx * dx, axis=1))
        ds = g / gp
        s = np.clip(s - ds, 0.0, 1.0)
        if np.max(np.abs(ds)) < 1e-13:
            break
    return s


def segments_intersect(p1, p2, q1, q2) -> np.ndarray:
    """Vectorized proper-or-touching intersection test for segment pairs."""
    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - \
               (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return (d1 * d2 <= 0) & (d3 * d4 <= 0)


def _candidate_pairs(a0, a1, b0, b1):
    lo_a, hi_a = np.minimum(a0, a1), np.maximum(a0, a1)
    lo_b, hi_b = np.minimum(b0, b1), np.maximum(b0, b1)
    overlap = ((lo_a[:, None, 0] <= hi_b[None, :, 0]) & (lo_b[None, :, 0] <= hi_a[:, None, 0])
               & (lo_a[:, None, 1] <= hi_b[None, :, 1]) & (lo_b[None, :, 1] <= hi_a[:, None, 1]))
    return np.nonzero(overlap)


def is_simple_polygon(points: np.ndarray) -> bool:
    """True when no two non-adjacent edges of the closed polygon intersect."""
    p0 = points
    p1 = np.roll(points, -1, axis=0)
    n = len(points)
    i, j = _candidate_pairs(p0, p1, p0, p1)
    keep = (j > i + 1) & ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    if len(i) == 0:
        return True
    return not np.any(segments_intersect(p0[i], p1[i], p0[j], p1[j]))


def polygons_intersect(pa: np.ndarray, pb: np.ndarray) -> bool:
    """True when any edge of closed polygon ``pa`` meets any edge of ``pb``."""
    a1 = np.roll(pa, -1, axis=0)
    b1 = np.roll(pb, -1, axis=0)
    i, j = _candidate_pairs(pa, a1, pb, b1)
    if len(i) == 0:
        return False
    return bool(np.any(segments_intersect(pa[i], a1[i], pb[j], b1[j])))


def element_lengths(mesh: CurveMesh) -> np.ndarray:
    return mesh.quad.wjac.sum(axis=1)


def length_ratio(mesh: CurveMesh) -> float:
    """Longest over shortest element length; 1 for a uniform mesh."""
    el = element_lengths(mesh)
    return float(el.max() / el.min())


def redistribute_nodes(mesh: CurveMesh, samples: int = 32) -> CurveMesh:
    """Re-place the nodes equally in arclength on the current piecewise quadratic curve.

    Node 0 stays put and every new node lies exactly on the old curve, so
    the geometry changes only through re-interpolation.  Midpoints are then
    re-adjusted.
    """
    n_el = mesh.n_elements
    if not np.array_equal(mesh.elements, standard_elements(n_el)):
        raise MeshError("redistribution needs the standard element layout")
    xe = mesh.element_nodes
    # arclength tables per element: cumulative length at ``samples`` sub-intervals
    s = np.linspace(0.0, 1.0, samples + 1)
    xg, wg = np.polynomial.legendre.leggauss(4)
    sub = 0.5 * (s[:-1, None] + s[1:, None]) + 0.5 / samples * xg[None, :]
    _, dphi = ReferenceElement.basis(sub)
    speed = np.linalg.norm(np.einsum("kqi,eid->ekqd", dphi, xe), axis=-1)
    seg = 0.5 / samples * (speed @ wg)
    cum = np.concatenate([np.zeros((n_el, 1)), np.cumsum(seg, axis=1)], axis=1)
    start = np.concatenate([[0.0], np.cumsum(cum[:, -1])])
    total = start[-1]
    # endpoints of the new elements and arclength midpoints
    target = np.arange(2 * n_el) * (total / (2 * n_el))
    e = np.clip(np.searchsorted(start, target, side="right") - 1, 0, n_el - 1)
    local = target - start[e]
    par = np.array([np.interp(lo, cum[k], s) for k, lo in zip(e, local)])
    phi, _ = ReferenceElement.basis(par)
    nodes = np.einsum("ki,kid->kd", phi, xe[e])
    nodes[0] = mesh.nodes[mesh.elements[0, 0]]
    out = CurveMesh(nodes, standard_elements(n_el))
    return adjust_midpoints(out)
