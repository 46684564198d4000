"""Shape functionals: bending energy, length, smoothed barrier and distance."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from . import fem
from .mesh import CurveMesh

DEFAULT_SHARPNESS = 25.0


class ContactError(RuntimeError):
    """Two vesicles touch (zero distance)."""


# --- smoothed indicator -------------------------------------------------------

@dataclass(frozen=True)
class HalfPlane:
    """Logistic step ``1 / (1 + exp(-2k (n.p - offset)))``; ~1 where ``n.p > offset``."""

    normal: tuple
    offset: float
    sharpness: float = DEFAULT_SHARPNESS
    name: str | None = None

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if n.shape != (2,) or norm == 0:
            raise ValueError("half-plane normal must be a nonzero 2-vector")
        if not self.sharpness > 0:
            raise ValueError("sharpness must be positive")
        object.__setattr__(self, "normal", tuple(n / norm))

    def evaluate(self, p):
        n = np.asarray(self.normal)
        k2 = 2.0 * self.sharpness
        sig = expit(k2 * (p @ n - self.offset))
        ds = k2 * sig * (1.0 - sig)
        d2s = k2 * k2 * sig * (1.0 - sig) * (1.0 - 2.0 * sig)
        grad = ds[:, None] * n
        hess = d2s[:, None, None] * np.outer(n, n)
        return sig, grad, hess

    def primitives(self):
        return [self]

    def upper_bound(self):
        return 1.0

    def map_primitives(self, fn):
        return fn(self)


@dataclass(frozen=True)
class Product:
    factors: tuple

    def evaluate(self, p):
        v, g, h = self.factors[0].evaluate(p)
        for f in self.factors[1:]:
            v2, g2, h2 = f.evaluate(p)
            h = (h * v2[:, None, None] + v[:, None, None] * h2
                 + np.einsum("pi,pj->pij", g, g2) + np.einsum("pi,pj->pij", g2, g))
            g = g * v2[:, None] + v[:, None] * g2
            v = v * v2
        return v, g, h

    def primitives(self):
        return [q for f in self.factors for q in f.primitives()]

    def upper_bound(self):
        return float(np.prod([f.upper_bound() for f in self.factors]))

    def map_primitives(self, fn):
        return Product(tuple(f.map_primitives(fn) for f in self.factors))


@dataclass(frozen=True)
class Sum:
    terms: tuple

    def evaluate(self, p):
        parts = [t.evaluate(p) for t in self.terms]
        return (sum(x[0] for x in parts), sum(x[1] for x in parts), sum(x[2] for x in parts))

    def primitives(self):
        return [q for t in self.terms for q in t.primitives()]

    def upper_bound(self):
        return float(sum(t.upper_bound() for t in self.terms))

    def map_primitives(self, fn):
        return Sum(tuple(t.map_primitives(fn) for t in self.terms))


@dataclass(frozen=True)
class BarrierSpec:
    """Smoothed indicator of an obstacle region built from half-plane steps."""

    expr: HalfPlane | Product | Sum

    def evaluate(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return self.expr.evaluate(p)

    def primitives(self):
        return self.expr.primitives()

    def offsets(self) -> dict:
        return {q.name: q.offset for q in self.primitives() if q.name is not None}

    def with_offsets(self, offsets: dict) -> "BarrierSpec":
        def swap(q):
            return replace(q, offset=float(offsets[q.name])) if q.name in offsets else q
        return BarrierSpec(self.expr.map_primitives(swap))

    def translated(self, shift) -> "BarrierSpec":
        shift = np.asarray(shift, dtype=float)
        return BarrierSpec(self.expr.map_primitives(
            lambda q: replace(q, offset=q.offset + float(np.dot(q.normal, shift)))))


def indicator_eval(barrier: BarrierSpec, p):
    """Value, gradient and Hessian of the smoothed indicator at one point."""
    v, g, h = barrier.evaluate(np.asarray(p, dtype=float).reshape(1, 2))
    return float(v[0]), g[0], h[0]


def barrier_functional(mesh: CurveMesh, barrier: BarrierSpec) -> float:
    q = mesh.quad
    v, _, _ = barrier.evaluate(q.x.reshape(-1, 2))
    return float(np.sum(v.reshape(q.jac.shape) * q.wjac))


# --- curvature and bending energy ---------------------------------------------

def discrete_curvature(mesh: CurveMesh) -> np.ndarray:
    """Nodal curvature vector H solving M H = K x (points outward on convex curves)."""
    ops = fem.scalar_operators(mesh)
    return ops.solve_mass(ops.stiffness @ mesh.nodes)


def willmore_energy(mesh: CurveMesh, curvature: np.ndarray | None = None) -> float:
    """Half the integral of |H|^2 over the curve."""
    ops = fem.scalar_operators(mesh)
    h = discrete_curvature(mesh) if curvature is None else curvature
    return 0.5 * float(np.sum(h * (ops.mass @ h)))


# --- distance between vesicles ------------------------------------------------

@dataclass(frozen=True)
class DistanceField:
    """Per-element squared distance ``d`` from the element midpoint to its witness."""

    d: np.ndarray
    witness: np.ndarray
    reference: np.ndarray
    sources: tuple = ()


def candidate_points(meshes) -> np.ndarray:
    pts = [m.nodes for m in meshes] + [m.quad.x.reshape(-1, 2) for m in meshes]
    return np.vstack(pts)


def distance_field(mesh: CurveMesh, others, sources=()) -> DistanceField:
    """Closest point among nodes and quadrature points of ``others`` for each element."""
    others = list(others)
    if not others:
        raise ValueError("distance field needs at least one other vesicle")
    cand = candidate_points(others)
    ref = mesh.element_nodes[:, 1]  # parametric midpoint image
    _, idx = cKDTree(cand).query(ref)
    witness = cand[idx]
    d = np.sum((ref - witness) ** 2, axis=1)
    if np.min(d) < 1e-12:
        raise ContactError("vesicles are in contact (zero distance)")
    return DistanceField(d, witness, ref, tuple(sources))


def inverse_distance(x, y):
    """Value, gradient and Hessian of ``p -> 1/|p - y|^2`` at ``x`` (rows of points)."""
    r = x - y
    d = np.sum(r * r, axis=-1)
    if np.min(d) < 1e-12:
        raise ContactError("zero distance to witness point")
    f = 1.0 / d
    grad = -2.0 * r / d[..., None] ** 2
    eye = np.eye(2)
    hess = (-2.0 / d[..., None, None] ** 2) * eye + (8.0 / d[..., None, None] ** 3) * \
        np.einsum("...i,...j->...ij", r, r)
    return f, grad, hess


def distance_functional(mesh: CurveMesh, field: DistanceField) -> float:
    q = mesh.quad
    f, _, _ = inverse_distance(q.x, field.witness[:, None, :])
    return float(np.sum(f * q.wjac))
