"""Analytic initial curves and their quadratic meshes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .mesh import CurveMesh, MeshError, signed_area

MIN_ELEMENTS = 8

SHAPE_KEYS = {
    "circle": {"radius", "center"},
    "ellipse": {"a", "b", "center", "rotation"},
    "c-shape": {"radius", "width", "opening", "center", "rotation"},
    "cisterna": {"half_length", "half_thickness", "center", "rotation"},
    "points": {"points"},
}


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    params: dict = field(default_factory=dict)
    elements: int = 64

    def __post_init__(self):
        if self.kind not in SHAPE_KEYS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        unknown = set(self.params) - SHAPE_KEYS[self.kind]
        if unknown:
            raise ValueError(f"unknown {self.kind} parameter(s): {sorted(unknown)}")
        if int(self.elements) < MIN_ELEMENTS:
            raise ValueError(f"element count must be at least {MIN_ELEMENTS}")

    def curve(self) -> "ParametricCurve":
        p = self.params
        center = np.asarray(p.get("center", (0.0, 0.0)), dtype=float)
        rot = float(p.get("rotation", 0.0))
        if self.kind == "circle":
            r = float(p.get("radius", 1.0))
            _positive(r=r)
            return Ellipse(r, r, center, 0.0)
        if self.kind == "ellipse":
            a, b = float(p.get("a", 2.0)), float(p.get("b", 1.0))
            _positive(a=a, b=b)
            return Ellipse(a, b, center, rot)
        if self.kind == "c-shape":
            r, w = float(p.get("radius", 1.0)), float(p.get("width", 0.25))
            opening = float(p.get("opening", np.pi / 3))
            _positive(radius=r, width=w, opening=opening)
            if w >= r:
                raise ValueError("c-shape width must be smaller than its radius")
            if opening >= 2 * np.pi or 2 * w >= (r - w) * (2 * np.pi - opening):
                raise ValueError("c-shape opening leaves no arc")
            if 2 * w >= 2 * r * np.sin(opening / 2):
                raise ValueError("c-shape end caps overlap across the opening")
            return c_shape(r, w, opening, center, rot)
        if self.kind == "cisterna":
            a, r = float(p.get("half_length", 2.0)), float(p.get("half_thickness", 0.3))
            _positive(half_length=a, half_thickness=r)
            return stadium(a, r, center, rot)
        pts = np.asarray(p.get("points", ()), dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
            raise ValueError("points must be a list of at least 4 (x, y) pairs")
        return SplineCurve(pts)


def _positive(**values):
    for k, v in values.items():
        if not v > 0:
            raise ValueError(f"{k} must be positive")


class ParametricCurve:
    """A closed C1 curve ``s -> point(s)`` on ``[0, period)``."""

    period: float

    def point(self, s):
        raise NotImplementedError

    def d1(self, s):
        raise NotImplementedError

    def d2(self, s):
        raise NotImplementedError

    def arclength_table(self, n: int = 4096):
        s = np.linspace(0.0, self.period, n + 1)
        xg, wg = np.polynomial.legendre.leggauss(6)
        h = np.diff(s)
        mids = 0.5 * (s[:-1] + s[1:])
        pts = mids[:, None] + 0.5 * h[:, None] * xg[None, :]
        speed = np.linalg.norm(self.d1(pts.ravel()), axis=1).reshape(pts.shape)
        seg = 0.5 * h * (speed @ wg)
        return s, np.concatenate([[0.0], np.cumsum(seg)])

    def length(self) -> float:
        return float(self.arclength_table()[1][-1])

    def uniform_parameters(self, n: int) -> np.ndarray:
        """Parameters of ``n`` points equally spaced in arclength."""
        s, cum = self.arclength_table()
        target = np.linspace(0.0, cum[-1], n, endpoint=False)
        u = np.interp(target, cum, s)
        for _ in range(3):
            idx = np.clip(np.searchsorted(s, u) - 1, 0, len(s) - 2)
            # local arclength by quadrature from the table node
            xg, wg = np.polynomial.legendre.leggauss(6)
            h = u - s[idx]
            pts = s[idx][:, None] + 0.5 * h[:, None] * (xg[None, :] + 1.0)
            speed = np.linalg.norm(self.d1(pts.ravel()), axis=1).reshape(pts.shape)
            arc = cum[idx] + 0.5 * h * (speed @ wg)
            u = u - (arc - target) / np.linalg.norm(self.d1(u), axis=1)
        return u

    def closest_parameter(self, p, lo, hi):
        """Parameter in ``[lo, hi]`` of the point closest to ``p`` (vectorized)."""
        p = np.atleast_2d(p)
        lo, hi = np.atleast_1d(lo), np.atleast_1d(hi)
        grid = lo[:, None] + (hi - lo)[:, None] * np.linspace(0, 1, 65)[None, :]
        pts = self.point(grid.ravel()).reshape(grid.shape + (2,))
        dist = np.sum((pts - p[:, None, :]) ** 2, axis=-1)
        u = grid[np.arange(len(p)), np.argmin(dist, axis=1)]
        for _ in range(50):
            r = self.point(u) - p
            g1, g2 = self.d1(u), self.d2(u)
            g = np.sum(r * g1, axis=1)
            gp = np.sum(g1 * g1, axis=1) + np.sum(r * g2, axis=1)
            gp = np.where(gp > 0, gp, np.sum(g1 * g1, axis=1))
            du = g / gp
            u = np.clip(u - du, lo, hi)
            if np.max(np.abs(du)) < 1e-15 * max(self.period, 1.0):
                break
        return u


class Ellipse(ParametricCurve):
    def __init__(self, a, b, center=(0.0, 0.0), rotation=0.0):
        self.a, self.b = a, b
        self.center = np.asarray(center, dtype=float)
        c, s = np.cos(rotation), np.sin(rotation)
        self.rot = np.array([[c, -s], [s, c]])
        self.period = 2 * np.pi

    def _map(self, v):
        return v @ self.rot.T

    def point(self, s):
        s = np.asarray(s, dtype=float)
        v = np.stack([self.a * np.cos(s), self.b * np.sin(s)], axis=-1)
        return self._map(v) + self.center

    def d1(self, s):
        s = np.asarray(s, dtype=float)
        return self._map(np.stack([-self.a * np.sin(s), self.b * np.cos(s)], axis=-1))

    def d2(self, s):
        s = np.asarray(s, dtype=float)
        return self._map(np.stack([-self.a * np.cos(s), -self.b * np.sin(s)], axis=-1))


class PiecewiseCurve(ParametricCurve):
    """Arclength-parametrized chain of straight segments and circular arcs.

    Each piece is ``("line", start, direction, length)`` or
    ``("arc", center, radius, angle0, sign, length)`` with ``sign`` +1 for
    counterclockwise traversal.
    """

    def __init__(self, pieces, center=(0.0, 0.0), rotation=0.0):
        self.pieces = pieces
        self.breaks = np.concatenate([[0.0], np.cumsum([pc[-1] for pc in pieces])])
        self.period = float(self.breaks[-1])
        self.center = np.asarray(center, dtype=float)
        c, s = np.cos(rotation), np.sin(rotation)
        self.rot = np.array([[c, -s], [s, c]])

    def _eval(self, s, order):
        s = np.mod(np.asarray(s, dtype=float), self.period)
        flat = s.ravel()
        out = np.zeros((len(flat), 2))
        idx = np.clip(np.searchsorted(self.breaks, flat, side="right") - 1, 0, len(self.pieces) - 1)
        for k, pc in enumerate(self.pieces):
            sel = idx == k
            if not np.any(sel):
                continue
            loc = flat[sel] - self.breaks[k]
            if pc[0] == "line":
                _, start, d, _ = pc
                if order == 0:
                    out[sel] = start + loc[:, None] * d
                elif order == 1:
                    out[sel] = d
            else:
                _, cen, r, ang0, sign, _ = pc
                ang = ang0 + sign * loc / r
                u = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
                du = np.stack([-np.sin(ang), np.cos(ang)], axis=-1)
                if order == 0:
                    out[sel] = cen + r * u
                elif order == 1:
                    out[sel] = sign * du
                else:
                    out[sel] = -u / r
        out = out @ self.rot.T
        if order == 0:
            out = out + self.center
        return out.reshape(s.shape + (2,))

    def point(self, s):
        return self._eval(s, 0)

    def d1(self, s):
        return self._eval(s, 1)

    def d2(self, s):
        return self._eval(s, 2)


def stadium(half_length, radius, center=(0.0, 0.0), rotation=0.0) -> PiecewiseCurve:
    a, r = half_length, radius
    # starts at the bottom midpoint so that uniform meshes are mirror symmetric
    pieces = [
        ("line", np.array([0.0, -r]), np.array([1.0, 0.0]), a),
        ("arc", np.array([a, 0.0]), r, -np.pi / 2, 1.0, np.pi * r),
        ("line", np.array([a, r]), np.array([-1.0, 0.0]), 2 * a),
        ("arc", np.array([-a, 0.0]), r, np.pi / 2, 1.0, np.pi * r),
        ("line", np.array([-a, -r]), np.array([1.0, 0.0]), a),
    ]
    return PiecewiseCurve(pieces, center, rotation)


def c_shape(radius, width, opening, center=(0.0, 0.0), rotation=0.0) -> PiecewiseCurve:
    """Annular sector of mean radius ``radius`` and half-thickness ``width``.

    The gap of angle ``opening`` faces the positive x axis; ends are capped
    by semicircles.
    """
    ro, ri = radius + width, radius - width
    f1, f2 = opening / 2, 2 * np.pi - opening / 2
    span = f2 - f1
    u1 = np.array([np.cos(f1), np.sin(f1)])
    u2 = np.array([np.cos(f2), np.sin(f2)])
    pieces = [
        ("arc", np.zeros(2), ro, f1, 1.0, ro * span),
        ("arc", radius * u2, width, f2, 1.0, np.pi * width),
        ("arc", np.zeros(2), ri, f2, -1.0, ri * span),
        ("arc", radius * u1, width, f1 + np.pi, 1.0, np.pi * width),
    ]
    return PiecewiseCurve(pieces, center, rotation)


class SplineCurve(ParametricCurve):
    """Periodic cubic spline through user points (chord-length parameter)."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if np.allclose(pts[0], pts[-1]):
            pts = pts[:-1]
        closed = np.vstack([pts, pts[:1]])
        seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
        if np.any(seg <= 0):
            raise ValueError("consecutive points must differ")
        t = np.concatenate([[0.0], np.cumsum(seg)])
        self.period = float(t[-1])
        self.spline = CubicSpline(t, closed, bc_type="periodic")

    def _wrap(self, s):
        return np.mod(np.asarray(s, dtype=float), self.period)

    def point(self, s):
        return self.spline(self._wrap(s))

    def d1(self, s):
        return self.spline(self._wrap(s), 1)

    def d2(self, s):
        return self.spline(self._wrap(s), 2)


def mesh_from_curve(curve: ParametricCurve, n_elements: int):
    """Mesh with endpoints equispaced in arclength and projected midpoints.

    Returns the mesh and the parameters of the element endpoints.
    """
    u = curve.uniform_parameters(n_elements)
    u_next = np.append(u[1:], u[0] + curve.period)
    ends = curve.point(u)
    chord_mid = 0.5 * (ends + np.roll(ends, -1, axis=0))
    um = curve.closest_parameter(chord_mid, u, u_next)
    nodes = np.empty((2 * n_elements, 2))
    nodes[0::2] = ends
    nodes[1::2] = curve.point(um)
    return CurveMesh.from_nodes(nodes), u


def build_shape(spec: ShapeSpec) -> CurveMesh:
    """Mesh the analytic curve of ``spec``; rejects self-intersecting curves."""
    curve = spec.curve()
    mesh, _ = mesh_from_curve(curve, int(spec.elements))
    if signed_area(mesh) < 0:
        # reverse traversal to make the curve counterclockwise
        nodes = mesh.nodes
        order = np.concatenate([[0], np.arange(len(nodes) - 1, 0, -1)])
        mesh = mesh.with_nodes(nodes[order])
    try:
        mesh.validate()
    except MeshError as exc:
        raise ValueError(f"{spec.kind} shape rejected: {exc}") from exc
    return mesh
