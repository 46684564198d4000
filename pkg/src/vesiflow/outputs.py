"""Metrics CSV, geometry frames with barrier sidecars, and SVG renders."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .functionals import BarrierSpec
from .mesh import CurveMesh

METRICS_HEADER = ("step", "t", "vesicle", "length", "W", "H_B", "D", "J", "lambda", "newton_iters")
FRAME_HEADER = ("vesicle", "node", "x", "y", "is_midpoint")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_metrics(rows, path) -> Path:
    """Write metrics rows (see :func:`vesiflow.orchestrator.metrics_rows`)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(",".join(METRICS_HEADER) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def read_metrics(path):
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ValueError(f"{path}: unexpected metrics header")
        out = []
        for r in reader:
            out.append({k: (int(v) if k in ("step", "vesicle", "newton_iters") else float(v))
                        for k, v in r.items()})
        return out


@dataclass
class Frame:
    step: int
    t: float
    meshes: list
    offsets: dict


def write_frame(meshes, path, step: int = 0, t: float = 0.0, barrier: BarrierSpec | None = None) -> Path:
    """Write node coordinates to ``path`` (CSV) and barrier offsets to ``path.json``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(",".join(FRAME_HEADER) + "\n")
        for v, mesh in enumerate(meshes):
            mid = mesh.is_midpoint
            for i, (x, y) in enumerate(mesh.nodes):
                fh.write(f"{v},{i},{_fmt(x)},{_fmt(y)},{int(mid[i])}\n")
    sidecar = {"step": step, "t": t,
               "barrier_offsets": barrier.offsets() if barrier is not None else {}}
    path.with_name(path.name + ".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return path


def read_frame(path) -> Frame:
    """Inverse of :func:`write_frame`; coordinates round-trip bit-exactly."""
    path = Path(path)
    nodes: dict = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader)) != FRAME_HEADER:
            raise ValueError(f"{path}: unexpected frame header")
        for v, i, x, y, _ in reader:
            nodes.setdefault(int(v), []).append((int(i), float(x), float(y)))
    meshes = []
    for v in sorted(nodes):
        rows = sorted(nodes[v])
        if [r[0] for r in rows] != list(range(len(rows))):
            raise ValueError(f"{path}: vesicle {v} has missing node indices")
        meshes.append(CurveMesh.from_nodes([(x, y) for _, x, y in rows]))
    side = path.with_name(path.name + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {"step": 0, "t": 0.0,
                                                               "barrier_offsets": {}}
    return Frame(meta["step"], meta["t"], meshes, meta["barrier_offsets"])


def viewbox_for(meshes, pad: float = 0.15):
    pts = np.vstack([m.nodes for m in meshes])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    size = float(max(hi - lo)) * (1.0 + 2 * pad)
    c = 0.5 * (lo + hi)
    return (c[0] - size / 2, c[1] - size / 2, size, size)


def quadratic_path(mesh: CurveMesh) -> str:
    """SVG path through the curve: one quadratic Bezier per element, closed."""
    xe = mesh.element_nodes
    # Bezier control point of the parabola through a, m (at s = 1/2), b
    ctrl = 2.0 * xe[:, 1] - 0.5 * (xe[:, 0] + xe[:, 2])

    def pt(p):
        return f"{p[0]:.9g},{-p[1]:.9g}"

    parts = [f"M {pt(xe[0, 0])}"]
    parts += [f"Q {pt(c)} {pt(b)}" for c, b in zip(ctrl, xe[:, 2])]
    return " ".join(parts) + " Z"


def render_svg(meshes, barrier: BarrierSpec | None, path, viewbox=None) -> Path:
    """Draw curves and dashed barrier boundaries; y is flipped so up is up."""
    path = Path(path)
    vb = viewbox if viewbox is not None else viewbox_for(meshes)
    x0, y0, w, h = vb
    svg_vb = (x0, -(y0 + h), w, h)
    stroke = 0.004 * max(w, h)
    lines = ['<svg xmlns="http://www.w3.org/2000/svg" '
             f'viewBox="{svg_vb[0]:.9g} {svg_vb[1]:.9g} {w:.9g} {h:.9g}" width="600" height="600">']
    for v, mesh in enumerate(meshes):
        lines.append(f'<path class="vesicle" data-vesicle="{v}" fill="none" stroke="black" '
                     f'stroke-width="{stroke:.6g}" d="{quadratic_path(mesh)}"/>')
    if barrier is not None:
        centre = np.array([x0 + w / 2, y0 + h / 2])
        reach = float(np.hypot(w, h))
        for q in barrier.primitives():
            n = np.asarray(q.normal)
            foot = centre + (q.offset - n @ centre) * n
            d = np.array([-n[1], n[0]])
            a, b = foot - reach * d, foot + reach * d
            name = q.name or ""
            lines.append(f'<g class="barrier" data-name="{name}" stroke="gray" '
                         f'stroke-dasharray="{4 * stroke:.6g},{3 * stroke:.6g}" '
                         f'stroke-width="{stroke:.6g}">')
            lines.append(f'<line x1="{a[0]:.9g}" y1="{-a[1]:.9g}" x2="{b[0]:.9g}" y2="{-b[1]:.9g}"/>')
            lines.append("</g>")
    lines.append("</svg>")
    path.write_text("\n".join(lines) + "\n")
    return path
