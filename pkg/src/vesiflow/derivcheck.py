"""Finite-difference verification of the assembled shape derivatives.

Each assembled derivative ``g`` (barrier, distance, length) is tested on a
smooth ambient vector field ``Phi``: the discrete value ``g . Phi_h`` (``Phi_h``
the nodal interpolant) is compared with a central difference of the same
functional evaluated on the *analytic* curve deformed by ``x -> x + eps Phi(x)``
with high-order quadrature.  The difference is a discretization error and
must shrink under refinement.  A second comparison against finite differences
of the discrete functional (nodes moved by ``eps Phi_h``) isolates assembly
mistakes from discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import assembly
from .fem import scalar_operators
from .functionals import (
    barrier_functional,
    discrete_curvature,
    distance_field,
    distance_functional,
    willmore_energy,
)
from .mesh import mesh_length
from .shapes import build_shape, mesh_from_curve

FD_STEP = 1e-5
ORACLE_POINTS = 24


@dataclass(frozen=True)
class SmoothField:
    """Sum of plane waves per component: Phi_c(p) = sum_j a_cj cos(w_cj . p + phase_cj)."""

    amp: np.ndarray     # (2, J)
    wave: np.ndarray    # (2, J, 2)
    phase: np.ndarray   # (2, J)

    @classmethod
    def random(cls, rng: np.random.Generator, terms: int = 3, max_wave: float = 1.5):
        return cls(rng.normal(size=(2, terms)),
                   rng.uniform(-max_wave, max_wave, size=(2, terms, 2)),
                   rng.uniform(0, 2 * np.pi, size=(2, terms)))

    def __call__(self, p):
        arg = np.einsum("cjd,...d->...cj", self.wave, p) + self.phase
        return np.sum(self.amp * np.cos(arg), axis=-1)

    def jacobian(self, p):
        """d Phi_c / d p_d, shape (..., 2, 2)."""
        arg = np.einsum("cjd,...d->...cj", self.wave, p) + self.phase
        return -np.einsum("cj,...cj,cjd->...cd", self.amp, np.sin(arg), self.wave)


@dataclass(frozen=True)
class CheckRow:
    functional: str
    elements: int
    field: int
    assembled: float
    oracle: float
    discrete_fd: float

    @property
    def rel_error(self) -> float:
        return abs(self.assembled - self.oracle) / max(abs(self.oracle), 1e-300)

    @property
    def discrete_error(self) -> float:
        return abs(self.assembled - self.discrete_fd) / max(abs(self.discrete_fd), 1e-300)


@dataclass
class CheckResult:
    rows: list
    resolutions: tuple
    tolerance: float
    discrete_tolerance: float = 1e-6

    def max_error(self, functional, elements, discrete=False):
        errs = [r.discrete_error if discrete else r.rel_error
                for r in self.rows if r.functional == functional and r.elements == elements]
        return max(errs)

    def functionals(self):
        return sorted({r.functional for r in self.rows})

    def summary(self):
        """(functional, coarse error, fine error, ratio, discrete error, passed) per functional."""
        coarse, fine = self.resolutions[0], self.resolutions[-1]
        out = []
        for f in self.functionals():
            ec, ef = self.max_error(f, coarse), self.max_error(f, fine)
            ed = max(self.max_error(f, n, True) for n in self.resolutions)
            ratio = ef / ec if ec > 0 else 0.0
            ok = ef <= self.tolerance and ratio <= 0.5 and ed <= self.discrete_tolerance
            out.append((f, ec, ef, ratio, ed, ok))
        return out

    @property
    def passed(self) -> bool:
        return all(s[-1] for s in self.summary())

    def table(self) -> str:
        lines = [f"{'functional':<10} {'err@' + str(self.resolutions[0]):>11} "
                 f"{'err@' + str(self.resolutions[-1]):>11} {'ratio':>7} {'discrete':>10}  result"]
        for f, ec, ef, ratio, ed, ok in self.summary():
            lines.append(f"{f:<10} {ec:11.3e} {ef:11.3e} {ratio:7.3f} {ed:10.2e}  "
                         f"{'PASS' if ok else 'FAIL'}")
        return "\n".join(lines)


def _arc_functional(curve, u0, u1, field, eps, integrand):
    """int over the deformed analytic arcs of ``integrand(element, x)``."""
    xg, wg = np.polynomial.legendre.leggauss(ORACLE_POINTS)
    h = (u1 - u0)[:, None]
    s = u0[:, None] + 0.5 * h * (xg[None, :] + 1.0)
    x0 = curve.point(s.ravel())
    d0 = curve.d1(s.ravel())
    x = x0 + eps * field(x0)
    dx = d0 + eps * np.einsum("kab,kb->ka", field.jacobian(x0), d0)
    speed = np.linalg.norm(dx, axis=1).reshape(s.shape)
    vals = integrand(x.reshape(s.shape + (2,)))
    return float(np.sum(0.5 * h * wg[None, :] * speed * vals))


def _central(fn, eps):
    return (fn(eps) - fn(-eps)) / (2.0 * eps)


def check_resolution(config, elements: int, fields, eps: float = FD_STEP):
    """Rows for every functional and field at one resolution of the first shape."""
    spec = replace(config.shapes[0], elements=elements)
    curve = spec.curve()
    mesh, u = mesh_from_curve(curve, elements)
    u1 = np.append(u[1:], u[0] + curve.period)
    others = [build_shape(s) for s in config.shapes[1:]]
    rows = []

    def add(name, g, integrand, discrete):
        for j, phi in enumerate(fields):
            phi_h = phi(mesh.nodes)
            assembled = float(np.sum(g * phi_h))
            oracle = _central(lambda e: _arc_functional(curve, u, u1, phi, e, integrand), eps)
            dfd = _central(lambda e: discrete(mesh.with_nodes(mesh.nodes + e * phi_h)), eps)
            rows.append(CheckRow(name, elements, j, assembled, oracle, dfd))

    ops = scalar_operators(mesh)
    add("length", ops.mass @ discrete_curvature(mesh),
        lambda x: np.ones(x.shape[:-1]), mesh_length)
    if config.barrier is not None:
        _, g = assembly.assemble_dH_terms(mesh, config.barrier, 0.0)
        barrier = config.barrier
        add("barrier", g, lambda x: barrier.evaluate(x.reshape(-1, 2))[0].reshape(x.shape[:-1]),
            lambda m: barrier_functional(m, barrier))
    if others:
        fld = distance_field(mesh, others)
        _, g = assembly.assemble_dD_terms(mesh, fld, 0.0)
        y = fld.witness[:, None, :]
        add("distance", g, lambda x: 1.0 / np.sum((x - y) ** 2, axis=-1),
            lambda m: distance_functional(m, fld))
    return rows


def run_derivcheck(config, resolutions=(64, 128), n_fields: int = 5, seed: int | None = None,
                   tolerance: float = 1e-3, eps: float = FD_STEP) -> CheckResult:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    fields = [SmoothField.random(rng) for _ in range(n_fields)]
    rows = []
    for n in resolutions:
        rows += check_resolution(config, n, fields, eps)
    return CheckResult(rows, tuple(resolutions), tolerance)


def bending_crosscheck(mesh, fields):
    """Relative gaps between the two bending-derivative forms on each field.

    Also returns the finite difference of the discrete bending energy for reference.
    """
    h = discrete_curvature(mesh)
    form1 = assembly.apply(assembly.assemble_dW_operator(mesh), h)
    form2 = assembly.assemble_dW2_diagnostic(mesh, h)
    out = []
    for phi in fields:
        ph = phi(mesh.nodes)
        a, b = float(np.sum(form1 * ph)), float(np.sum(form2 * ph))
        fd = _central(lambda e: willmore_energy(mesh.with_nodes(mesh.nodes + e * ph)), FD_STEP)
        out.append((a, b, abs(a - b) / max(abs(b), 1e-300), fd))
    return out
