"""One time step of the constrained Willmore flow for a single vesicle."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly
from .fem import flat, scalar_operators, scatter_load, scatter_system, scatter_vector, unflat
from .functionals import (
    BarrierSpec,
    DistanceField,
    barrier_functional,
    distance_field,
    distance_functional,
    willmore_energy,
)
from .mesh import (
    REFERENCE,
    CurveMesh,
    MeshError,
    adjust_midpoints,
    length_ratio,
    mesh_length,
    redistribute_nodes,
)

log = logging.getLogger(__name__)

FLOW_MODELS = ("length", "model1", "model2", "model3")


class SolverError(RuntimeError):
    pass


class SingularSystemError(SolverError):
    pass


class NewtonError(SolverError):
    pass


@dataclass(frozen=True)
class FlowParameters:
    tau: float = 1e-3
    alpha: float = 0.0
    beta: float = 0.0
    epsilon: float = 1e-7
    max_iters: int = 1000
    newton_tol: float = 1e-9
    newton_max_iter: int = 25
    model: str = "model1"
    remesh_ratio: float = 0.0   # redistribute nodes when element lengths differ more; 0 = never

    def __post_init__(self):
        if self.model not in FLOW_MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        if not (self.tau > 0 and self.epsilon > 0 and self.newton_tol > 0):
            raise ValueError("tau, epsilon and newton_tol must be positive")
        if self.remesh_ratio and self.remesh_ratio <= 1.0:
            raise ValueError("remesh_ratio must exceed 1 (or be 0 to disable)")


@dataclass(frozen=True)
class VesicleState:
    mesh: CurveMesh
    target_length: float
    ident: int = 0
    lam: float = 0.0

    @classmethod
    def initial(cls, mesh: CurveMesh, ident: int = 0) -> "VesicleState":
        return cls(mesh, mesh_length(mesh), ident)


@dataclass(frozen=True)
class SubproblemSolution:
    V: np.ndarray
    H: np.ndarray


@dataclass(frozen=True)
class StepReport:
    vesicle: int
    lam: float
    newton_iters: int
    length_before: float
    length_after: float
    W: float
    H_B: float
    D: float
    J: float
    max_displacement: float
    residual: float = float("nan")
    extras: dict = field(default_factory=dict)


SOLVE_RTOL = 1e-10   # reject solves whose relative residual exceeds this


@dataclass(frozen=True)
class _MainSystem:
    solution: SubproblemSolution
    residual: np.ndarray        # (N, 4): momentum and split rows at the computed solution
    coupling: sp.csr_matrix | None
    load: np.ndarray            # (N, 2) explicit penalty load g


def _relative(res, rhs):
    return float(np.linalg.norm(res) / max(np.linalg.norm(rhs), 1e-300))


def _penalty_blocks(mesh, params, barrier, field_):
    c_local = None
    g_local = np.zeros((mesh.n_elements, 3, 2))
    if barrier is not None and params.alpha != 0.0:
        c, g = assembly.dH_local(mesh, barrier, params.tau)
        c_local, g_local = params.alpha * c, g_local + params.alpha * g
    if field_ is not None and params.beta != 0.0:
        c, g = assembly.dD_local(mesh, field_, params.tau)
        c_local = params.beta * c if c_local is None else c_local + params.beta * c
        g_local = g_local + params.beta * g
    return c_local, scatter_load(mesh, g_local)


def _solve_main(mesh, params, barrier=None, field_=None) -> _MainSystem:
    m_loc = assembly.mass_local(mesh)
    c_loc, g = _penalty_blocks(mesh, params, barrier, field_)
    top_left = m_loc if c_loc is None else m_loc + c_loc
    system = scatter_system(mesh, [[top_left, assembly.dW_local(mesh)],
                                   [params.tau * assembly.stiffness_local(mesh), -m_loc]])
    rhs = np.concatenate([-g, assembly.assemble_split_rhs(mesh)], axis=1).ravel()
    try:
        sol = spla.splu(system.tocsc(), permc_spec="NATURAL").solve(rhs)
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("non-finite solution")
    res = system @ sol - rhs
    rel = _relative(res, rhs)
    if rel > SOLVE_RTOL:
        raise SingularSystemError(f"linear solve relative residual {rel:.3e}")
    sol = sol.reshape(-1, 4)
    coupling = None if c_loc is None else scatter_vector(mesh, c_loc)
    return _MainSystem(SubproblemSolution(sol[:, :2].copy(), sol[:, 2:].copy()),
                       res.reshape(-1, 4), coupling, g)


def solve_subproblem_main(mesh: CurveMesh, params: FlowParameters,
                          barrier: BarrierSpec | None = None,
                          field_: DistanceField | None = None) -> SubproblemSolution:
    """Velocity and curvature driven by bending, barrier and distance terms.

    Momentum row (M + C) V + A_W H = -g, split row tau K V - M H = -K x, where
    C and g collect the linearized barrier and distance terms.
    """
    return _solve_main(mesh, params, barrier, field_).solution


def _solve_area(mesh, params):
    ops = scalar_operators(mesh)
    system = (ops.mass + params.tau * ops.stiffness).tocsc()
    kx = np.asarray(ops.stiffness @ mesh.nodes)
    H = spla.splu(system).solve(kx)
    if not np.all(np.isfinite(H)):
        raise SingularSystemError("non-finite solution")
    res = system @ H - kx
    if _relative(res, kx) > SOLVE_RTOL:
        raise SingularSystemError("linear solve residual too large")
    return SubproblemSolution(-H, H), res


def solve_subproblem_area(mesh: CurveMesh, params: FlowParameters) -> SubproblemSolution:
    """Velocity and curvature driven by the length derivative alone.

    The momentum row M V + M H = 0 forces V = -H, which turns the split row
    into the scalar problem (M + tau K) H = K x per component.
    """
    return _solve_area(mesh, params)[0]


def integrated_divergence(mesh: CurveMesh, V: np.ndarray) -> float:
    """int div_G V over the curve (the first variation of length along V)."""
    q = mesh.quad
    dv = np.einsum("qj,ejd->eqd", REFERENCE.dphi, V[mesh.elements])
    return float(np.einsum("q,eqd,eqd->", REFERENCE.quad_weights, dv, q.tangent))


def displaced(mesh: CurveMesh, V: np.ndarray, tau: float) -> CurveMesh:
    return adjust_midpoints(mesh.with_nodes(mesh.nodes + tau * V))


def newton_multiplier(mesh: CurveMesh, V1: np.ndarray, V2: np.ndarray, target_length: float,
                      tau: float, tol: float = 1e-9, max_iter: int = 25):
    """Multiplier making the displaced, midpoint-adjusted curve have ``target_length``.

    Returns ``(lam, iterations, new_mesh)``.  Falls back to bisection when the
    Newton iteration stalls.
    """
    div2 = integrated_divergence(mesh, V2)
    if abs(div2) < 1e-12:
        raise NewtonError("degenerate constraint direction")
    lam = -integrated_divergence(mesh, V1) / div2
    scale = tol * target_length
    history = []
    for it in range(1, max_iter + 1):
        cand = displaced(mesh, V1 + lam * V2, tau)
        f = mesh_length(cand) - target_length
        history.append(abs(f))
        if abs(f) <= scale:
            return lam, it, cand
        if len(history) >= 4 and history[-1] > 0.1 * history[-4]:
            break
        df = tau * integrated_divergence(cand, V2)
        if df == 0.0:
            break
        lam = lam - f / df
    return _bisect_multiplier(mesh, V1, V2, target_length, tau, scale, lam, max_iter, len(history))


def _bisect_multiplier(mesh, V1, V2, target, tau, scale, lam0, max_iter, used):
    def f(lam):
        cand = displaced(mesh, V1 + lam * V2, tau)
        return mesh_length(cand) - target, cand

    width = 10.0 * abs(lam0) + 1.0
    lo, hi = lam0 - width, lam0 + width
    flo, _ = f(lo)
    fhi, _ = f(hi)
    if flo * fhi > 0:
        raise NewtonError("multiplier not bracketed")
    it = used
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm, cand = f(mid)
        it += 1
        if abs(fm) <= scale:
            log.debug("multiplier by bisection after %d evaluations", it)
            return mid, it, cand
        if fm * flo > 0:
            lo, flo = mid, fm
        else:
            hi = mid
    raise NewtonError(f"multiplier did not converge in {max_iter} iterations")


def energy_terms(mesh: CurveMesh, params: FlowParameters, barrier=None, others=()):
    """(W, H_B, D) on ``mesh``; distance uses witnesses from the current meshes."""
    W = willmore_energy(mesh)
    hb = barrier_functional(mesh, barrier) if barrier is not None else 0.0
    d = 0.0
    if others:
        d = distance_functional(mesh, distance_field(mesh, others))
    return W, hb, d


def augmented_energy(W, hb, d, lam, length, target, params: FlowParameters) -> float:
    return W + params.alpha * hb + params.beta * d + lam * (length - target)


def combined_residual(main: _MainSystem, area_residual: np.ndarray, sol2: SubproblemSolution,
                      lam: float, mesh: CurveMesh) -> float:
    """Relative residual of the superposed pair in the coupled system with lam inserted.

    Momentum: (M + C) V + A_W H1 + lam M H2 = -g; split: tau K V - M H = -(1 + lam) K x,
    for V = V1 + lam V2 and H = H1 + lam H2.  Up to solver error this is
    ``lam C V2``: zero without penalty terms, otherwise the price of putting
    the implicit barrier and distance terms into the first subproblem only.
    """
    r_mom = main.residual[:, :2].copy()
    if main.coupling is not None:
        r_mom += lam * unflat(main.coupling @ flat(sol2.V))
    r_split = main.residual[:, 2:] - lam * area_residual
    ops = scalar_operators(mesh)
    kx = ops.stiffness @ mesh.nodes
    v = main.solution.V + lam * sol2.V
    scale = (np.linalg.norm(ops.mass @ v) + abs(1.0 + lam) * np.linalg.norm(kx)
             + np.linalg.norm(main.load) + 1e-300)
    return float(np.hypot(np.linalg.norm(r_mom), np.linalg.norm(r_split)) / scale)


def advance_vesicle(state: VesicleState, params: FlowParameters, barrier: BarrierSpec | None = None,
                    others=()):
    """Advance one vesicle by one step; returns ``(new_state, StepReport)``."""
    mesh = state.mesh
    others = list(others)
    length_before = mesh_length(mesh)
    remeshed = bool(params.remesh_ratio) and length_ratio(mesh) > params.remesh_ratio
    if remeshed:
        mesh = redistribute_nodes(mesh)
    if params.model == "length":
        sol, _ = _solve_area(mesh, params)
        new_mesh = displaced(mesh, sol.V, params.tau)
        lam, iters, residual = 1.0, 0, float("nan")
        velocity = sol.V
    else:
        field_ = distance_field(mesh, others) if (others and params.beta != 0.0) else None
        use_barrier = barrier if params.alpha != 0.0 else None
        main = _solve_main(mesh, params, use_barrier, field_)
        sol1 = main.solution
        sol2, area_res = _solve_area(mesh, params)
        lam, iters, new_mesh = newton_multiplier(mesh, sol1.V, sol2.V, state.target_length,
                                                 params.tau, params.newton_tol,
                                                 params.newton_max_iter)
        velocity = sol1.V + lam * sol2.V
        residual = combined_residual(main, area_res, sol2, lam, mesh)
    try:
        new_mesh.validate()
    except MeshError as exc:
        raise MeshError(f"vesicle {state.ident}: {exc}") from exc
    length_after = mesh_length(new_mesh)
    W, hb, d = energy_terms(new_mesh, params, barrier, others if params.model == "model3" else ())
    lam_report = 0.0 if params.model == "length" else lam
    J = augmented_energy(W, hb, d, lam_report, length_after, state.target_length, params)
    if params.model == "length":
        J = length_after
    disp = float(np.max(np.linalg.norm(new_mesh.nodes - state.mesh.nodes, axis=1)))
    report = StepReport(state.ident, lam_report, iters, length_before, length_after,
                        W, hb, d, J, disp, residual,
                        {"max_velocity": float(np.max(np.linalg.norm(velocity, axis=1))),
                         "remeshed": remeshed})
    return replace(state, mesh=new_mesh, lam=lam_report), report
