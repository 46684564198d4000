"""Outer time loop over one or more vesicles sharing a barrier."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .functionals import BarrierSpec
from .mesh import CurveMesh, polygons_intersect
from .stepper import (
    FlowParameters,
    StepReport,
    VesicleState,
    advance_vesicle,
    augmented_energy,
    energy_terms,
)

log = logging.getLogger(__name__)


class ScenarioError(RuntimeError):
    """A step failed; the message names the vesicle and outer iteration."""


class VesicleIntersectionError(ScenarioError):
    pass


class EmptyWindowError(ValueError):
    pass


@dataclass(frozen=True)
class MovingBarrierRule:
    """Keep named half-plane primitives at a fixed clearance from the membranes.

    For a primitive with normal ``n`` (obstacle where ``n.p > offset``) the
    offset becomes ``max(n.p) + gap`` over the membrane points whose lateral
    coordinate lies in the central ``window`` fraction of the bounding box.
    The update runs after every ``every``-th outer iteration.
    """

    primitives: tuple
    gap: float
    window: float = 0.5
    every: int = 1

    def __post_init__(self):
        if not self.gap > 0:
            raise ValueError("moving barrier gap must be positive")
        if not 0 < self.window <= 1:
            raise ValueError("moving barrier window must lie in (0, 1]")
        if not self.primitives:
            raise ValueError("moving barrier needs at least one primitive name")
        if self.every < 1:
            raise ValueError("moving barrier cadence must be at least 1")


def update_moving_barrier(rule: MovingBarrierRule, barrier: BarrierSpec,
                          meshes: Sequence[CurveMesh]) -> BarrierSpec:
    if not meshes:
        raise EmptyWindowError("no vesicles to measure")
    pts = np.vstack([m.quad.x.reshape(-1, 2) for m in meshes] + [m.nodes for m in meshes])
    by_name = {q.name: q for q in barrier.primitives() if q.name is not None}
    offsets = {}
    for name in rule.primitives:
        if name not in by_name:
            raise KeyError(f"barrier has no primitive named {name!r}")
        n = np.asarray(by_name[name].normal)
        lateral = pts @ np.array([-n[1], n[0]])
        lo, hi = lateral.min(), lateral.max()
        mid, half = 0.5 * (lo + hi), 0.5 * rule.window * (hi - lo)
        inside = np.abs(lateral - mid) <= half
        if not np.any(inside):
            raise EmptyWindowError(f"no membrane point in the window of {name!r}")
        offsets[name] = float(np.max(pts[inside] @ n) + rule.gap)
    return barrier.with_offsets(offsets)


def schedule_order(n: int, m: int) -> tuple:
    """Vesicle indices (0-based) for outer iteration ``n``: rotation of 0..m-1 by n mod m."""
    if m < 1:
        raise ValueError("need at least one vesicle")
    k = n % m
    return tuple(list(range(k, m)) + list(range(k)))


def stopping_check(trace: Sequence[Sequence[float]], epsilon: float, n: int, max_iters: int):
    """Decide whether the loop stops before outer iteration ``n`` (1-based).

    ``trace[j]`` holds the augmented energy of every vesicle after ``j``
    iterations (``trace[0]`` is the initial state).  Returns ``None`` to
    continue, else ``"max_iterations"`` or ``"stagnation"``.
    """
    if n > max_iters:
        return "max_iterations"
    if len(trace) >= 4:
        last = np.asarray(trace[-4:], dtype=float)
        if np.all(np.abs(np.diff(last, axis=0)) < epsilon):
            return "stagnation"
    return None


@dataclass
class ScenarioState:
    vesicles: list
    params: FlowParameters
    barrier: BarrierSpec | None = None
    moving: MovingBarrierRule | None = None
    history: list = field(default_factory=list)      # one list of StepReports per iteration
    trace: list = field(default_factory=list)        # augmented energy per vesicle
    initial: list = field(default_factory=list)      # (W, H_B, D, J) per vesicle at t = 0
    barrier_offsets: list = field(default_factory=list)
    orders: list = field(default_factory=list)
    t: float = 0.0
    n: int = 0
    stop_reason: str | None = None

    @property
    def meshes(self):
        return [v.mesh for v in self.vesicles]


def effective_parameters(params: FlowParameters) -> FlowParameters:
    """Zero the penalty weights a model does not use."""
    if params.model in ("length", "model1"):
        return replace(params, alpha=0.0, beta=0.0)
    if params.model == "model2":
        return replace(params, beta=0.0)
    return params


def initial_state(meshes: Sequence[CurveMesh], params: FlowParameters,
                  barrier: BarrierSpec | None = None,
                  moving: MovingBarrierRule | None = None) -> ScenarioState:
    params = effective_parameters(params)
    vesicles = [VesicleState.initial(m, i) for i, m in enumerate(meshes)]
    check_separation(vesicles)
    if moving is not None and barrier is None:
        raise ValueError("moving barrier rule without a barrier")
    state = ScenarioState(vesicles, params, barrier, moving)
    energies = []
    for v in vesicles:
        W, hb, d = _energies(state, v.ident)
        J = augmented_energy(W, hb, d, 0.0, v.target_length, v.target_length, params)
        if params.model == "length":
            J = v.target_length
        state.initial.append((W, hb, d, J))
        energies.append(J)
    state.trace.append(energies)
    state.barrier_offsets.append(barrier.offsets() if barrier is not None else {})
    return state


def _others(state: ScenarioState, i: int):
    return [v.mesh for v in state.vesicles if v.ident != i]


def _energies(state, i):
    others = _others(state, i) if state.params.model == "model3" else ()
    return energy_terms(state.vesicles[i].mesh, state.params, state.barrier, others)


def check_separation(vesicles) -> None:
    polys = [v.mesh.ordered_polygon() for v in vesicles]
    for a in range(len(polys)):
        for b in range(a + 1, len(polys)):
            if polygons_intersect(polys[a], polys[b]):
                raise VesicleIntersectionError(f"vesicles {a} and {b} intersect")


def step_scenario(state: ScenarioState) -> ScenarioState:
    """Perform one outer iteration in place and return ``state``."""
    params = state.params
    order = schedule_order(state.n, len(state.vesicles))
    reports = [None] * len(state.vesicles)
    for i in order:
        others = _others(state, i) if params.model == "model3" else ()
        barrier = state.barrier if params.model in ("model2", "model3") else None
        try:
            new, report = advance_vesicle(state.vesicles[i], params, barrier, others)
        except Exception as exc:
            raise ScenarioError(f"iteration {state.n + 1}, vesicle {i}: {exc}") from exc
        state.vesicles[i] = new
        reports[i] = report
    if len(state.vesicles) > 1:
        try:
            check_separation(state.vesicles)
        except VesicleIntersectionError as exc:
            raise VesicleIntersectionError(f"iteration {state.n + 1}: {exc}") from exc
    state.n += 1
    if state.moving is not None and state.n % state.moving.every == 0:
        state.barrier = update_moving_barrier(state.moving, state.barrier, state.meshes)
    state.t = state.n * params.tau
    state.history.append(reports)
    state.orders.append(order)
    state.trace.append([r.J for r in reports])
    state.barrier_offsets.append(state.barrier.offsets() if state.barrier is not None else {})
    return state


def run_scenario(meshes: Sequence[CurveMesh], params: FlowParameters,
                 barrier: BarrierSpec | None = None, moving: MovingBarrierRule | None = None,
                 on_step: Callable[[ScenarioState], None] | None = None) -> ScenarioState:
    """Run the outer loop until the iteration cap or energy stagnation.

    ``on_step`` is called with the state after initialization and after
    every outer iteration.
    """
    state = initial_state(meshes, params, barrier, moving)
    if on_step is not None:
        on_step(state)
    while True:
        reason = stopping_check(state.trace, state.params.epsilon, state.n + 1,
                                state.params.max_iters)
        if reason is not None:
            state.stop_reason = reason
            log.info("stopped after %d iterations: %s", state.n, reason)
            return state
        step_scenario(state)
        if on_step is not None:
            on_step(state)


def metrics_rows(state: ScenarioState):
    """(step, t, vesicle, length, W, H_B, D, J, lambda, newton_iters) rows in file order."""
    rows = []
    for v, (W, hb, d, J) in zip(state.vesicles, state.initial):
        rows.append((0, 0.0, v.ident, v.target_length, W, hb, d, J, 0.0, 0))
    for k, reports in enumerate(state.history, start=1):
        for r in reports:
            rows.append((k, k * state.params.tau, r.vesicle, r.length_after, r.W, r.H_B, r.D,
                         r.J, r.lam, r.newton_iters))
    return rows
