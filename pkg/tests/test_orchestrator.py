import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import circle, ellipse
from vesiflow.functionals import BarrierSpec, HalfPlane, Sum
from vesiflow.mesh import CurveMesh, mesh_length, polygons_intersect
from vesiflow.orchestrator import (
    EmptyWindowError,
    MovingBarrierRule,
    ScenarioError,
    VesicleIntersectionError,
    initial_state,
    metrics_rows,
    run_scenario,
    schedule_order,
    step_scenario,
    stopping_check,
    update_moving_barrier,
)
from vesiflow.shapes import ShapeSpec, build_shape
from vesiflow.stepper import FlowParameters

SLAB = BarrierSpec(Sum((HalfPlane((0, 1), 0.25, name="top"), HalfPlane((0, -1), 0.25, name="bottom"))))


def cisterna(ht=0.3, center=(0.0, 0.0), n=64):
    return build_shape(ShapeSpec("cisterna", {"half_length": 2.0, "half_thickness": ht,
                                              "center": list(center)}, n))


def test_schedule_order_examples():
    assert schedule_order(5, 1) == (0,)
    assert schedule_order(0, 3) == (0, 1, 2)
    assert schedule_order(1, 3) == (1, 2, 0)
    with pytest.raises(ValueError):
        schedule_order(0, 0)


@given(st.integers(0, 1000), st.integers(1, 9))
def test_schedule_order_is_cyclic_permutation(n, m):
    firsts = [schedule_order(k, m)[0] for k in range(n, n + m)]
    assert sorted(firsts) == list(range(m))
    assert sorted(schedule_order(n, m)) == list(range(m))


def test_stopping_check_rules():
    flat = [[1.0, 2.0]] * 4
    assert stopping_check(flat, 1e-7, 11, 10) == "max_iterations"
    assert stopping_check(flat, 1e-7, 4, 10) == "stagnation"
    assert stopping_check(flat[:3], 1e-7, 3, 10) is None
    moving = [[1.0, 2.0], [1.0, 2.0 - 1e-6], [1.0, 2.0 - 2e-6], [1.0, 2.0 - 3e-6]]
    assert stopping_check(moving, 1e-7, 4, 10) is None


@given(st.lists(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=2), max_size=8),
       st.floats(1e-9, 1.0), st.integers(1, 20), st.integers(0, 20))
def test_stopping_check_is_pure(trace, eps, n, N):
    copy = [list(r) for r in trace]
    first = stopping_check(trace, eps, n, N)
    assert stopping_check(trace, eps, n, N) == first
    assert trace == copy


def test_zero_iterations_returns_initial_state():
    m = ellipse(32)
    s = run_scenario([m], FlowParameters(max_iters=0))
    assert s.n == 0 and s.t == 0.0 and s.stop_reason == "max_iterations"
    assert np.array_equal(s.meshes[0].nodes, m.nodes)
    assert len(metrics_rows(s)) == 1


def test_metrics_rows_layout():
    s = run_scenario([ellipse(32)], FlowParameters(tau=2e-3, max_iters=3))
    rows = metrics_rows(s)
    assert [r[0] for r in rows] == [0, 1, 2, 3]
    assert rows[2][1] == pytest.approx(4e-3)
    assert all(abs(r[3] - rows[0][3]) <= 1e-9 * rows[0][3] for r in rows)


def test_moving_barrier_static_membrane_keeps_offsets():
    rule = MovingBarrierRule(("top", "bottom"), 0.05)
    m = cisterna()
    once = update_moving_barrier(rule, SLAB, [m])
    twice = update_moving_barrier(rule, once, [m])
    assert once.offsets() == pytest.approx({"top": 0.35, "bottom": 0.35}, abs=1e-9)
    assert all(abs(once.offsets()[k] - twice.offsets()[k]) < 1e-12 for k in ("top", "bottom"))


def test_moving_barrier_follows_symmetric_thinning():
    rule = MovingBarrierRule(("top", "bottom"), 0.05)
    thick = update_moving_barrier(rule, SLAB, [cisterna(0.3)])
    delta = 0.1
    thin = update_moving_barrier(rule, SLAB, [cisterna(0.3 - delta / 2)])
    for k in ("top", "bottom"):
        assert thick.offsets()[k] - thin.offsets()[k] == pytest.approx(delta / 2, abs=1e-9)


def test_moving_barrier_validation():
    with pytest.raises(ValueError):
        MovingBarrierRule(("top",), 0.0)
    with pytest.raises(ValueError):
        MovingBarrierRule(("top",), 0.1, window=1.5)
    with pytest.raises(ValueError):
        MovingBarrierRule(("top",), 0.1, every=0)
    with pytest.raises(EmptyWindowError):
        update_moving_barrier(MovingBarrierRule(("top",), 0.1), SLAB, [])
    with pytest.raises(KeyError):
        update_moving_barrier(MovingBarrierRule(("left",), 0.1), SLAB, [cisterna()])


def test_moving_barrier_cadence():
    rule = MovingBarrierRule(("top", "bottom"), 0.05, every=3)
    params = FlowParameters(tau=1e-3, alpha=1.0, model="model2", max_iters=3)
    s = run_scenario([cisterna()], params, SLAB, rule)
    tops = [o["top"] for o in s.barrier_offsets]
    assert tops[0] == tops[1] == tops[2] == 0.25
    assert tops[3] != 0.25


def test_overlapping_vesicles_rejected():
    with pytest.raises(VesicleIntersectionError):
        initial_state([circle(16), circle(16, center=(0.5, 0.0))],
                      FlowParameters(model="model3", beta=0.01))


def test_step_errors_name_vesicle_and_iteration():
    params = FlowParameters(tau=5.0, max_iters=3)
    with pytest.raises(ScenarioError, match=r"iteration 1, vesicle 0"):
        run_scenario([build_shape(ShapeSpec("c-shape", {"width": 0.3, "opening": 1.0}, 32))], params)


def _mirror_gap(centre, beta, offset, fixed_order=False, monkeypatch=None):
    top, bottom = cisterna(0.25, (0.0, centre), 48), cisterna(0.25, (0.0, -centre), 48)
    bar = BarrierSpec(Sum((HalfPlane((0, 1), offset, name="top"),
                           HalfPlane((0, -1), offset, name="bottom"))))
    if fixed_order:
        import vesiflow.orchestrator as orch
        monkeypatch.setattr(orch, "schedule_order", lambda n, m: tuple(range(m)))
    params = FlowParameters(tau=1e-3, alpha=1.0, beta=beta, model="model3", max_iters=100)
    s = run_scenario([bottom, top], params, bar)
    assert s.n == 100
    a, b = s.meshes
    for v in s.vesicles:
        assert abs(mesh_length(v.mesh) - v.target_length) <= 1e-8 * v.target_length
    assert not polygons_intersect(a.ordered_polygon(), b.ordered_polygon())
    # node k of one vesicle mirrors node N/2 - k of the other
    n = a.n_nodes
    idx = (n // 2 - np.arange(n)) % n
    return np.abs(b.nodes - a.nodes[idx] * [1.0, -1.0]).max()


def test_mirror_symmetry_without_interaction_is_exact():
    assert _mirror_gap(1.5, 0.0, 1.7) < 1e-12


def test_mirror_symmetry_weakly_interacting_pair():
    assert _mirror_gap(1.5, 0.01, 1.7) < 1e-6


def test_rotating_order_limits_gauss_seidel_bias(monkeypatch):
    rotating = _mirror_gap(0.8, 0.01, 1.0)
    fixed = _mirror_gap(0.8, 0.01, 1.0, True, monkeypatch)
    assert rotating < 0.1 * fixed
