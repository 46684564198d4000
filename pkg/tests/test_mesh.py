import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import circle, ellipse
from vesiflow.mesh import (
    CurveMesh,
    DegenerateElementError,
    MeshError,
    adjust_midpoints,
    element_geometry,
    eval_reference_basis,
    is_simple_polygon,
    length_ratio,
    mesh_length,
    polygons_intersect,
    redistribute_nodes,
    signed_area,
    standard_elements,
)

ELLIPSE_PERIMETER = 9.688448220547675   # 4 a E(1 - b^2/a^2) for a = 2, b = 1


def test_basis_at_nodes_is_kronecker():
    for k, s in enumerate((0.0, 0.5, 1.0)):
        phi, _ = eval_reference_basis(s)
        assert np.allclose(phi, np.eye(3)[k], atol=0)


def test_basis_at_quarter():
    phi, dphi = eval_reference_basis(0.25)
    assert np.allclose(phi, [3 / 8, 3 / 4, -1 / 8], atol=1e-15)
    assert np.allclose(dphi, [-2.0, 2.0, 0.0], atol=1e-15)


@given(st.floats(min_value=1e-4, max_value=1 - 1e-4))
def test_basis_derivative_matches_central_difference(s):
    h = 1e-5
    _, dphi = eval_reference_basis(s)
    fd = (eval_reference_basis(min(s + h, 1.0))[0] - eval_reference_basis(max(s - h, 0.0))[0]) / (
        min(s + h, 1.0) - max(s - h, 0.0))
    assert np.allclose(dphi, fd, atol=1e-8)


@given(st.floats(min_value=0.0, max_value=1.0))
def test_basis_partition_of_unity(s):
    phi, dphi = eval_reference_basis(s)
    assert abs(phi.sum() - 1.0) < 1e-14
    assert abs(dphi.sum()) < 1e-13


def test_basis_rejects_outside_parameter():
    with pytest.raises(ValueError):
        eval_reference_basis(1.5)


def test_circle_nodes_lie_on_circle():
    m = circle(n=8)
    assert m.n_nodes == 16
    assert np.max(np.abs(np.linalg.norm(m.nodes, axis=1) - 1.0)) < 1e-12


def test_mesh_length_circle_and_ellipse():
    assert abs(mesh_length(circle(64)) - 2 * np.pi) < 1e-6
    assert abs(mesh_length(ellipse(64)) - ELLIPSE_PERIMETER) < 1e-4


def test_length_convergence_order_at_least_three():
    errs = [abs(mesh_length(circle(n)) - 2 * np.pi) for n in (16, 32, 64)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 3.0), orders


def test_signed_area_positive_for_counterclockwise():
    assert signed_area(circle(64)) == pytest.approx(np.pi, rel=1e-6)
    assert signed_area(ellipse(64)) == pytest.approx(2 * np.pi, rel=1e-6)


def test_element_geometry_on_circle():
    m = circle(64)
    for e in (0, 17, 63):
        for s in (0.0, 0.3, 1.0):
            pos, t, nu, jac = element_geometry(m, e, s)
            assert abs(np.linalg.norm(pos) - 1.0) < 1e-6
            assert np.allclose(nu, pos / np.linalg.norm(pos), atol=1e-4)
            assert abs(t @ nu) < 1e-15


def test_element_geometry_jacobian_is_element_arc_length():
    m = circle(64, radius=2.0)
    _, _, _, jac = element_geometry(m, 5, 0.5)
    assert jac == pytest.approx(2 * 2 * np.pi / 64, rel=1e-2)


def test_element_geometry_straight_element():
    m = CurveMesh(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [1.0, 1.0]]),
                  np.array([[0, 1, 2], [2, 3, 0]]))
    _, t, nu, jac = element_geometry(m, 0, 0.5)
    assert np.allclose(t, [1.0, 0.0]) and np.allclose(nu, [0.0, -1.0])
    assert jac == pytest.approx(2.0)


def test_element_geometry_degenerate():
    m = CurveMesh(np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]),
                  np.array([[0, 1, 2], [2, 3, 0]]))
    with pytest.raises(DegenerateElementError):
        element_geometry(m, 0, 0.5)


def test_mesh_layout_checks():
    with pytest.raises(MeshError):
        CurveMesh(np.zeros((4, 2)), np.array([[0, 1, 2], [0, 3, 2]]))
    with pytest.raises(MeshError):
        CurveMesh(np.zeros((6, 2)), np.array([[0, 1, 2], [2, 3, 0], [4, 5, 4]]))
    with pytest.raises(MeshError):
        CurveMesh.from_nodes(np.zeros((5, 2)))
    assert np.array_equal(standard_elements(2), [[0, 1, 2], [2, 3, 0]])


def test_mesh_is_immutable():
    m = circle(8)
    with pytest.raises(ValueError):
        m.nodes[0, 0] = 3.0


def test_adjust_midpoints_idempotent_and_keeps_endpoints(rng):
    m = ellipse(32)
    noisy = m.with_nodes(m.nodes + 1e-3 * rng.normal(size=m.nodes.shape))
    once = adjust_midpoints(noisy)
    twice = adjust_midpoints(once)
    ends = ~m.is_midpoint
    assert np.array_equal(once.nodes[ends], noisy.nodes[ends])
    assert np.max(np.abs(twice.nodes - once.nodes)) < 1e-12


def test_adjust_midpoints_leaves_projected_mesh_unchanged():
    m = circle(32)
    assert np.max(np.abs(adjust_midpoints(m).nodes - m.nodes)) < 1e-12


def test_adjust_midpoints_straight_element_goes_to_chord_middle():
    nodes = np.array([[0.0, 0.0], [0.3, 0.0], [1.0, 0.0], [0.5, 1.0]])
    m = adjust_midpoints(CurveMesh.from_nodes(nodes))
    assert np.allclose(m.nodes[1], [0.5, 0.0], atol=1e-12)


def test_adjust_midpoints_moves_tangentially_perturbed_midpoint_toward_circle():
    m = circle(16)
    nodes = np.array(m.nodes)
    _, t, _, _ = element_geometry(m, 3, 0.5)
    nodes[7] += 1e-3 * t
    pert = m.with_nodes(nodes)
    after = adjust_midpoints(pert)
    # distance of the element's curve to the true circle, sampled densely
    def dist(mesh):
        s = np.linspace(0, 1, 201)
        return max(abs(np.linalg.norm(element_geometry(mesh, 3, x)[0]) - 1.0) for x in s)
    assert dist(after) < dist(pert)


def test_adjust_midpoints_rejects_coincident_endpoints():
    m = CurveMesh(np.array([[0.0, 0.0], [0.5, 0.5], [0.0, 0.0], [1.0, 1.0]]),
                  np.array([[0, 1, 2], [2, 3, 0]]))
    with pytest.raises(DegenerateElementError):
        adjust_midpoints(m)


def test_simple_polygon_and_intersection():
    square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    bowtie = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float)
    assert is_simple_polygon(square)
    assert not is_simple_polygon(bowtie)
    assert polygons_intersect(square, square + 0.5)
    assert not polygons_intersect(square, square + 2.0)


def test_validate_detects_self_intersection():
    theta = np.linspace(0, 2 * np.pi, 32, endpoint=False)
    eight = np.stack([np.sin(theta), np.sin(theta) * np.cos(theta)], axis=1)
    with pytest.raises(MeshError):
        CurveMesh.from_nodes(eight).validate()


@settings(deadline=None, max_examples=20)
@given(st.floats(min_value=0.0, max_value=0.35), st.integers(min_value=16, max_value=40))
def test_redistribute_equalizes_and_stays_on_curve(skew, n):
    # squeeze parameters toward one side, then re-place the nodes
    theta = np.linspace(0, 2 * np.pi, 2 * n, endpoint=False)
    theta = theta + skew * np.sin(theta)
    bent = adjust_midpoints(CurveMesh.from_nodes(np.stack([np.cos(theta), np.sin(theta)], 1)))
    out = redistribute_nodes(bent)
    assert length_ratio(out) < 1.0 + 1e-3
    assert abs(mesh_length(out) - mesh_length(bent)) < 1e-4 * mesh_length(bent)
    assert np.array_equal(out.nodes[0], bent.nodes[0])
