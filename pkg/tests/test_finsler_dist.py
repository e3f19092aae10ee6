import math

import pytest
import numpy as np
from hypothesis import given, settings, strategies as st
from unittest.mock import patch

from src.domain_grid import Box, MaskShape, build_domain
from src.errors import UnreachableTargetError
from src.finsler_dist import (EdgeWeights, boundary_transform, dijkstra, distance_from, distance_to, edge_weight,
                              _segment_costs, extract_geodesic, pairwise_distance, path_cost,
                              trapezoid_coefficients)
from src.hamiltonian import (AffineWeight, AnisotropicNorm, BoundaryDistanceWeight, IsotropicPower, PlateauRadial,
                             WeightedIsotropic)


@pytest.fixture
def box():
    return build_domain(Box(), 0.125)


@pytest.fixture
def eikonal(box):
    return EdgeWeights(IsotropicPower(1.0), box)


def test_trapezoid_coefficients_sum_to_one():
    for n in (2, 3, 5):
        ts, cs = trapezoid_coefficients(n)
        assert cs.sum() == pytest.approx(1.0)
        assert ts[0] == 0.0 and ts[-1] == 1.0
    with pytest.raises(ValueError):
        trapezoid_coefficients(1)


def test_edge_weight_isotropic(box):
    a = box.node_index(1, 1)
    assert edge_weight(IsotropicPower(1.0), box, a, box.node_index(2, 1), 1.0) == pytest.approx(0.125)
    assert edge_weight(IsotropicPower(1.0), box, a, box.node_index(3, 2), 2.0) == pytest.approx(2 * 0.125 * math.sqrt(5))


def test_edge_weight_weighted_linear_weight_is_exact():
    dom = build_domain(Box(), 0.1)
    spec = WeightedIsotropic(AffineWeight(1.0, 1.0, 0.0, (0, 0, 1, 1)))
    a, b = dom.node_index(0, 5), dom.node_index(1, 5)
    # integral of lambda (1 + x) |q| over x in [0, 0.1]
    assert edge_weight(spec, dom, a, b, 1.0) == pytest.approx(0.105)


def test_edge_weight_rejects_non_edges(box):
    with pytest.raises(ValueError):
        edge_weight(IsotropicPower(1.0), box, 0, box.node_index(4, 4), 1.0)
    with pytest.raises(ValueError):
        edge_weight(IsotropicPower(1.0), box, 0, 1, -1.0)


def test_distance_scales_with_lambda_on_straight_line():
    dom = build_domain(Box(), 0.05)
    ew = EdgeWeights(IsotropicPower(1.0), dom)
    d = pairwise_distance(ew.spec, dom, 3.0, dom.nearest_node((0, 0)), dom.nearest_node((1, 0)), ew)
    assert d == pytest.approx(3.0, rel=1e-2)


def test_anisotropic_distance_along_axis(box):
    ew = EdgeWeights(AnisotropicNorm([[4.0, 0.0], [0.0, 1.0]]), box)
    x, y = box.nearest_node((0, 0.5)), box.nearest_node((1, 0.5))
    assert distance_from(ew, 1.0, x).dist[y] == pytest.approx(0.5, rel=1e-6)


def test_scaled_weights_match_direct_computation(box):
    spec = PlateauRadial()
    ew = EdgeWeights(spec, box)
    assert ew.scales
    a, b = box.node_index(2, 2), box.node_index(4, 3)
    e = box.edge_between(a, b)
    for lam in (0.3, 0.5, 2.0):
        assert ew.weights(lam)[e] == pytest.approx(edge_weight(spec, box, a, b, lam), rel=1e-12)


def test_weights_are_memoized_and_read_only(eikonal):
    first = eikonal.weights(1.5)
    assert eikonal.weights(1.5) is first
    with pytest.raises(ValueError):
        first[0] = 0.0
    with pytest.raises(ValueError):
        eikonal.weights(-1.0)


def test_zero_lambda_gives_zero_costs(eikonal):
    assert np.all(eikonal.weights(0.0) == 0.0)


def test_restricted_view_shares_parent_costs(box, eikonal):
    nodes, _ = box.ball(box.node_index(4, 4), 0.3)
    sub = box.restrict(nodes)
    view = eikonal.restricted(sub)
    assert np.array_equal(view.weights(1.0), eikonal.weights(1.0)[sub.parent_edges])
    with pytest.raises(ValueError):
        view.restricted(sub)


def test_quadrature_slack_vanishes_for_uniform_hamiltonians(eikonal):
    assert eikonal.quadrature_slack(1.0) == pytest.approx(0.0, abs=1e-15)


def test_uniform_weights_computed_once_per_offset(box):
    spec = AnisotropicNorm([[2.0, 0.5], [0.5, 1.0]])
    with patch('src.finsler_dist._segment_costs', wraps=_segment_costs) as spy:
        fast = EdgeWeights(spec, box).weights(1.0)
    assert spy.call_args_list
    assert all(len(call.args[1]) == 1 for call in spy.call_args_list)
    with patch.object(AnisotropicNorm, 'spatially_uniform', False):
        general = EdgeWeights(spec, box).weights(1.0)
    assert fast == pytest.approx(general, rel=1e-12)


def test_quadrature_slack_positive_for_curved_weight(box):
    ew = EdgeWeights(WeightedIsotropic(BoundaryDistanceWeight(box.shape)), box)
    assert ew.quadrature_slack(1.0) > 0.0
    assert ew.quadrature_slack(2.0) == pytest.approx(2 * ew.quadrature_slack(1.0))


def test_near_boundary_edges_refined_only_for_weighted(box, eikonal):
    weighted = EdgeWeights(WeightedIsotropic(BoundaryDistanceWeight(box.shape)), box)
    assert weighted._refine.any() and not weighted._refine.all()
    assert not eikonal._refine.any()


def test_geodesic_replays_distance(box, eikonal):
    src, dst = box.node_index(1, 1), box.node_index(7, 4)
    df = distance_from(eikonal, 1.0, src)
    path = extract_geodesic(df, dst)
    assert path[0] == src and path[-1] == dst
    assert path_cost(eikonal.weight_list(1.0), box, path) == pytest.approx(df.dist[dst], rel=1e-12)


def test_reverse_geodesic_runs_target_to_seed(box, eikonal):
    seed, target = box.node_index(2, 6), box.node_index(6, 1)
    df = distance_to(eikonal, 1.0, seed)
    path = extract_geodesic(df, target)
    assert path[0] == target and path[-1] == seed


def test_reverse_equals_swapped_forward(box):
    ew = EdgeWeights(WeightedIsotropic(AffineWeight(1.0, 1.0, 0.5, (0, 0, 1, 1))), box)
    x, y = box.node_index(1, 2), box.node_index(6, 5)
    assert distance_to(ew, 1.0, x).dist[y] == pytest.approx(distance_from(ew, 1.0, y).dist[x], rel=1e-12)


def test_unreachable_across_components():
    mask = np.zeros((5, 11), dtype=bool)
    mask[1:4, 0:3] = True
    mask[1:4, 8:11] = True
    dom = build_domain(MaskShape(mask=mask, h=0.1), 0.1)
    ew = EdgeWeights(IsotropicPower(1.0), dom)
    left, right = dom.node_index(1, 2), dom.node_index(9, 2)
    assert pairwise_distance(ew.spec, dom, 1.0, left, right, ew) == math.inf
    with pytest.raises(UnreachableTargetError):
        extract_geodesic(distance_from(ew, 1.0, left), right)


def test_pairwise_distance_to_self_is_zero(box):
    assert pairwise_distance(IsotropicPower(1.0), box, 1.0, 10, 10) == 0.0


def test_boundary_transform_respects_labels(box, eikonal):
    labels = np.full(box.n_nodes, np.nan)
    labels[box.boundary_nodes] = box.coords(box.boundary_nodes)[:, 0]
    df = boundary_transform(eikonal, 1.0, labels, 'forward')
    assert df.source_kind == 'boundary-seeded'
    b = box.boundary_nodes
    assert np.all(df.dist[b] <= labels[b] + 1e-12)
    centre = box.node_index(4, 4)
    # min_b x_b + |b - x| is attained at the left edge
    assert df.dist[centre] == pytest.approx(0.5, rel=1e-9)


def test_dijkstra_validates_arguments(box, eikonal):
    w = eikonal.weight_list(1.0)
    with pytest.raises(ValueError):
        dijkstra(box, w, [(0, 0.0)], direction='sideways')
    with pytest.raises(ValueError):
        dijkstra(box, w, [])


def test_dijkstra_deterministic(box, eikonal):
    first = distance_from(eikonal, 1.0, box.node_index(4, 4))
    second = distance_from(eikonal, 1.0, box.node_index(4, 4))
    assert np.array_equal(first.pred, second.pred)
    assert np.array_equal(first.dist, second.dist)


def test_cutoff_leaves_far_nodes_unsettled(box, eikonal):
    df = distance_from(eikonal, 1.0, box.node_index(0, 0), cutoff=0.3)
    assert np.isinf(df.dist[box.node_index(8, 8)])
    assert df.pred[box.node_index(8, 8)] == -1


@settings(max_examples=20, deadline=None)
@given(a=st.integers(min_value=0, max_value=80), b=st.integers(min_value=0, max_value=80),
       c=st.integers(min_value=0, max_value=80), lam=st.floats(min_value=0.1, max_value=3.0))
def test_triangle_inequality(a, b, c, lam):
    dom = build_domain(Box(), 0.125)
    ew = EdgeWeights(AnisotropicNorm([[2.0, 0.5], [0.5, 1.0]]), dom)
    da, db = distance_from(ew, lam, a).dist, distance_from(ew, lam, b).dist
    assert da[c] <= da[b] + db[c] + 1e-9


@settings(max_examples=20, deadline=None)
@given(a=st.integers(min_value=0, max_value=80), b=st.integers(min_value=0, max_value=80),
       lam=st.floats(min_value=0.1, max_value=3.0), step=st.floats(min_value=0.0, max_value=1.0))
def test_distance_monotone_in_lambda(a, b, lam, step):
    dom = build_domain(Box(), 0.125)
    ew = EdgeWeights(PlateauRadial(), dom)
    assert distance_from(ew, lam, a).dist[b] <= distance_from(ew, lam + step, a).dist[b] + 1e-12
