"""Geometry operations against independent oracles: brute-force pairwise
distances, vertex enumeration for widths, exhaustive argmax scans, and LP
reconstruction checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biclab.errors import InfeasibleGeometryError, InvalidInputError
from biclab.geometry import (
    ActionSet,
    ConvexBody,
    PolytopeVertexSet,
    best_action,
    best_action_many,
    caratheodory_decompose,
    instance_from_json,
    instance_to_json,
    optimal_region_contains,
    prop2_polytope,
    separation,
    width,
)

PROP1 = ActionSet([[1.0, 0.0], [-1.0, 0.0], [1.8, 0.6]])


def unit_circle_actions(k: int) -> ActionSet:
    angles = 2.0 * math.pi * np.arange(k) / k
    return ActionSet.unit(np.stack([np.cos(angles), np.sin(angles)], axis=1))


class TestSeparation:
    def test_antipodal_pair(self):
        assert separation(ActionSet.unit([[1, 0], [-1, 0]])) == pytest.approx(2.0)

    def test_axis_cross(self):
        acts = ActionSet.unit([[1, 0], [0, 1], [-1, 0], [0, -1]])
        assert separation(acts) == pytest.approx(math.sqrt(2.0))

    def test_eight_equally_spaced_matches_chord_formula_and_brute_force(self):
        acts = unit_circle_actions(8)
        eps = separation(acts)
        assert eps == pytest.approx(2.0 * math.sin(math.pi / 8), abs=1e-12)
        brute = min(
            float(np.linalg.norm(acts.vectors[i] - acts.vectors[j]))
            for i in range(8)
            for j in range(i + 1, 8)
        )
        assert eps == pytest.approx(brute, abs=1e-15)

    def test_caches_on_the_set(self):
        acts = unit_circle_actions(5)
        assert acts._separation is None
        _ = acts.separation
        assert acts._separation is not None

    def test_single_action_rejected(self):
        with pytest.raises(InvalidInputError):
            separation(ActionSet.unit([[1.0, 0.0]]))

    def test_non_unit_vector_rejected(self):
        with pytest.raises(InvalidInputError):
            ActionSet.unit([[1.0, 1.0]])


class TestWidth:
    def test_unit_ball(self):
        assert width(ConvexBody.ball(2), [1.0, 0.0]) == pytest.approx(2.0)

    def test_box_axis(self):
        body = ConvexBody.box([-0.5, -1.0], [1.0, 1.0])
        assert width(body, [0.0, 1.0]) == pytest.approx(2.0)

    def test_box_diagonal_matches_vertex_enumeration(self):
        body = ConvexBody.box([-0.5, -0.5], [1.0, 1.0])
        v = np.array([1.0, 1.0]) / math.sqrt(2.0)
        vertices = np.array([[x, y] for x in (-0.5, 1.0) for y in (-0.5, 1.0)])
        oracle = float(np.max(vertices @ v) - np.min(vertices @ v))
        assert width(body, v) == pytest.approx(3.0 / math.sqrt(2.0), abs=1e-12)
        assert width(body, v) == pytest.approx(oracle, abs=1e-12)

    def test_halfspace_width_matches_vertex_oracle(self):
        body, verts = prop2_polytope(3)
        rng = np.random.default_rng(0)
        for _ in range(10):
            v = rng.standard_normal(3)
            proj = verts.vectors @ v
            assert width(body, v) == pytest.approx(float(proj.max() - proj.min()), abs=1e-7)

    def test_unbounded_halfspace_raises(self):
        body = ConvexBody.halfspaces([[1.0, 0.0]], [1.0], regularity=0.5)
        with pytest.raises(InfeasibleGeometryError):
            width(body, [0.0, 1.0])

    def test_width_bounds_for_regular_bodies(self):
        rng = np.random.default_rng(1)
        bodies = [
            ConvexBody.ball(3, 0.7, regularity=0.7),
            ConvexBody.box([-0.4, -0.5, -0.45], [0.4, 0.5, 0.45]),
        ]
        for body in bodies:
            r = body.regularity
            for _ in range(50):
                v = rng.standard_normal(3)
                v /= np.linalg.norm(v)
                w = width(body, v)
                assert 2.0 * r - 1e-9 <= w <= 2.0 + 1e-9


class TestBestAction:
    def test_dominant_coordinate(self):
        assert best_action(ActionSet.unit([[1, 0], [0, 1]]), [1.0, 0.5]) == 0

    def test_tie_broken_by_order(self):
        assert best_action(ActionSet.unit([[1, 0], [0, 1]]), [0.3, 0.3]) == 0

    def test_eight_vector_instance_against_brute_force(self):
        # The nearest grid direction wins; past the 22.5-degree midpoint the
        # 45-degree vector beats the 0-degree one.
        acts = unit_circle_actions(8)
        for degrees, expected in ((20.0, 0), (25.0, 1), (70.0, 2)):
            theta = math.radians(degrees)
            ell = np.array([math.cos(theta), math.sin(theta)])
            chosen = best_action(acts, ell)
            assert chosen == int(np.argmax(acts.vectors @ ell)) == expected
        rng = np.random.default_rng(2)
        for _ in range(200):
            ell = rng.standard_normal(2)
            assert best_action(acts, ell) == int(np.argmax(acts.vectors @ ell))

    def test_positive_scaling_invariance(self):
        acts = unit_circle_actions(7)
        rng = np.random.default_rng(3)
        for _ in range(100):
            ell = rng.standard_normal(2)
            c = float(rng.uniform(0.01, 50.0))
            assert best_action(acts, ell) == best_action(acts, c * ell)

    def test_vectorized_matches_scalar(self):
        acts = unit_circle_actions(6)
        rng = np.random.default_rng(4)
        ells = rng.standard_normal((100, 2))
        batch = best_action_many(acts, ells)
        assert all(batch[i] == best_action(acts, ells[i]) for i in range(100))


class TestOptimalRegion:
    def test_planar_instance_cone_angles(self):
        # A_1 is optimal exactly for arguments in [-90, atan(-4/3)] degrees.
        ell = np.array([math.cos(math.radians(-70)), math.sin(math.radians(-70))])
        assert optimal_region_contains(PROP1, 0, ell)
        assert not optimal_region_contains(PROP1, 0, [1.0, 0.0])
        lo, hi = -math.pi / 2, math.atan2(-4.0, 3.0)
        for theta in np.linspace(-math.pi, math.pi, 721):
            ell = np.array([math.cos(theta), math.sin(theta)])
            inside = lo - 1e-9 <= theta <= hi + 1e-9
            assert optimal_region_contains(PROP1, 0, ell) == inside

    def test_zero_vector_in_every_region(self):
        for i in range(3):
            assert optimal_region_contains(PROP1, i, [0.0, 0.0])

    def test_membership_implies_argmax_value(self):
        acts = unit_circle_actions(8)
        rng = np.random.default_rng(5)
        for _ in range(300):
            ell = rng.standard_normal(2)
            for i in range(8):
                if optimal_region_contains(acts, i, ell):
                    scores = acts.vectors @ ell
                    assert scores[i] == pytest.approx(float(np.max(scores)), abs=1e-12)

    @given(st.integers(min_value=3, max_value=10), st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_separation_ball_inside_optimal_region(self, k, seed):
        # Every ell within eps/2 of an action lies in that action's region.
        rng = np.random.default_rng(seed)
        vectors = rng.standard_normal((k, 3))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        acts = ActionSet.unit(vectors)
        eps = acts.separation
        i = int(rng.integers(k))
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        radius = 0.5 * eps * float(rng.random())
        ell = acts.vectors[i] + radius * direction
        assert optimal_region_contains(acts, i, ell)


class TestCaratheodory:
    def test_vertex_maps_to_itself(self):
        tri = PolytopeVertexSet([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        out = caratheodory_decompose(tri, [0.0, 1.0])
        assert out == [(1.0, 1)]

    def test_segment_midpoint(self):
        seg = PolytopeVertexSet([[0.0, 0.0], [1.0, 0.0]])
        out = dict((i, w) for w, i in caratheodory_decompose(seg, [0.5, 0.0]))
        assert out[0] == pytest.approx(0.5) and out[1] == pytest.approx(0.5)

    def test_simplex_centroid_chart_support(self):
        tri = PolytopeVertexSet([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        point = np.array([1.0, 1.0]) / 3.0
        out = caratheodory_decompose(tri, point)
        recon = sum(w * tri.vectors[i] for w, i in out)
        assert float(np.linalg.norm(recon - point)) <= 1e-9
        chart_weights = [w for w, i in out if i != 0]
        assert len(chart_weights) <= 2

    def test_random_hull_points_reconstruct(self):
        rng = np.random.default_rng(6)
        _, verts = prop2_polytope(3)
        for _ in range(50):
            mix = rng.dirichlet(np.ones(len(verts)))
            point = mix @ verts.vectors
            out = caratheodory_decompose(verts, point)
            weights = np.array([w for w, _ in out])
            assert np.all(weights >= 0) and np.all(weights <= 1 + 1e-12)
            assert float(sum(weights)) == pytest.approx(1.0, abs=1e-9)
            recon = sum(w * verts.vectors[i] for w, i in out)
            assert float(np.linalg.norm(recon - point)) <= 1e-9
            assert len([w for w, i in out if i != 0]) <= 3

    def test_point_outside_hull_raises(self):
        tri = PolytopeVertexSet([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(InfeasibleGeometryError):
            caratheodory_decompose(tri, [2.0, 2.0])

    def test_extreme_point_validation_flags_interior_point(self):
        bad = PolytopeVertexSet([[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]])
        assert not bad.validate_extreme()


class TestBodies:
    def test_regularity_validation(self):
        rng = np.random.default_rng(7)
        body, _ = prop2_polytope(3)
        assert body.validate_regularity(rng)
        assert ConvexBody.ball(2, 0.9, regularity=0.5).validate_regularity(rng)

    def test_scaled_box_becomes_regular(self):
        box = ConvexBody.box([-0.5] * 3 + [-1.0], [1.0] * 3 + [1.0])
        scaled = box.scaled(1.0 / 2.0)
        assert scaled.validate_regularity(np.random.default_rng(8))

    def test_box_must_contain_regularity_ball(self):
        with pytest.raises(InvalidInputError):
            ConvexBody.box([-0.1, -1.0], [1.0, 1.0], regularity=0.5)

    def test_json_round_trip(self):
        body = ConvexBody.box([-0.5, -1.0], [1.0, 1.0])
        acts = unit_circle_actions(4)
        text = instance_to_json(body, acts)
        body2, acts2 = instance_from_json(text)
        assert np.array_equal(body2.lo, body.lo) and np.array_equal(body2.hi, body.hi)
        assert np.array_equal(acts2.vectors, acts.vectors)
        assert acts2.require_unit

    def test_prop2_vertices_match_halfspace_form(self):
        for d in (2, 3, 4):
            body, verts = prop2_polytope(d)
            assert len(verts) == 2 ** (d - 1) + 2
            assert verts.validate_extreme()
            assert all(body.contains(v, tol=1e-9) for v in verts.vectors)
            apex = np.zeros(d)
            apex[-1] = 0.1
            assert any(np.allclose(v, apex) for v in verts.vectors)
