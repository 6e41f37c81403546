"""
Tests for domains, distance functions and the cut-cell grid.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glvortex_lab.errors import ConfigurationError
from glvortex_lab.geometry import (
    DomainSpec,
    build_grid,
    distance_array,
    distance_gradient,
    project_to_boundary,
    signed_distance,
)


class TestDomainSpec:
    """Domain specifications and their serialization."""

    def test_disk_properties(self):
        """The unit disk has area π and a smooth boundary layer of width 1/2."""
        spec = DomainSpec.disk()
        assert spec.area == pytest.approx(math.pi)
        assert spec.diameter == 2.0
        assert spec.d0 == 0.5

    def test_round_trip(self):
        """to_dict/from_dict reproduce the spec."""
        spec = DomainSpec.ellipse(1.5, 0.75)
        assert DomainSpec.from_dict(spec.to_dict()) == spec

    def test_disk_radius_shorthand(self):
        """A disk can be given by its radius alone."""
        assert DomainSpec.from_dict({"kind": "disk", "radius": 2.0}) == DomainSpec.disk(2.0)

    def test_invalid_specs(self):
        """Unknown kinds, unequal disk axes and bad axes are configuration errors."""
        with pytest.raises(ConfigurationError):
            DomainSpec("square", (1.0, 1.0))
        with pytest.raises(ConfigurationError):
            DomainSpec("disk", (1.0, 0.5))
        with pytest.raises(ConfigurationError):
            DomainSpec.ellipse(1.0, -1.0)
        with pytest.raises(ConfigurationError):
            DomainSpec.from_dict({"semi_axes": [1.0, 1.0]})


class TestDistance:
    """Signed distance, projection and normals."""

    def test_disk_distance(self):
        spec = DomainSpec.disk()
        d = distance_array(spec, np.array([[0.0, 0.0], [0.5, 0.0], [0.0, 2.0]]))
        np.testing.assert_allclose(d, [1.0, 0.5, -1.0])

    def test_ellipse_axis_points(self):
        """On the axes of an ellipse the distance is the gap to the nearer vertex."""
        spec = DomainSpec.ellipse(2.0, 1.0)
        assert signed_distance(spec, (1.5, 0.0)) == pytest.approx(0.5, abs=1e-10)
        assert signed_distance(spec, (0.0, 0.25)) == pytest.approx(0.75, abs=1e-10)

    def test_normal_points_inward(self):
        spec = DomainSpec.ellipse(1.2, 0.8)
        points = np.array([[1.0, 0.1], [0.0, -0.7], [-0.5, 0.5]])
        normal = distance_gradient(spec, points)
        np.testing.assert_allclose(np.linalg.norm(normal, axis=1), 1.0)
        # stepping along the normal increases the distance
        step = distance_array(spec, points + 1e-4 * normal) - distance_array(spec, points)
        assert np.all(step > 0.0)

    @settings(max_examples=60, deadline=None)
    @given(
        st.floats(min_value=-1.5, max_value=1.5),
        st.floats(min_value=-1.5, max_value=1.5),
    )
    def test_projection_lies_on_ellipse(self, x, y):
        """Foot points satisfy the ellipse equation and are no farther than any sampled boundary point."""
        spec = DomainSpec.ellipse(1.3, 0.7)
        q = project_to_boundary(spec, np.array([[x, y]]))[0]
        assert (q[0] / 1.3) ** 2 + (q[1] / 0.7) ** 2 == pytest.approx(1.0, abs=1e-9)
        t = np.linspace(0.0, 2.0 * math.pi, 2000)
        curve = np.column_stack([1.3 * np.cos(t), 0.7 * np.sin(t)])
        best = np.min(np.hypot(curve[:, 0] - x, curve[:, 1] - y))
        assert math.hypot(q[0] - x, q[1] - y) <= best + 1e-6

    @settings(max_examples=40, deadline=None)
    @given(st.floats(min_value=0.0, max_value=0.99), st.floats(min_value=0.0, max_value=2.0 * math.pi))
    def test_disk_distance_is_one_lipschitz(self, r, angle):
        spec = DomainSpec.disk()
        p = np.array([[r * math.cos(angle), r * math.sin(angle)]])
        q = p + 0.01 * np.array([[math.cos(3 * angle), math.sin(3 * angle)]])
        assert abs(distance_array(spec, p)[0] - distance_array(spec, q)[0]) <= 0.01 + 1e-12


class TestGrid:
    """Interior nodes, cuts and node areas."""

    def test_nodes_at_multiples_of_spacing(self, disk_grid):
        h = disk_grid.spacing
        np.testing.assert_allclose(disk_grid.xs / h, np.rint(disk_grid.xs / h), atol=1e-9)
        assert 0.0 in set(np.round(disk_grid.xs, 12))

    def test_interior_nodes_are_inside(self, ellipse_grid):
        assert np.all(ellipse_grid.spec.contains(ellipse_grid.nodes))
        assert np.all(ellipse_grid.node_distance > 0.0)

    def test_node_areas_sum_to_domain_area(self, disk_grid, ellipse_grid):
        """Exact cell areas make the node quadrature integrate 1 exactly."""
        assert disk_grid.area == pytest.approx(math.pi, rel=1e-6)
        assert ellipse_grid.area == pytest.approx(math.pi * 1.2 * 0.8, rel=1e-6)

    def test_cut_points_on_boundary(self, ellipse_grid):
        pts = ellipse_grid.cuts.points
        assert np.max(np.abs(distance_array(ellipse_grid.spec, pts))) < 1e-9
        assert np.all((ellipse_grid.cuts.theta > 0.0) & (ellipse_grid.cuts.theta <= 1.0))

    def test_coarse_nodes_are_fine_nodes(self, disk):
        """Doubling the resolution keeps every coarse node."""
        coarse, fine = build_grid(disk, 16), build_grid(disk, 32)
        fine_set = {tuple(p) for p in np.round(fine.nodes, 12)}
        assert all(tuple(p) in fine_set for p in np.round(coarse.nodes, 12))

    def test_key_identifies_domain_and_resolution(self, disk):
        assert build_grid(disk, 20).key == build_grid(disk, 20).key
        assert build_grid(disk, 20).key != build_grid(disk, 21).key

    def test_full_array_and_locate(self, disk_grid):
        values = np.arange(disk_grid.node_count, dtype=float)
        box = disk_grid.full_array(values, fill=-1.0)
        assert box[disk_grid.ix[5], disk_grid.iy[5]] == 5.0
        assert np.sum(box == -1.0) == box.size - disk_grid.node_count
        i, j, s, t = disk_grid.locate((0.0, 0.0))
        assert disk_grid.xs[i] + s * disk_grid.spacing == pytest.approx(0.0)
        assert disk_grid.ys[j] + t * disk_grid.spacing == pytest.approx(0.0)

    def test_too_coarse(self, disk):
        with pytest.raises(ConfigurationError):
            build_grid(disk, 8)


class TestGridDerivedState:
    """The per-grid cache holds derived objects only."""

    def test_equal_grids_ignore_cache_contents(self, disk):
        first, second = build_grid(disk, 20), build_grid(disk, 20)
        first.derived("marker", lambda: np.ones(3))
        assert first == second
        assert hash(first) == hash(second)
        assert len({first, second}) == 1

    def test_different_resolution_or_domain(self, disk, ellipse):
        assert build_grid(disk, 20) != build_grid(disk, 21)
        assert build_grid(disk, 20) != build_grid(ellipse, 20)
        assert build_grid(disk, 20) != "grid"

    def test_derived_builds_once(self, disk):
        grid = build_grid(disk, 20)
        calls = []

        def build():
            calls.append(1)
            return len(calls)

        assert grid.derived("count", build) == 1
        assert grid.derived("count", build) == 1
        assert calls == [1]
        assert grid.cache["count"] == 1
