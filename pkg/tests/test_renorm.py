"""
Tests for vortex configurations, parameter windows and the renormalized energies.
"""

import math

import numpy as np
import pytest
import scipy.special as sc

from glvortex_lab.bessel import L_CONSTANT
from glvortex_lab.errors import DomainError, PreconditionError
from glvortex_lab.geometry import build_grid
from glvortex_lab.greens import disk_R, s_diag
from glvortex_lab.renorm import (
    H_energy,
    H_mod,
    ParamRegime,
    RenormFields,
    VortexConfig,
    W_energy,
    chi,
    energy_and_gradient,
    fit_vep_constant,
    grad_H,
    in_M,
    in_M_star,
    rho,
    v_eps,
    vep_residual,
    xi_eps,
)


@pytest.fixture(scope="module")
def fields(disk_grid):
    return RenormFields(disk_grid)


class TestVortexConfig:
    def test_separation_and_rho(self, disk):
        config = VortexConfig([[0.0, 0.0], [0.4, 0.0]])
        assert config.N == 2
        assert config.min_separation() == pytest.approx(0.4)
        # boundary distance 0.6 loses to separation 0.4
        assert rho(config, disk) == pytest.approx(0.1)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            VortexConfig([[0.0, math.nan]])

    def test_validate(self, disk):
        with pytest.raises(DomainError):
            VortexConfig([[0.0, 0.0], [1.1, 0.0]]).validate(disk)

    def test_round_trip(self):
        config = VortexConfig([[0.1, 0.2], [-0.3, 0.4]])
        assert np.array_equal(VortexConfig.from_dict(config.to_dict()).points, config.points)
        assert [row["index"] for row in config.to_rows()] == [0, 1]


class TestParamRegime:
    def test_n_max(self):
        """25(π - 25^(-1/4))/2π ≈ 10.7."""
        assert ParamRegime.n_max(25.0, math.pi) == 10

    def test_window_checks(self):
        ParamRegime(25.0, 10, math.pi).check_n_window()
        with pytest.raises(PreconditionError):
            ParamRegime(25.0, 11, math.pi).check_n_window()
        with pytest.raises(PreconditionError):
            ParamRegime(25.0, 0, math.pi).check_n_window()

    def test_hex_window(self):
        """K₁ <= hex <= k₁ ε^(-1/4), with only the lower bound when ε is unknown."""
        assert ParamRegime(16.0, 1, math.pi).hex_window_ok()
        assert not ParamRegime(16.0, 1, math.pi).hex_window_ok(K1=20.0)
        assert ParamRegime(3.0, 1, math.pi, eps=0.01).hex_window_ok()
        assert not ParamRegime(16.0, 1, math.pi, eps=0.01).hex_window_ok()
        assert ParamRegime(16.0, 1, math.pi, eps=0.01).hex_window_ok(k1=6.0)

    def test_weak_field_rejected(self):
        with pytest.raises(PreconditionError):
            ParamRegime(0.5, 1, math.pi)

    def test_sigma_eps(self):
        regime = ParamRegime(16.0, 1, math.pi, eps=0.01)
        assert regime.sigma_eps == pytest.approx(0.01 ** 0.99 * 256.0)
        assert ParamRegime(16.0, 1, math.pi).sigma_eps is None


class TestCutoff:
    def test_chi_limits(self):
        hex = 8.0
        value, slope = chi(np.array([0.1, 0.25, 0.5, 1.0]), hex)
        # hex^(-1/3) = 0.5
        np.testing.assert_allclose(value[[0, 1, 3]], [0.0, 0.0, 1.0])
        assert value[2] == pytest.approx(1.0)
        assert np.all(slope >= 0.0)

    def test_chi_slope_matches_difference(self):
        hex, d, h = 8.0, 0.37, 1e-7
        _, slope = chi(np.array([d]), hex)
        (up, _), (down, _) = chi(np.array([d + h]), hex), chi(np.array([d - h]), hex)
        assert slope[0] == pytest.approx((up[0] - down[0]) / (2 * h), rel=1e-5)

    def test_v_eps_away_from_boundary(self, disk_grid):
        """Far from the boundary v_ε = s / 2hex."""
        hex = 64.0
        far = disk_grid.node_distance >= hex ** (-1.0 / 3.0)
        np.testing.assert_allclose(v_eps(disk_grid, hex).values[far], s_diag(disk_grid).values[far] / (2 * hex))
        assert xi_eps(disk_grid, hex).values[far].max() < 0.0

    def test_vep_residual_finite(self, disk_grid):
        residual = vep_residual(disk_grid, 25.0)
        assert 0.0 < residual < math.inf

    def test_vep_constant_fit(self, disk_grid):
        fit = fit_vep_constant(disk_grid, [25.0, 100.0, 400.0])
        assert [row["hex"] for row in fit["rows"]] == [25.0, 100.0, 400.0]
        first = fit["rows"][0]
        assert first["residual"] == pytest.approx(vep_residual(disk_grid, 25.0))
        assert first["C"] == pytest.approx(first["residual"] / (25.0 ** (-1.0 / 3.0) * math.log(25.0)))
        assert fit["C_max"] == max(row["C"] for row in fit["rows"])
        assert fit["C_ratio"] >= 1.0


class TestEnergies:
    def test_single_center_vortex(self, disk_grid, fields):
        """H(0) = 2π hex ξ₀(0) + π s(0) on the unit disk."""
        hex = 2.0
        expected = 2 * math.pi * hex * (1.0 / sc.i0(1.0) - 1.0) + math.pi * (L_CONSTANT - sc.k0(1.0) / sc.i0(1.0))
        assert H_energy(VortexConfig([[0.0, 0.0]]), hex, fields) == pytest.approx(expected, abs=0.1)

    def test_empty_and_coincident(self, fields):
        assert H_energy(VortexConfig(np.zeros((0, 2))), 10.0, fields) == 0.0
        assert H_energy(VortexConfig([[0.1, 0.1], [0.1, 0.1]]), 10.0, fields) == math.inf
        assert W_energy(VortexConfig([[0.1, 0.1], [0.1, 0.1]]), fields) == math.inf

    def test_outside_point(self, fields):
        with pytest.raises(DomainError):
            H_energy(VortexConfig([[1.2, 0.0]]), 10.0, fields)

    def test_rotation_invariance_on_disk(self, fields):
        config = VortexConfig([[0.3, 0.1], [-0.2, 0.35], [0.05, -0.4]])
        base = H_energy(config, 1.0, fields)
        assert H_energy(config.rotated(0.7), 1.0, fields) == pytest.approx(base, abs=0.1)

    @pytest.mark.parametrize("modified", [False, True])
    def test_gradient_matches_finite_differences(self, fields, modified):
        config = VortexConfig([[0.25, -0.1], [-0.3, 0.2], [0.1, 0.75]])
        hex, h = 30.0, 1e-6
        grad = grad_H(config, hex, fields, modified=modified)
        for i in range(config.N):
            for k in range(2):
                up, down = config.points.copy(), config.points.copy()
                up[i, k] += h
                down[i, k] -= h
                fd = (
                    energy_and_gradient(VortexConfig(up), hex, fields, modified=modified, with_gradient=False)
                    - energy_and_gradient(VortexConfig(down), hex, fields, modified=modified, with_gradient=False)
                ) / (2 * h)
                assert grad[i, k] == pytest.approx(fd, rel=1e-4, abs=1e-4)

    def test_grad_H_rejects_boundary_points(self, disk_grid, fields):
        with pytest.raises(DomainError):
            grad_H(VortexConfig([[1.0 - disk_grid.spacing, 0.0]]), 10.0, fields)

    def test_H_mod_equals_H_inside(self, fields):
        """H_mod adds (χ - 1)πs per point, which vanishes well inside."""
        config = VortexConfig([[0.1, 0.0], [-0.2, 0.1]])
        assert H_mod(config, 100.0, fields) == pytest.approx(H_energy(config, 100.0, fields), rel=1e-12)

    def test_W_against_disk_formula(self, fields):
        a = np.array([[0.3, 0.0], [-0.2, 0.25]])
        R = disk_R(1.0, np.repeat(a, 2, axis=0), np.tile(a, (2, 1)))
        expected = -2 * math.pi * math.log(np.hypot(*(a[0] - a[1]))) + math.pi * float(np.sum(R))
        assert W_energy(VortexConfig(a), fields) == pytest.approx(expected, abs=5e-2)


class TestSets:
    def test_in_M(self, disk):
        hex = 8.0
        assert in_M(VortexConfig([[0.4, 0.0]]), hex, disk)
        assert not in_M(VortexConfig([[0.6, 0.0]]), hex, disk)

    def test_in_M_star(self, fields):
        config = VortexConfig([[0.0, 0.0]])
        best = H_mod(config, 20.0, fields)
        assert in_M_star(config, 20.0, fields, best)
        assert not in_M_star(config, 20.0, fields, best - 1.0)


@pytest.mark.heavy
class TestDiskOraclesRefined:
    """Closed-form energies on the unit disk at resolution 128."""

    @pytest.fixture(scope="class")
    def fine_fields(self, disk):
        return RenormFields(build_grid(disk, 128))

    def test_center_vortex(self, fine_fields):
        expected = 20 * math.pi * (1.0 / sc.i0(1.0) - 1.0) + math.pi * (L_CONSTANT - sc.k0(1.0) / sc.i0(1.0))
        assert expected == pytest.approx(-13.885, abs=1e-3)
        assert H_energy(VortexConfig([[0.0, 0.0]]), 10.0, fine_fields) == pytest.approx(expected, abs=1e-2)

    def test_rotation_by_thirty_degrees(self, fine_fields):
        config = VortexConfig([[0.3, 0.1], [-0.2, 0.35], [0.05, -0.4]])
        base = H_energy(config, 10.0, fine_fields)
        assert H_energy(config.rotated(math.pi / 6.0), 10.0, fine_fields) == pytest.approx(base, abs=2e-3)

    def test_W_symmetric_pair(self, fine_fields):
        r = 0.5
        expected = 2 * math.pi * math.log((1 - r ** 4) / (2 * r))
        assert expected == pytest.approx(-0.40547, abs=1e-5)
        assert W_energy(VortexConfig([[r, 0.0], [-r, 0.0]]), fine_fields) == pytest.approx(expected, abs=5e-3)

    def test_W_single_point(self, fine_fields):
        expected = math.pi * math.log(1 - 0.25)
        assert expected == pytest.approx(-0.90375, abs=1e-5)
        assert W_energy(VortexConfig([[0.5, 0.0]]), fine_fields) == pytest.approx(expected, abs=5e-3)
