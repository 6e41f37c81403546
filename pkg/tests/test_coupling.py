"""
Tests for the magnetic coupling B₁ and the energy identities.
"""

import numpy as np
import pytest

from glvortex_lab.coupling import (
    Phi_value,
    check_B1_identity,
    check_beta_consistency,
    check_WH_identity,
    config_hash,
    coupling_bundle,
    min_phi_value,
    phi_minimum_closed_form,
    phi_minimum_direct,
    solve_B1,
    solve_w1,
)
from glvortex_lab.elliptic import F_energy, meissner_energy, xi0
from glvortex_lab.geometry import build_grid
from glvortex_lab.renorm import RenormFields, VortexConfig

PAIR = VortexConfig([[0.3, 0.1], [-0.25, -0.2]])


@pytest.fixture(scope="module")
def bundle(disk_grid):
    return coupling_bundle(disk_grid, PAIR, 5.0)


class TestConfigHash:
    def test_stable_and_distinct(self):
        assert config_hash(PAIR) == config_hash(VortexConfig(PAIR.points.copy()))
        assert config_hash(PAIR) != config_hash(PAIR.rotated(0.1))
        assert len(config_hash(PAIR)) == 12


class TestCoupling:
    def test_B1_vanishes_without_vortices(self, disk_grid):
        B1 = solve_B1(disk_grid, VortexConfig(np.zeros((0, 2))))
        assert np.max(np.abs(B1.values)) == 0.0

    def test_B1_positive(self, bundle):
        """w₁ > 0 makes B₁ superharmonic with zero data, hence positive."""
        assert bundle.B1.min() > 0.0
        assert bundle.w1.integrate() > 0.0

    def test_w1_is_linear_in_the_vortices(self, disk_grid, bundle):
        singles = [solve_w1(disk_grid, VortexConfig(p.reshape(1, 2))) for p in PAIR.points]
        np.testing.assert_allclose(bundle.w1.values, singles[0].values + singles[1].values, rtol=1e-12, atol=1e-12)

    def test_beta_consistency(self, disk_grid, bundle):
        scale = (bundle.hex + bundle.w1.max()) ** 2
        assert check_beta_consistency(disk_grid, bundle) <= 1e-8 * scale

    def test_Phi_of_meissner_state(self, disk_grid):
        """Φ(-hex ξ₀) = hex² ½∫|∇ξ₀|² + ξ₀²."""
        hex = 3.0
        assert Phi_value(-hex * xi0(disk_grid), hex) == pytest.approx(hex ** 2 * meissner_energy(xi0(disk_grid)),
                                                                      rel=1e-10)

    def test_Phi_is_quadratic_in_scale(self, disk_grid, bundle):
        """Three-point parabola through Φ(cβ) predicts a fourth value."""
        c = np.array([0.0, 0.5, 1.0, 2.0])
        values = [Phi_value(float(k) * bundle.beta, bundle.hex) for k in c]
        coeffs = np.polyfit(c[:3], values[:3], 2)
        assert np.polyval(coeffs, c[3]) == pytest.approx(values[3], rel=1e-9)

    def test_minimum_without_vortices(self, disk_grid):
        assert min_phi_value(disk_grid, VortexConfig(np.zeros((0, 2))), 4.0) == pytest.approx(
            16.0 * F_energy(xi0(disk_grid))
        )

    def test_direct_and_closed_form_minimum(self, disk_grid):
        one = coupling_bundle(disk_grid, VortexConfig([[0.1, -0.2]]), 1.0)
        direct = phi_minimum_direct(one)
        closed = phi_minimum_closed_form(disk_grid, one)
        assert direct == pytest.approx(closed, abs=5e-2)


class TestIdentities:
    @pytest.fixture(scope="class")
    def report(self, disk_grid):
        return check_WH_identity(disk_grid, PAIR, 5.0, RenormFields(disk_grid))

    def test_B1_identity(self, disk_grid, bundle):
        assert check_B1_identity(disk_grid, PAIR, bundle.bundles, bundle.B1) <= 2e-2

    def test_B1_identity_converges(self, disk):
        residuals = [check_B1_identity(build_grid(disk, n), PAIR) for n in (24, 48)]
        assert residuals[1] < residuals[0]

    def test_WH_identity(self, report):
        assert report.scaled_residual <= 1e-2

    def test_reduction_matches_WH_residual(self, report):
        """Both forms of the identity leave the same residual."""
        assert report.reduction_residual == pytest.approx(report.residual, abs=1e-10)

    def test_row(self, report):
        row = report.to_row()
        assert set(row) == {"N", "hex", "config_hash", "residual_B1", "residual_WH", "resolution"}
        assert row["N"] == 2
        assert row["resolution"] == 32


@pytest.mark.heavy
class TestIdentityConvergence:
    """Identity residuals fall by at least 3 from resolution 64 to 128."""

    @pytest.fixture(scope="class")
    def grids(self, disk):
        return [build_grid(disk, n) for n in (64, 128)]

    def test_B1_identity(self, grids):
        coarse, fine = (check_B1_identity(grid, PAIR) for grid in grids)
        assert fine <= 1e-2
        assert coarse / fine >= 3.0

    def test_WH_identity(self, grids):
        coarse, fine = (check_WH_identity(grid, PAIR, 5.0, RenormFields(grid)).scaled_residual for grid in grids)
        assert fine <= 1e-2
        assert coarse / fine >= 3.0
