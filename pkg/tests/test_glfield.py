"""
Tests for complex fields, the Ginzburg-Landau energies and the vortex ansatz.
"""

import math

import numpy as np
import pytest

from glvortex_lab.coupling import Phi_value, coupling_bundle
from glvortex_lab.elliptic import ScalarField
from glvortex_lab.errors import PreconditionError
from glvortex_lab.geometry import build_grid
from glvortex_lab.glfield import (
    ComplexField,
    E_energy,
    GL_energy,
    Phi_energy,
    PotentialField,
    W_value,
    _harmonic_conjugate_path,
    ansatz_u,
    bbh_surplus,
    check_split_identity,
    current,
    estimate_gamma,
    jacobian,
    kappa_BBH,
    kappa_GL,
    vorticity_concentration,
    winding_number,
)
from glvortex_lab.renorm import RenormFields, VortexConfig, W_energy

CENTER = VortexConfig([[0.0, 0.0]])
CORE_CONSTANT = 13.0 * math.pi / 12.0


@pytest.fixture(scope="module")
def fine_disk_grid(disk):
    return build_grid(disk, 256)


@pytest.fixture(scope="module")
def centered_vortex(fine_disk_grid):
    return ansatz_u(fine_disk_grid, CENTER, 0.03)


def paraboloid_potential(grid, height=2.0):
    return PotentialField(ScalarField.from_function(grid, lambda p: height * (1.0 - p[:, 0] ** 2 - p[:, 1] ** 2)))


class TestComplexField:
    def test_shape_checked(self, disk_grid):
        with pytest.raises(ValueError):
            ComplexField(disk_grid, np.zeros(3), np.zeros(3))

    def test_constant_has_no_energy(self, disk_grid):
        assert E_energy(ComplexField.constant(disk_grid, 1j), 0.1) == pytest.approx(0.0, abs=1e-14)

    def test_jacobian_of_linear_map(self, disk_grid):
        """A holomorphic map has Ju = |u'|²."""
        u = ComplexField.from_function(disk_grid, lambda z: 0.8 * z + 0.3)
        np.testing.assert_allclose(jacobian(u).values, 0.64, atol=1e-12)

    def test_current_of_plane_wave(self, disk_grid):
        """u = e^{ikx} carries the current (k, 0)."""
        u = ComplexField.from_function(disk_grid, lambda z: np.exp(0.5j * z.real))
        j = current(u)
        h = disk_grid.spacing
        # centered differences of e^{ikx} scale k by sin(kh)/(kh)
        np.testing.assert_allclose(j[:, 0], math.sin(0.5 * h) / h, rtol=1e-10)
        np.testing.assert_allclose(j[:, 1], 0.0, atol=1e-12)


class TestPotentialField:
    def test_nonzero_trace_rejected(self, disk_grid):
        with pytest.raises(PreconditionError):
            PotentialField(ScalarField.from_function(disk_grid, lambda p: 1.0 + 0.0 * p[:, 0]))

    def test_vanishing_trace_accepted(self, disk_grid):
        B = paraboloid_potential(disk_grid)
        assert B.B.boundary is None
        # curl A = -ΔB = 8 wherever the five-point stencil sees no cut
        uncut = np.setdiff1d(np.arange(disk_grid.node_count), disk_grid.cuts.node)
        np.testing.assert_allclose(B.curl()[uncut], 8.0, atol=1e-9)

    def test_zero_potential(self, disk_grid):
        assert Phi_energy(PotentialField.zero(disk_grid), 3.0) == pytest.approx(4.5 * disk_grid.area)

    def test_matches_coupling_functional(self, disk_grid):
        bundle = coupling_bundle(disk_grid, VortexConfig([[0.2, 0.1]]), 2.0)
        assert Phi_energy(PotentialField(bundle.B1), 2.0) == pytest.approx(Phi_value(bundle.B1, 2.0), rel=1e-12)


class TestEnergies:
    def test_GL_without_field_is_E(self, disk_grid):
        u = ComplexField.from_function(disk_grid, lambda z: 0.7 * z + 0.2j)
        assert GL_energy(u, PotentialField.zero(disk_grid), 0.0, 0.1) == pytest.approx(E_energy(u, 0.1), rel=1e-12)

    def test_split_identity(self, disk_grid):
        u = ComplexField.from_function(disk_grid, lambda z: 0.8 * z + 0.3)
        assert check_split_identity(u, paraboloid_potential(disk_grid), 5.0, 0.1) <= 2e-2

    def test_constants(self):
        assert kappa_BBH(2, math.exp(-1.0), 0.5) == pytest.approx(2.0 * (math.pi + 0.5))
        assert kappa_GL(2, 3.0, math.exp(-1.0), 1.4, 0.5) == pytest.approx(9.0 * 1.4 + 2.0 * (math.pi + 0.5))

    def test_W_closed_form_matches_kernel(self, disk_grid):
        config = VortexConfig([[0.3, 0.0], [-0.2, 0.25]])
        assert W_value(disk_grid, config) == pytest.approx(W_energy(config, RenormFields(disk_grid)), abs=5e-2)
        assert W_value(disk_grid, VortexConfig(np.zeros((0, 2)))) == 0.0

    def test_harmonic_conjugate_of_x(self, ellipse_grid):
        """The conjugate of R = x is y."""
        field = ScalarField.from_function(ellipse_grid, lambda p: p[:, 0])
        np.testing.assert_allclose(_harmonic_conjugate_path(ellipse_grid, field), ellipse_grid.Y, atol=1e-6)


class TestAnsatz:
    def test_unresolved_core(self, disk_grid):
        with pytest.raises(PreconditionError):
            ansatz_u(disk_grid, CENTER, 0.05)

    def test_crowded_configuration(self, fine_disk_grid):
        with pytest.raises(PreconditionError):
            ansatz_u(fine_disk_grid, VortexConfig([[0.0, 0.0], [0.3, 0.0]]), 0.03)

    def test_no_vortices(self, fine_disk_grid):
        u = ansatz_u(fine_disk_grid, VortexConfig(np.zeros((0, 2))), 0.03)
        assert np.all(u.re == 1.0)

    def test_modulus(self, fine_disk_grid, centered_vortex):
        mod = np.sqrt(centered_vortex.modulus_squared())
        far = np.hypot(fine_disk_grid.X, fine_disk_grid.Y) >= 0.03
        np.testing.assert_allclose(mod[far], 1.0, atol=1e-12)
        assert mod.min() == pytest.approx(0.0, abs=1e-12)

    def test_winding(self, centered_vortex):
        assert winding_number(centered_vortex, (0.0, 0.0), 0.3) == pytest.approx(1.0, abs=1e-9)
        assert winding_number(centered_vortex, (0.5, 0.0), 0.2) == pytest.approx(0.0, abs=1e-9)

    def test_vorticity_concentrates(self, centered_vortex):
        """∫Ju over a ball around the vortex is close to π, and small elsewhere."""
        result = vorticity_concentration(centered_vortex, CENTER, 0.1, eps=0.03)
        assert result["masses"][0] == pytest.approx(math.pi, rel=5e-2)
        assert abs(result["outside"]) < 0.1

    def test_concentration_radius_checked(self, centered_vortex):
        with pytest.raises(PreconditionError):
            vorticity_concentration(centered_vortex, CENTER, 0.05, eps=0.03)


class TestCoreConstant:
    def test_estimate(self, fine_disk_grid):
        estimate = estimate_gamma(fine_disk_grid, [CENTER], [0.03])
        assert estimate.samples == 1
        assert estimate.spread == 0.0
        assert estimate.gamma_hat == pytest.approx(CORE_CONSTANT, abs=0.3)
        row = estimate.rows[0]
        assert set(row) == {"config_hash", "N", "eps", "resolution", "E", "W", "gamma_sample"}
        assert row["resolution"] == 256

    def test_surplus_is_the_sample(self, fine_disk_grid, centered_vortex):
        estimate = estimate_gamma(fine_disk_grid, [CENTER], [0.03])
        surplus = bbh_surplus(centered_vortex, CENTER, 0.03, estimate.gamma_hat)
        assert surplus == pytest.approx(0.0, abs=1e-9)

    def test_unresolved_eps(self, disk_grid):
        with pytest.raises(PreconditionError):
            estimate_gamma(disk_grid, [CENTER], [0.05])


@pytest.mark.heavy
def test_split_identity_converges(disk):
    """Residual of the splitting identity falls by at least 3 per resolution doubling."""
    residuals = []
    for resolution in (64, 128):
        grid = build_grid(disk, resolution)
        u = ComplexField.from_function(grid, lambda z: 0.8 * z + 0.3)
        residuals.append(check_split_identity(u, paraboloid_potential(grid), 5.0, 0.1))
    assert residuals[1] <= 1e-2
    assert residuals[0] / residuals[1] >= 3.0
