"""
Magnetic coupling of a vortex configuration.

B₁ solves Δ²B₁ - ΔB₁ = 2πΣδ_{aᵢ} with B₁ = ΔB₁ = 0 on the boundary. It is
obtained from two second-order problems: w₁ = -ΔB₁ = 2πΣG(·,aᵢ), then
-ΔB₁ = w₁.
"""

import hashlib
import json
import logging
import math
from typing import Any, Dict, List, Optional

import numpy as np

from .elliptic import F_energy, ScalarField, laplace, laplacian, meissner_energy, solve, xi0
from .geometry import Grid
from .greens import GreenBundle, green_G
from .renorm import H_energy, RenormFields, VortexConfig, W_energy, rho

logger = logging.getLogger(__name__)

HALO_CELLS = 2


def config_hash(config: VortexConfig) -> str:
    """Short stable identifier of a configuration."""
    payload = json.dumps(np.round(config.points, 12).tolist())
    return hashlib.md5(payload.encode()).hexdigest()[:12]


class CouplingBundle:
    """w₁, B₁ and β = -hex ξ₀ + B₁ for one configuration."""

    def __init__(self, config: VortexConfig, hex: float, w1: ScalarField, B1: ScalarField, beta: ScalarField,
                 min_phi_value: float, bundles: Optional[List[GreenBundle]] = None):
        self.config = config
        self.hex = hex
        self.w1 = w1
        self.B1 = B1
        self.beta = beta
        self.min_phi_value = min_phi_value
        self.bundles = bundles or []

    def __repr__(self) -> str:
        return f"CouplingBundle(N={self.config.N}, hex={self.hex}, min_phi_value={self.min_phi_value:.6f})"


def green_bundles(grid: Grid, config: VortexConfig) -> List[GreenBundle]:
    return [green_G(grid, p) for p in config.points]


def solve_w1(grid: Grid, config: VortexConfig, bundles: Optional[List[GreenBundle]] = None) -> ScalarField:
    """w₁ = 2π Σⱼ G(·,aⱼ) from the Green bundles of the configuration."""
    bundles = bundles if bundles is not None else green_bundles(grid, config)
    values = np.zeros(grid.node_count)
    for bundle in bundles:
        values += 2.0 * math.pi * bundle.G.values
    return ScalarField(grid, values)


def solve_B1(grid: Grid, config: VortexConfig, w1: Optional[ScalarField] = None) -> ScalarField:
    """-ΔB₁ = w₁ with B₁ = 0 on the boundary."""
    w1 = w1 if w1 is not None else solve_w1(grid, config)
    return solve(laplace(grid), w1, 0.0)


def _point_values(field: ScalarField, config: VortexConfig) -> np.ndarray:
    if config.N == 0:
        return np.zeros(0)
    return field.sample(config.points)


def min_phi_value(grid: Grid, config: VortexConfig, hex: float, B1: Optional[ScalarField] = None) -> float:
    """hex² F(ξ₀) + 2π hex Σ ξ₀(aᵢ) - π Σ B₁(aᵢ)."""
    base = xi0(grid)
    value = hex ** 2 * F_energy(base)
    if config.N == 0:
        return value
    B1 = B1 if B1 is not None else solve_B1(grid, config)
    value += 2.0 * math.pi * hex * float(np.sum(_point_values(base, config)))
    value -= math.pi * float(np.sum(_point_values(B1, config)))
    return value


def coupling_bundle(grid: Grid, config: VortexConfig, hex: float) -> CouplingBundle:
    bundles = green_bundles(grid, config)
    w1 = solve_w1(grid, config, bundles)
    B1 = solve_B1(grid, config, w1)
    beta = -hex * xi0(grid) + B1
    return CouplingBundle(config, hex, w1, B1, beta, min_phi_value(grid, config, hex, B1), bundles)


def Phi_value(beta: ScalarField, hex: float) -> float:
    """Φ(B) = ½∫|∇B|² + (ΔB + hex)² by nodal quadrature with the discrete Laplacian."""
    grad = beta.gradient()
    density = np.sum(grad * grad, axis=1) + (laplacian(beta).values + hex) ** 2
    return 0.5 * float(np.dot(beta.grid.node_areas, density))


def phi_minimum_direct(bundle: CouplingBundle) -> float:
    """Φ(β) - 2πΣβ(aᵢ) evaluated by quadrature at β = -hex ξ₀ + B₁."""
    value = Phi_value(bundle.beta, bundle.hex)
    return value - 2.0 * math.pi * float(np.sum(_point_values(bundle.beta, bundle.config)))


def phi_minimum_closed_form(grid: Grid, bundle: CouplingBundle) -> float:
    """hex² ½∫|∇ξ₀|² + ξ₀² + 2π hex Σ ξ₀(aᵢ) - π Σ B₁(aᵢ), the exact minimum of the quadratic functional."""
    base = xi0(grid)
    value = bundle.hex ** 2 * meissner_energy(base)
    value += 2.0 * math.pi * bundle.hex * float(np.sum(_point_values(base, bundle.config)))
    return value - math.pi * float(np.sum(_point_values(bundle.B1, bundle.config)))


def check_beta_consistency(grid: Grid, bundle: CouplingBundle) -> float:
    """max |(hex + Δβ)² - (hex ξ₀ + w₁)²| over the interior nodes."""
    lhs = (bundle.hex + laplacian(bundle.beta).values) ** 2
    rhs = (bundle.hex * xi0(grid).values + bundle.w1.values) ** 2
    return float(np.max(np.abs(lhs - rhs)))


def _halo_mask(grid: Grid, config: VortexConfig) -> np.ndarray:
    keep = np.ones(grid.node_count, dtype=bool)
    radius = HALO_CELLS * grid.spacing
    for p in config.points:
        keep &= np.maximum(np.abs(grid.nodes[:, 0] - p[0]), np.abs(grid.nodes[:, 1] - p[1])) > radius
    return keep


def check_B1_identity(grid: Grid, config: VortexConfig, bundles: Optional[List[GreenBundle]] = None,
                      B1: Optional[ScalarField] = None) -> float:
    """max |B₁ - Σⱼ(R(·,aⱼ) - S(·,aⱼ))| over the nodes outside two-cell halos around the points."""
    bundles = bundles if bundles is not None else green_bundles(grid, config)
    B1 = B1 if B1 is not None else solve_B1(grid, config, solve_w1(grid, config, bundles))
    combined = np.zeros(grid.node_count)
    for bundle in bundles:
        combined += bundle.R.values - bundle.S.values
    keep = _halo_mask(grid, config)
    return float(np.max(np.abs(B1.values - combined)[keep]))


class IdentityReport:
    """Residuals of the energy identities for one configuration and field strength."""

    def __init__(self, config: VortexConfig, hex: float, H: float, F: float, min_phi: float, W: float,
                 reduction: float, B1_residual: float, resolution: int):
        self.config = config
        self.hex = hex
        self.H = H
        self.F = F
        self.min_phi = min_phi
        self.W = W
        self.residual = abs(H + hex ** 2 * F - min_phi - W)
        self.scaled_residual = self.residual / (1.0 + abs(H))
        self.reduction_residual = reduction
        self.B1_residual = B1_residual
        self.resolution = resolution

    def to_row(self) -> Dict[str, Any]:
        return {
            "N": self.config.N,
            "hex": self.hex,
            "config_hash": config_hash(self.config),
            "residual_B1": self.B1_residual,
            "residual_WH": self.scaled_residual,
            "resolution": self.resolution,
        }


def check_WH_identity(grid: Grid, config: VortexConfig, hex: float,
                      fields: Optional[RenormFields] = None) -> IdentityReport:
    """
    H + hex² F(ξ₀) = min_B[Φ(B) - 2πΣB(aᵢ)] + W, with every term computed independently.

    The report also carries πΣS(aᵢ,aⱼ) - πΣR(aᵢ,aⱼ) + πΣB₁(aᵢ), which is the
    same residual written through the regular parts.
    """
    fields = fields or RenormFields(grid)
    if config.N and rho(config, grid.spec) < 4.0 * grid.spacing:
        logger.warning(f"rho_a = {rho(config, grid.spec):.4g} is below four grid cells; identities lose accuracy")

    bundles = green_bundles(grid, config)
    w1 = solve_w1(grid, config, bundles)
    B1 = solve_B1(grid, config, w1)
    H = H_energy(config, hex, fields)
    F = F_energy(xi0(grid))
    min_phi = min_phi_value(grid, config, hex, B1)
    W = W_energy(config, fields)

    reduction = math.pi * float(np.sum(_point_values(B1, config)))
    n = config.N
    if n:
        pts = config.points
        s_diag = fields.s_terms(pts)
        reduction += math.pi * float(np.sum(s_diag))
        if n > 1:
            # S(aᵢ,aⱼ) = 2πG(aᵢ,aⱼ) + log|aᵢ - aⱼ| off the diagonal
            pair = fields.pair_terms(pts)
            dist = config.pair_distances()
            reduction += math.pi * (2.0 * math.pi * pair + float(np.sum(np.log(dist[~np.eye(n, dtype=bool)]))))
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        reduction -= math.pi * float(np.sum(fields.laplace_kernel.evaluate(pts[i.ravel()], pts[j.ravel()])))

    B1_residual = check_B1_identity(grid, config, bundles, B1) if n else 0.0
    report = IdentityReport(config, hex, H, F, min_phi, W, abs(reduction), B1_residual, grid.resolution)
    logger.debug(f"Identity residuals for N={n}, hex={hex}: WH={report.residual:.3e}, B1={B1_residual:.3e}")
    return report
