"""
Vortex configurations and their renormalized energies.

All energies are evaluated through shared, precomputed field objects (ξ₀ and
the Green kernels of a grid), so an evaluation costs a handful of small dense
products and never a linear solve.
"""

import logging
import math
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np

from .bessel import L_CONSTANT, k0, k1
from .elliptic import OperatorKind, ScalarField, apply_operator, helmholtz, xi0
from .errors import DomainError, PreconditionError
from .geometry import Grid, distance_array, distance_gradient
from .greens import green_kernel, s_diag

logger = logging.getLogger(__name__)


class VortexConfig:
    """N distinct points strictly inside the domain."""

    def __init__(self, points: Iterable):
        pts = np.array(points, dtype=float).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("Vortex points must be finite")
        self.points = pts

    @property
    def N(self) -> int:
        return int(self.points.shape[0])

    def __len__(self) -> int:
        return self.N

    def pair_distances(self) -> np.ndarray:
        """Matrix of pairwise distances with +inf on the diagonal."""
        diff = self.points[:, None, :] - self.points[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        np.fill_diagonal(dist, np.inf)
        return dist

    def min_separation(self) -> float:
        if self.N < 2:
            return math.inf
        return float(self.pair_distances().min())

    def boundary_distances(self, spec) -> np.ndarray:
        return distance_array(spec, self.points)

    def validate(self, spec) -> None:
        """Raise DomainError unless all points are inside the domain."""
        if self.N and np.any(self.boundary_distances(spec) <= 0.0):
            raise DomainError(f"Vortex configuration has points outside the domain: {self.points.tolist()}")

    def rotated(self, angle: float) -> "VortexConfig":
        c, s = math.cos(angle), math.sin(angle)
        return VortexConfig(self.points @ np.array([[c, s], [-s, c]]))

    def to_rows(self) -> List[Dict[str, float]]:
        """Rows (index, x, y) for CSV output."""
        return [{"index": i, "x": float(p[0]), "y": float(p[1])} for i, p in enumerate(self.points)]

    def to_dict(self) -> Dict[str, Any]:
        return {"points": self.points.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "VortexConfig":
        return cls(data.get("points", []))

    def __repr__(self) -> str:
        return f"VortexConfig(N={self.N}, points={np.round(self.points, 6).tolist()})"


class ParamRegime:
    """
    Parameter windows for the applied field and the number of vortices.

    Args:
        hex: Applied field strength (>= 1)
        N: Number of vortices
        eps: Inverse Ginzburg-Landau parameter, only needed for sigma_eps
        area: Area of the domain
    """

    def __init__(self, hex: float, N: int, area: float, eps: Optional[float] = None):
        if hex < 1.0:
            raise PreconditionError(f"The applied field must satisfy hex >= 1, got {hex}")
        self.hex = float(hex)
        self.N = int(N)
        self.area = float(area)
        self.eps = eps

    @staticmethod
    def n_max(hex: float, area: float) -> int:
        """Largest N with N <= hex(|Ω| - hex^(-1/4))/2π."""
        return max(int(math.floor(hex * (area - hex ** -0.25) / (2.0 * math.pi))), 0)

    def n_window_ok(self) -> bool:
        return 1 <= self.N <= self.n_max(self.hex, self.area)

    def check_n_window(self) -> None:
        if not self.n_window_ok():
            bound = self.hex * (self.area - self.hex ** -0.25) / (2.0 * math.pi)
            raise PreconditionError(
                f"N = {self.N} violates 1 <= N <= hex/2π (|Ω| - hex^(-1/4)) = {bound:.4f} at hex = {self.hex}"
            )

    def hex_window_ok(self, K1: float = 1.0, k1: float = 1.0) -> bool:
        """K₁ <= hex <= k₁ ε^(-1/4); without eps only the lower bound is checked."""
        if self.hex < K1:
            return False
        return self.eps is None or self.hex <= k1 * self.eps ** -0.25

    @property
    def sigma_eps(self) -> Optional[float]:
        if self.eps is None:
            return None
        return self.eps ** 0.99 * max(self.N ** 5 * math.sqrt(self.hex), self.hex ** 2)

    def to_dict(self) -> Dict[str, Any]:
        return {"hex": self.hex, "N": self.N, "area": self.area, "eps": self.eps, "sigma_eps": self.sigma_eps}


def chi(d: np.ndarray, hex: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Boundary cutoff as a function of the distance d and its derivative in d.

    Equal to 1 for d >= hex^(-1/3), 0 for d <= hex^(-1/3)/2, quintic smoothstep between.
    """
    scale = hex ** (1.0 / 3.0)
    t = np.clip((np.asarray(d, dtype=float) * scale - 0.5) / 0.5, 0.0, 1.0)
    value = t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)
    slope = 30.0 * t * t * (1.0 - t) ** 2 * 2.0 * scale
    return value, slope


def v_eps(grid: Grid, hex: float) -> ScalarField:
    """Cutoff modification χ(x) s(x) / 2hex at every interior node."""
    if hex < 1.0:
        raise PreconditionError(f"v_eps needs hex >= 1, got {hex}")

    def build() -> ScalarField:
        cutoff, _ = chi(grid.node_distance, hex)
        return ScalarField(grid, cutoff * s_diag(grid).values / (2.0 * hex))

    return grid.derived(f"v_eps:{hex!r}", build)


def xi_eps(grid: Grid, hex: float) -> ScalarField:
    """ξ_ε = ξ₀ + v_ε."""
    return xi0(grid) + v_eps(grid, hex)


def vep_residual(grid: Grid, hex: float) -> float:
    """max |(-Δ+1)v_ε| over the interior nodes."""
    return float(np.max(np.abs(apply_operator(helmholtz(grid), v_eps(grid, hex)).values)))


def fit_vep_constant(grid: Grid, hex_values: Iterable[float]) -> Dict[str, Any]:
    """Constants C with max|(-Δ+1)v_ε| = C hex^(-1/3) log hex along a field sweep."""
    rows = []
    for hex in hex_values:
        residual = vep_residual(grid, hex)
        rows.append({"hex": hex, "residual": residual, "C": residual / (hex ** (-1.0 / 3.0) * math.log(hex))})
    constants = [row["C"] for row in rows]
    return {"rows": rows, "C_max": max(constants), "C_ratio": max(constants) / min(constants)}


class RenormFields:
    """
    Precomputed ingredients of the energies on one grid.

    Holds ξ₀ and the Helmholtz kernel; the Laplace kernel used by W is built
    on first use.
    """

    def __init__(self, grid: Grid, logger: Optional[logging.Logger] = None):
        self.grid = grid
        self.logger = logger or logging.getLogger(__name__)
        self.xi0 = xi0(grid)
        self.kernel = green_kernel(grid, OperatorKind.HELMHOLTZ)

    @property
    def laplace_kernel(self):
        return green_kernel(self.grid, OperatorKind.LAPLACE)

    def check_points(self, config: VortexConfig) -> np.ndarray:
        d = config.boundary_distances(self.grid.spec)
        if np.any(d <= 0.0):
            raise DomainError(f"Configuration leaves the domain: {config.points.tolist()}")
        return d

    def xi0_terms(self, points: np.ndarray, with_gradient: bool = False):
        if with_gradient:
            return self.xi0.sample(points), self.xi0.sample_gradient(points)
        return self.xi0.sample(points)

    def s_terms(self, points: np.ndarray, with_gradient: bool = False):
        if with_gradient:
            value, grad = self.kernel.diagonal(points, with_gradient=True)
            return value + L_CONSTANT, grad
        return self.kernel.diagonal(points) + L_CONSTANT

    def pair_terms(self, points: np.ndarray, with_gradient: bool = False):
        """
        Σ_{i≠j} G(aᵢ,aⱼ) with G = (S̃ + K₀)/2π, and its gradient per point.

        Summing over ordered pairs averages both orderings of the kernel.
        """
        n = len(points)
        if n < 2:
            return (0.0, np.zeros((n, 2))) if with_gradient else 0.0
        i, j = np.nonzero(~np.eye(n, dtype=bool))
        xs, ys = points[i], points[j]
        diff = xs - ys
        r = np.hypot(diff[:, 0], diff[:, 1])
        if with_gradient:
            stilde, gx, gy = self.kernel.evaluate(xs, ys, with_gradient=True)
        else:
            stilde = self.kernel.evaluate(xs, ys)
        total = float(np.sum(stilde + k0(r))) / (2.0 * math.pi)
        if not with_gradient:
            return total

        radial = (k1(r) / r)[:, None] * diff
        grad_x = (gx - radial) / (2.0 * math.pi)
        grad_y = (gy + radial) / (2.0 * math.pi)
        grad = np.zeros((n, 2))
        np.add.at(grad, i, grad_x)
        np.add.at(grad, j, grad_y)
        return total, grad


def _coincident(config: VortexConfig) -> bool:
    return config.N > 1 and config.min_separation() == 0.0


def H_energy(config: VortexConfig, hex: float, fields: RenormFields) -> float:
    """Σᵢ[2π hex ξ₀(aᵢ) + π s(aᵢ)] + 2π² Σ_{i≠j} G(aᵢ,aⱼ); +inf for coincident points."""
    if config.N == 0:
        return 0.0
    if _coincident(config):
        return math.inf
    fields.check_points(config)
    pts = config.points
    single = 2.0 * math.pi * hex * fields.xi0_terms(pts) + math.pi * fields.s_terms(pts)
    return float(np.sum(single) + 2.0 * math.pi ** 2 * fields.pair_terms(pts))


def H_mod(config: VortexConfig, hex: float, fields: RenormFields) -> float:
    """Σᵢ 2π hex [ξ₀(aᵢ) + v_ε(aᵢ)] + 2π² Σ_{i≠j} G(aᵢ,aⱼ), with v_ε = χ s / 2hex pointwise."""
    return energy_and_gradient(config, hex, fields, modified=True, with_gradient=False)


def energy_and_gradient(
    config: VortexConfig,
    hex: float,
    fields: RenormFields,
    modified: bool = False,
    with_gradient: bool = True,
):
    """
    H (or H_mod) and its exact gradient with respect to every point.

    Returns:
        energy, or (energy, gradient (N, 2)) when with_gradient is set
    """
    n = config.N
    if n == 0:
        return (0.0, np.zeros((0, 2))) if with_gradient else 0.0
    if _coincident(config):
        return (math.inf, np.full((n, 2), np.nan)) if with_gradient else math.inf

    d = fields.check_points(config)
    pts = config.points
    if with_gradient:
        xi_val, xi_grad = fields.xi0_terms(pts, with_gradient=True)
        s_val, s_grad = fields.s_terms(pts, with_gradient=True)
        pair, pair_grad = fields.pair_terms(pts, with_gradient=True)
    else:
        xi_val = fields.xi0_terms(pts)
        s_val = fields.s_terms(pts)
        pair = fields.pair_terms(pts)

    weight = np.ones(n)
    slope = np.zeros(n)
    if modified:
        weight, slope = chi(d, hex)

    energy = float(np.sum(2.0 * math.pi * hex * xi_val + math.pi * weight * s_val) + 2.0 * math.pi ** 2 * pair)
    if not with_gradient:
        return energy

    grad = 2.0 * math.pi * hex * xi_grad + math.pi * weight[:, None] * s_grad + 2.0 * math.pi ** 2 * pair_grad
    if modified and np.any(slope != 0.0):
        normal = distance_gradient(fields.grid.spec, pts)
        grad += math.pi * (slope * s_val)[:, None] * normal
    return energy, grad


def grad_H(config: VortexConfig, hex: float, fields: RenormFields, modified: bool = False) -> np.ndarray:
    """Gradient of H (or H_mod) with respect to each point; points must be two cells inside."""
    d = config.boundary_distances(fields.grid.spec)
    if np.any(d < 2.0 * fields.grid.spacing):
        raise DomainError("grad_H needs every point at least two grid cells from the boundary")
    _, grad = energy_and_gradient(config, hex, fields, modified=modified)
    return grad


def W_energy(config: VortexConfig, fields: RenormFields) -> float:
    """-π Σ_{i≠j} log|aᵢ - aⱼ| + π Σ_{i,j} R(aᵢ,aⱼ); +inf for coincident points."""
    n = config.N
    if n == 0:
        return 0.0
    if _coincident(config):
        return math.inf
    fields.check_points(config)
    pts = config.points
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    R = fields.laplace_kernel.evaluate(pts[i.ravel()], pts[j.ravel()])
    logs = 0.0
    if n > 1:
        dist = config.pair_distances()
        logs = float(np.sum(np.log(dist[~np.eye(n, dtype=bool)])))
    return float(-math.pi * logs + math.pi * np.sum(R))


def rho(config: VortexConfig, spec) -> float:
    """ρ_a = ¼ min(min_{i≠j}|aᵢ - aⱼ|, min_i d(aᵢ))."""
    terms = [float(np.min(config.boundary_distances(spec)))]
    if config.N > 1:
        terms.append(config.min_separation())
    return 0.25 * min(terms)


def in_M(config: VortexConfig, hex: float, spec) -> bool:
    """True when every point keeps distance >= hex^(-1/3) from the boundary."""
    return bool(np.all(config.boundary_distances(spec) >= hex ** (-1.0 / 3.0)))


def in_M_star(config: VortexConfig, hex: float, fields: RenormFields, best_energy: float, t0: float = 0.01) -> bool:
    """Near-minimizer test H_mod(a) <= best + t₀, with best an (approximate) infimum of H_mod."""
    return H_mod(config, hex, fields) <= best_energy + t0
