"""
The obstacle problem behind the equilibrium measure.

For λ > 0 and m >= 0, φ minimizes ½∫|∇φ|² + φ² over φ >= -λξ_ε - m with zero
boundary data. The multiplier (-Δ+1)φ is a nonnegative measure carried by
the coincidence set; m(λ) is chosen so that it has unit mass.
"""

import logging
import math
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

from .elliptic import ScalarField, apply_operator, helmholtz
from .errors import NumericError, PreconditionError
from .geometry import Grid
from .renorm import xi_eps

logger = logging.getLogger(__name__)

RELAXATION = 1.8
UPDATE_TOL = 1.0e-10
MAX_SWEEPS = 200000
MASS_TOL = 1.0e-4
BISECTION_ITERS = 60
MASK_TOL = 1.0e-7


class ObstacleSolution:
    """Everything computed for one (λ, m): φ, ζ, the coincidence set and the multiplier."""

    def __init__(self, lam: float, m: float, phi: ScalarField, zeta: ScalarField, coincidence: np.ndarray,
                 mu: ScalarField, w_eps: ScalarField, obstacle: np.ndarray, hex: float, sweeps: int = 0):
        self.lam = lam
        self.m = m
        self.phi = phi
        self.zeta = zeta
        self.coincidence = coincidence
        self.mu = mu
        self.w_eps = w_eps
        self.obstacle = obstacle
        self.hex = hex
        self.sweeps = sweeps

    @property
    def grid(self) -> Grid:
        return self.phi.grid

    @property
    def coincidence_area(self) -> float:
        return float(self.grid.node_areas[self.coincidence].sum())

    @property
    def dist_sigma_boundary(self) -> float:
        """Smallest boundary distance over the coincidence nodes (inf when empty)."""
        if not np.any(self.coincidence):
            return math.inf
        return float(self.grid.node_distance[self.coincidence].min())

    def coincidence_array(self) -> np.ndarray:
        """Coincidence mask on the bounding box."""
        return self.grid.full_array(self.coincidence.astype(float)) > 0.5

    def to_row(self) -> Dict[str, Any]:
        return {
            "lambda": self.lam,
            "m_lambda": self.m,
            "f_residual": f_value(self) - 1.0,
            "min_zeta": self.zeta.min(),
            "coincidence_area": self.coincidence_area,
            "dist_sigma_boundary": self.dist_sigma_boundary,
            "iters": self.sweeps,
        }

    def __repr__(self) -> str:
        return f"ObstacleSolution(lambda={self.lam:.6g}, m={self.m:.6g}, coincidence_nodes={int(self.coincidence.sum())})"


class ObstacleProblem:
    """
    Projected SOR solver for one grid and applied field.

    The red-black sweep works on bounding-box arrays whose non-interior
    entries stay zero, which is exactly the homogeneous boundary data.
    """

    def __init__(self, grid: Grid, hex: float, logger: Optional[logging.Logger] = None):
        self.grid = grid
        self.hex = hex
        self.logger = logger or logging.getLogger(__name__)
        self.op = helmholtz(grid)
        self.xi_eps = xi_eps(grid, hex)
        # w_ε = (Δ-1)ξ_ε
        self.w_eps = -1.0 * apply_operator(self.op, self.xi_eps)
        self.w_integral = self.w_eps.integrate()
        self.xi_max = float(np.max(np.abs(self.xi_eps.values)))

        self._diag = grid.full_array(self.op.matrix.diagonal(), fill=1.0)
        self._inv_h2 = 1.0 / grid.spacing ** 2
        colors = (np.add.outer(np.arange(grid.shape[0]), np.arange(grid.shape[1])) % 2).astype(bool)
        self._colors = [grid.interior_mask & ~colors, grid.interior_mask & colors]

    def obstacle(self, lam: float, m: float) -> np.ndarray:
        return -lam * self.xi_eps.values - m

    def _residual(self, phi: np.ndarray) -> np.ndarray:
        """-(Aφ) on the bounding box."""
        neighbors = np.zeros_like(phi)
        neighbors[1:, :] += phi[:-1, :]
        neighbors[:-1, :] += phi[1:, :]
        neighbors[:, 1:] += phi[:, :-1]
        neighbors[:, :-1] += phi[:, 1:]
        return self._inv_h2 * neighbors - self._diag * phi

    def _sweep(self, lam: float, m: float, phi0: Optional[np.ndarray]):
        grid = self.grid
        psi = grid.full_array(self.obstacle(lam, m))
        phi = grid.full_array(np.maximum(phi0, self.obstacle(lam, m))) if phi0 is not None else np.maximum(psi, 0.0)
        phi[~grid.interior_mask] = 0.0

        for sweep in range(1, MAX_SWEEPS + 1):
            change = 0.0
            for color in self._colors:
                trial = phi + RELAXATION * self._residual(phi) / self._diag
                updated = np.maximum(psi, trial)
                change = max(change, float(np.max(np.abs(updated[color] - phi[color]), initial=0.0)))
                phi[color] = updated[color]
            if change <= UPDATE_TOL:
                self.logger.debug(f"PSOR converged at lambda={lam:.6g}, m={m:.6g} after {sweep} sweeps")
                return phi[grid.ix, grid.iy].copy(), sweep

        raise NumericError(
            f"Projected SOR did not converge for lambda={lam}, m={m}", residual=change, iterations=MAX_SWEEPS
        )

    def solve(self, lam: float, m: float, phi0: Optional[np.ndarray] = None) -> ObstacleSolution:
        if lam <= 0.0 or m < 0.0:
            raise PreconditionError(f"The obstacle problem needs lambda > 0 and m >= 0, got lambda={lam}, m={m}")

        psi = self.obstacle(lam, m)
        phi, sweeps = self._sweep(lam, m, phi0)
        phi_field = ScalarField(self.grid, phi)
        zeta = lam * self.xi_eps + phi_field
        mask = phi - psi <= MASK_TOL * (1.0 + abs(m))
        density = self.op.matrix @ phi
        mu = ScalarField(self.grid, np.where(mask, np.maximum(density, 0.0), 0.0))
        return ObstacleSolution(lam, m, phi_field, zeta, mask, mu, self.w_eps, psi, self.hex, sweeps)

    def f_at_zero(self, lam: float) -> float:
        """f(λ, 0) = λ∫w_ε, where the obstacle itself is the solution."""
        return lam * self.w_integral

    def solve_m(self, lam: float) -> ObstacleSolution:
        """Bisection on m for unit multiplier mass, warm-started from the last φ."""
        f0 = self.f_at_zero(lam)
        if f0 <= 1.0:
            bound = 1.0 / self.w_integral
            raise PreconditionError(
                f"lambda = {lam} is too small: f(lambda, 0) = {f0:.6f} <= 1; "
                f"need lambda > (|Ω| - hex^(-1/4))^(-1), here lambda > {bound:.6f}"
            )

        lo, hi = 0.0, lam * self.xi_max
        phi0 = None
        best: Optional[ObstacleSolution] = None
        for iteration in range(1, BISECTION_ITERS + 1):
            mid = 0.5 * (lo + hi)
            solution = self.solve(lam, mid, phi0)
            f = f_value(solution)
            phi0 = solution.phi.values
            self.logger.debug(f"m bisection {iteration}: m={mid:.8g}, f={f:.8f}")
            if best is None or abs(f - 1.0) < abs(f_value(best) - 1.0):
                best = solution
            if abs(f - 1.0) <= MASS_TOL:
                self.logger.info(f"m({lam:.6g}) = {mid:.6g} after {iteration} bisection steps")
                return solution
            if f > 1.0:
                lo = mid
            else:
                hi = mid

        raise NumericError(
            f"Bisection for m(lambda) did not reach unit mass at lambda={lam}",
            residual=abs(f_value(best) - 1.0),
            iterations=BISECTION_ITERS,
        )


def obstacle_problem(grid: Grid, hex: float) -> ObstacleProblem:
    return grid.derived(f"obstacle:{hex!r}", lambda: ObstacleProblem(grid, hex))


def solve_obstacle(grid: Grid, hex: float, lam: float, m: float, phi0: Optional[np.ndarray] = None) -> ObstacleSolution:
    return obstacle_problem(grid, hex).solve(lam, m, phi0)


def f_value(solution: ObstacleSolution) -> float:
    """Total mass ∫(-Δ+1)φ of the multiplier."""
    return solution.mu.integrate()


def solve_m(grid: Grid, hex: float, lam: float) -> ObstacleSolution:
    return obstacle_problem(grid, hex).solve_m(lam)


def lambda_window(hex: float, area: float) -> float:
    """Lower bound (|Ω| - hex^(-1/4))^(-1) for admissible λ."""
    return 1.0 / (area - hex ** -0.25)


def barrier_profile(s: np.ndarray, delta: float, m: float) -> np.ndarray:
    """f_{δ,m}(s) = -2ms/δ + ms²/δ² for s <= δ and -m beyond."""
    s = np.asarray(s, dtype=float)
    return np.where(s <= delta, -2.0 * m * s / delta + m * s * s / (delta * delta), -m)


def barrier_eta(grid: Grid, delta: float, m: float) -> ScalarField:
    """η_{δ,m} = f_{δ,m} ∘ d at the interior nodes."""
    if not 0.0 < delta < grid.spec.d0:
        logger.warning(f"Barrier width {delta} lies outside (0, d0 = {grid.spec.d0}) where d is smooth")
    return ScalarField(grid, barrier_profile(grid.node_distance, delta, m))


def check_barriers(solution: ObstacleSolution, tolerance: float = 1.0e-3) -> Dict[str, Any]:
    """
    Coincidence-set sandwich between the barrier widths √(m/λ) and 2√(m/λ).

    Counts coincidence nodes closer than √(m/λ) - h to the boundary and
    non-coincidence nodes farther than 2√(m/λ) + h; also reports how far ζ
    leaves the band between the two barrier functions.
    """
    grid = solution.grid
    h = grid.spacing
    d = grid.node_distance
    if solution.m == 0.0:
        return {"pass": True, "inner_violations": 0, "outer_violations": 0,
                "delta_lower": 0.0, "delta_upper": 0.0, "barrier_excess": 0.0}

    delta = math.sqrt(solution.m / solution.lam)
    mask = solution.coincidence
    inner = int(np.sum(mask & (d < delta - h)))
    outer = int(np.sum(~mask & (d >= 2.0 * delta + h)))

    zeta = solution.zeta.values
    lower = barrier_profile(d, delta, solution.m)
    upper = barrier_profile(d, 2.0 * delta, solution.m)
    excess = float(max(np.max(lower - zeta), np.max(zeta - upper), 0.0))
    return {
        "pass": inner == 0 and outer == 0,
        "inner_violations": inner,
        "outer_violations": outer,
        "delta_lower": delta,
        "delta_upper": 2.0 * delta,
        "barrier_excess": excess,
        "comparison_pass": excess <= tolerance,
    }


def check_linear_containment(solution: ObstacleSolution) -> float:
    """Smallest c₄ with ζ_λ(x) >= -c₄ d(x) at every node."""
    d = solution.grid.node_distance
    return float(np.max(-solution.zeta.values / d))


def check_lower_bound(solution: ObstacleSolution) -> float:
    """
    Smallest c₃ with ζ_λ >= -2√(c₃λ)(|Ω| - 1/λ) d + λd² at every node.
    """
    grid = solution.grid
    lam = solution.lam
    gap = grid.spec.area - 1.0 / lam
    if gap <= 0.0:
        raise PreconditionError(f"The lower bound needs lambda > 1/|Ω|, got lambda={lam}")
    d = grid.node_distance
    need = (lam * d * d - solution.zeta.values) / (2.0 * gap * d)
    need = np.maximum(need, 0.0)
    return float(np.max(need) ** 2 / lam)


def fit_theta0(solutions: Iterable[ObstacleSolution]) -> float:
    """Largest θ₀ with m(λ) >= θ₀λ over the given solutions."""
    return float(min(s.m / s.lam for s in solutions))


def sweep_rows(solutions: List[ObstacleSolution]) -> List[Dict[str, Any]]:
    return [solution.to_row() for solution in solutions]
