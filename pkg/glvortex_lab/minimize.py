"""
Multistart descent for the renormalized energy and diagnostics of the minimizers.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional, Sequence, TypedDict

import numpy as np
from scipy.interpolate import BSpline

from .elliptic import ScalarField
from .errors import NumericError, PreconditionError
from .geometry import Grid, distance_array, distance_gradient
from .greens import green_G
from .obstacle import ObstacleSolution, solve_m
from .renorm import ParamRegime, RenormFields, VortexConfig, energy_and_gradient

logger = logging.getLogger(__name__)

ARMIJO_C = 1.0e-4
MAX_HALVINGS = 40
GRADIENT_TOL = 1.0e-3
TEST_FUNCTIONS_X = 5
TEST_FUNCTIONS_Y = 4


class MinimizeOptions(TypedDict, total=False):
    """Options of minimize_H."""
    starts: int  # Number of independent starts
    t0: float  # Near-minimizer tolerance
    seed: int  # Master seed; per-start streams are spawned from it
    max_iters: int  # Iteration cap per start
    constrained: bool  # Minimize H over {d >= hex^(-1/3)} instead of H_mod over the whole domain
    jobs: int  # Worker threads for the starts


DEFAULT_OPTIONS: MinimizeOptions = {
    "starts": 8,
    "t0": 0.01,
    "seed": 0,
    "max_iters": 2000,
    "constrained": False,
    "jobs": 1,
}


class StartResult:
    """Outcome of a single descent run."""

    def __init__(self, index: int, config: VortexConfig, energy: float, iterations: int, converged: bool,
                 grad_norm: float):
        self.index = index
        self.config = config
        self.energy = energy
        self.iterations = iterations
        self.converged = converged
        self.grad_norm = grad_norm

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "energy": self.energy,
            "iterations": self.iterations,
            "converged": self.converged,
            "grad_norm": self.grad_norm,
            "points": self.config.points.tolist(),
        }


class MinimizeReport:
    """Best configuration over all starts with its geometric diagnostics."""

    def __init__(self, hex: float, best: VortexConfig, energy: float, starts: List[StartResult], grid: Grid,
                 t0: float, constrained: bool = False, runtime_s: float = 0.0):
        self.hex = hex
        self.best = best
        self.energy = energy
        self.start_results = starts
        self.grid = grid
        self.t0 = t0
        self.constrained = constrained
        self.runtime_s = runtime_s
        self.min_boundary_dist = float(np.min(distance_array(grid.spec, best.points)))
        self.min_separation = best.min_separation()
        converged = [s for s in starts if s.converged]
        self.converged = bool(converged)
        # Spread of the converged start energies above the best one
        self.t0_margin = max((s.energy - energy for s in converged), default=0.0)

    @property
    def N(self) -> int:
        return self.best.N

    @property
    def starts(self) -> int:
        return len(self.start_results)

    @property
    def iterations(self) -> List[int]:
        return [s.iterations for s in self.start_results]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "hex": self.hex,
            "N": self.N,
            "energy": self.energy,
            "min_boundary_dist": self.min_boundary_dist,
            "min_separation": self.min_separation,
            "converged": self.converged,
            "t0_margin": self.t0_margin,
            "best": self.best.to_dict(),
            "starts": [s.to_dict() for s in self.start_results],
        }

    def __repr__(self) -> str:
        return f"MinimizeReport(hex={self.hex}, N={self.N}, energy={self.energy:.6f}, converged={self.converged})"


def _inside(grid: Grid, points: np.ndarray, margin: float) -> bool:
    return bool(np.all(distance_array(grid.spec, points) > margin))


def _separated(points: np.ndarray, minimum: float) -> bool:
    if len(points) < 2:
        return True
    diff = points[:, None, :] - points[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    np.fill_diagonal(dist, np.inf)
    return bool(dist.min() >= minimum)


def _pull_back(grid: Grid, points: np.ndarray, threshold: float) -> np.ndarray:
    """Move points with d < threshold back along the inward normal onto {d = threshold}."""
    out = points.copy()
    for _ in range(3):
        d = distance_array(grid.spec, out)
        low = d < threshold
        if not np.any(low):
            break
        out[low] += (threshold - d[low])[:, None] * distance_gradient(grid.spec, out[low])
    return out


def _projected_gradient(grid: Grid, points: np.ndarray, grad: np.ndarray, threshold: float) -> np.ndarray:
    """Drop the normal component that would push points on the threshold further out."""
    d = distance_array(grid.spec, points)
    normal = distance_gradient(grid.spec, points)
    push = np.sum(grad * normal, axis=1)
    active = (d <= threshold * (1.0 + 1.0e-9)) & (push > 0.0)
    out = grad.copy()
    out[active] -= push[active, None] * normal[active]
    return out


def sample_initial(grid: Grid, N: int, hex: float, rng: np.random.Generator,
                   equilibrium: Optional[ObstacleSolution] = None) -> np.ndarray:
    """
    Starting points drawn from the equilibrium density, jittered inside their cells.

    Falls back to uniform sampling over {d >= hex^(-1/3)} without a usable density.
    """
    h = grid.spacing
    threshold = hex ** (-1.0 / 3.0)
    weights = None
    if equilibrium is not None:
        weights = grid.node_areas * equilibrium.mu.values
        weights = weights if weights.sum() > 0.0 else None

    points: List[np.ndarray] = []
    attempts = 0
    while len(points) < N:
        attempts += 1
        if attempts > 1000 * max(N, 1):
            raise NumericError(f"Could not place {N} separated starting points")
        if weights is not None:
            k = rng.choice(grid.node_count, p=weights / weights.sum())
            p = grid.nodes[k] + rng.uniform(-0.5 * h, 0.5 * h, size=2)
            margin = 2.0 * h
        else:
            a, b = grid.spec.semi_axes
            p = rng.uniform([-a, -b], [a, b])
            margin = threshold
        if distance_array(grid.spec, p.reshape(1, 2))[0] <= margin:
            continue
        if points and np.min(np.hypot(*(np.array(points) - p).T)) < 2.0 * h:
            continue
        points.append(p)
    return np.array(points).reshape(-1, 2)


def descend(
    grid: Grid,
    fields: RenormFields,
    hex: float,
    start: np.ndarray,
    max_iters: int = 2000,
    constrained: bool = False,
    index: int = 0,
) -> StartResult:
    """
    Barzilai-Borwein steps with Armijo backtracking from one starting configuration.

    Steps that leave the domain or bring two points closer than two grid cells
    are halved. In the constrained variant points are pulled back onto
    {d = hex^(-1/3)} and the energy is H instead of H_mod.
    """
    h = grid.spacing
    threshold = hex ** (-1.0 / 3.0)
    modified = not constrained
    points = _pull_back(grid, start, threshold) if constrained else start.copy()
    energy, grad = energy_and_gradient(VortexConfig(points), hex, fields, modified=modified)
    tolerance = GRADIENT_TOL * (1.0 + abs(energy)) / grid.spec.diameter

    prev_points, prev_grad = None, None
    converged = False
    iteration = 0
    for iteration in range(1, max_iters + 1):
        direction = _projected_gradient(grid, points, grad, threshold) if constrained else grad
        norm = float(np.max(np.abs(direction)))
        tolerance = GRADIENT_TOL * (1.0 + abs(energy)) / grid.spec.diameter
        if norm <= tolerance:
            converged = True
            break

        if prev_points is None:
            step = h / max(norm, 1.0e-300)
        else:
            s = (points - prev_points).ravel()
            y = (grad - prev_grad).ravel()
            sy = float(np.dot(s, y))
            step = float(np.dot(s, s)) / sy if sy > 0.0 else h / norm
        # Never move a point by more than a few cells in one step
        step = min(step, 4.0 * h / norm)

        accepted = False
        for _ in range(MAX_HALVINGS):
            trial = points - step * direction
            if constrained:
                trial = _pull_back(grid, trial, threshold)
            if not _inside(grid, trial, 0.0) or not _separated(trial, 2.0 * h):
                step *= 0.5
                continue
            trial_energy, trial_grad = energy_and_gradient(VortexConfig(trial), hex, fields, modified=modified)
            decrease = float(np.sum((points - trial) * direction))
            if trial_energy <= energy - ARMIJO_C * decrease:
                accepted = True
                break
            step *= 0.5

        if not accepted:
            logger.debug(f"Start {index}: line search stalled at iteration {iteration}")
            break
        if trial_energy > energy:
            raise NumericError(f"Descent increased the energy at iteration {iteration}")

        prev_points, prev_grad = points, grad
        points, energy, grad = trial, trial_energy, trial_grad

    direction = _projected_gradient(grid, points, grad, threshold) if constrained else grad
    grad_norm = float(np.max(np.abs(direction))) if len(points) else 0.0
    converged = converged or grad_norm <= tolerance
    logger.debug(f"Start {index}: energy {energy:.8f} after {iteration} iterations (converged={converged})")
    return StartResult(index, VortexConfig(points), energy, iteration, converged, grad_norm)


def minimize_H(grid: Grid, hex: float, N: int, options: Optional[MinimizeOptions] = None,
               fields: Optional[RenormFields] = None, equilibrium: Optional[ObstacleSolution] = None) -> MinimizeReport:
    """
    Multistart minimization of H_mod over the domain (or of H over {d >= hex^(-1/3)}).

    Args:
        grid: Discretization of the domain
        hex: Applied field
        N: Number of vortices, within the admissible window
        options: Starts, t₀, seed, iteration cap, variant and worker count
        fields: Precomputed energy ingredients (built when omitted)
        equilibrium: Obstacle solution at λ = hex/(2πN) used to draw starting points

    Returns:
        Report on the lowest-energy converged start
    """
    opts: MinimizeOptions = {**DEFAULT_OPTIONS, **(options or {})}
    ParamRegime(hex, N, grid.spec.area).check_n_window()
    began = time.perf_counter()
    fields = fields or RenormFields(grid)

    if equilibrium is None:
        try:
            equilibrium = solve_m(grid, hex, hex / (2.0 * math.pi * N))
        except (PreconditionError, NumericError) as e:
            logger.warning(f"No equilibrium measure for initialization ({e}); sampling uniformly")

    streams = np.random.SeedSequence(opts["seed"]).spawn(opts["starts"])
    starts = [sample_initial(grid, N, hex, np.random.default_rng(s), equilibrium) for s in streams]

    def run(index: int) -> StartResult:
        return descend(grid, fields, hex, starts[index], opts["max_iters"], opts["constrained"], index)

    if opts["jobs"] > 1:
        with ThreadPoolExecutor(max_workers=opts["jobs"]) as pool:
            results = list(pool.map(run, range(len(starts))))
    else:
        results = [run(k) for k in range(len(starts))]

    converged = [r for r in results if r.converged]
    if not converged:
        raise NumericError(f"No start converged for hex={hex}, N={N}", iterations=opts["max_iters"])
    best = min(converged, key=lambda r: r.energy)
    runtime = time.perf_counter() - began
    logger.info(f"hex={hex}, N={N}: best energy {best.energy:.6f} ({len(converged)}/{len(results)} starts converged)")
    return MinimizeReport(hex, best.config, best.energy, results, grid, opts["t0"], opts["constrained"], runtime)


def check_separation(report: MinimizeReport, hex: float, c0_floor: float = 0.0, c1_floor: float = 0.0) -> Dict[str, Any]:
    """Rescaled boundary distance c0_hat = min d · hex^(1/4) and separation c1_hat = min |aᵢ-aⱼ| · hex^(1/2)."""
    c0_hat = report.min_boundary_dist * hex ** 0.25
    c1_hat = report.min_separation * math.sqrt(hex)
    return {"c0_hat": c0_hat, "c1_hat": c1_hat, "pass": c0_hat >= c0_floor and c1_hat >= c1_floor}


def spline_dictionary(grid: Grid):
    """Tensor cubic B-splines over the bounding rectangle of the domain (5 x 4 functions)."""
    a, b = grid.spec.semi_axes

    def basis(half: float, count: int) -> List[BSpline]:
        knots = np.linspace(-half, half, count + 4)
        return [BSpline.basis_element(knots[k:k + 5], extrapolate=False) for k in range(count)]

    bx, by = basis(a, TEST_FUNCTIONS_X), basis(b, TEST_FUNCTIONS_Y)

    def evaluate(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        vx = np.nan_to_num(np.array([f(pts[:, 0]) for f in bx]))
        vy = np.nan_to_num(np.array([f(pts[:, 1]) for f in by]))
        return (vx[:, None, :] * vy[None, :, :]).reshape(-1, len(pts))

    return evaluate


def _in_coincidence(grid: Grid, mask: np.ndarray, points: np.ndarray) -> List[bool]:
    """Whether the grid node nearest to each point belongs to the coincidence set."""
    i = np.rint((points[:, 0] - grid.xs[0]) / grid.spacing).astype(np.int64)
    j = np.rint((points[:, 1] - grid.ys[0]) / grid.spacing).astype(np.int64)
    flat = grid.index[i, j]
    return [bool(k >= 0 and mask[k]) for k in flat]


def measure_discrepancy(grid: Grid, points: np.ndarray, density: ScalarField) -> float:
    """max_g |(1/N)Σ g(aᵢ) - ∫g dμ| over the test-function dictionary."""
    evaluate = spline_dictionary(grid)
    empirical = evaluate(points).mean(axis=1)
    weights = grid.node_areas * density.values
    equilibrium = evaluate(grid.nodes) @ (weights / weights.sum())
    return float(np.max(np.abs(empirical - equilibrium)))


def empirical_vs_equilibrium(report: MinimizeReport, hex: float,
                             equilibrium: Optional[ObstacleSolution] = None) -> Dict[str, Any]:
    """Test-function discrepancy between the minimizer's empirical measure and μ_λ, λ = hex/(2πN)."""
    grid = report.grid
    lam = hex / (2.0 * math.pi * report.N)
    equilibrium = equilibrium or solve_m(grid, hex, lam)
    inside = _in_coincidence(grid, equilibrium.coincidence, report.best.points)
    return {
        "lambda": lam,
        "discrepancy": measure_discrepancy(grid, report.best.points, equilibrium.mu),
        "in_coincidence": inside,
    }


def screened_potential(report: MinimizeReport, hex: float, i: int,
                       equilibrium: Optional[ObstacleSolution] = None,
                       greens: Optional[Sequence[ScalarField]] = None) -> Dict[str, Any]:
    """
    U(x) = -φ_λ(x) + (1/N)Σ_{j≠i} G(x,aⱼ) and the gap ζ_λ(aᵢ) - min ζ_λ.

    `greens` holds G(·,aⱼ) for every point when several i share one configuration.
    """
    grid = report.grid
    N = report.N
    points = report.best.points
    lam = hex / (2.0 * math.pi * N)
    equilibrium = equilibrium or solve_m(grid, hex, lam)

    if greens is None:
        greens = [green_G(grid, points[j]).G for j in range(N)]
    U = -1.0 * equilibrium.phi
    for j in range(N):
        if j != i:
            U = U + greens[j] * (1.0 / N)

    zeta = equilibrium.zeta
    gap = float(zeta.sample(points[i].reshape(1, 2))[0] - zeta.min())
    bound = report.t0 / (4.0 * math.pi ** 2 * N)
    grad_zeta = float(np.max(np.linalg.norm(zeta.gradient(), axis=1)))
    slack = 5.0 * grid.spacing * grad_zeta
    return {
        "U": U,
        "gap": gap,
        "bound": bound,
        "slack": slack,
        "gap_pass": gap <= bound + slack,
        "inf_U": U.min(),
        "inf_U_negative": U.min() < 0.0,
    }


def equilibrium_diagnostics(report: MinimizeReport, hex: float,
                            equilibrium: Optional[ObstacleSolution] = None) -> Dict[str, Any]:
    """
    Compare a minimizer with the equilibrium measure at λ = hex/(2πN).

    Returns the test-function discrepancy, the fraction of points on the
    coincidence set, and the screened-potential checks over every point:
    the worst gap against its bound and the largest inf U.
    """
    grid = report.grid
    N = report.N
    equilibrium = equilibrium or solve_m(grid, hex, hex / (2.0 * math.pi * N))
    comparison = empirical_vs_equilibrium(report, hex, equilibrium)
    greens = [green_G(grid, p).G for p in report.best.points]
    potentials = [screened_potential(report, hex, i, equilibrium, greens) for i in range(N)]
    return {
        "lambda": comparison["lambda"],
        "discrepancy": comparison["discrepancy"],
        "in_coincidence_fraction": float(np.mean(comparison["in_coincidence"])),
        "gap_max": max(p["gap"] for p in potentials),
        "gap_bound": potentials[0]["bound"] + potentials[0]["slack"],
        "gap_pass": all(p["gap_pass"] for p in potentials),
        "inf_U": max(p["inf_U"] for p in potentials),
        "inf_U_negative": all(p["inf_U_negative"] for p in potentials),
    }


def discrepancy_trend(values: Sequence[float], inversion_tol: float = 0.1) -> bool:
    """True when the values decrease, allowing a single increase of at most inversion_tol relative."""
    rises = [(a, b) for a, b in zip(values, values[1:]) if b > a]
    if len(rises) > 1:
        return False
    return all(b <= a * (1.0 + inversion_tol) for a, b in rises)
