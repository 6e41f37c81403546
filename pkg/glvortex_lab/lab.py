"""
VortexLab - experiment orchestration for the vortex lab.

Holds the run configuration, the cache of base fields under
GLVORTEX_CACHE_DIR and the registry of past run manifests, and dispatches
sweep points to worker processes.
"""

import asyncio
import functools
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypedDict, Union

import numpy as np
import pandas as pd

from . import __version__
from .coupling import check_WH_identity
from .elliptic import F_energy, ScalarField, meissner_energy, xi0
from .errors import ConfigurationError, PreconditionError
from .geometry import DomainSpec, Grid, build_grid
from .glfield import estimate_gamma
from .greens import s_diag
from .minimize import MinimizeOptions, check_separation, discrepancy_trend, equilibrium_diagnostics, minimize_H
from .obstacle import check_barriers, lambda_window, solve_m
from .output import convergence_rates, fit_slope, svg_heatmap, svg_scatter, write_csv, write_json, write_svg
from .renorm import ParamRegime, RenormFields, VortexConfig, fit_vep_constant, rho, v_eps


class LabConfig(TypedDict, total=False):
    """Keys accepted in a run configuration file."""
    domain: Dict[str, Any]  # DomainSpec JSON, e.g. {"kind": "disk", "radius": 1.0}
    resolution: Union[int, List[int]]  # Nodes per unit length; a list for convergence studies
    hex: List[float]  # Applied fields
    lambdas: List[float]  # Explicit λ values for the obstacle study
    N_rule: str  # "max", "fixed:<k>" or "fraction:<q>"
    seed: int
    starts: int
    t0: float
    max_iters: int
    eps: List[float]
    jobs: int
    output_dir: str


DEFAULT_CONFIG: LabConfig = {
    "domain": {"kind": "disk", "radius": 1.0},
    "resolution": 64,
    "hex": [25.0],
    "lambdas": [],
    "N_rule": "max",
    "seed": 0,
    "starts": 8,
    "t0": 0.01,
    "max_iters": 2000,
    "eps": [0.05],
    "jobs": 1,
    "output_dir": "glvortex_out",
}

# Smallest ρ_a of randomly drawn identity configurations
IDENTITY_RHO_MIN = 0.1
IDENTITY_MAX_N = 4
GAMMA_POINTS = 3
# Largest ratio max/min of c0_hat along a field sweep
C0_SPREAD_MAX = 3.0
# N_max is divided by these for the equilibrium comparison at the strongest field
N_DIVISORS = (4, 2, 1)
MINIMIZE_COLUMNS = (
    "hex", "N", "energy", "min_boundary_dist", "min_separation", "c0_hat", "c1_hat", "discrepancy", "runtime_s",
    "c0_floor", "c1_floor", "pass", "in_coincidence_fraction", "gap_max", "gap_bound", "gap_pass", "inf_U",
    "inf_U_negative", "converged", "t0_margin",
)
RANDOM_CONFIG_TRIES = 10000


def validate_config(data: Dict[str, Any]) -> LabConfig:
    """Check keys and value types of a configuration dictionary and fill defaults."""
    unknown = sorted(set(data) - set(DEFAULT_CONFIG))
    if unknown:
        raise ConfigurationError(f"Unknown configuration keys: {', '.join(unknown)}")
    config: LabConfig = {**DEFAULT_CONFIG, **data}
    try:
        DomainSpec.from_dict(config["domain"])
        res = config["resolution"]
        config["resolution"] = [int(r) for r in res] if isinstance(res, (list, tuple)) else int(res)
        config["hex"] = [float(h) for h in _as_list(config["hex"])]
        config["lambdas"] = [float(v) for v in _as_list(config["lambdas"])]
        config["eps"] = [float(e) for e in _as_list(config["eps"])]
        for key in ("seed", "starts", "max_iters", "jobs"):
            config[key] = int(config[key])
        config["t0"] = float(config["t0"])
        config["output_dir"] = str(config["output_dir"])
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid configuration value: {e}") from e
    if config["jobs"] < 1 or config["starts"] < 1:
        raise ConfigurationError("jobs and starts must be positive")
    parse_n_rule(config["N_rule"])
    return config


def _as_list(value) -> List[Any]:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def parse_n_rule(rule: str) -> Tuple[str, float]:
    """Split an N rule into its kind and argument."""
    kind, _, arg = str(rule).partition(":")
    if kind == "max" and not arg:
        return kind, 0.0
    if kind in ("fixed", "fraction") and arg:
        try:
            return kind, float(arg)
        except ValueError:
            pass
    raise ConfigurationError(f"Invalid N rule {rule!r}; expected 'max', 'fixed:<k>' or 'fraction:<q>'")


def resolve_N(rule: str, hex: float, area: float) -> int:
    kind, arg = parse_n_rule(rule)
    n_max = ParamRegime.n_max(hex, area)
    if kind == "max":
        return n_max
    if kind == "fixed":
        return int(arg)
    return max(1, int(math.floor(arg * n_max)))


def random_config(spec: DomainSpec, N: int, rho_min: float, rng: np.random.Generator) -> VortexConfig:
    """Uniform rejection sample of N points with ρ_a >= rho_min."""
    a, b = spec.semi_axes
    for _ in range(RANDOM_CONFIG_TRIES):
        points = rng.uniform((-a, -b), (a, b), size=(N, 2))
        config = VortexConfig(points)
        if np.all(spec.contains(points)) and rho(config, spec) >= rho_min:
            return config
    raise ConfigurationError(f"Could not place {N} points with rho_a >= {rho_min} in {spec!r}")


def boundary_outline(spec: DomainSpec, count: int = 180) -> np.ndarray:
    t = np.linspace(0.0, 2.0 * math.pi, count, endpoint=False)
    a, b = spec.semi_axes
    return np.column_stack([a * np.cos(t), b * np.sin(t)])


class RunManifest:
    """Everything needed to reproduce one command invocation."""

    def __init__(
        self,
        command: str,
        config: LabConfig,
        outputs: Optional[List[str]] = None,
        version: str = __version__,
        started: Optional[float] = None,
        wall_clock_s: float = 0.0,
    ):
        self.command = command
        self.config = config
        self.outputs = outputs or []
        self.version = version
        self.started = started or time.time()
        self.wall_clock_s = wall_clock_s

    @property
    def run_id(self) -> str:
        return config_hash_of({"command": self.command, "config": self.config})

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary for serialization."""
        return {
            "command": self.command,
            "config": dict(self.config),
            "outputs": list(self.outputs),
            "version": self.version,
            "started": self.started,
            "wall_clock_s": self.wall_clock_s,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        """Create from dictionary after deserialization."""
        return cls(
            command=data["command"],
            config=validate_config(data.get("config", {})),
            outputs=data.get("outputs", []),
            version=data.get("version", __version__),
            started=data.get("started"),
            wall_clock_s=data.get("wall_clock_s", 0.0),
        )


def config_hash_of(data: Dict[str, Any]) -> str:
    return hashlib.md5(json.dumps(data, sort_keys=True).encode()).hexdigest()


@functools.lru_cache(maxsize=4)
def _worker_grid(domain_json: str, resolution: int) -> Grid:
    """One grid per (domain, resolution) and process, so factorizations are reused across sweep points."""
    return build_grid(DomainSpec.from_dict(json.loads(domain_json)), resolution)


def obstacle_point(domain_json: str, resolution: int, hex: float, lam: float, N: Optional[int] = None):
    """Solve for m(λ) and check the barrier sandwich; returns the table row and ζ on the box."""
    grid = _worker_grid(domain_json, resolution)
    solution = solve_m(grid, hex, lam)
    barriers = check_barriers(solution)
    row = {"hex": hex, "N": N, **solution.to_row(), "gap": grid.spec.area - 1.0 / lam}
    row.update({k: barriers[k] for k in ("inner_violations", "outer_violations", "delta_lower", "delta_upper")})
    row["barrier_pass"] = barriers["pass"]
    return row, grid.full_array(solution.zeta.values, fill=np.nan)


def minimize_point(domain_json: str, resolution: int, hex: float, N: int, options: MinimizeOptions):
    """
    Minimize at one (hex, N) and compare the minimizer with the equilibrium measure.

    Returns the table row, the minimizing points and the coincidence-set nodes.
    """
    grid = _worker_grid(domain_json, resolution)
    equilibrium = solve_m(grid, hex, hex / (2.0 * math.pi * N))
    report = minimize_H(grid, hex, N, options, equilibrium=equilibrium)
    separation = check_separation(report, hex)
    diagnostics = equilibrium_diagnostics(report, hex, equilibrium)
    row = {
        "hex": hex,
        "N": N,
        "energy": report.energy,
        "min_boundary_dist": report.min_boundary_dist,
        "min_separation": report.min_separation,
        "c0_hat": separation["c0_hat"],
        "c1_hat": separation["c1_hat"],
        "discrepancy": diagnostics["discrepancy"],
        "runtime_s": report.runtime_s,
        "in_coincidence_fraction": diagnostics["in_coincidence_fraction"],
        "gap_max": diagnostics["gap_max"],
        "gap_bound": diagnostics["gap_bound"],
        "gap_pass": diagnostics["gap_pass"],
        "inf_U": diagnostics["inf_U"],
        "inf_U_negative": diagnostics["inf_U_negative"],
        "converged": report.converged,
        "t0_margin": report.t0_margin,
    }
    return row, report.best.points, grid.nodes[equilibrium.coincidence]


def identity_point(domain_json: str, resolution: int, points: List[List[float]], hex: float) -> Dict[str, Any]:
    grid = _worker_grid(domain_json, resolution)
    report = check_WH_identity(grid, VortexConfig(points), hex, RenormFields(grid))
    row = report.to_row()
    row["residual_reduction"] = report.reduction_residual
    return row


def gamma_point(domain_json: str, resolution: int, points: List[List[float]], eps: float) -> List[Dict[str, Any]]:
    grid = _worker_grid(domain_json, resolution)
    return estimate_gamma(grid, [VortexConfig(points)], [eps]).rows


class VortexLab:
    """
    Experiment driver shared by the command-line subcommands.

    Each study writes its CSV tables, an SVG and a manifest into the output
    directory and records the manifest in the registry.
    """

    DEFAULT_CACHE_DIR = Path.home() / ".glvortex"
    REGISTRY_FILE = "manifests.json"

    def __init__(
        self,
        config: Optional[Dict[str, Any]] = None,
        logger: Optional[logging.Logger] = None,
        cache_dir: Optional[Union[str, Path]] = None,
    ):
        """
        Initialize the lab.

        Args:
            config: Configuration dictionary (validated; defaults fill missing keys)
            logger: Optional logger to use
            cache_dir: Cache directory overriding GLVORTEX_CACHE_DIR
        """
        self.logger = logger or logging.getLogger("glvortex_lab")
        self.config = validate_config(config or {})
        self.spec = DomainSpec.from_dict(self.config["domain"])
        self.cache_dir = Path(cache_dir or os.environ.get("GLVORTEX_CACHE_DIR") or self.DEFAULT_CACHE_DIR)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.output_dir = Path(self.config["output_dir"])
        self._registry = self._load_registry()

    @classmethod
    def from_file(cls, path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None,
                  logger: Optional[logging.Logger] = None) -> "VortexLab":
        """Load a JSON config file; values in `overrides` win."""
        logger = logger or logging.getLogger("glvortex_lab")
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except (json.JSONDecodeError, IOError) as e:
            logger.error(f"Failed to load config file: {e}")
            raise ConfigurationError(f"Failed to load config file {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigurationError("The config file must contain a JSON object")
        return cls({**data, **(overrides or {})}, logger=logger)

    @property
    def domain_json(self) -> str:
        return json.dumps(self.spec.to_dict(), sort_keys=True)

    @property
    def resolutions(self) -> List[int]:
        res = self.config["resolution"]
        return list(res) if isinstance(res, list) else [res]

    @property
    def resolution(self) -> int:
        return self.resolutions[0]

    # Registry of manifests

    @property
    def registry_path(self) -> Path:
        return self.cache_dir / self.REGISTRY_FILE

    def _load_registry(self) -> Dict[str, Dict[str, Any]]:
        registry = {}
        if self.registry_path.exists():
            try:
                with open(self.registry_path, "r") as f:
                    registry = json.load(f)
                self.logger.debug(f"Loaded manifest registry with {len(registry)} entries")
            except Exception as e:
                self.logger.error(f"Error loading manifest registry: {e}")
        return registry

    def _save_registry(self) -> None:
        try:
            write_json(self.registry_path, self._registry)
        except Exception as e:
            self.logger.error(f"Error saving manifest registry: {e}")

    def list_runs(self) -> List[RunManifest]:
        return [RunManifest.from_dict(data) for data in self._registry.values()]

    # Cached base fields

    def _field_cache_path(self, grid: Grid) -> Path:
        return self.cache_dir / f"fields-{grid.key}.npz"

    def grid(self, resolution: Optional[int] = None) -> Grid:
        """Build a grid and seed its cache with stored ξ₀ and s when available."""
        grid = build_grid(self.spec, resolution or self.resolution)
        path = self._field_cache_path(grid)
        if path.exists():
            try:
                with np.load(path) as data:
                    for name in ("xi0", "s_diag"):
                        if name in data.files and data[name].shape == (grid.node_count,):
                            grid.derived(name, lambda values=data[name]: ScalarField(grid, values))
                self.logger.info(f"Loaded cached base fields for {grid!r}")
            except Exception as e:
                self.logger.warning(f"Ignoring unreadable field cache {path}: {e}")
        return grid

    def store_fields(self, grid: Grid) -> Path:
        path = self._field_cache_path(grid)
        arrays = {name: grid.cache[name].values for name in ("xi0", "s_diag") if name in grid.cache}
        tmp = path.with_name(f".{path.stem}.tmp.npz")
        np.savez(tmp, **arrays)
        os.replace(tmp, path)
        self.logger.debug(f"Stored {', '.join(arrays)} in {path}")
        return path

    # Sweep dispatch

    async def run_sweep(self, fn: Callable, arguments: Sequence[Tuple]) -> List[Any]:
        """Run `fn` over argument tuples; results come back in sweep order."""
        jobs = self.config["jobs"]
        if jobs <= 1 or len(arguments) <= 1:
            return [fn(*args) for args in arguments]
        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [loop.run_in_executor(pool, functools.partial(fn, *args)) for args in arguments]
            return list(await asyncio.gather(*futures))

    def _finish(self, command: str, started: float, outputs: List[Path]) -> RunManifest:
        manifest = RunManifest(command, self.config, started=started, wall_clock_s=time.time() - started)
        manifest_path = self.output_dir / f"{command}_manifest.json"
        manifest.outputs = [str(p) for p in outputs] + [str(manifest_path)]
        write_json(manifest_path, manifest.to_dict())
        self._registry[manifest.run_id] = manifest.to_dict()
        self._save_registry()
        self.logger.info(f"{command}: wrote {len(manifest.outputs)} files to {self.output_dir}")
        return manifest

    # Studies

    async def fields(self) -> RunManifest:
        """ξ₀, F(ξ₀), the diagonal s and v_ε for every listed field."""
        started = time.time()
        grid = self.grid()
        base = xi0(grid)
        diag = s_diag(grid)
        self.store_fields(grid)

        frame = base.to_frame().rename(columns={"value": "xi0"})
        frame["s_diag"] = diag.values
        for hex in self.config["hex"]:
            frame[f"v_eps_{hex:g}"] = v_eps(grid, hex).values

        center = np.zeros((1, 2))
        summary = [{
            "resolution": grid.resolution,
            "nodes": grid.node_count,
            "area": grid.area,
            "F_xi0": F_energy(base),
            "meissner_energy": meissner_energy(base),
            "xi0_min": base.min(),
            "xi0_center": float(base.sample(center)[0]) if self.spec.contains(center)[0] else math.nan,
            "s_center": float(diag.sample(center)[0]),
        }]
        # The log hex normalization vanishes at hex = 1
        fitted_hex = [hex for hex in self.config["hex"] if hex > 1.0]
        if fitted_hex:
            vep = fit_vep_constant(grid, fitted_hex)
            summary[0].update({"vep_C_max": vep["C_max"], "vep_C_ratio": vep["C_ratio"]})
            for row in vep["rows"]:
                summary[0][f"vep_residual_{row['hex']:g}"] = row["residual"]
            self.logger.info(f"v_eps constant C_max = {vep['C_max']:.4g}, ratio {vep['C_ratio']:.3f}")
        self.logger.info(f"F(xi0) = {summary[0]['F_xi0']:.8f} on {grid!r}")

        out = self.output_dir
        outputs = [
            write_csv(out / "fields.csv", frame),
            write_csv(out / "fields_summary.csv", summary),
            write_svg(out / "xi0.svg", svg_heatmap(grid.full_array(base.values), grid.bbox, grid.interior_mask, "xi0")),
        ]
        return self._finish("fields", started, outputs)

    def _obstacle_sweep(self) -> List[Tuple]:
        area = self.spec.area
        hex_values = self.config["hex"]
        if self.config["lambdas"]:
            hex = hex_values[0]
            points = [(hex, lam, None) for lam in self.config["lambdas"]]
        else:
            points = []
            for hex in hex_values:
                N = resolve_N(self.config["N_rule"], hex, area)
                ParamRegime(hex, N, area).check_n_window()
                points.append((hex, hex / (2.0 * math.pi * N), N))
        for hex, lam, _ in points:
            bound = lambda_window(hex, area)
            if lam <= bound:
                raise PreconditionError(
                    f"lambda = {lam} violates lambda > (|Ω| - hex^(-1/4))^(-1) = {bound:.6f} at hex = {hex}"
                )
        return [(self.domain_json, self.resolution, hex, lam, N) for hex, lam, N in points]

    async def obstacle(self) -> RunManifest:
        """m(λ), coincidence statistics and barrier checks along a λ sweep."""
        started = time.time()
        results = await self.run_sweep(obstacle_point, self._obstacle_sweep())
        rows = [row for row, _ in results]
        fit = fit_slope([r["gap"] for r in rows], [r["m_lambda"] for r in rows])
        fit_rows = [{"law": "m_lambda vs |Ω| - 1/lambda", **fit}]
        self.logger.info(f"m(lambda) log-log slope {fit['slope']:.3f} over {fit['points']} points")

        grid = _worker_grid(self.domain_json, self.resolution)
        out = self.output_dir
        outputs = [
            write_csv(out / "obstacle.csv", rows),
            write_csv(out / "obstacle_fit.csv", fit_rows),
            write_svg(out / "zeta.svg", svg_heatmap(results[-1][1], grid.bbox, grid.interior_mask, "zeta_lambda")),
        ]
        return self._finish("obstacle", started, outputs)

    async def minimize(self) -> RunManifest:
        """
        Minimizers along a field sweep, checked against the equilibrium measure.

        The separation constants are frozen at the smallest field; at every
        other field a row passes when c0_hat and c1_hat stay above those
        values less one grid cell in rescaled units (h·hex^(1/4) and
        h·hex^(1/2)). At the strongest field N also runs over N_max/4,
        N_max/2 and N_max to follow the discrepancy with N.
        """
        started = time.time()
        area = self.spec.area
        options: MinimizeOptions = {
            "starts": self.config["starts"],
            "t0": self.config["t0"],
            "seed": self.config["seed"],
            "max_iters": self.config["max_iters"],
        }
        arguments = []
        for hex in sorted(self.config["hex"]):
            N = resolve_N(self.config["N_rule"], hex, area)
            ParamRegime(hex, N, area).check_n_window()
            arguments.append((self.domain_json, self.resolution, hex, N, options))
        results = await self.run_sweep(minimize_point, arguments)
        rows = [row for row, _, _ in results]

        h = 1.0 / self.resolution
        c0_ref = rows[0]["c0_hat"]
        c1_ref = next((row["c1_hat"] for row in rows if math.isfinite(row["c1_hat"])), math.nan)
        frame = pd.DataFrame(rows)
        frame["c0_floor"] = c0_ref - h * frame["hex"] ** 0.25
        frame["c1_floor"] = (c1_ref - h * np.sqrt(frame["hex"])) if math.isfinite(c1_ref) else 0.0
        frame["pass"] = (frame["c0_hat"] >= frame["c0_floor"]) & (frame["c1_hat"] >= frame["c1_floor"])

        boundary_fit = fit_slope(frame["hex"], frame["min_boundary_dist"])
        separation_fit = fit_slope(frame["hex"], frame["min_separation"].replace(math.inf, np.nan))
        c0_spread = float(frame["c0_hat"].max() / frame["c0_hat"].min())
        fit_rows = [
            {"law": "min_boundary_dist vs hex", **boundary_fit},
            {"law": "min_separation vs hex", **separation_fit},
            {"law": "c0_hat max/min", "ratio": c0_spread, "pass": c0_spread <= C0_SPREAD_MAX},
        ]
        self.logger.info(
            f"Boundary distance slope {boundary_fit['slope']:.3f}, c0_hat spread {c0_spread:.3f}, "
            f"{int(frame['pass'].sum())}/{len(frame)} rows above the frozen floors"
        )

        strongest = arguments[-1][2]
        known = {row["N"]: row for row in rows if row["hex"] == strongest}
        trend_rows = await self._discrepancy_sweep(strongest, options, known)

        points = [
            {"hex": row["hex"], **p} for row, (_, pts, _) in zip(rows, results) for p in VortexConfig(pts).to_rows()
        ]
        _, best_points, coincidence = results[-1]
        svg = svg_scatter(best_points, _bbox(self.spec), boundary_outline(self.spec), f"hex = {rows[-1]['hex']:g}",
                          shaded=coincidence, cell=h)
        out = self.output_dir
        outputs = [
            write_csv(out / "minimize.csv", frame, MINIMIZE_COLUMNS),
            write_csv(out / "minimize_fit.csv", fit_rows),
            write_csv(out / "minimize_points.csv", points),
            write_csv(out / "minimize_equilibrium.csv", trend_rows),
            write_svg(out / "minimizer.svg", svg),
        ]
        return self._finish("minimize", started, outputs)

    async def _discrepancy_sweep(self, hex: float, options: MinimizeOptions,
                                 known: Optional[Dict[int, Dict[str, Any]]] = None) -> List[Dict[str, Any]]:
        """Discrepancy to the equilibrium measure along N ∈ {N_max/4, N_max/2, N_max} at one field."""
        n_max = ParamRegime.n_max(hex, self.spec.area)
        counts = sorted({max(1, n_max // k) for k in N_DIVISORS})
        known = dict(known or {})
        arguments = [(self.domain_json, self.resolution, hex, N, options) for N in counts if N not in known]
        for row, _, _ in await self.run_sweep(minimize_point, arguments):
            known[row["N"]] = row
        rows = [known[N] for N in counts]
        decreasing = discrepancy_trend([row["discrepancy"] for row in rows])
        self.logger.info(f"Discrepancy at hex = {hex:g} over N = {counts}: decreasing = {decreasing}")
        return [
            {key: row[key] for key in ("hex", "N", "energy", "discrepancy", "in_coincidence_fraction",
                                       "gap_pass", "inf_U_negative")} | {"decreasing": decreasing}
            for row in rows
        ]

    async def identities(self, count: int = 10) -> RunManifest:
        """B₁ and energy-identity residuals for random configurations along a resolution sweep."""
        started = time.time()
        rng = np.random.default_rng(self.config["seed"])
        configs = [
            random_config(self.spec, int(rng.integers(1, IDENTITY_MAX_N + 1)), IDENTITY_RHO_MIN, rng)
            for _ in range(count)
        ]
        hex = self.config["hex"][0]
        resolutions = sorted(self.resolutions)
        arguments = [
            (self.domain_json, res, config.points.tolist(), hex) for config in configs for res in resolutions
        ]
        rows = await self.run_sweep(identity_point, arguments)

        frame = pd.DataFrame(rows)
        for column in ("residual_B1", "residual_WH"):
            rate = f"rate_{column.split('_')[1]}"
            frame[rate] = math.nan
            for _, group in frame.groupby("config_hash", sort=False):
                frame.loc[group.index, rate] = convergence_rates(group[column].tolist(), group["resolution"].tolist())

        out = self.output_dir
        outputs = [write_csv(out / "identities.csv", frame)]
        return self._finish("identities", started, outputs)

    async def gamma(self, count: int = 5) -> RunManifest:
        """Core-energy constant from ansatz energies of random three-point configurations."""
        started = time.time()
        eps_values = self.config["eps"]
        h = 1.0 / self.resolution
        for eps in eps_values:
            if eps < 4.0 * h:
                raise PreconditionError(f"eps = {eps} needs eps >= 4h = {4.0 * h:.4g}; raise the resolution")
        hex = self.config["hex"][0]
        window = {eps: ParamRegime(hex, GAMMA_POINTS, self.spec.area, eps).hex_window_ok() for eps in eps_values}
        for eps, ok in window.items():
            if not ok:
                self.logger.warning(f"hex = {hex:g} lies outside 1 <= hex <= eps^(-1/4) at eps = {eps:g}")
        rng = np.random.default_rng(self.config["seed"])
        configs = [random_config(self.spec, GAMMA_POINTS, 8.0 * max(eps_values), rng) for _ in range(count)]
        arguments = [(self.domain_json, self.resolution, c.points.tolist(), eps) for c in configs for eps in eps_values]
        rows = [row for batch in await self.run_sweep(gamma_point, arguments) for row in batch]

        frame = pd.DataFrame(rows)
        summary = [{"eps": "all", "gamma_hat": frame.gamma_sample.mean(),
                    "spread": frame.gamma_sample.max() - frame.gamma_sample.min(), "samples": len(frame),
                    "hex_window_ok": all(window.values())}]
        for eps, group in frame.groupby("eps", sort=True):
            summary.append({"eps": eps, "gamma_hat": group.gamma_sample.mean(),
                            "spread": group.gamma_sample.max() - group.gamma_sample.min(), "samples": len(group),
                            "hex_window_ok": window[eps]})
        self.logger.info(f"gamma_hat = {summary[0]['gamma_hat']:.6f}, spread {summary[0]['spread']:.3g}")

        out = self.output_dir
        outputs = [
            write_csv(out / "gamma.csv", frame,
                      ["config_hash", "N", "eps", "resolution", "E", "W", "gamma_sample"]),
            write_csv(out / "gamma_summary.csv", summary),
        ]
        return self._finish("gamma", started, outputs)


def _bbox(spec: DomainSpec) -> Tuple[float, float, float, float]:
    a, b = spec.semi_axes
    return (-a, a, -b, b)
