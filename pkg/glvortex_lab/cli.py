"""
glvortex command-line interface.

This module parses arguments, sets up logging, merges the config file with
command-line overrides and runs one study of the vortex lab.
"""

import sys
import logging
import argparse
import asyncio
from typing import Any, Dict, List, Optional

from glvortex_lab.errors import ConfigurationError, DomainError, NumericError, PreconditionError
from glvortex_lab.lab import VortexLab

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PRECONDITION = 2
EXIT_NUMERIC = 3


def setup_logging(verbose: bool = False) -> logging.Logger:
    """Set up logging configuration."""
    log_level = logging.DEBUG if verbose else logging.INFO
    logger = logging.getLogger("glvortex_lab")
    logger.setLevel(log_level)

    # Console handler, installed once
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setLevel(log_level)
        formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
        handler.setFormatter(formatter)
        logger.addHandler(handler)
    else:
        for handler in logger.handlers:
            handler.setLevel(log_level)

    return logger


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def collect_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Config values given on the command line; they win over the config file."""
    overrides: Dict[str, Any] = {}
    domain = getattr(args, "domain", None)
    semi_axes = getattr(args, "semi_axes", None)
    if domain == "disk":
        overrides["domain"] = {"kind": "disk", "radius": 1.0}
    elif domain == "ellipse" or semi_axes:
        if not semi_axes:
            raise ConfigurationError("--domain ellipse needs --semi-axes A,B")
        overrides["domain"] = {"kind": "ellipse", "semi_axes": semi_axes}

    resolution = getattr(args, "resolution", None)
    if resolution:
        overrides["resolution"] = resolution if len(resolution) > 1 else resolution[0]
    for key in ("hex", "lambdas", "eps"):
        value = getattr(args, key, None)
        if value:
            overrides[key] = value
    for key in ("N_rule", "seed", "starts", "t0", "max_iters", "jobs", "output_dir"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    return overrides


def build_lab(args: argparse.Namespace, logger: logging.Logger) -> VortexLab:
    overrides = collect_overrides(args)
    if args.config:
        return VortexLab.from_file(args.config, overrides, logger=logger)
    return VortexLab(overrides, logger=logger)


async def run_fields(lab: VortexLab, args: argparse.Namespace) -> None:
    """Emit ξ₀, F(ξ₀), the diagonal s and v_ε."""
    manifest = await lab.fields()
    print(f"Wrote {len(manifest.outputs)} files to {lab.output_dir}")


async def run_obstacle(lab: VortexLab, args: argparse.Namespace) -> None:
    """m(λ), coincidence statistics and barrier checks."""
    manifest = await lab.obstacle()
    print(f"Wrote {len(manifest.outputs)} files to {lab.output_dir}")


async def run_minimize(lab: VortexLab, args: argparse.Namespace) -> None:
    """Minimizers and separation constants along a field sweep."""
    manifest = await lab.minimize()
    print(f"Wrote {len(manifest.outputs)} files to {lab.output_dir}")


async def run_identities(lab: VortexLab, args: argparse.Namespace) -> None:
    """B₁ and energy-identity residual tables with convergence rates."""
    manifest = await lab.identities(count=args.count)
    print(f"Wrote {len(manifest.outputs)} files to {lab.output_dir}")


async def run_gamma(lab: VortexLab, args: argparse.Namespace) -> None:
    """Core-energy constant study."""
    manifest = await lab.gamma(count=args.count)
    print(f"Wrote {len(manifest.outputs)} files to {lab.output_dir}")


COMMANDS = {
    "fields": run_fields,
    "obstacle": run_obstacle,
    "minimize": run_minimize,
    "identities": run_identities,
    "gamma": run_gamma,
}


async def main_async(args: argparse.Namespace) -> int:
    """Async main function; returns the process exit code."""
    logger = setup_logging(args.verbose)

    try:
        lab = build_lab(args, logger)
        await COMMANDS[args.command](lab, args)
    except (PreconditionError, ConfigurationError, DomainError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_PRECONDITION
    except NumericError as e:
        logger.error(f"{args.command}: numerical failure: {e}")
        return EXIT_NUMERIC
    except Exception as e:
        logger.error(f"{args.command}: {type(e).__name__}: {e}")
        return EXIT_FAILURE
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--domain", choices=["disk", "ellipse"], help="Domain family (unit disk or ellipse)")
    parser.add_argument("--semi-axes", dest="semi_axes", type=_float_list, help="Ellipse semi-axes A,B")
    parser.add_argument("-r", "--resolution", type=_int_list, help="Nodes per unit length (comma list allowed)")
    parser.add_argument("-o", "--output-dir", dest="output_dir", help="Directory for CSV, SVG and manifest files")
    parser.add_argument("-j", "--jobs", type=int, help="Worker processes for sweep points")
    parser.add_argument("--seed", type=int, help="Master random seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Ginzburg-Landau vortex numerical lab")
    parser.add_argument("-c", "--config", help="Path to a JSON config file")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose logging")

    subparsers = parser.add_subparsers(dest="command", help="Study to run")

    # Base fields
    fields_parser = subparsers.add_parser("fields", help="xi0, F(xi0), s and v_eps")
    _add_common(fields_parser)
    fields_parser.add_argument("--hex", type=_float_list, help="Applied fields for v_eps")

    # Obstacle problem
    obstacle_parser = subparsers.add_parser("obstacle", help="m(lambda), coincidence sets and barriers")
    _add_common(obstacle_parser)
    obstacle_parser.add_argument("--lambdas", type=_float_list, help="Explicit lambda values")
    obstacle_parser.add_argument("--hex", type=_float_list, help="Applied fields (lambda = hex/2πN otherwise)")
    obstacle_parser.add_argument("--n-rule", dest="N_rule", help="N rule: max, fixed:<k> or fraction:<q>")

    # Minimization
    minimize_parser = subparsers.add_parser("minimize", help="Minimizers along a field sweep")
    _add_common(minimize_parser)
    minimize_parser.add_argument("--hex", type=_float_list, help="Applied fields")
    minimize_parser.add_argument("--n-rule", dest="N_rule", help="N rule: max, fixed:<k> or fraction:<q>")
    minimize_parser.add_argument("--starts", type=int, help="Starts per field")
    minimize_parser.add_argument("--t0", type=float, help="Near-minimizer tolerance")
    minimize_parser.add_argument("--max-iters", dest="max_iters", type=int, help="Iteration cap per start")

    # Identities
    identities_parser = subparsers.add_parser("identities", help="B1 and energy-identity residuals")
    _add_common(identities_parser)
    identities_parser.add_argument("--hex", type=_float_list, help="Applied field (first value used)")
    identities_parser.add_argument("--count", type=int, default=10, help="Random configurations (default: 10)")

    # Core energy constant
    gamma_parser = subparsers.add_parser("gamma", help="Core-energy constant study")
    _add_common(gamma_parser)
    gamma_parser.add_argument("--eps", type=_float_list, help="Core radii")
    gamma_parser.add_argument("--count", type=int, default=5, help="Random three-point configurations (default: 5)")

    return parser


def main(argv: Optional[List[str]] = None) -> None:
    """Command-line interface entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return

    # Run the async main
    sys.exit(asyncio.run(main_async(args)))


if __name__ == "__main__":
    main()
