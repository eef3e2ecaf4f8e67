import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from errors import ConfigurationError, DegenerateInputError
from harness import (
    FUNCTIONALS,
    RECIPES,
    Simulator,
    reconstruct,
    reproduce_figure,
    run_monte_carlo,
    theory_check,
)
from helper import (
    format_theory_table,
    load_config,
    read_data_matrix,
    read_image,
    write_data_matrix,
    write_image,
    write_modulus,
    write_peaks_csv,
    write_report,
    write_retrieval,
    write_spectrum,
    write_travel_times_csv,
    write_two_point,
)
from imaging import cint_image, find_peaks, hcint_field, sar_image, two_point_cint
from medium import RealizationKey

load_dotenv(override=False)

YES_VALUES = ("true", 1, "yes", "1")

CONFIG = {
    "DEBUG": os.getenv("DEBUG", "false").lower() in YES_VALUES,
    "HCINT_OUTPUT_DIR": os.getenv("HCINT_OUTPUT_DIR", "./output"),
    "HCINT_WORKERS": int(os.getenv("HCINT_WORKERS", "1")),
}

logger = logging.getLogger("hcint")

IMAGE_KINDS = ("sar", "cint", "two-point", "hcint")


def configure_logging() -> None:
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
        logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if CONFIG["DEBUG"] else logging.INFO)
    for key, value in CONFIG.items():
        logger.debug(f"{key}: {value}")


# =============================================================================
# Subcommands
# =============================================================================

def _scene(args):
    config = load_config(args.config)
    return config.with_seed(args.seed) if args.seed is not None else config


def cmd_simulate(args) -> int:
    """Synthesize one data matrix and, with a random medium, its travel times."""
    config = _scene(args)
    simulator = Simulator(config)
    index = args.realization if args.realization is not None else config.realization
    data = simulator.data(index)
    out = Path(args.output)
    path = write_data_matrix(out / "data", data)
    if simulator.params.sigma > 0:
        draw = simulator.sampler.draw(RealizationKey(config.seed, index))
        write_travel_times_csv(out / "travel_times.csv", draw, simulator.geometry)
    logger.info(f"Data matrix written to {path}")
    return 0


def cmd_image(args) -> int:
    config = _scene(args)
    data = read_data_matrix(args.data)
    p = data.params
    out = Path(args.output)
    kinds = IMAGE_KINDS if args.kind == "all" else (args.kind,)

    if "sar" in kinds:
        write_image(out / "sar", sar_image(data, config.image, p))
    if "cint" in kinds:
        write_image(out / "cint", cint_image(data, config.image, config.require_windows(), p))
    if "two-point" in kinds or "hcint" in kinds:
        centers, offsets = config.require_two_point()
        field = two_point_cint(data, centers, offsets, config.require_windows(), p)
        if "two-point" in kinds:
            write_two_point(out / "two_point", field)
        if "hcint" in kinds:
            write_image(out / "hcint", hcint_field(field))
    logger.info(f"Images written to {out}")
    return 0


def cmd_retrieve(args) -> int:
    config = _scene(args)
    hcint = read_image(args.hcint)
    cint = read_image(args.cint) if args.cint else None
    init_seed = args.init_seed if args.init_seed is not None else config.seed
    result = reconstruct(hcint, config.params, args.deflate_peak, args.iterations, args.tolerance,
                         RealizationKey(init_seed, config.realization), cint)

    out = Path(args.output)
    if args.deflate_peak:
        write_image(out / "hcint_deflated", result.hcint)
    write_spectrum(out / "spectrum", result.spectrum)
    write_modulus(out / "modulus", result.target)
    write_retrieval(out / "retrieval", result.retrieval)
    write_image(out / "estimate", result.estimate)
    write_peaks_csv(out / "peaks.csv", find_peaks(result.estimate, threshold=args.peak_threshold))
    logger.info(f"Retrieval stopped after {result.retrieval.iterations} iterations, "
                f"E_F = {result.retrieval.residuals[-1]:.3e}")
    return 0


def cmd_stats(args) -> int:
    config = _scene(args)
    report = run_monte_carlo(config, args.functional, args.realizations, args.workers)
    write_report(Path(args.output) / f"stats_{args.functional.lower()}", report)
    print(json.dumps({"functional": report.functional, "count": report.count, "seed": report.seed,
                      "peak_cv": report.peak_cv(), **report.regime}, indent=2))
    return 0


def cmd_theory_check(args) -> int:
    config = _scene(args)
    rows = theory_check(config, args.realizations, args.workers)
    table = format_theory_table(rows)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "theory_check.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_reproduce_figure(args) -> int:
    seed = args.seed if args.seed is not None else 0
    outputs = reproduce_figure(args.figure, seed, args.quick, args.deflate_peak, args.iterations, args.tolerance)
    out = Path(args.output) / f"figure{args.figure}"
    write_image(out / "reflectivity", outputs.truth)
    if outputs.reconstruction is not None:
        result = outputs.reconstruction
        write_image(out / "sar", outputs.sar)
        write_image(out / "cint", outputs.cint)
        write_image(out / "hcint", result.hcint)
        write_spectrum(out / "spectrum", result.spectrum)
        write_retrieval(out / "retrieval", result.retrieval)
        write_image(out / "estimate", result.estimate)
        write_peaks_csv(out / "peaks.csv", outputs.peaks)
    logger.info(f"Figure {args.figure} written to {out}")
    return 0


# =============================================================================
# Command line
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed for all random streams")
    common.add_argument("--output", type=str, default=CONFIG["HCINT_OUTPUT_DIR"])

    scene = argparse.ArgumentParser(add_help=False, parents=[common])
    scene.add_argument("--config", type=str, required=True, help="JSON scene document")

    retrieval = argparse.ArgumentParser(add_help=False)
    retrieval.add_argument("--deflate-peak", type=float, default=0.0, metavar="FRACTION")
    retrieval.add_argument("--iterations", type=int, default=1000)
    retrieval.add_argument("--tolerance", type=float, default=1e-4)

    parser = argparse.ArgumentParser(prog="hcint", description="SAR, CINT and high-resolution CINT imaging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[scene], help="synthesize a data matrix")
    p.add_argument("--realization", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("image", parents=[scene], help="form images from a data matrix")
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--kind", choices=IMAGE_KINDS + ("all",), default="all")
    p.set_defaults(func=cmd_image)

    p = sub.add_parser("retrieve", parents=[scene, retrieval], help="reconstruct from an HCINT field")
    p.add_argument("--hcint", type=str, required=True)
    p.add_argument("--cint", type=str, default=None, help="CINT image used to resolve the global shift")
    p.add_argument("--init-seed", type=int, default=None)
    p.add_argument("--peak-threshold", type=float, default=0.3)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("stats", parents=[scene], help="Monte Carlo ensemble statistics")
    p.add_argument("--functional", choices=FUNCTIONALS, default="CINT")
    p.add_argument("--realizations", type=int, default=200)
    p.add_argument("--workers", type=int, default=CONFIG["HCINT_WORKERS"])
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("theory-check", parents=[scene], help="predicted versus measured table")
    p.add_argument("--realizations", type=int, default=20)
    p.add_argument("--workers", type=int, default=CONFIG["HCINT_WORKERS"])
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("reproduce-figure", parents=[common, retrieval], help="end-to-end figure recipes")
    p.add_argument("figure", type=int, choices=sorted(RECIPES))
    p.add_argument("--quick", action="store_true", help="smaller grids for smoke runs")
    p.set_defaults(func=cmd_reproduce_figure)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DegenerateInputError, OSError, RuntimeError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    except (ConfigurationError, json.JSONDecodeError, ValueError) as e:
        logger.error(f"Configuration error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
