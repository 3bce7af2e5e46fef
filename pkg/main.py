"""
Command-line interface for the hand-eye calibration toolkit
Subcommands: align, calibrate, refine, evaluate, run, simulate, ablate
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from colorama import Fore, Style
from colorama import init as colorama_init
from pydantic import ValidationError

from ablation import VARIANTS, run_ablation, write_ablation
from run_config import RunConfig
from run_manager import RunManager
from services.errors import HandEyeError
from services.synthetic_generator import simulation_from_config
from services.trajectory_io import write_tum
from stages.langgraph_orchestrator import EXIT_OTHER, LangGraphOrchestrator

logger = logging.getLogger("handeye")

# argparse destination -> configuration key
OVERRIDES = {
    "hand": "hand_path",
    "eye": "eye_path",
    "est": "est_path",
    "gt_raw": "gt_raw_path",
    "init": "init_path",
    "calib": "init_path",
    "format": "format",
    "eye_format": "eye_format",
    "out": "out_dir",
    "jobs": "jobs",
    "force": "force",
    "rate": "correlation_rate",
    "min_overlap": "min_overlap",
    "reliability": "reliability_threshold",
    "no_refine_peak": "refine_peak",
    "eta": "eta_deg",
    "mu": "mu",
    "phi": "phi_deg",
    "psi": "psi",
    "iters": "calibration.max_iterations",
    "seed": "rng_seed",
    "min_inliers": "min_inliers",
    "strategy": "strategy",
    "overlapping_pairs": "overlapping_pairs",
    "no_robust_kernel": "robust_kernel",
    "solver": "solver",
    "knot_spacing": "refinement.knot_spacing",
    "order": "order",
    "max_iterations": "refinement.max_iterations",
    "no_refine": "refinement.enabled",
    "evaluate": "evaluation.enabled",
    "with_scale": "with_scale",
    "max_dt": "max_dt",
    "align_mode": "align_mode",
    "preset": "preset",
    "level": "level",
    "sim_seed": "simulation.seed",
    "duration": "duration",
    "hand_rate": "hand_rate",
    "eye_rate": "eye_rate",
    "sim_dt": "simulation.dt",
    "max_offset": "max_offset",
    "variants": "variants",
    "levels": "levels",
    "seeds": "seed_count",
    "first_seed": "first_seed",
    "eta_values": "eta_values_deg",
    "ablate_refine": "ablation.refine",
}

# store_true flags that switch a default-on setting off
NEGATED = {"no_refine_peak", "no_robust_kernel", "no_refine"}


def _shared_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", type=Path, help="JSON configuration file")
    shared.add_argument("--out", type=Path, help="output directory")
    shared.add_argument("--jobs", type=int, help="worker threads")
    shared.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    return shared


def _trajectory_args(parser: argparse.ArgumentParser, force: bool = True) -> None:
    parser.add_argument("--hand", type=Path, help="hand (motion capture) trajectory")
    parser.add_argument("--eye", type=Path, help="eye (odometry) trajectory")
    parser.add_argument("--format", choices=["tum", "euroc"])
    parser.add_argument("--eye-format", choices=["tum", "euroc"])
    if force:
        parser.add_argument("--force", action="store_true", default=None,
                            help="accept an unreliable time-offset estimate")


def _align_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--rate", type=float, help="correlation rate (Hz)")
    parser.add_argument("--min-overlap", type=float, help="minimum overlap (s)")
    parser.add_argument("--reliability", type=float, help="peak correlation threshold")
    parser.add_argument("--no-refine-peak", action="store_true", default=None)


def _calibrate_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dt", type=float, help="known clock offset (s); skips time alignment")
    parser.add_argument("--eta", type=float, help="rotational constraint (deg)")
    parser.add_argument("--mu", type=float, help="robust kernel gain")
    parser.add_argument("--phi", type=float, help="inlier rotation threshold (deg)")
    parser.add_argument("--psi", type=float, help="inlier translation threshold (m)")
    parser.add_argument("--iters", type=int, help="RANSAC iterations")
    parser.add_argument("--seed", type=int, help="RANSAC seed")
    parser.add_argument("--min-inliers", type=int)
    parser.add_argument("--strategy", choices=["rotconstr", "global", "interframe"])
    parser.add_argument("--overlapping-pairs", action="store_true", default=None)
    parser.add_argument("--no-robust-kernel", action="store_true", default=None)
    parser.add_argument("--solver", choices=["robust", "rs", "rc"])


def _refine_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--knot-spacing", type=float, help="spline knot spacing (s)")
    parser.add_argument("--order", type=int, help="spline order")
    parser.add_argument("--max-iterations", type=int, help="Levenberg-Marquardt iterations")


def _evaluate_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--with-scale", action="store_true", default=None)
    parser.add_argument("--max-dt", type=float, help="association window (ms)")
    parser.add_argument("--align-mode", choices=["umeyama", "calibrated"])


def build_parser() -> argparse.ArgumentParser:
    shared = _shared_parser()
    parser = argparse.ArgumentParser(prog="handeye", description="Spatiotemporal hand-eye calibration")
    commands = parser.add_subparsers(dest="command", required=True)

    align = commands.add_parser("align", parents=[shared], help="estimate the clock offset")
    _trajectory_args(align)
    _align_args(align)

    calibrate = commands.add_parser("calibrate", parents=[shared], help="linear calibration")
    _trajectory_args(calibrate)
    _align_args(calibrate)
    _calibrate_args(calibrate)

    refine = commands.add_parser("refine", parents=[shared], help="batch refinement of a calibration")
    _trajectory_args(refine, force=False)
    refine.add_argument("--init", type=Path, help="result file to start from")
    _refine_args(refine)

    evaluate = commands.add_parser("evaluate", parents=[shared], help="APE / ARE of an estimate")
    evaluate.add_argument("--est", type=Path, help="estimated trajectory")
    evaluate.add_argument("--gt-raw", type=Path, help="raw hand ground truth")
    evaluate.add_argument("--calib", type=Path, help="calibration result file")
    evaluate.add_argument("--format", choices=["tum", "euroc"])
    evaluate.add_argument("--eye-format", choices=["tum", "euroc"])
    _evaluate_args(evaluate)

    run = commands.add_parser("run", parents=[shared], help="align, calibrate, refine and evaluate")
    _trajectory_args(run)
    _align_args(run)
    _calibrate_args(run)
    _refine_args(run)
    _evaluate_args(run)
    run.add_argument("--no-refine", action="store_true", default=None)
    run.add_argument("--evaluate", action="store_true", default=None)

    simulate = commands.add_parser("simulate", parents=[shared], help="write a synthetic hand/eye pair")
    simulate.add_argument("--preset", choices=["figure8", "random_walk", "spin_rich"])
    simulate.add_argument("--level", type=int, help="noise level 0..10")
    simulate.add_argument("--seed", dest="sim_seed", type=int)
    simulate.add_argument("--duration", type=float)
    simulate.add_argument("--hand-rate", type=float)
    simulate.add_argument("--eye-rate", type=float)
    simulate.add_argument("--dt", dest="sim_dt", type=float, help="clock offset (s)")
    simulate.add_argument("--max-offset", type=float)

    ablate = commands.add_parser("ablate", parents=[shared], help="Monte-Carlo strategy ablation")
    ablate.add_argument("--variants", nargs="+", choices=sorted(VARIANTS))
    ablate.add_argument("--levels", nargs="+", type=int)
    ablate.add_argument("--seeds", type=int, help="seeds per grid cell")
    ablate.add_argument("--first-seed", type=int)
    ablate.add_argument("--eta-values", nargs="+", type=float, help="eta values (deg)")
    ablate.add_argument("--refine", dest="ablate_refine", action="store_true", default=None)
    ablate.add_argument("--preset", choices=["figure8", "random_walk", "spin_rich"])
    ablate.add_argument("--quiet", action="store_true", help="hide the progress bar")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    flags: Dict[str, Any] = {}
    for dest, key in OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if dest in NEGATED:
            value = not value
        if dest == "max_dt":
            value = value / 1000.0
        flags[key] = value
    return config.with_overrides(**flags)


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else os.getenv("HANDEYE_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def warn(message: str) -> None:
    print(f"{Fore.YELLOW}warning:{Style.RESET_ALL} {message}", file=sys.stderr)


def fail(message: str) -> None:
    print(f"{Fore.RED}error:{Style.RESET_ALL} {message}", file=sys.stderr)


def _print_state(command: str, state: Dict[str, Any], out_dir: Path) -> None:
    alignment = state.get("alignment")
    if alignment is not None:
        print(f"dt {alignment.dt:.9f} s  peak correlation {alignment.peak_correlation:.4f}")
        if not alignment.reliable:
            warn("time-offset estimate is below the reliability threshold")
    calibration = state.get("calibration")
    if calibration is not None and command != "evaluate":
        t = calibration.extrinsic.translation
        print(f"extrinsic t = [{t[0]:.6f} {t[1]:.6f} {t[2]:.6f}] m  dt {calibration.dt:.9f} s  "
              f"({calibration.solver})")
        if calibration.inlier_mask.size:
            print(f"inliers {calibration.inlier_count}/{calibration.inlier_mask.size}  "
                  f"sigma7/sigma6 {calibration.quality:.3g}")
    refinement = state.get("refinement")
    if refinement is not None:
        report = refinement.report
        print(f"refinement {report.status} after {report.iterations} iterations: "
              f"cost {report.initial_cost:.6g} -> {report.final_cost:.6g}")
    metrics = state.get("metrics")
    if metrics is not None:
        print(f"APE {metrics.ape_rmse:.6f} m  ARE {metrics.are_rmse:.6f} deg  "
              f"({metrics.matched_count} matched, {metrics.unmatched_count} unmatched)")
    for message in state.get("errors", []):
        fail(message)
    if state.get("success"):
        print(f"{Fore.GREEN}{command} finished{Style.RESET_ALL}; outputs in {out_dir}")


def cmd_pipeline(command: str, args: argparse.Namespace, config: RunConfig) -> int:
    orchestrator = LangGraphOrchestrator(config)
    state = orchestrator.run_sync(command, dt=getattr(args, "dt", None))
    run_id = RunManager(config.out_dir).write_run(command, state, config)
    if run_id is not None:
        logger.info("Recorded run %s in %s", run_id, config.out_dir)
    _print_state(command, state, config.out_dir)
    return state["exit_code"]


def cmd_simulate(config: RunConfig) -> int:
    bundle = simulation_from_config(config.simulation)
    manager = RunManager(config.out_dir)
    manager.ensure_dir()
    write_tum(bundle.hand, config.out_dir / "hand.txt", comment="simulated hand trajectory")
    write_tum(bundle.eye_noisy, config.out_dir / "eye.txt",
              comment=f"simulated eye trajectory, noise level {config.simulation.level}")
    metadata = bundle.metadata()
    manager.write_result(
        bundle.extrinsic_gt, bundle.dt_gt, name="truth.txt",
        solver="truth",
        preset=config.simulation.preset,
        noise_level=metadata["noise_level"],
        noise_seed=metadata["noise_seed"],
        drift_model=metadata["drift_model"],
    )
    print(f"{Fore.GREEN}simulated{Style.RESET_ALL} {config.simulation.preset} level {config.simulation.level} "
          f"(dt {bundle.dt_gt:.6f} s) into {config.out_dir}")
    return 0


def cmd_ablate(args: argparse.Namespace, config: RunConfig) -> int:
    rows, summary = run_ablation(config, progress=not args.quiet)
    rows_path, summary_path = write_ablation(rows, summary, config.out_dir)
    for entry in summary:
        print(f"{entry['variant']:<18} eta {entry['eta_deg']:>5.1f} level {entry['level']:>2}  "
              f"trans {entry['trans_err_median']:.6f} m  rot {entry['rot_err_median']:.6f} deg  "
              f"time {entry['time_err_median']:.6f} s  failures {entry['failures']}")
    failures = sum(1 for row in rows if row["error"])
    if failures:
        warn(f"{failures} of {len(rows)} runs failed; see the error column of {rows_path}")
    print(f"rows in {rows_path}, summary in {summary_path}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    colorama_init(autoreset=True)
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)

    try:
        config = config_from_args(args)
    except (ValidationError, KeyError, OSError, ValueError) as e:
        fail(f"invalid configuration: {e}")
        return EXIT_OTHER

    try:
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "ablate":
            return cmd_ablate(args, config)
        return cmd_pipeline(args.command, args, config)
    except (HandEyeError, ValueError) as e:
        fail(str(e))
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
