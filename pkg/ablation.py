"""
Ablation Runner
Monte-Carlo comparison of pair strategies, solvers and eta values over noise levels and seeds
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from run_config import RunConfig
from run_manager import write_csv
from services.errors import HandEyeError
from services.evaluation_metrics import extrinsic_error
from services.synthetic_generator import generate_bundle
from stages.batch_refinement_stage import BatchRefinementStage
from stages.linear_calibration_stage import LinearCalibrationStage
from stages.time_alignment_stage import TimeAlignmentStage

logger = logging.getLogger(__name__)

VARIANTS: Dict[str, Dict[str, Any]] = {
    "rotconstr+kernel": {"strategy": "rotconstr", "robust_kernel": True, "solver": "robust"},
    "rotconstr": {"strategy": "rotconstr", "robust_kernel": False, "solver": "robust"},
    "global": {"strategy": "global", "robust_kernel": False, "solver": "robust"},
    "interframe": {"strategy": "interframe", "robust_kernel": False, "solver": "robust"},
    "rs": {"strategy": "rotconstr", "robust_kernel": False, "solver": "rs"},
    "rc": {"strategy": "rotconstr", "robust_kernel": False, "solver": "rc"},
}

ROW_FIELDS = [
    "variant", "strategy", "solver", "eta_deg", "level", "seed",
    "trans_err", "rot_err", "time_err",
    "lc_trans_err", "lc_rot_err", "lc_time_err",
    "inliers", "error",
]
METRICS = ("trans_err", "rot_err", "time_err")


@dataclass(frozen=True)
class AblationJob:
    variant: str
    eta_deg: float
    level: int
    seed: int


def ablation_jobs(config: RunConfig) -> List[AblationJob]:
    """Cartesian product of variants, eta values, levels and seeds, in a fixed order."""
    grid = config.ablation
    unknown = [name for name in grid.variants if name not in VARIANTS]
    if unknown:
        raise ValueError(f"unknown ablation variants {unknown}, expected some of {sorted(VARIANTS)}")
    seeds = range(grid.first_seed, grid.first_seed + grid.seed_count)
    return [
        AblationJob(variant, float(eta), int(level), int(seed))
        for variant, eta, level, seed in itertools.product(grid.variants, grid.eta_values_deg, grid.levels, seeds)
    ]


def _errors(calibration, truth) -> Tuple[float, float, float]:
    trans, rot = extrinsic_error(calibration.extrinsic, truth.extrinsic_gt)
    return trans, rot, abs(calibration.dt - truth.dt_gt)


def run_job(job: AblationJob, base: RunConfig) -> Dict[str, Any]:
    """One simulated calibration; failures become rows tagged with the error name."""
    overrides = dict(VARIANTS[job.variant])
    overrides.update({"eta_deg": job.eta_deg, "rng_seed": job.seed, "calibration.jobs": 1, "force": True})
    cfg = base.with_overrides(**overrides)
    row: Dict[str, Any] = {
        "variant": job.variant,
        "strategy": cfg.calibration.strategy,
        "solver": cfg.calibration.solver,
        "eta_deg": job.eta_deg,
        "level": job.level,
        "seed": job.seed,
        "error": "",
    }
    for key in METRICS:
        row[key] = math.nan
        row[f"lc_{key}"] = math.nan

    sim = cfg.simulation
    try:
        bundle = generate_bundle(
            preset=sim.preset, level=job.level, seed=job.seed, duration=sim.duration,
            hand_rate=sim.hand_rate, eye_rate=sim.eye_rate, knot_spacing=sim.knot_spacing,
            max_offset=sim.max_offset,
        )
        data = {"hand": bundle.hand, "eye": bundle.eye_noisy, "force": True}
        data.update(TimeAlignmentStage(cfg).process(data))
        data.update(LinearCalibrationStage(cfg).process(data))
        linear = data["calibration"]
        row["inliers"] = linear.inlier_count
        row["lc_trans_err"], row["lc_rot_err"], row["lc_time_err"] = _errors(linear, bundle)

        final = linear
        if cfg.ablation.refine:
            final = BatchRefinementStage(cfg).process(data)["calibration"]
        row["trans_err"], row["rot_err"], row["time_err"] = _errors(final, bundle)
    except HandEyeError as e:
        logger.debug("Ablation run %s failed: %s", job, e)
        row["error"] = type(e).__name__
    except Exception as e:
        logger.warning("Ablation run %s raised %s: %s", job, type(e).__name__, e)
        row["error"] = type(e).__name__
    return row


def aggregate(rows: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Mean, std and median per (variant, eta, level) over successful runs."""
    groups: Dict[Tuple[str, float, int], List[Dict[str, Any]]] = {}
    for row in rows:
        groups.setdefault((row["variant"], row["eta_deg"], row["level"]), []).append(row)

    summary = []
    for (variant, eta, level), members in groups.items():
        ok = [row for row in members if not row["error"]]
        entry: Dict[str, Any] = {
            "variant": variant, "eta_deg": eta, "level": level,
            "runs": len(members), "failures": len(members) - len(ok),
        }
        for key in METRICS:
            values = np.array([row[key] for row in ok], dtype=float)
            entry[f"{key}_mean"] = float(values.mean()) if len(values) else math.nan
            entry[f"{key}_std"] = float(values.std()) if len(values) else math.nan
            entry[f"{key}_median"] = float(np.median(values)) if len(values) else math.nan
        summary.append(entry)
    return summary


def run_ablation(config: RunConfig, jobs: Optional[int] = None,
                 progress: bool = True) -> Tuple[List[Dict[str, Any]], List[Dict[str, Any]]]:
    """
    Execute the whole grid

    Args:
        config: Run configuration carrying the ablation grid and simulation settings
        jobs: Worker threads; defaults to ``config.jobs``
        progress: Show a tqdm progress bar

    Returns:
        Per-run rows in grid order and the aggregate summary
    """
    grid = ablation_jobs(config)
    workers = jobs or config.jobs
    logger.info("Running %d ablation jobs on %d workers", len(grid), workers)

    with tqdm(total=len(grid), desc="ablation", disable=not progress) as bar:
        def tracked(job: AblationJob) -> Dict[str, Any]:
            row = run_job(job, config)
            bar.update(1)
            return row

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                rows = list(executor.map(tracked, grid))
        else:
            rows = [tracked(job) for job in grid]

    failures = sum(1 for row in rows if row["error"])
    if failures:
        logger.warning("%d of %d ablation runs failed", failures, len(rows))
    return rows, aggregate(rows)


def write_ablation(rows: List[Dict[str, Any]], summary: List[Dict[str, Any]], out_dir) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    rows_path = out_dir / "ablation.csv"
    summary_path = out_dir / "ablation_summary.csv"
    write_csv(rows_path, rows, ROW_FIELDS)
    write_csv(summary_path, summary)
    return rows_path, summary_path
