"""
Linear Calibration Stage
Builds relative pose pairs on a shared grid and solves for the extrinsic with RANSAC
"""

from typing import Any, Dict

from services.linear_calibration import build_pairs, calibrate_pairs, pair_diagnostics
from services.trajectory_io import align_to_grid

from .base_stage import BaseStage


class LinearCalibrationStage(BaseStage):
    """Dual quaternion SVD calibration given a known clock offset"""

    def get_stage_name(self) -> str:
        return "calibrate"

    def process(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        self.require(input_data, ["hand", "eye", "dt"])
        cfg = self.config.calibration
        dt = float(input_data["dt"])

        hand_grid, eye_grid = align_to_grid(input_data["hand"], input_data["eye"], dt)
        pairs = build_pairs(hand_grid, eye_grid, cfg.strategy, cfg.eta, cfg.overlapping_pairs)
        self.logger.info("Built %d %s pairs from %d grid samples", len(pairs), cfg.strategy, len(eye_grid))

        result = calibrate_pairs(pairs, cfg.settings(jobs=self.config.jobs), dt)
        diagnostics = pair_diagnostics(pairs, result, cfg.mu if cfg.robust_kernel else None)
        return {"calibration": result, "pairs": pairs, "diagnostics": diagnostics}
