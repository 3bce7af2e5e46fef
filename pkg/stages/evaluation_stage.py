"""
Evaluation Stage
Scores an estimated trajectory against calibrated hand ground truth
"""

from typing import Any, Dict

from services.evaluation_metrics import evaluate_trajectory

from .base_stage import BaseStage


class EvaluationStage(BaseStage):
    """APE / ARE of ``est`` against ``gt_raw`` carried through the calibration"""

    def get_stage_name(self) -> str:
        return "evaluate"

    def process(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        # A full run scores the eye trajectory against its own hand recording
        est = input_data.get("est") if input_data.get("est") is not None else input_data.get("eye")
        gt_raw = input_data.get("gt_raw") if input_data.get("gt_raw") is not None else input_data.get("hand")
        calibration = input_data.get("calibration") or input_data.get("init")
        if est is None or gt_raw is None or calibration is None:
            raise ValueError("evaluate stage needs an estimate, raw ground truth and a calibration")

        settings = self.config.evaluation
        metrics = evaluate_trajectory(
            est, gt_raw, calibration,
            max_dt=settings.max_dt,
            mode=settings.align_mode,
            with_scale=settings.with_scale,
        )
        return {"metrics": metrics}
