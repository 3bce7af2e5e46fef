"""
Batch Refinement Stage
Jointly refines the hand spline, the extrinsic and the clock offset
"""

from dataclasses import replace
from typing import Any, Dict

import numpy as np

from services.batch_refinement import RefinementProblem, refine_with_settings
from services.errors import DivergedOrStalled
from services.linear_calibration import CalibrationResult

from .base_stage import BaseStage


class BatchRefinementStage(BaseStage):
    """Continuous-time maximum-likelihood refinement started from a linear estimate"""

    def get_stage_name(self) -> str:
        return "refine"

    def _initial(self, input_data: Dict[str, Any]) -> CalibrationResult:
        if input_data.get("calibration") is not None:
            return input_data["calibration"]
        init = input_data.get("init")
        if init is None:
            raise ValueError("refine stage needs a calibration or an init result")
        return CalibrationResult(
            extrinsic=init.extrinsic,
            dt=init.dt,
            inlier_mask=np.zeros(0, dtype=bool),
            quality=float(init.get("quality", "nan")),
            iterations_used=0,
            solver=init.get("solver", "init"),
            strategy=init.get("strategy", "rotconstr"),
        )

    def process(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        self.require(input_data, ["hand", "eye"])
        initial = self._initial(input_data)
        settings = self.config.refinement.settings()

        problem = RefinementProblem.from_settings(
            input_data["hand"], input_data["eye"], initial.extrinsic, initial.dt, settings
        )
        refinement = refine_with_settings(problem, settings)
        report = refinement.report
        if report.status == "stalled":
            tagged = replace(initial, solver=f"{initial.solver}+stalled")
            raise DivergedOrStalled(
                f"refinement stalled after {report.iterations} iterations ({report.reason}); "
                "keeping the initial values",
                calibration=tagged,
                refinement=refinement,
            )

        refined = replace(
            initial,
            extrinsic=refinement.extrinsic,
            dt=refinement.dt,
            solver=f"{initial.solver}+refined",
            iterations_used=report.iterations,
        )
        self.logger.info("Refined dt %.6fs -> %.6fs", initial.dt, refinement.dt)
        return {"calibration": refined, "linear_calibration": initial, "refinement": refinement}
