"""
Time Alignment Stage
Estimates the hand/eye clock offset and applies the reliability gate
"""

from typing import Any, Dict

from services.errors import UnreliableEstimate
from services.time_alignment import estimate_time_offset

from .base_stage import BaseStage


class TimeAlignmentStage(BaseStage):
    """Cross-correlates angular speeds to find dt with t_hand = t_eye + dt"""

    def get_stage_name(self) -> str:
        return "align"

    def process(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        self.require(input_data, ["hand", "eye"])
        config = self.config.time_alignment
        estimate = estimate_time_offset(
            input_data["hand"], input_data["eye"], config.settings(), refine=config.refine_peak
        )
        if not estimate.reliable:
            message = (f"peak correlation {estimate.peak_correlation:.3f} is below "
                       f"{config.reliability_threshold:.2f} (dt={estimate.dt:.6f}s)")
            if not input_data.get("force", self.config.force):
                raise UnreliableEstimate(message + "; rerun with --force to accept it",
                                         dt=estimate.dt, peak=estimate.peak_correlation)
            self.logger.warning("Accepting unreliable estimate: %s", message)

        return {"alignment": estimate, "dt": estimate.dt}
