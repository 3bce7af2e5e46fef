"""
Base Stage class for the hand-eye calibration pipeline
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional

from run_config import RunConfig


class BaseStage(ABC):
    """Base class for all stages in the calibration pipeline"""

    def __init__(self, config: Optional[RunConfig] = None):
        """
        Initialize the base stage

        Args:
            config: Run configuration shared by every stage
        """
        self.config = config or RunConfig()
        self.logger = logging.getLogger(f"stages.{self.get_stage_name()}")

    @abstractmethod
    def get_stage_name(self) -> str:
        """Short stage name used for logs, errors and exit codes"""
        pass

    @abstractmethod
    def process(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        """Process the input data and return results"""
        pass

    def validate_input(self, input_data: Dict[str, Any], required_keys: List[str]) -> bool:
        """
        Validate that input data contains all required keys

        Args:
            input_data: Input data dictionary
            required_keys: List of required keys

        Returns:
            True if all required keys are present
        """
        return all(input_data.get(key) is not None for key in required_keys)

    def require(self, input_data: Dict[str, Any], required_keys: List[str]) -> None:
        if not self.validate_input(input_data, required_keys):
            missing = [key for key in required_keys if input_data.get(key) is None]
            raise ValueError(f"{self.get_stage_name()} stage is missing inputs: {', '.join(missing)}")
