"""
Run configuration for the hand-eye calibration toolkit
Pydantic models for every stage plus JSON loading with CLI overrides
"""

import json
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from services.batch_refinement import RefinementSettings
from services.linear_calibration import RansacSettings
from services.time_alignment import AlignmentSettings


class CalibrationConfig(BaseModel):
    """Linear calibration thresholds; angles in degrees, exposed in radians"""

    model_config = ConfigDict(extra="forbid")

    eta_deg: float = Field(5.0, gt=0, description="rotational constraint threshold")
    mu: float = Field(5.0, gt=0, description="robust kernel gain")
    phi_deg: float = Field(0.5, gt=0, description="inlier rotation threshold")
    psi: float = Field(0.02, gt=0, description="inlier translation threshold (m)")
    max_iterations: int = Field(200, ge=1)
    rng_seed: int = Field(0, ge=0, lt=2 ** 64)
    min_inliers: int = Field(10, ge=1)
    strategy: Literal["rotconstr", "global", "interframe"] = "rotconstr"
    overlapping_pairs: bool = False
    robust_kernel: bool = True
    solver: Literal["robust", "rs", "rc"] = "robust"
    scalar_tolerance: float = Field(0.01, gt=0, description="scalar-part tolerance of the rs solver")
    parallel_axis_deg: float = Field(1.0, gt=0, description="minimal-sample axis separation")
    jobs: int = Field(1, ge=1)

    @property
    def eta(self) -> float:
        return math.radians(self.eta_deg)

    @property
    def phi(self) -> float:
        return math.radians(self.phi_deg)

    @property
    def parallel_axis(self) -> float:
        return math.radians(self.parallel_axis_deg)

    def settings(self, jobs: Optional[int] = None) -> RansacSettings:
        """Solver settings in radians; ``jobs`` raises the worker count."""
        return RansacSettings(
            max_iterations=self.max_iterations,
            min_inliers=self.min_inliers,
            phi=self.phi,
            psi=self.psi,
            parallel_axis=self.parallel_axis,
            mu=self.mu,
            robust_kernel=self.robust_kernel,
            scalar_tolerance=self.scalar_tolerance,
            solver=self.solver,
            strategy=self.strategy,
            rng_seed=self.rng_seed,
            jobs=max(self.jobs, jobs or 1),
        )


class TimeAlignmentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    correlation_rate: Optional[float] = Field(None, gt=0, description="None uses the lower native rate")
    min_overlap: float = Field(5.0, gt=0)
    reliability_threshold: float = Field(0.6, ge=0, le=1)
    refine_peak: bool = True

    def settings(self) -> AlignmentSettings:
        return AlignmentSettings(self.correlation_rate, self.min_overlap, self.reliability_threshold)


class RefinementConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool = True
    order: int = Field(4, ge=2)
    knot_spacing: float = Field(0.1, gt=0)
    huber_delta_rot_deg: float = Field(0.5, gt=0)
    huber_delta_trans: float = Field(0.02, gt=0)
    sigma_hand_rot: float = Field(1e-3, gt=0, description="hand rotation std (rad)")
    sigma_hand_trans: float = Field(1e-3, gt=0, description="hand translation std (m)")
    eye_covariance_factor: float = Field(10.0, gt=0, description="Sigma_E = factor * Sigma_H")
    max_iterations: int = Field(100, ge=1)
    function_tolerance: float = Field(1e-9, gt=0)
    gradient_tolerance: float = Field(1e-10, gt=0)
    max_boundary_drop: float = Field(0.02, ge=0, le=1)

    @property
    def huber_delta_rot(self) -> float:
        return math.radians(self.huber_delta_rot_deg)

    def settings(self) -> RefinementSettings:
        fields = self.model_dump(exclude={"enabled", "huber_delta_rot_deg"})
        return RefinementSettings(huber_delta_rot=self.huber_delta_rot, **fields)


class EvaluationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool = False
    with_scale: bool = False
    max_dt: float = Field(0.01, gt=0, description="association window (s)")
    align_mode: Literal["umeyama", "calibrated"] = "umeyama"


class SimulationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    preset: Literal["figure8", "random_walk", "spin_rich"] = "figure8"
    level: int = Field(0, ge=0, le=10)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    duration: float = Field(30.0, gt=0)
    hand_rate: float = Field(100.0, gt=0)
    eye_rate: float = Field(20.0, gt=0)
    knot_spacing: float = Field(0.1, gt=0)
    dt: Optional[float] = Field(None, description="None draws the offset uniformly in +-max_offset")
    max_offset: float = Field(2.0, ge=0)
    eye_phase: Optional[float] = Field(None, ge=0, description="None draws the eye clock phase per seed")


class AblationConfig(BaseModel):
    """Monte-Carlo grid: variants x eta values x noise levels x seeds"""

    model_config = ConfigDict(extra="forbid")

    variants: List[str] = Field(default_factory=lambda: ["rotconstr+kernel", "rotconstr", "global", "interframe"])
    levels: List[int] = Field(default_factory=lambda: list(range(11)))
    seed_count: int = Field(20, ge=1)
    first_seed: int = Field(0, ge=0)
    eta_values_deg: List[float] = Field(default_factory=lambda: [5.0])
    refine: bool = False

    @field_validator("levels")
    @classmethod
    def _levels_in_range(cls, levels: List[int]) -> List[int]:
        if any(not 0 <= level <= 10 for level in levels):
            raise ValueError("noise levels must lie in 0..10")
        return levels

    @field_validator("eta_values_deg")
    @classmethod
    def _positive_eta(cls, values: List[float]) -> List[float]:
        if not values or any(value <= 0 for value in values):
            raise ValueError("eta values must be positive")
        return values


SECTIONS = {
    "calibration": CalibrationConfig,
    "time_alignment": TimeAlignmentConfig,
    "refinement": RefinementConfig,
    "evaluation": EvaluationConfig,
    "simulation": SimulationConfig,
    "ablation": AblationConfig,
}


class RunConfig(BaseModel):
    """Everything one pipeline run needs; loadable from a JSON key-value file"""

    model_config = ConfigDict(extra="forbid")

    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    time_alignment: TimeAlignmentConfig = Field(default_factory=TimeAlignmentConfig)
    refinement: RefinementConfig = Field(default_factory=RefinementConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    simulation: SimulationConfig = Field(default_factory=SimulationConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)

    hand_path: Optional[Path] = None
    eye_path: Optional[Path] = None
    est_path: Optional[Path] = None
    gt_raw_path: Optional[Path] = None
    init_path: Optional[Path] = None
    format: Literal["tum", "euroc"] = "tum"
    eye_format: Optional[Literal["tum", "euroc"]] = None
    out_dir: Path = Field(default_factory=lambda: Path(os.getenv("HANDEYE_OUTPUT_DIR", "handeye_output")))
    force: bool = False
    jobs: int = Field(1, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _nest_flat_keys(cls, data: Any) -> Any:
        """Accept flat keys such as ``eta_deg`` next to nested sections."""
        if not isinstance(data, dict):
            return data
        data = dict(data)
        for key in list(data):
            if key in cls.model_fields or key in SECTIONS:
                continue
            for section, model in SECTIONS.items():
                if key in model.model_fields:
                    nested = dict(data.get(section) or {})
                    nested[key] = data.pop(key)
                    data[section] = nested
                    break
        return data

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls.model_validate(json.load(f))

    def with_overrides(self, **flags: Any) -> "RunConfig":
        """New config with every non-None flag applied.

        Keys are top-level fields, section fields (first section wins) or
        dotted ``section.field`` names for fields several sections share.
        """
        data = self.model_dump()
        for key, value in flags.items():
            if value is None:
                continue
            if "." in key:
                section, _, name = key.partition(".")
                if section not in SECTIONS or name not in SECTIONS[section].model_fields:
                    raise KeyError(f"unknown configuration key {key!r}")
                data[section][name] = value
                continue
            if key in RunConfig.model_fields and key not in SECTIONS:
                data[key] = value
                continue
            for section, model in SECTIONS.items():
                if key in model.model_fields:
                    data[section][key] = value
                    break
            else:
                raise KeyError(f"unknown configuration key {key!r}")
        return RunConfig.model_validate(data)

    def echo(self) -> Dict[str, Any]:
        return json.loads(self.model_dump_json())


# Constants every default configuration must reproduce
DEFAULTS = {
    "calibration.eta_deg": 5.0,
    "calibration.mu": 5.0,
    "calibration.phi_deg": 0.5,
    "calibration.psi": 0.02,
    "calibration.max_iterations": 200,
    "calibration.min_inliers": 10,
    "time_alignment.min_overlap": 5.0,
    "time_alignment.reliability_threshold": 0.6,
    "refinement.order": 4,
    "refinement.knot_spacing": 0.1,
    "refinement.huber_delta_rot_deg": 0.5,
    "refinement.huber_delta_trans": 0.02,
    "refinement.eye_covariance_factor": 10.0,
    "evaluation.max_dt": 0.01,
}
