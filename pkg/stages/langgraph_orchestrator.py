"""
LangGraph Orchestrator
Coordinates ingest, time alignment, linear calibration, refinement and evaluation as one graph
"""

import logging
from typing import Any, Dict, List, Optional

from langgraph.graph import END, StateGraph
from typing_extensions import TypedDict

from run_config import RunConfig
from services.errors import HandEyeError

from .base_stage import BaseStage
from .batch_refinement_stage import BatchRefinementStage
from .evaluation_stage import EvaluationStage
from .ingest_stage import IngestStage
from .linear_calibration_stage import LinearCalibrationStage
from .time_alignment_stage import TimeAlignmentStage

logger = logging.getLogger(__name__)

STAGE_ORDER = ("ingest", "align", "calibrate", "refine", "evaluate")
EXIT_CODES = {"ingest": 1, "align": 2, "calibrate": 3, "refine": 4, "evaluate": 5}
EXIT_OTHER = 6

PLANS = {
    "align": ["ingest", "align"],
    "calibrate": ["ingest", "align", "calibrate"],
    "refine": ["ingest", "refine"],
    "evaluate": ["ingest", "evaluate"],
    "run": ["ingest", "align", "calibrate", "refine", "evaluate"],
}


class CalibrationState(TypedDict, total=False):
    """State object for the calibration workflow"""
    # Inputs
    plan: List[str]
    skip: List[str]
    hand_path: Optional[str]
    eye_path: Optional[str]
    est_path: Optional[str]
    gt_raw_path: Optional[str]
    init_path: Optional[str]
    format: str
    eye_format: Optional[str]
    force: bool

    # Loaded data
    hand: Any
    eye: Any
    est: Any
    gt_raw: Any
    init: Any
    input_hashes: Dict[str, str]

    # Stage results
    alignment: Any
    dt: Optional[float]
    calibration: Any
    linear_calibration: Any
    pairs: Any
    diagnostics: List[Dict[str, Any]]
    refinement: Any
    metrics: Any

    # Workflow status
    completed_stages: List[str]
    status: str
    errors: List[str]
    failed_stage: Optional[str]


def exit_code_for(state: Dict[str, Any]) -> int:
    if state.get("status") != "completed":
        return EXIT_CODES.get(state.get("failed_stage") or "", EXIT_OTHER)
    return 0


class LangGraphOrchestrator:
    """Orchestrates the calibration pipeline using LangGraph"""

    def __init__(self, config: Optional[RunConfig] = None):
        """Initialize the orchestrator with all stages"""
        self.config = config or RunConfig()
        self.ingest_stage = IngestStage(self.config)
        self.time_alignment_stage = TimeAlignmentStage(self.config)
        self.linear_calibration_stage = LinearCalibrationStage(self.config)
        self.batch_refinement_stage = BatchRefinementStage(self.config)
        self.evaluation_stage = EvaluationStage(self.config)

        # Build the workflow graph
        self.workflow = self._build_workflow()

    def _build_workflow(self):
        """Build the LangGraph workflow"""
        workflow = StateGraph(CalibrationState)

        workflow.add_node("ingest", self._ingest_node)
        workflow.add_node("align", self._align_node)
        workflow.add_node("calibrate", self._calibrate_node)
        workflow.add_node("refine", self._refine_node)
        workflow.add_node("evaluate", self._evaluate_node)

        # Every command starts by loading its inputs; the plan decides the rest
        workflow.set_entry_point("ingest")
        destinations = {name: name for name in STAGE_ORDER[1:]}
        destinations[END] = END
        for name in STAGE_ORDER:
            workflow.add_conditional_edges(name, self._router(name), destinations)

        return workflow.compile()

    def _router(self, current: str):
        def route(state: CalibrationState) -> str:
            if state["status"] == "error":
                return END
            plan = state["plan"]
            for name in plan[plan.index(current) + 1:]:
                if name not in state["skip"]:
                    return name
            return END
        return route

    def _execute(self, stage: BaseStage, state: CalibrationState, input_data: Dict[str, Any]) -> CalibrationState:
        name = stage.get_stage_name()
        logger.info("Stage %s started", name)
        try:
            result = stage.process(input_data)
            state.update(result)
            state["completed_stages"].append(name)
            state["status"] = f"{name}_completed"
            logger.info("Stage %s finished", name)
        except HandEyeError as e:
            # Stages may hand back tagged partial results with the failure
            for key in ("calibration", "refinement"):
                if key in e.context:
                    state[key] = e.context[key]
            state["errors"].append(f"{name.capitalize()} error: {str(e)}")
            state["failed_stage"] = name
            state["status"] = "error"
        except Exception as e:
            logger.exception("Unexpected failure in stage %s", name)
            state["errors"].append(f"{name.capitalize()} error: {str(e)}")
            state["failed_stage"] = name
            state["status"] = "error"

        return state

    def _ingest_node(self, state: CalibrationState) -> CalibrationState:
        """Execute the ingest stage"""
        input_data = {key: state.get(key) for key in (
            "hand_path", "eye_path", "est_path", "gt_raw_path", "init_path", "format", "eye_format")}
        return self._execute(self.ingest_stage, state, input_data)

    def _align_node(self, state: CalibrationState) -> CalibrationState:
        """Execute the time alignment stage"""
        input_data = {"hand": state.get("hand"), "eye": state.get("eye"), "force": state.get("force", False)}
        return self._execute(self.time_alignment_stage, state, input_data)

    def _calibrate_node(self, state: CalibrationState) -> CalibrationState:
        """Execute the linear calibration stage"""
        input_data = {"hand": state.get("hand"), "eye": state.get("eye"), "dt": state.get("dt")}
        return self._execute(self.linear_calibration_stage, state, input_data)

    def _refine_node(self, state: CalibrationState) -> CalibrationState:
        """Execute the batch refinement stage"""
        input_data = {
            "hand": state.get("hand"),
            "eye": state.get("eye"),
            "calibration": state.get("calibration"),
            "init": state.get("init"),
        }
        return self._execute(self.batch_refinement_stage, state, input_data)

    def _evaluate_node(self, state: CalibrationState) -> CalibrationState:
        """Execute the evaluation stage"""
        input_data = {key: state.get(key) for key in ("est", "gt_raw", "hand", "eye", "calibration", "init")}
        return self._execute(self.evaluation_stage, state, input_data)

    def _skipped(self, command: str, dt: Optional[float]) -> List[str]:
        skip = []
        if dt is not None:
            skip.append("align")
        if command == "run":
            if not self.config.refinement.enabled:
                skip.append("refine")
            if not self.config.evaluation.enabled:
                skip.append("evaluate")
        return skip

    def run_sync(self, command: str = "run", dt: Optional[float] = None) -> Dict[str, Any]:
        """
        Run one command of the pipeline synchronously

        Args:
            command: One of align, calibrate, refine, evaluate, run
            dt: Known clock offset; skips time alignment when given

        Returns:
            The final workflow state with ``success`` and ``exit_code`` added
        """
        if command not in PLANS:
            raise ValueError(f"unknown pipeline command {command!r}")
        cfg = self.config

        def as_str(path):
            return None if path is None else str(path)

        initial_state = CalibrationState(
            plan=PLANS[command],
            skip=self._skipped(command, dt),
            hand_path=as_str(cfg.hand_path),
            eye_path=as_str(cfg.eye_path),
            est_path=as_str(cfg.est_path),
            gt_raw_path=as_str(cfg.gt_raw_path),
            init_path=as_str(cfg.init_path),
            format=cfg.format,
            eye_format=cfg.eye_format,
            force=cfg.force,
            dt=dt,
            completed_stages=[],
            status="initialized",
            errors=[],
            failed_stage=None,
        )

        try:
            final_state = dict(self.workflow.invoke(initial_state))
        except Exception as e:
            logger.exception("Workflow failed")
            final_state = dict(initial_state)
            final_state.update(status="workflow_error", errors=[str(e)])

        if final_state["status"] != "error" and final_state["status"] != "workflow_error":
            final_state["status"] = "completed"
        final_state["success"] = final_state["status"] == "completed"
        final_state["exit_code"] = exit_code_for(final_state)
        return final_state
