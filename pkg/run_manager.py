"""
Run Manager for the hand-eye calibration toolkit
Writes result files, diagnostics CSVs and run manifests into an output directory
"""

import csv
import json
import uuid
from datetime import datetime
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

from reporting import (
    ResultRecord,
    read_result,
    render_calibration_result,
    render_convergence_report,
    render_metric_report,
    render_result,
)
from run_config import RunConfig

TRACKED_PACKAGES = ("numpy", "scipy", "pydantic", "langgraph", "jinja2")

RESULT_FILE = "result.txt"
LINEAR_RESULT_FILE = "result_linear.txt"
PAIRS_FILE = "pairs.csv"
CONVERGENCE_FILE = "convergence.txt"
METRICS_FILE = "metrics.txt"
ERRORS_FILE = "errors.csv"
MANIFEST_FILE = "manifest.json"


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def write_csv(path: Path, rows: Iterable[Dict[str, Any]], fieldnames: Optional[List[str]] = None) -> None:
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(row.get(key)) for key in fieldnames})


def _cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    return value


class RunManager:
    """Manages the artifacts of calibration runs under one output directory"""

    def __init__(self, out_dir: str = "handeye_output"):
        self.out_dir = Path(out_dir)
        self.index_file = self.out_dir / "runs_index.json"

    def ensure_dir(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir

    def _load_index(self) -> Dict:
        """Load the runs index"""
        try:
            with open(self.index_file, 'r', encoding='utf-8') as f:
                return json.load(f)
        except (FileNotFoundError, json.JSONDecodeError):
            return {"runs": {}, "latest_run": None}

    def _save_index(self, index_data: Dict):
        """Save the runs index"""
        with open(self.index_file, 'w', encoding='utf-8') as f:
            json.dump(index_data, f, indent=2, ensure_ascii=False)

    def write_text(self, name: str, text: str) -> Path:
        self.ensure_dir()
        path = self.out_dir / name
        path.write_text(text, encoding="utf-8")
        return path

    def write_result(self, extrinsic, dt: float, name: str = RESULT_FILE, **fields: Any) -> Path:
        return self.write_text(name, render_result(extrinsic, dt, **fields))

    def read_result(self, name: str = RESULT_FILE) -> ResultRecord:
        return read_result(self.out_dir / name)

    def write_run(self, command: str, state: Dict[str, Any], config: RunConfig) -> Optional[str]:
        """
        Write every artifact the final pipeline state carries

        Args:
            command: CLI command that produced the state
            state: Final orchestrator state
            config: Configuration of the run

        Returns:
            The run ID, or None when ingestion failed and nothing was written
        """
        if state.get("failed_stage") == "ingest" or "ingest" not in state.get("completed_stages", []):
            return None
        self.ensure_dir()
        outputs: List[str] = []

        calibration = state.get("calibration")
        refinement = state.get("refinement")
        if calibration is not None:
            if refinement is not None and refinement.report.status == "stalled":
                status = "stalled"
            elif state.get("failed_stage") is not None:
                status = "error"
            else:
                status = "ok"
            pairs = len(state["pairs"]) if state.get("pairs") is not None else None
            self.write_text(RESULT_FILE, render_calibration_result(calibration, status, pairs))
            outputs.append(RESULT_FILE)

        linear = state.get("linear_calibration")
        if linear is not None:
            self.write_text(LINEAR_RESULT_FILE, render_calibration_result(linear))
            outputs.append(LINEAR_RESULT_FILE)

        if state.get("diagnostics"):
            write_csv(self.out_dir / PAIRS_FILE, state["diagnostics"])
            outputs.append(PAIRS_FILE)

        if refinement is not None:
            self.write_text(CONVERGENCE_FILE,
                            render_convergence_report(refinement.report, refinement.extrinsic, refinement.dt))
            outputs.append(CONVERGENCE_FILE)

        metrics = state.get("metrics")
        if metrics is not None:
            self.write_text(METRICS_FILE, render_metric_report(metrics))
            rows = [
                {"t": t, "ape_m": ape, "are_deg": are}
                for t, ape, are in zip(metrics.times, metrics.ape_errors, metrics.are_errors)
            ]
            write_csv(self.out_dir / ERRORS_FILE, rows, ["t", "ape_m", "are_deg"])
            outputs.extend([METRICS_FILE, ERRORS_FILE])

        return self._record(command, state, config, outputs)

    def _record(self, command: str, state: Dict[str, Any], config: RunConfig, outputs: List[str]) -> str:
        run_id = str(uuid.uuid4())[:8]
        index = self._load_index()
        while run_id in index["runs"]:
            run_id = str(uuid.uuid4())[:8]

        alignment = state.get("alignment")
        manifest = {
            "id": run_id,
            "command": command,
            "created_at": datetime.now().isoformat(),
            "status": state.get("status"),
            "exit_code": state.get("exit_code"),
            "failed_stage": state.get("failed_stage"),
            "errors": list(state.get("errors", [])),
            "completed_stages": list(state.get("completed_stages", [])),
            "seeds": {
                "ransac": config.calibration.rng_seed,
                "simulation": config.simulation.seed,
            },
            "input_hashes": state.get("input_hashes", {}),
            "versions": package_versions(),
            "config": config.echo(),
            "outputs": outputs,
        }
        if alignment is not None:
            manifest["time_alignment"] = {
                "dt": alignment.dt,
                "peak_correlation": alignment.peak_correlation,
                "reliable": alignment.reliable,
                "curvature_ok": alignment.curvature_ok,
                "rate": alignment.rate,
                "diagnostics": alignment.diagnostics,
            }
        with open(self.out_dir / MANIFEST_FILE, 'w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2, ensure_ascii=False, default=str)

        index["runs"][run_id] = {
            "id": run_id,
            "command": command,
            "created_at": manifest["created_at"],
            "status": manifest["status"],
            "outputs": outputs,
        }
        index["latest_run"] = run_id
        self._save_index(index)
        return run_id

    def list_runs(self) -> List[Dict]:
        """Get all recorded runs, oldest first"""
        return list(self._load_index()["runs"].values())

    def get_run(self, run_id: str) -> Optional[Dict]:
        return self._load_index()["runs"].get(run_id)

    def load_manifest(self) -> Optional[Dict]:
        try:
            with open(self.out_dir / MANIFEST_FILE, 'r', encoding='utf-8') as f:
                return json.load(f)
        except (FileNotFoundError, json.JSONDecodeError):
            return None
