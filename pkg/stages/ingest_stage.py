"""
Ingest Stage
Checks that every named input exists, then loads trajectories and prior results
"""

import hashlib
from pathlib import Path
from typing import Any, Dict

from reporting import read_result
from services.errors import MissingInput
from services.trajectory_io import load_trajectory

from .base_stage import BaseStage

TRAJECTORY_INPUTS = ("hand", "eye", "est", "gt_raw")


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class IngestStage(BaseStage):
    """Loads the hand, eye and evaluation trajectories named by the run"""

    def get_stage_name(self) -> str:
        return "ingest"

    def process(self, input_data: Dict[str, Any]) -> Dict[str, Any]:
        """
        Load every input whose path is present

        Args:
            input_data: ``<name>_path`` entries for hand, eye, est, gt_raw and init,
                plus ``format`` and ``eye_format``

        Returns:
            Loaded trajectories by name, the parsed ``init`` result and
            ``input_hashes`` (sha256 per file)
        """
        paths = {
            name: Path(input_data[f"{name}_path"])
            for name in TRAJECTORY_INPUTS + ("init",)
            if input_data.get(f"{name}_path") is not None
        }
        if not paths:
            raise MissingInput("no input files were given")

        # Nothing is read until every file is known to exist
        missing = [str(path) for path in paths.values() if not path.is_file()]
        if missing:
            raise MissingInput(f"input file not found: {', '.join(missing)}")

        hand_format = input_data.get("format") or "tum"
        eye_format = input_data.get("eye_format") or hand_format
        result: Dict[str, Any] = {"input_hashes": {}}
        for name, path in paths.items():
            result["input_hashes"][name] = file_sha256(path)
            if name == "init":
                result["init"] = read_result(path)
                continue
            fmt = eye_format if name in ("eye", "est") else hand_format
            result[name] = load_trajectory(path, fmt, frame_label=name)
            self.logger.info("Loaded %s: %r", name, result[name])
        return result
