"""
Reporting
Renders result files, convergence reports and metric reports from Jinja2 templates
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from services.batch_refinement import ConvergenceReport
from services.errors import ParseError
from services.evaluation_metrics import MetricReport
from services.screw_algebra import DualQuat, Quat, dq_from_rt

TEMPLATE_DIR = Path(__file__).parent / "templates"


def _g17(value: Any) -> str:
    return f"{float(value):.17g}"


def extrinsic_line(extrinsic: DualQuat) -> str:
    """TUM-style "tx ty tz qx qy qz qw" of the canonical (w >= 0) extrinsic."""
    canonical = extrinsic.canonical()
    q = canonical.rotation.as_array()
    t = canonical.translation
    return " ".join(_g17(v) for v in (t[0], t[1], t[2], q[1], q[2], q[3], q[0]))


def _environment() -> Environment:
    env = Environment(
        loader=FileSystemLoader(str(TEMPLATE_DIR)),
        keep_trailing_newline=True,
        trim_blocks=True,
        lstrip_blocks=True,
        undefined=StrictUndefined,
    )
    env.filters["g17"] = _g17
    env.filters["extrinsic"] = extrinsic_line
    return env


_env = _environment()


@dataclass
class ResultRecord:
    """A parsed result file: the extrinsic, the clock offset and every other key as text"""

    extrinsic: DualQuat
    dt: float
    fields: Dict[str, str] = field(default_factory=dict)

    def get(self, key: str, default: Optional[str] = None) -> Optional[str]:
        return self.fields.get(key, default)


def render_result(extrinsic: DualQuat, dt: float, **fields: Any) -> str:
    """
    Render a result file

    Args:
        extrinsic: Hand-eye transform X
        dt: Clock offset in seconds (t_hand = t_eye + dt)
        **fields: Extra keys written one per line in sorted order

    Returns:
        Result file text
    """
    extra = {key: _format_value(value) for key, value in sorted(fields.items())}
    return _env.get_template("result.txt.j2").render(extrinsic=extrinsic, dt=dt, fields=extra)


def _format_value(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _g17(value)
    return str(value)


def render_calibration_result(result, status: str = "ok", pairs: Optional[int] = None) -> str:
    """Result file of a linear calibration (or a refined one carrying the same fields)."""
    fields: Dict[str, Any] = {
        "solver": result.solver,
        "strategy": result.strategy,
        "quality": result.quality,
        "inliers": result.inlier_count,
        "iterations": result.iterations_used,
        "best_iteration": result.best_iteration,
        "status": status,
    }
    if pairs is not None:
        fields["pairs"] = pairs
    return render_result(result.extrinsic, result.dt, **fields)


def parse_result(text: str) -> ResultRecord:
    """Parse result-file text; ``extrinsic`` and ``dt`` are required."""
    fields: Dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition(" ")
        if not value:
            raise ParseError(f"key {key!r} has no value", line_no)
        fields[key] = value.strip()

    for key in ("extrinsic", "dt"):
        if key not in fields:
            raise ParseError(f"result file lacks the {key!r} key", 0)
    try:
        values = [float(v) for v in fields.pop("extrinsic").split()]
        dt = float(fields.pop("dt"))
    except ValueError as e:
        raise ParseError(f"malformed number: {e}", 0) from e
    if len(values) != 7:
        raise ParseError(f"extrinsic needs 7 values, got {len(values)}", 0)
    tx, ty, tz, qx, qy, qz, qw = values
    rotation = Quat.from_array([qw, qx, qy, qz]).normalized()
    return ResultRecord(dq_from_rt(rotation, [tx, ty, tz]), dt, fields)


def read_result(path: Union[str, Path]) -> ResultRecord:
    return parse_result(Path(path).read_text(encoding="utf-8"))


def render_convergence_report(report: ConvergenceReport, extrinsic: DualQuat, dt: float) -> str:
    return _env.get_template("convergence_report.txt.j2").render(report=report, extrinsic=extrinsic, dt=dt)


def render_metric_report(report: MetricReport) -> str:
    return _env.get_template("metric_report.txt.j2").render(
        report=report,
        stats=report.stats(),
        alignment=report.alignment.as_matrix().tolist(),
        scale=report.alignment.scale,
    )
