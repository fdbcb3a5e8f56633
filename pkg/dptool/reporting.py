"""Report envelopes and rendering for dptool

Every JSON report is wrapped as {"manifest": ..., "report": ...}. The
manifest records what produced the report; report bodies depend only on
inputs and seed.
"""

import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict

from dptool import __version__
from dptool.config import get_settings

logger = logging.getLogger(__name__)

ANSI = {"green": "\033[32m", "yellow": "\033[33m", "red": "\033[31m", "bold": "\033[1m", "reset": "\033[0m"}


class RunManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    tool_version: str
    problem_hash: Optional[str] = None
    command_line: List[str]
    root_seed: Optional[int] = None
    started_at: str
    finished_at: Optional[str] = None


def file_hash(path: Union[str, Path]) -> str:
    """sha256 of the file bytes."""
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return f"sha256:{digest}"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def start_manifest(argv: Sequence[str], problem_path: Optional[Union[str, Path]] = None,
                   seed: Optional[int] = None) -> RunManifest:
    problem_hash = None
    if problem_path is not None:
        try:
            problem_hash = file_hash(problem_path)
        except OSError as e:
            logger.debug(f"Cannot hash {problem_path}: {e}")
    return RunManifest(
        tool_version=__version__,
        problem_hash=problem_hash,
        command_line=list(argv),
        root_seed=seed,
        started_at=_now(),
    )


def envelope(manifest: RunManifest, report: Any) -> Dict[str, Any]:
    body = report.model_dump(mode="json") if isinstance(report, BaseModel) else report
    finished = manifest.model_copy(update={"finished_at": _now()})
    return {"manifest": finished.model_dump(mode="json"), "report": body}


def to_json(manifest: RunManifest, report: Any) -> str:
    return json.dumps(envelope(manifest, report), indent=2, sort_keys=False, allow_nan=False)


def write_json(path: Union[str, Path], manifest: RunManifest, report: Any) -> None:
    Path(path).write_text(to_json(manifest, report) + "\n", encoding="utf-8")
    logger.info(f"Wrote report to {path}")


# ===== TEXT =====

def use_color(no_color: bool = False) -> bool:
    if no_color or get_settings().no_color:
        return False
    return sys.stdout.isatty()


def paint(text: str, color: str, enabled: bool) -> str:
    return f"{ANSI[color]}{text}{ANSI['reset']}" if enabled else text


VERDICT_COLORS = {"well_defined": "green", "ill_defined": "red", "degenerate": "yellow"}


def fmt(value: Optional[float]) -> str:
    return "undefined" if value is None else f"{value:.6g}"


def render_mapping(title: str, values: Dict[str, Any], color: bool = False) -> str:
    lines = [paint(title, "bold", color)]
    width = max((len(k) for k in values), default=0)
    for key, value in values.items():
        shown = fmt(value) if isinstance(value, float) or value is None else value
        lines.append(f"  {key.ljust(width)}  {shown}")
    return "\n".join(lines)


def render_audit(report, rules, multiplicity=None, color: bool = False) -> str:
    """Human-readable audit report; `rules` is the ordered rule table."""
    lines = [
        paint("Audit verdict: ", "bold", color)
        + paint(report.verdict + (f" ({report.sub_verdict})" if report.sub_verdict else ""),
                VERDICT_COLORS[report.verdict], color),
        "",
        paint("Reasons", "bold", color),
    ]
    lines += [f"  [{r.code}] {r.message}" for r in report.reasons]
    lines += ["", paint("Loss ledger", "bold", color)]
    for source, entry in report.loss_ledger.items():
        mark = paint("definable", "green", color) if entry.definable else paint("undefinable", "red", color)
        lines.append(f"  {source:<13} {mark}: {entry.reason}")
    if report.warnings:
        lines += ["", paint("Warnings", "bold", color)]
        lines += [paint(f"  [{w.code}] ", "yellow", color) + w.message for w in report.warnings]
    if report.notes:
        lines += ["", paint("Notes", "bold", color)]
        lines += [f"  [{n.code}] {n.message}" for n in report.notes]
    if multiplicity is not None:
        lines += ["", paint("Posterior bounds over consistent joints", "bold", color)]
        for label, b in multiplicity.posterior_bounds.items():
            flip = paint(" action flips", "yellow", color) if b.action_flips else ""
            lines.append(f"  {label}: [{b.lower:.6g}, {b.upper:.6g}] {b.lower_action} .. {b.upper_action}{flip}")
    lines += ["", paint("Rule table (first match wins)", "bold", color)]
    lines += [f"  {i + 1}. {r.code} -> {r.outcome}: {r.criterion}" for i, r in enumerate(rules)]
    return "\n".join(lines)


def render_validation(report, color: bool = False) -> str:
    if report.valid:
        return paint("valid", "green", color)
    lines = [paint(f"invalid ({len(report.violations)} violations)", "red", color)]
    lines += [f"  [{v.code}] {v.path}: {v.message}" for v in report.violations]
    return "\n".join(lines)
