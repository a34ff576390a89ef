"""
Report writer for cascade-uq.
Writes run artifacts (JSON, CSV, SVG) into an output directory, each file atomically.
"""

import json
import os
import logging
import tempfile
from pathlib import Path
from typing import Any, List, Optional, Sequence

import pandas as pd

from src.core.models import BaseCUModel, FoldArtifacts

logger = logging.getLogger(__name__)


def atomic_write_text(path: str, text: str) -> str:
    """Write to a temp file in the target directory, then rename over the target."""
    target = Path(path)
    if target.parent and not target.parent.exists():
        target.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(dir=str(target.parent), prefix=f".{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(temp_path, target)
    except BaseException:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise
    return str(target)


def frame_to_csv(frame: pd.DataFrame) -> str:
    return frame.to_csv(index=False, lineterminator="\n")


def dump_json(payload: Any) -> str:
    if isinstance(payload, BaseCUModel):
        return payload.to_json(indent=2) + "\n"
    return json.dumps(payload, indent=2, ensure_ascii=False) + "\n"


class ReportWriter:
    """Handles file output for one command invocation."""

    def __init__(self, output_dir: str = "results"):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.written: List[str] = []

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def write_text(self, name: str, text: str) -> str:
        written = atomic_write_text(str(self.path(name)), text)
        self.written.append(written)
        logger.debug(f"Wrote {written}")
        return written

    def write_json(self, name: str, payload: Any) -> str:
        return self.write_text(name, dump_json(payload))

    def write_csv(self, name: str, frame: pd.DataFrame) -> str:
        return self.write_text(name, frame_to_csv(frame))


def save_artifacts(path: str, artifacts: Sequence[Optional[FoldArtifacts]]) -> str:
    """Fold artifacts (scalers, subsets, ensembles, thresholds) as one JSON list; failed folds are skipped."""
    payload = [a.to_dict() for a in artifacts if a is not None]
    return atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def load_artifacts(path: str) -> List[FoldArtifacts]:
    """Read fold artifacts written by save_artifacts."""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return [FoldArtifacts.model_validate(item) for item in data]
