"""
Artifact handler for the transmission solver.
Reads and writes the CSV and JSON files every command produces.
"""

import csv
import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence, runtime_checkable

import numpy as np
from pydantic import BaseModel

from errors import ArtifactError
from utils import format_float

logger = logging.getLogger(__name__)


@runtime_checkable
class TableArtifact(Protocol):
    """Anything that can be written as a fixed-column CSV table."""

    def csv_header(self) -> list[str]: ...

    def csv_rows(self) -> Iterable[Sequence[Any]]: ...


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def _encode_json(obj: Any, level: int = 0) -> str:
    """Deterministic JSON: sorted keys, 17-digit floats, non-finite floats as null."""
    pad = "  " * (level + 1)
    end = "  " * level
    if isinstance(obj, BaseModel):
        obj = obj.model_dump(mode="python", by_alias=True, exclude_none=True)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{pad}{json.dumps(str(key))}: {_encode_json(obj[key], level + 1)}"
            for key in sorted(obj, key=str)
        ]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{_encode_json(item, level + 1)}" for item in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if isinstance(obj, Enum):
        return json.dumps(obj.value)
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj) if math.isfinite(obj) else "null"
    return json.dumps(str(obj))


def render_json(payload: Any) -> str:
    """Serialize a payload the way write_json does, trailing newline included."""
    return _encode_json(payload) + "\n"


class ArtifactHandler:
    """Handles all artifact file operations."""

    def _prepare(self, path: Path) -> None:
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ArtifactError(f"cannot create directory for {path}: {e}", path=str(path)) from e

    def write_csv(self, path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        """Write a CSV table with a fixed header and 17-digit floats."""
        path = Path(path)
        self._prepare(path)
        try:
            with path.open("w", newline="", encoding="utf-8") as handle:
                writer = csv.writer(handle, lineterminator="\n")
                writer.writerow(header)
                for row in rows:
                    writer.writerow([_cell(value) for value in row])
        except OSError as e:
            raise ArtifactError(f"cannot write {path}: {e}", path=str(path)) from e
        logger.info(f"Wrote {path}")
        return path

    def write_json(self, path: str | Path, payload: Any) -> Path:
        """Write a JSON document with sorted keys."""
        path = Path(path)
        self._prepare(path)
        try:
            path.write_text(render_json(payload), encoding="utf-8")
        except OSError as e:
            raise ArtifactError(f"cannot write {path}: {e}", path=str(path)) from e
        logger.info(f"Wrote {path}")
        return path

    def read_csv(self, path: str | Path) -> tuple[list[str], list[list[str]]]:
        """Read a CSV file into (header, rows of raw strings)."""
        path = Path(path)
        try:
            with path.open(newline="", encoding="utf-8") as handle:
                reader = csv.reader(handle)
                header = next(reader, None)
                rows = [row for row in reader if row]
        except OSError as e:
            raise ArtifactError(f"cannot read {path}: {e}", path=str(path)) from e
        if header is None:
            raise ArtifactError(f"{path} is empty", path=str(path))
        return header, rows

    def read_json(self, path: str | Path) -> Any:
        path = Path(path)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ArtifactError(f"cannot read {path}: {e}", path=str(path)) from e


# Global artifact handler instance
artifact_handler = ArtifactHandler()


def emit(artifact: Any, path: str | Path) -> Path:
    """
    Write a finalized artifact: tables go to CSV, records and mappings to JSON.

    Args:
        artifact: A TableArtifact, a pydantic model or a plain mapping
        path: Destination file

    Returns:
        The written path
    """
    if isinstance(artifact, TableArtifact):
        return artifact_handler.write_csv(path, artifact.csv_header(), artifact.csv_rows())
    return artifact_handler.write_json(path, artifact)


def reemit_csv(source: str | Path, destination: str | Path) -> Path:
    """Re-read a numeric CSV and write it back through the float formatter."""
    header, rows = artifact_handler.read_csv(source)

    def parse(cell: str) -> Any:
        try:
            if str(int(cell)) == cell:
                return int(cell)
        except ValueError:
            pass
        try:
            return float(cell)
        except ValueError:
            return cell

    return artifact_handler.write_csv(destination, header, ([parse(c) for c in row] for row in rows))
