"""
Artifact files and run history.

Pipeline outputs are written as `<name>.partial` until the run finishes;
`finalize()` renames them. Finished and failed runs are appended to a JSONL
ledger in the history directory.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from filelock import FileLock

from chipgate.constants import CHIPGATE_HISTORY_DIR_ENV
from chipgate.units import SpatialGrid1D
from chipgate.utils import sanitize_error_message, to_builtin

logger = logging.getLogger(__name__)

PARTIAL_SUFFIX = ".partial"
SNAPSHOT_FORMAT = "chipgate-snapshot"


def get_default_history_dir() -> Path:
    """
    Directory for the run ledger and telemetry.

    CHIPGATE_HISTORY_DIR overrides; otherwise ~/.chipgate (%APPDATA%/chipgate on Windows).
    """
    override = os.getenv(CHIPGATE_HISTORY_DIR_ENV)
    if override:
        return Path(override).expanduser()

    if sys.platform == "win32":
        appdata = os.environ.get("APPDATA")
        if appdata:
            return Path(appdata) / "chipgate"
        return Path.home() / "chipgate"
    return Path.home() / ".chipgate"


def _format_cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def json_text(payload: Any) -> str:
    """Sorted-key JSON; floats use repr so output is byte-stable."""
    return json.dumps(to_builtin(payload), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format_cell(value) for value in row])
    return buffer.getvalue()


def read_csv(path: Union[str, Path]) -> Tuple[List[str], np.ndarray]:
    """Header and float matrix of a numeric CSV artifact."""
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = [[float(cell) for cell in row] for row in reader if row]
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------


def snapshot_bytes(grid: SpatialGrid1D, amplitudes: np.ndarray, metadata: Optional[dict] = None) -> bytes:
    """One JSON header line, then row-major little-endian complex128 values."""
    array = np.ascontiguousarray(amplitudes, dtype="<c16")
    header = {
        "format": SNAPSHOT_FORMAT,
        "version": 1,
        "dtype": "complex128",
        "byte_order": "little",
        "order": "C",
        "shape": list(array.shape),
        "grid": grid.to_dict(),
        "metadata": to_builtin(metadata or {}),
    }
    return (json.dumps(header, sort_keys=True) + "\n").encode("utf-8") + array.tobytes(order="C")


def read_snapshot(path: Union[str, Path]) -> Tuple[dict, np.ndarray]:
    data = Path(path).read_bytes()
    newline = data.index(b"\n")
    header = json.loads(data[:newline].decode("utf-8"))
    if header.get("format") != SNAPSHOT_FORMAT:
        raise ValueError(f"{path} is not a chipgate snapshot")
    array = np.frombuffer(data[newline + 1:], dtype="<c16").reshape(header["shape"])
    return header, array.copy()


# ---------------------------------------------------------------------------
# Artifact store
# ---------------------------------------------------------------------------


class ArtifactStore:
    """Writes artifacts into one output directory."""

    def __init__(self, output_dir: Union[str, Path], partial: bool = True) -> None:
        self.output_dir = Path(output_dir)
        self.partial = partial
        self.written: List[str] = []
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def _target(self, name: str) -> Path:
        return self.output_dir / (name + PARTIAL_SUFFIX if self.partial else name)

    def _write(self, name: str, data: bytes) -> Path:
        target = self._target(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
        if name not in self.written:
            self.written.append(name)
        logger.debug("Artifact written", extra={"artifact": name, "bytes": len(data)})
        return target

    def write_json(self, name: str, payload: Any) -> Path:
        return self._write(name, json_text(payload).encode("utf-8"))

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        return self._write(name, csv_text(header, rows).encode("utf-8"))

    def write_snapshot(self, name: str, grid: SpatialGrid1D, amplitudes: np.ndarray,
                       metadata: Optional[dict] = None) -> Path:
        return self._write(name, snapshot_bytes(grid, amplitudes, metadata))

    def existing(self, name: str) -> Optional[Path]:
        """Final artifact if present, else an in-flight one from this run."""
        final = self.path(name)
        if final.is_file():
            return final
        if name in self.written and self._target(name).is_file():
            return self._target(name)
        return None

    def pending(self) -> List[Path]:
        return sorted(self.output_dir.rglob("*" + PARTIAL_SUFFIX))

    def finalize(self) -> List[Path]:
        """Rename this run's `.partial` files to their final names."""
        finished = []
        if not self.partial:
            return [self.path(name) for name in self.written]
        for name in self.written:
            source = self._target(name)
            if source.is_file():
                destination = self.path(name)
                os.replace(source, destination)
                finished.append(destination)
        logger.debug("Artifacts finalized", extra={"count": len(finished)})
        return finished


# ---------------------------------------------------------------------------
# Run history
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    stage: str
    output_dir: str
    status: str
    timestamp: str = ""
    message: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(**data)


class RunHistory:
    """Append-only runs.jsonl guarded by a file lock."""

    def __init__(self, history_dir: Optional[Path] = None) -> None:
        self.history_dir = Path(history_dir) if history_dir is not None else get_default_history_dir()
        self.history_file = self.history_dir / "runs.jsonl"
        self.lock = FileLock(str(self.history_file) + ".lock", timeout=10)

    def record(self, record: RunRecord) -> None:
        if not record.timestamp:
            record.timestamp = datetime.now().isoformat()
        try:
            self.history_dir.mkdir(parents=True, exist_ok=True)
            with self.lock:
                with open(self.history_file, "a", encoding="utf-8") as handle:
                    json.dump(record.to_dict(), handle, sort_keys=True)
                    handle.write("\n")
        except Exception as exc:
            logger.error("Failed to record run: %s", sanitize_error_message(str(exc)))

    def entries(self) -> List[RunRecord]:
        if not self.history_file.exists():
            return []
        records = []
        with self.lock:
            with open(self.history_file, "r", encoding="utf-8") as handle:
                for line_num, line in enumerate(handle, 1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        records.append(RunRecord.from_dict(json.loads(line)))
                    except (json.JSONDecodeError, TypeError) as exc:
                        logger.warning("Failed to parse run history line %d: %s", line_num, exc)
        return records

    def report_dirs(self) -> List[Path]:
        """Output directories of successful runs that hold a gate report, oldest first, deduplicated."""
        seen, directories = set(), []
        for record in self.entries():
            directory = Path(record.output_dir)
            if record.status != "success" or directory in seen:
                continue
            if (directory / "report.json").is_file():
                seen.add(directory)
                directories.append(directory)
        return directories
