import hashlib
import os
from pathlib import Path
from typing import Callable

import pandas as pd

from dimensionality_lab.core.config import CSV_SIGNIFICANT_DIGITS

FLOAT_FORMAT = f"%.{CSV_SIGNIFICANT_DIGITS}g"
ARTIFACT_SIZE_UNITS = ("KiB", "MiB", "GiB", "TiB")


def write_csv(path: str | Path, frame: pd.DataFrame):
    """
    Helper to write a frame as CSV with fixed precision and line endings so reruns are byte-identical
    """
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def records_frame(rows: list[dict], columns: list[str]) -> pd.DataFrame:
    """
    Build a frame with a fixed column order, keeping the header even when there are no rows
    """
    return pd.DataFrame(rows, columns=columns)


def file_sha256(path: str | Path) -> str:
    """
    Hex SHA-256 digest of a file
    """
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def derive_seed(base_seed: int, index: int) -> int:
    """
    Seed of the index-th replicate of a run seeded with base_seed
    """
    return base_seed + index


def atomic_write_text(path: Path, text: str):
    """
    Write a text file through a temporary sibling and an atomic rename
    """
    temp_path = path.with_name(f".{path.name}.tmp")
    with open(temp_path, "w", encoding="utf8", newline="\n") as f:
        f.write(text)
    os.replace(temp_path, path)


def format_bytes(num_bytes: int) -> str:
    """
    Artifact size for log lines, e.g. '812 B' or '1.50 MiB'
    """
    if num_bytes < 1024:
        return f"{num_bytes} B"

    size = float(num_bytes)
    for unit in ARTIFACT_SIZE_UNITS:
        size /= 1024
        if size < 1024 or unit == ARTIFACT_SIZE_UNITS[-1]:
            return f"{size:.2f} {unit}"


class ArtifactWriter:
    """
    Helper class to write run artifacts under one output directory and remember what was written
    """

    def __init__(self, output_dir: Path):
        """
        Initialize the writer on an existing, writable directory
        """
        self.output_dir = Path(output_dir)
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        """
        Resolve an artifact name, refusing anything that would land outside the output directory
        """
        root = self.output_dir.resolve()
        target = (root / name).resolve()
        if target.parent != root:
            raise PermissionError(f"Artifact '{name}' would be written outside {self.output_dir}")
        return target

    def _track(self, path: Path):
        if path not in self.written:
            self.written.append(path)

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.path(name)
        self._track(path)
        write_csv(path, frame)
        return path

    def write_with(self, name: str, writer: Callable[[Path], None]) -> Path:
        """
        Let a callback write the artifact, e.g. a binary checkpoint
        """
        path = self.path(name)
        self._track(path)
        writer(path)
        return path

    def records(self) -> list[dict]:
        """
        Name, SHA-256 and size of every artifact in write order
        """
        return [{"path": path.name, "sha256": file_sha256(path), "bytes": path.stat().st_size} for path in self.written]

    def remove_all(self):
        """
        Delete everything written so far, used to drop partial outputs of a failed run
        """
        for path in self.written:
            path.unlink(missing_ok=True)
        self.written.clear()
