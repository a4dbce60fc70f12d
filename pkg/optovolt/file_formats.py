"""
Reading and writing of the plain-text files the toolkit exchanges: waveform records and tidy numeric CSV tables.
The schemas of particular tables (Bode tables, PSDs etc.) are declared by the modules that own them.

All writes are atomic (a temporary file in the target directory is renamed over the target) and floats are written
in their shortest round-trip representation, so identical data always produces byte-identical files.
"""

import hashlib
import logging
import os
import tempfile
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from optovolt.labkit.errors import RecordIOError
from optovolt.optovolt_typing import RealArray
from optovolt.waveforms import Waveform

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_WAVEFORM_REQUIRED_KEYS = ("sample_rate_hz", "t0_s")
_WAVEFORM_OPTIONAL_KEYS = ("antialias_filter_hz", "content_bandwidth_hz")


def format_float(value: float) -> str:
    return repr(float(value))


def atomic_write_text(path: PathLike, text: str) -> str:
    """
    Write `text` to `path` atomically and return the SHA-256 fingerprint of the written bytes.
    """
    path = Path(path)
    data = text.encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as tmp_file:
                tmp_file.write(data)
            os.replace(tmp_name, path)
        except BaseException:
            Path(tmp_name).unlink(missing_ok=True)
            raise
    except OSError as exc:
        raise RecordIOError(f"cannot write {str(path)!r}: {exc}") from exc

    fingerprint = hashlib.sha256(data).hexdigest()
    logger.debug("wrote %s (sha256 %s)", path, fingerprint)
    return fingerprint


def read_text(path: PathLike, what: str = "file") -> str:
    try:
        return Path(path).read_bytes().decode("utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise RecordIOError(f"cannot read {what} {str(path)!r}: {exc}") from exc


def _parse_comment(line: str) -> dict[str, str]:
    """
    Parse a `# key=value key=value` comment line.
    """
    pairs = {}
    for token in line.lstrip("#").split():
        key, separator, value = token.partition("=")
        if separator:
            pairs[key] = value
    return pairs


def write_waveform_csv(waveform: Waveform, path: PathLike) -> str:
    """
    Write a waveform as a header line with its timing metadata followed by one sample per line.
    """
    header = f"# sample_rate_hz={format_float(waveform.sample_rate)} t0_s={format_float(waveform.t0)}"
    for key in _WAVEFORM_OPTIONAL_KEYS:
        value = getattr(waveform, key)
        if value is not None:
            header += f" {key}={format_float(value)}"
    lines = [header, *(format_float(sample) for sample in waveform.samples)]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_waveform_csv(path: PathLike) -> Waveform:
    """
    Read a waveform record (both `\\n` and `\\r\\n` line endings are accepted).
    """
    lines = read_text(path, "waveform").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise RecordIOError(f"{str(path)!r}: the first line must be `# sample_rate_hz=<float> t0_s=<float>`")

    header = _parse_comment(lines[0])
    missing = [key for key in _WAVEFORM_REQUIRED_KEYS if key not in header]
    if missing:
        raise RecordIOError(f"{str(path)!r}: the header lacks {', '.join(missing)}")

    try:
        samples = [float(line) for line in lines[1:] if line.strip()]
        metadata = {key: float(header[key]) for key in _WAVEFORM_OPTIONAL_KEYS if key in header}
        return Waveform(
            samples=samples,
            sample_rate=float(header["sample_rate_hz"]),
            t0=float(header["t0_s"]),
            **metadata,
        )
    except ValueError as exc:
        raise RecordIOError(f"{str(path)!r}: malformed waveform record: {exc}") from exc


def write_table_csv(
    path: PathLike,
    header: Sequence[str],
    columns: Sequence[Sequence[float]],
    metadata: Optional[dict[str, Union[int, float, str]]] = None,
) -> str:
    """
    Write a tidy numeric table: an optional `# key=value ...` metadata line, the header and one row per line.
    Integer columns are written as integers.
    """
    if len(header) != len(columns):
        raise ValueError(f"{len(header)} column names for {len(columns)} columns")
    arrays = [np.asarray(column) for column in columns]
    if len({array.size for array in arrays}) > 1:
        raise ValueError("all the table columns must have the same length")

    def format_cell(value) -> str:
        if isinstance(value, (int, np.integer)):
            return str(int(value))
        return format_float(value)

    lines = []
    if metadata:
        lines.append("# " + " ".join(f"{key}={value}" for key, value in metadata.items()))
    lines.append(",".join(header))
    lines.extend(",".join(format_cell(value) for value in row) for row in zip(*(array.tolist() for array in arrays)))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_table_csv(path: PathLike, header: Sequence[str]) -> tuple[dict[str, RealArray], dict[str, str]]:
    """
    Read a table written by `write_table_csv()`. The header must match `header` exactly. Returns the columns (as
    float arrays) and the metadata found in `#` lines.
    """
    metadata: dict[str, str] = {}
    rows: list[list[float]] = []
    header_seen = False

    for line_number, line in enumerate(read_text(path, "table").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            metadata.update(_parse_comment(line))
            continue
        cells = [cell.strip() for cell in line.split(",")]
        if not header_seen:
            if cells != list(header):
                raise RecordIOError(f"{str(path)!r}: expected the header `{','.join(header)}`, got `{line}`")
            header_seen = True
            continue
        if len(cells) != len(header):
            raise RecordIOError(f"{str(path)!r}:{line_number}: expected {len(header)} values, got {len(cells)}")
        try:
            rows.append([float(cell) for cell in cells])
        except ValueError as exc:
            raise RecordIOError(f"{str(path)!r}:{line_number}: {exc}") from exc

    if not header_seen:
        raise RecordIOError(f"{str(path)!r}: the header `{','.join(header)}` is missing")

    table = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return {name: table[:, index] for index, name in enumerate(header)}, metadata
