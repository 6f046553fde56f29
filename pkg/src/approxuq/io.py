"""Delimited-text tables, atomic writes and provenance sidecars."""
from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataFileError


def atomic_write_bytes(path, data: bytes):
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    try:
        directory.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    except OSError as exc:
        raise DataFileError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(v) -> str:
    """Shortest round-trip representation; locale independent."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def write_table(path, header, rows, config_hash: str | None = None):
    """Comma-separated table with a ``# config_hash`` comment line and a header row."""
    buf = io.StringIO()
    if config_hash is not None:
        buf.write(f"# config_hash: {config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def read_table(path, expected_columns=None):
    """Read a headered numeric table; comment lines start with ``#``.

    Returns
    -------
    header : list of str
    values : ndarray of shape (rows, columns)

    Raises
    ------
    DataFileError
        With the file, line and column of the first malformed value.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataFileError(f"cannot read {path}: {exc}") from exc
    header = None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cells = next(csv.reader([line]))
        if header is None:
            header = [c.strip() for c in cells]
            if expected_columns is not None and header[: len(expected_columns)] != list(expected_columns):
                raise DataFileError(f"{path}:{lineno}: expected header {','.join(expected_columns)}, "
                                    f"got {','.join(header)}")
            continue
        if len(cells) != len(header):
            raise DataFileError(f"{path}:{lineno}: expected {len(header)} columns, got {len(cells)}")
        row = []
        for j, cell in enumerate(cells):
            try:
                v = float(cell)
            except ValueError:
                raise DataFileError(f"{path}:{lineno}: column {j + 1} ({header[j]}): "
                                    f"not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise DataFileError(f"{path}:{lineno}: column {j + 1} ({header[j]}): non-finite value")
            row.append(v)
        rows.append(row)
    if header is None:
        raise DataFileError(f"{path}: missing header row")
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


def x_columns(M: int):
    return [f"x{i + 1}" for i in range(M)]


def read_pairs(path):
    """Training pairs file: columns x1..xM, y."""
    header, values = read_table(path)
    if len(header) < 2 or header[-1] != "y" or header[:-1] != x_columns(len(header) - 1):
        raise DataFileError(f"{path}: header must be x1,...,xM,y; got {','.join(header)}")
    return values[:, :-1], values[:, -1]


def read_xsamples(path):
    """pi_x samples file: columns x1..xM."""
    header, values = read_table(path)
    if not header or header != x_columns(len(header)):
        raise DataFileError(f"{path}: header must be x1,...,xM; got {','.join(header)}")
    if len(values) == 0:
        raise DataFileError(f"{path}: no samples")
    return values


def write_provenance(path, record: dict):
    """Sidecar ``<path>.provenance.json``; the only place timestamps are written."""
    record = dict(record)
    record["written_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    atomic_write_bytes(f"{path}.provenance.json",
                       (json.dumps(record, indent=2, sort_keys=True) + "\n").encode("utf-8"))
