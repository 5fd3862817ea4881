"""CSV and config-file plumbing shared by the experiments and the CLI."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import asdict, is_dataclass
from enum import Enum
from pathlib import Path


def _jsonable(obj):
    if is_dataclass(obj):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_hash(obj) -> str:
    blob = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def fmt(value) -> str:
    if isinstance(value, float):
        return repr(float(value))  # np.float64 reprs as "np.float64(...)" under numpy 2
    if hasattr(value, "item"):  # numpy scalar
        return fmt(value.item())
    return str(value)


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_csv(header: list[str], rows, chash: str | None = None) -> str:
    buf = io.StringIO()
    if chash is not None:
        buf.write(f"# config_sha256={chash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows, chash: str | None = None) -> Path:
    atomic_write(path, format_csv(header, rows, chash))
    return Path(path)


def parse_csv(text: str) -> tuple[list[str], list[list[str]], str | None]:
    """Return ``(header, rows, config_hash)``; comment lines are skipped."""
    chash = None
    lines = []
    for line in text.splitlines():
        if line.startswith("#"):
            if line.startswith("# config_sha256="):
                chash = line.split("=", 1)[1].strip()
            continue
        lines.append(line)
    reader = csv.reader(lines)
    header = next(reader, [])
    return header, [r for r in reader], chash


def read_csv(path) -> tuple[list[str], list[list[str]], str | None]:
    return parse_csv(Path(path).read_text())


def parse_key_values(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"line {n}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out
