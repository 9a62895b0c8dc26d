"""File formats: PGM images, raw float64 matrices, key-value configs and
trace CSVs. Every writer goes through a temp file and an atomic rename."""

from __future__ import annotations

import csv
import io
import os
import re
import struct
import tempfile
from pathlib import Path

import numpy as np

__all__ = [
    "atomic_write",
    "read_pgm",
    "write_pgm",
    "read_raw",
    "write_raw",
    "parse_keyvalue",
    "format_keyvalue",
    "read_keyvalue",
    "write_keyvalue",
    "TRACE_SCHEMA",
    "TRACE_COLUMNS",
    "write_trace_csv",
    "read_trace_csv",
]

RAW_MAGIC = b"NPXF64\x00\x01"
TRACE_SCHEMA = "nestedprox-trace/1"
TRACE_COLUMNS = ("outer_iter", "wall_seconds", "objective", "normalized_objective",
                 "inner_iters", "outer_step_norm")


def atomic_write(path, data: bytes | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- PGM ----------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(buf: bytes, count: int):
    pos = 0
    out = []
    for _ in range(count):
        m = _TOKEN.match(buf, pos)
        if not m:
            raise ValueError("truncated PGM header")
        out.append(m.group(1))
        pos = m.end()
    return out, pos


def read_pgm(path) -> np.ndarray:
    """Read a P5 (binary) or P2 (ASCII) greymap, 8 or 16 bit, as float."""
    buf = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _header_tokens(buf, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    if not (0 < maxval < 65536) or w < 1 or h < 1:
        raise ValueError(f"{path}: bad PGM header")
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        data = buf[pos + 1: pos + 1 + w * h * dtype.itemsize]
        if len(data) < w * h * dtype.itemsize:
            raise ValueError(f"{path}: truncated PGM data")
        img = np.frombuffer(data, dtype=dtype).reshape(h, w)
    elif magic == b"P2":
        vals = buf[pos:].split()
        if len(vals) < w * h:
            raise ValueError(f"{path}: truncated PGM data")
        img = np.array([int(v) for v in vals[: w * h]]).reshape(h, w)
    else:
        raise ValueError(f"{path}: not a PGM file (magic {magic!r})")
    if img.max(initial=0) > maxval:
        raise ValueError(f"{path}: sample exceeds maxval")
    return img.astype(float)


def write_pgm(path, img, *, maxval: int | None = None, ascii: bool = False):
    """Write an image rounded and clipped to [0, maxval]; 16 bit when maxval > 255."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-D")
    if maxval is None:
        maxval = 255
    q = np.clip(np.rint(img), 0, maxval).astype(np.int64)
    h, w = img.shape
    header = f"{'P2' if ascii else 'P5'}\n{w} {h}\n{maxval}\n".encode()
    if ascii:
        body = "\n".join(" ".join(str(v) for v in row) for row in q).encode() + b"\n"
    else:
        body = q.astype(">u2" if maxval > 255 else "u1").tobytes()
    atomic_write(path, header + body)


# -- raw float64 matrices -------------------------------------------------------

def write_raw(path, mat):
    """Magic, then N1 (columns) and N2 (rows) as little-endian uint64, then
    row-major little-endian float64 samples."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2:
        raise ValueError("raw matrices are 2-D")
    n2, n1 = mat.shape
    atomic_write(path, RAW_MAGIC + struct.pack("<QQ", n1, n2) + mat.astype("<f8").tobytes())


def read_raw(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:8] != RAW_MAGIC:
        raise ValueError(f"{path}: bad magic")
    n1, n2 = struct.unpack("<QQ", buf[8:24])
    data = np.frombuffer(buf[24:], dtype="<f8")
    if data.size != n1 * n2:
        raise ValueError(f"{path}: expected {n1 * n2} samples, found {data.size}")
    return data.reshape(n2, n1).astype(float)


# -- key-value text -------------------------------------------------------------

def parse_keyvalue(text: str) -> dict:
    """``[section]`` headers and ``key = value`` lines; keys become dotted
    ``section.key``. ``#`` starts a comment. Values stay strings."""
    out = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ValueError(f"line {lineno}: malformed section header {raw!r}")
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        full = f"{section}.{key}" if section else key
        if full in out:
            raise ValueError(f"line {lineno}: duplicate key {full!r}")
        out[full] = value
    return out


def format_keyvalue(items: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def read_keyvalue(path) -> dict:
    return parse_keyvalue(Path(path).read_text())


def write_keyvalue(path, items: dict):
    atomic_write(path, format_keyvalue(items))


# -- trace CSV ------------------------------------------------------------------

def write_trace_csv(path, rows, *, include_time: bool = True):
    """rows: iterable of dicts keyed by TRACE_COLUMNS. The first line names the schema."""
    buf = io.StringIO()
    buf.write(f"# schema: {TRACE_SCHEMA}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for r in rows:
        writer.writerow([r["outer_iter"], repr(float(r["wall_seconds"])) if include_time else "",
                         repr(float(r["objective"])), repr(float(r["normalized_objective"])),
                         r["inner_iters"], repr(float(r["outer_step_norm"]))])
    atomic_write(path, buf.getvalue())


def read_trace_csv(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"# schema: {TRACE_SCHEMA}":
        raise ValueError(f"{path}: missing or unknown trace schema header")
    reader = csv.DictReader(lines[1:])
    if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
    rows = []
    for r in reader:
        rows.append({
            "outer_iter": int(r["outer_iter"]),
            "wall_seconds": float(r["wall_seconds"]) if r["wall_seconds"] else float("nan"),
            "objective": float(r["objective"]),
            "normalized_objective": float(r["normalized_objective"]),
            "inner_iters": int(r["inner_iters"]),
            "outer_step_norm": float(r["outer_step_norm"]),
        })
    return rows
