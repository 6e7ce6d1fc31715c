"""On-disk formats: PFM float images, binary PGM masks, JSON sidecars.

PFM here is the single-channel "Pf" variant with scale -1.0 (little-endian),
and rows stored top-to-bottom in the order they appear in memory, so a write
followed by a read is byte-exact.  PGM is binary P5 with maxval 255 and 255
encoding True.  All writes go through a temp file plus atomic rename.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .grid import BinaryMask

__all__ = [
    "FormatError",
    "atomic_write_bytes",
    "write_pfm",
    "read_pfm",
    "write_pgm",
    "read_pgm",
    "write_json",
    "read_json",
]


class FormatError(ValueError):
    """Raised when an on-disk file does not parse; names the byte offset."""


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    fd, tmp_name = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def write_pfm(path: str | Path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError(f"PFM payload must be 2-d, got shape {data.shape}")
    height, width = data.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    atomic_write_bytes(path, header + np.ascontiguousarray(data).tobytes())


def _read_token(raw: bytes, offset: int, what: str) -> tuple[bytes, int]:
    """Read a whitespace-delimited token starting at offset."""
    n = len(raw)
    while offset < n and raw[offset : offset + 1].isspace():
        offset += 1
    start = offset
    while offset < n and not raw[offset : offset + 1].isspace():
        offset += 1
    if start == offset:
        raise FormatError(f"missing {what} at byte {start}")
    return raw[start:offset], offset


def read_pfm(path: str | Path) -> np.ndarray:
    """Read a single-channel PFM written by :func:`write_pfm`."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"Pf":
        raise FormatError(f"invalid PFM magic at byte 0 (expected 'Pf')")
    offset = 2
    width_tok, offset = _read_token(raw, offset, "PFM width")
    height_tok, offset = _read_token(raw, offset, "PFM height")
    dims_at = offset
    try:
        width, height = int(width_tok), int(height_tok)
    except ValueError:
        raise FormatError(f"invalid PFM dimensions before byte {dims_at}")
    if width < 1 or height < 1:
        raise FormatError(f"nonpositive PFM dimensions before byte {dims_at}")
    scale_tok, offset = _read_token(raw, offset, "PFM scale")
    try:
        scale = float(scale_tok)
    except ValueError:
        raise FormatError(f"invalid PFM scale before byte {offset}")
    if scale >= 0:
        raise FormatError(f"unsupported big-endian PFM scale at byte {offset - len(scale_tok)}")
    offset += 1  # single whitespace byte after the scale
    expected = width * height * 4
    payload = raw[offset : offset + expected]
    if len(payload) != expected:
        raise FormatError(
            f"truncated PFM payload at byte {offset}: expected {expected} bytes, "
            f"got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(height, width).astype(np.float64)


def write_pgm(path: str | Path, mask: BinaryMask | np.ndarray) -> None:
    data = mask.data if isinstance(mask, BinaryMask) else np.asarray(mask).astype(bool)
    if data.ndim != 2:
        raise ValueError(f"PGM payload must be 2-d, got shape {data.shape}")
    height, width = data.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    body = np.where(data, np.uint8(255), np.uint8(0)).tobytes()
    atomic_write_bytes(path, header + body)


def read_pgm(path: str | Path) -> BinaryMask:
    """Read a binary P5 PGM; any value above 127 counts as True."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P5":
        raise FormatError(f"invalid PGM magic at byte 0 (expected 'P5')")
    offset = 2
    width_tok, offset = _read_token(raw, offset, "PGM width")
    height_tok, offset = _read_token(raw, offset, "PGM height")
    maxval_tok, offset = _read_token(raw, offset, "PGM maxval")
    try:
        width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
    except ValueError:
        raise FormatError(f"invalid PGM header before byte {offset}")
    if width < 1 or height < 1:
        raise FormatError(f"nonpositive PGM dimensions before byte {offset}")
    if not 0 < maxval < 256:
        raise FormatError(f"unsupported PGM maxval before byte {offset}")
    offset += 1
    expected = width * height
    payload = raw[offset : offset + expected]
    if len(payload) != expected:
        raise FormatError(
            f"truncated PGM payload at byte {offset}: expected {expected} bytes, "
            f"got {len(payload)}"
        )
    values = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return BinaryMask(values > 127)


def write_json(path: str | Path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))


def read_json(path: str | Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON in {path} at byte {exc.pos}: {exc.msg}")
