"""
File formats: PFM float images, 16-bit PNM previews and JSON helpers
"""

import json
import math
from pathlib import Path

import numpy as np

from src.config import SCHEMA_DIR
from src.errors import FormatError


def _read_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        if data[pos:pos + 1].isspace():
            pos += 1
        elif data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("Unexpected end of header", offset=pos)
    return data[start:pos], pos


def write_pfm(path: Path, values: np.ndarray) -> None:
    """Write a (height, width, channels) array; row 0 is the bottom row."""
    height, width, channels = values.shape
    kind = b"PF" if channels == 3 else b"Pf"
    if channels not in (1, 3):
        raise FormatError(f"PFM holds 1 or 3 channels, got {channels}", path=path)
    header = kind + f"\n{width} {height}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(values, dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_pfm(path: Path) -> np.ndarray:
    """Read a PFM image into a float64 (height, width, channels) array."""
    data = Path(path).read_bytes()
    try:
        kind, pos = _read_token(data, 0)
        width, pos = _read_token(data, pos)
        height, pos = _read_token(data, pos)
        scale, pos = _read_token(data, pos)
    except FormatError as e:
        raise FormatError(str(e), path=path, offset=e.offset) from e
    if kind not in (b"PF", b"Pf"):
        raise FormatError(f"Not a PFM file (magic {kind!r})", path=path, offset=0)
    try:
        w, h, s = int(width), int(height), float(scale)
    except ValueError:
        raise FormatError("Bad PFM header numbers", path=path, offset=pos) from None
    if s == 0.0 or not math.isfinite(s):
        raise FormatError(f"Bad PFM scale {s}", path=path, offset=pos)
    pos += 1
    channels = 3 if kind == b"PF" else 1
    expected = w * h * channels * 4
    if len(data) - pos != expected:
        raise FormatError(
            f"Expected {expected} bytes of pixel data, found {len(data) - pos}",
            path=path, offset=pos,
        )
    dtype = "<f4" if s < 0 else ">f4"
    values = np.frombuffer(data, dtype=dtype, count=w * h * channels, offset=pos)
    return values.astype(float).reshape(h, w, channels)


def write_pnm16(path: Path, values: np.ndarray, comments: list[str] | None = None) -> None:
    """16-bit binary PGM/PPM preview; values in [0, 1], row 0 is the bottom row."""
    height, width, channels = values.shape
    if channels not in (1, 3):
        raise FormatError(f"PNM holds 1 or 3 channels, got {channels}", path=path)
    magic = "P6" if channels == 3 else "P5"
    lines = [magic] + [f"# {c}" for c in (comments or [])] + [f"{width} {height}", "65535"]
    header = ("\n".join(lines) + "\n").encode("ascii")
    quantized = np.rint(np.clip(values, 0.0, 1.0) * 65535).astype(">u2")
    Path(path).write_bytes(header + quantized[::-1].tobytes())


def read_pnm(path: Path) -> np.ndarray:
    """Read an 8- or 16-bit binary PGM/PPM into [0, 1] floats, row 0 at the bottom."""
    data = Path(path).read_bytes()
    try:
        magic, pos = _read_token(data, 0)
        width, pos = _read_token(data, pos)
        height, pos = _read_token(data, pos)
        maxval, pos = _read_token(data, pos)
    except FormatError as e:
        raise FormatError(str(e), path=path, offset=e.offset) from e
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"Not a binary PNM file (magic {magic!r})", path=path, offset=0)
    try:
        w, h, m = int(width), int(height), int(maxval)
    except ValueError:
        raise FormatError("Bad PNM header numbers", path=path, offset=pos) from None
    if w < 1 or h < 1:
        raise FormatError(f"Bad PNM size {w}x{h}", path=path, offset=pos)
    if not 1 <= m <= 65535:
        raise FormatError(f"PNM maxval must be in [1, 65535], got {m}", path=path, offset=pos)
    pos += 1
    channels = 3 if magic == b"P6" else 1
    dtype = ">u2" if m > 255 else "u1"
    count = w * h * channels
    if len(data) - pos < count * np.dtype(dtype).itemsize:
        raise FormatError("Truncated pixel data", path=path, offset=pos)
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return (raw.astype(float) / m).reshape(h, w, channels)[::-1].copy()


def to_jsonable(value):
    """Replace non-finite floats with None so output stays valid JSON."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {k: to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return to_jsonable(value.item())
    return value


def dump_json(data, path: Path | None = None) -> str:
    """Serialize with repr floats (round-trip exact); write to path if given."""
    text = json.dumps(to_jsonable(data), indent=2, sort_keys=False)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text


def load_json(path: Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(e.msg, path=path, line=e.lineno, column=e.colno) from e


def load_schema(name: str) -> dict:
    """JSON Schema shipped under data/schemas."""
    return load_json(SCHEMA_DIR / f"{name}.schema.json")
