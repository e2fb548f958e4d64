"""Image planes and file I/O.

A plane is a 2-D float64 array, row-major, height x width.  Frames (inputs
and outputs of the public pipeline operations) hold values in [0, 1];
decomposition layers are signed and only their sum is range-bound.

Supported formats: 8-bit and 16-bit grayscale PNG and binary PGM (P5).
Written 8-bit output quantizes with round-half-to-even.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "DimensionError",
    "as_plane",
    "check_same_shape",
    "luminance",
    "read_plane",
    "write_plane",
    "read_rgb",
]


class DimensionError(ValueError):
    """Raised when plane shapes do not satisfy an operation's contract."""


def as_plane(data, name: str = "plane") -> np.ndarray:
    """Validate and coerce ``data`` to a nonempty 2-D float64 array."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise DimensionError(f"{name} must be a nonempty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_shape(*planes: np.ndarray) -> None:
    shapes = {p.shape for p in planes}
    if len(shapes) > 1:
        raise DimensionError(f"plane shapes differ: {sorted(shapes)}")


def luminance(r: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma of an RGB triple of planes."""
    check_same_shape(r, g, b)
    return 0.299 * r + 0.587 * g + 0.114 * b


def _quantize(plane: np.ndarray, depth: int) -> np.ndarray:
    top = (1 << depth) - 1
    scaled = np.clip(plane, 0.0, 1.0) * top
    # np.rint rounds half to even, the documented quantization rule
    return np.rint(scaled).astype(np.uint8 if depth == 8 else np.uint16)


def write_plane(path, plane: np.ndarray, depth: int = 8) -> None:
    """Write a [0,1] plane as an 8- or 16-bit grayscale PNG or PGM."""
    if depth not in (8, 16):
        raise ValueError(f"depth must be 8 or 16, got {depth}")
    plane = as_plane(plane)
    path = Path(path)
    q = _quantize(plane, depth)
    if path.suffix.lower() == ".pgm":
        header = f"P5\n{plane.shape[1]} {plane.shape[0]}\n{(1 << depth) - 1}\n"
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(q.astype(">u1" if depth == 8 else ">u2").tobytes())
        return
    Image.fromarray(q).save(path, format="PNG")  # uint8 -> L, uint16 -> I;16


def write_labels(path, labels: np.ndarray) -> None:
    """Write a label map as a 16-bit PNG (labels stored verbatim)."""
    if labels.max(initial=0) > 0xFFFF:
        raise ValueError("more than 65535 labels cannot be stored in 16-bit PNG")
    Image.fromarray(labels.astype(np.uint16)).save(Path(path), format="PNG")


def _read_pgm(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: only binary PGM (P5) is supported")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        fields.append(int(raw[pos:end]))
        pos = end
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    dtype = ">u2" if maxval > 255 else ">u1"
    data = np.frombuffer(raw, dtype=dtype, count=width * height, offset=pos)
    return data.reshape(height, width).astype(np.float64) / maxval


def read_plane(path) -> np.ndarray:
    """Read a grayscale image into a [0,1] float plane."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return _read_pgm(path)
    img = Image.open(path)
    if img.mode in ("I;16", "I"):
        arr = np.asarray(img, dtype=np.float64)
        return arr / 65535.0
    if img.mode != "L":
        img = img.convert("L")
    return np.asarray(img, dtype=np.float64) / 255.0


def read_rgb(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read an image as an (R, G, B) triple of [0,1] planes.

    Grayscale files are broadcast to three identical planes.
    """
    img = Image.open(Path(path))
    if img.mode == "L":
        p = np.asarray(img, dtype=np.float64) / 255.0
        return p, p.copy(), p.copy()
    img = img.convert("RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr[:, :, 0], arr[:, :, 1], arr[:, :, 2]


def shift_clamped(plane: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """out[y, x] = plane[clip(y - dy), clip(x - dx)]: shift with replicated
    borders, the window policy shared by every image operation."""
    h, w = plane.shape
    a = np.empty_like(plane)
    if dx >= 0:
        a[:, dx:] = plane[:, :w - dx]
        a[:, :dx] = plane[:, :1]
    else:
        a[:, :dx] = plane[:, -dx:]
        a[:, dx:] = plane[:, -1:]
    if dy == 0:
        return a
    out = np.empty_like(plane)
    if dy > 0:
        out[dy:] = a[:h - dy]
        out[:dy] = a[:1]
    else:
        out[:dy] = a[-dy:]
        out[dy:] = a[-1:]
    return out


def pack_u32(*values: int) -> bytes:
    return struct.pack("<" + "I" * len(values), *values)
