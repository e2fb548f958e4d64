"""Dense optical flow and background suppression.

A classical variational solver (Horn-Schunck) estimates per-pixel motion
between consecutive fused frames; thresholding the flow magnitude gives a
motion mask that zeroes the static background before segmentation.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .image import as_plane, check_same_shape, shift_clamped

__all__ = [
    "FlowField",
    "estimate_flow",
    "flow_magnitude",
    "motion_mask",
    "suppress_background",
    "hs_energy",
    "write_flow",
    "read_flow",
    "flow_to_rgb",
]

DEFAULT_SMOOTHNESS = 15.0
DEFAULT_ITERATIONS = 200
DEFAULT_MAGNITUDE_THRESHOLD = 0.5

# the smoothness weight is calibrated against 8-bit intensity units, the
# convention of the classical solver; [0,1] planes are rescaled internally
INTENSITY_SCALE = 255.0

FLOW_MAGIC = b"OFGPFLOW"


class FlowField(NamedTuple):
    """Per-pixel displacement; u is horizontal (+x right), v vertical (+y down)."""

    u: np.ndarray
    v: np.ndarray


_shift = shift_clamped


def _neighbor_average(plane: np.ndarray) -> np.ndarray:
    p = np.pad(plane, 1, mode="edge")
    return ((p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]) / 6.0
            + (p[:-2, :-2] + p[:-2, 2:] + p[2:, :-2] + p[2:, 2:]) / 12.0)


def _derivatives(prev: np.ndarray, nxt: np.ndarray):
    """Horn-Schunck 2x2 derivative estimates averaged over both frames."""
    def dx(p):
        return 0.25 * (_shift(p, 0, -1) - p + _shift(p, -1, -1) - _shift(p, -1, 0))

    def dy(p):
        return 0.25 * (_shift(p, -1, 0) - p + _shift(p, -1, -1) - _shift(p, 0, -1))

    def dt(a, b):
        return 0.25 * (b + _shift(b, 0, -1) + _shift(b, -1, 0) + _shift(b, -1, -1)
                       - a - _shift(a, 0, -1) - _shift(a, -1, 0) - _shift(a, -1, -1))

    fx = dx(prev) + dx(nxt)
    fy = dy(prev) + dy(nxt)
    ft = dt(prev, nxt)
    return fx, fy, ft


def estimate_flow(prev: np.ndarray, nxt: np.ndarray,
                  smoothness: float = DEFAULT_SMOOTHNESS,
                  iterations: int = DEFAULT_ITERATIONS) -> FlowField:
    """Horn-Schunck flow: Jacobi fixed-point iterations on the linearized
    brightness-constancy + smoothness energy.

    Deterministic for fixed inputs; identical frames yield exactly zero
    flow (the zero field is the fixed point of the update).
    """
    prev = as_plane(prev, "prev")
    nxt = as_plane(nxt, "next")
    check_same_shape(prev, nxt)
    if smoothness <= 0:
        raise ValueError("smoothness must be > 0")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    fx, fy, ft = _derivatives(prev * INTENSITY_SCALE, nxt * INTENSITY_SCALE)
    denom = smoothness ** 2 + fx * fx + fy * fy
    u = np.zeros_like(prev)
    v = np.zeros_like(prev)
    for _ in range(iterations):
        ubar = _neighbor_average(u)
        vbar = _neighbor_average(v)
        rate = (fx * ubar + fy * vbar + ft) / denom
        u = ubar - fx * rate
        v = vbar - fy * rate
    return FlowField(u=u, v=v)


def hs_energy(flow: FlowField, prev: np.ndarray, nxt: np.ndarray,
              smoothness: float = DEFAULT_SMOOTHNESS) -> float:
    """Discrete Horn-Schunck energy: sum of squared data residuals plus
    smoothness times squared forward differences of the flow."""
    fx, fy, ft = _derivatives(prev * INTENSITY_SCALE, nxt * INTENSITY_SCALE)
    data = fx * flow.u + fy * flow.v + ft
    total = float(np.sum(data * data))
    for comp in (flow.u, flow.v):
        gx = _shift(comp, 0, -1) - comp
        gy = _shift(comp, -1, 0) - comp
        total += smoothness ** 2 * float(np.sum(gx * gx + gy * gy))
    return total


def flow_magnitude(flow: FlowField) -> np.ndarray:
    return np.hypot(flow.u, flow.v)


def motion_mask(flow: FlowField, magnitude_threshold: float = DEFAULT_MAGNITUDE_THRESHOLD,
                dilate: bool = False) -> np.ndarray:
    """Boolean mask of pixels whose flow magnitude reaches the threshold.

    ``dilate`` applies a single optional 3x3 dilation.
    """
    if magnitude_threshold < 0:
        raise ValueError("magnitude threshold must be >= 0")
    mask = flow_magnitude(flow) >= magnitude_threshold
    if dilate:
        out = mask.copy()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                out |= _shift(mask, dy, dx).astype(bool)
        mask = out
    return mask


def suppress_background(frame: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero every pixel outside the motion mask."""
    frame = as_plane(frame, "frame")
    if mask.shape != frame.shape:
        check_same_shape(frame, np.asarray(mask))
    return np.where(mask, frame, 0.0)


def write_flow(path, flow: FlowField) -> None:
    """Dump raw flow: magic, width, height (uint32 LE), then the u and v
    planes as little-endian float32, row-major."""
    h, w = flow.u.shape
    with open(Path(path), "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(flow.u.astype("<f4").tobytes())
        fh.write(flow.v.astype("<f4").tobytes())


def read_flow(path) -> FlowField:
    with open(Path(path), "rb") as fh:
        raw = fh.read()
    if raw[:8] != FLOW_MAGIC:
        raise ValueError(f"{path}: bad flow magic {raw[:8]!r}")
    w, h = struct.unpack("<II", raw[8:16])
    n = w * h
    u = np.frombuffer(raw, dtype="<f4", count=n, offset=16).reshape(h, w)
    v = np.frombuffer(raw, dtype="<f4", count=n, offset=16 + 4 * n).reshape(h, w)
    return FlowField(u=u.astype(np.float64), v=v.astype(np.float64))


def flow_to_rgb(flow: FlowField) -> np.ndarray:
    """HSV color-wheel rendering: hue = direction, value = magnitude."""
    mag = flow_magnitude(flow)
    scale = mag.max()
    value = mag / scale if scale > 0 else np.zeros_like(mag)
    hue = (np.arctan2(flow.v, flow.u) / (2.0 * np.pi)) % 1.0
    hp = hue * 6.0
    i = np.floor(hp).astype(int) % 6
    f = hp - np.floor(hp)
    p = np.zeros_like(value)
    q = value * (1.0 - f)
    t = value * f
    rgb = np.zeros(mag.shape + (3,))
    lut = [(value, t, p), (q, value, p), (p, value, t),
           (p, q, value), (t, p, value), (value, p, q)]
    for idx, (r, g, b) in enumerate(lut):
        sel = i == idx
        rgb[sel, 0] = r[sel]
        rgb[sel, 1] = g[sel]
        rgb[sel, 2] = b[sel]
    return rgb


def write_flow_png(path, flow: FlowField) -> None:
    from PIL import Image

    rgb = flow_to_rgb(flow)
    arr = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(Path(path), format="PNG")
