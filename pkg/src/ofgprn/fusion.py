"""RGB-IR frame fusion.

Each source frame is split into three additive layers: a smooth base, a
coarse-structure layer and a fine-structure layer.  The two detail layers
are fused by picking, per pixel, the source whose local activity (a
windowed squared modified Laplacian) drives a pulse-coupled neuron to fire
more often.  The base layers are blended with per-pixel weights from
histogram-contrast saliency maps.  Summing the three fused layers and
clamping to [0, 1] yields the fused frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .image import DimensionError, as_plane, check_same_shape, luminance, shift_clamped

__all__ = [
    "LayerTriple",
    "LaplacianWindow",
    "decompose",
    "modified_laplacian",
    "pcnn_fuse_detail",
    "saliency",
    "base_fuse",
    "fuse_frames",
]

# edge-preserving smoother defaults: see curvature_smooth
SMOOTHER_STEP = 0.1
SMOOTHER_DIFFUSION = 0.5
DEFAULT_SMOOTHER_ITERS = 4
DEFAULT_GAUSSIAN_SIGMA = 2.0
DEFAULT_PCNN_ITERS = 10
PCNN_LINK_STRENGTH = 0.2
PCNN_THRESHOLD_DECAY = 0.8


class LayerTriple(NamedTuple):
    """Additive decomposition of a frame: base + coarse + fine == frame."""

    base: np.ndarray
    coarse: np.ndarray
    fine: np.ndarray


@dataclass(frozen=True)
class LaplacianWindow:
    """Nonnegative weighting window for the activity measure.

    ``weights`` has shape (2*q + 1, 2*p + 1) (rows are the vertical Q axis),
    sums to 1, is symmetric about the center and peaks there.
    """

    p: int
    q: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (2 * self.q + 1, 2 * self.p + 1):
            raise ValueError(f"weights shape {w.shape} does not match p={self.p}, q={self.q}")
        if np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
            raise ValueError("weights must be nonnegative and sum to 1")
        if not np.allclose(w, w[::-1, ::-1]):
            raise ValueError("weights must be symmetric about the center")
        if w[self.q, self.p] < w.max():
            raise ValueError("center weight must be the maximum")
        object.__setattr__(self, "weights", w)

    @staticmethod
    def binomial3x3() -> "LaplacianWindow":
        k = np.array([1.0, 2.0, 1.0])
        return LaplacianWindow(p=1, q=1, weights=np.outer(k, k) / 16.0)


_shift = shift_clamped


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(plane: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with replicated borders."""
    if sigma <= 0:
        raise ValueError(f"gaussian sigma must be > 0, got {sigma}")
    k = _gaussian_kernel(sigma)
    radius = len(k) // 2
    out = np.zeros_like(plane)
    for i, kv in enumerate(k):
        out += kv * _shift(plane, i - radius, 0)
    res = np.zeros_like(plane)
    for i, kv in enumerate(k):
        res += kv * _shift(out, 0, i - radius)
    return res


def curvature_smooth(plane: np.ndarray, iters: int = DEFAULT_SMOOTHER_ITERS,
                     step: float = SMOOTHER_STEP) -> np.ndarray:
    """Edge-preserving smoother: mean-curvature flow with a diffusion floor.

    Each iteration moves the image by ``step`` times the sum of the
    level-set curvature term (smooths along edges, not across them) and
    half the 4-neighbor Laplacian (lifts weak texture into the fine
    layer).  Constants are exact fixed points.  step * diffusion <= 0.25
    keeps the explicit scheme stable.
    """
    out = plane.astype(np.float64, copy=True)
    for _ in range(iters):
        ix = 0.5 * (_shift(out, 0, -1) - _shift(out, 0, 1))
        iy = 0.5 * (_shift(out, -1, 0) - _shift(out, 1, 0))
        ixx = _shift(out, 0, -1) + _shift(out, 0, 1) - 2.0 * out
        iyy = _shift(out, -1, 0) + _shift(out, 1, 0) - 2.0 * out
        ixy = 0.25 * (_shift(out, -1, -1) + _shift(out, 1, 1)
                      - _shift(out, -1, 1) - _shift(out, 1, -1))
        grad2 = ix * ix + iy * iy
        curv = (ixx * iy * iy - 2.0 * ix * iy * ixy + iyy * ix * ix) / (grad2 + 1e-8)
        lap = ixx + iyy
        out = out + step * (curv + SMOOTHER_DIFFUSION * lap)
    return out


def decompose(frame: np.ndarray, smoother_iters: int = DEFAULT_SMOOTHER_ITERS,
              gaussian_sigma: float = DEFAULT_GAUSSIAN_SIGMA) -> LayerTriple:
    """Split a frame into base/coarse/fine layers that sum back exactly.

    fine   = frame - smooth(frame)
    coarse = smooth(frame) - gauss(smooth(frame))
    base   = gauss(smooth(frame))
    """
    frame = as_plane(frame, "frame")
    if smoother_iters < 1:
        raise ValueError("smoother_iters must be >= 1")
    smoothed = curvature_smooth(frame, smoother_iters)
    base = gaussian_smooth(smoothed, gaussian_sigma)
    return LayerTriple(base=base, coarse=smoothed - base, fine=frame - smoothed)


def _laplacian_activity(plane: np.ndarray) -> np.ndarray:
    """Absolute-second-difference response L(x,y) before windowing."""
    l2 = (_shift(plane, 0, -1) + _shift(plane, 0, 1)
          + _shift(plane, -1, 0) + _shift(plane, 1, 0) - 4.0 * plane)
    horiz = np.abs(2.0 * l2 - _shift(l2, 0, 1) - _shift(l2, 0, -1))
    vert = np.abs(2.0 * l2 - _shift(l2, 1, 0) - _shift(l2, -1, 0))
    return horiz + vert


def modified_laplacian(plane: np.ndarray, window: LaplacianWindow | None = None) -> np.ndarray:
    """Windowed sum of squared absolute-second-difference responses.

    Nonnegative everywhere; zero where all second differences vanish over
    the window support.
    """
    plane = as_plane(plane)
    if window is None:
        window = LaplacianWindow.binomial3x3()
    if plane.shape[0] <= 2 * window.q + 1 or plane.shape[1] <= 2 * window.p + 1:
        raise DimensionError(
            f"plane {plane.shape} is not larger than window "
            f"({2 * window.q + 1}x{2 * window.p + 1})")
    act2 = _laplacian_activity(plane) ** 2
    out = np.zeros_like(plane)
    for qq in range(-window.q, window.q + 1):
        for pp in range(-window.p, window.p + 1):
            out += window.weights[qq + window.q, pp + window.p] * _shift(act2, qq, pp)
    return out


def _pcnn_fire_counts(activity: np.ndarray, iters: int) -> np.ndarray:
    """Fire counts of a simplified pulse-coupled network fed by ``activity``.

    The threshold starts at the feed maximum and decays geometrically;
    neighbors that fired last iteration raise a neuron's internal activity
    through the linking term, so firing spreads along connected structure.
    ``activity`` must already be on a scale shared by both sources.
    """
    feed = activity
    fired = np.zeros_like(feed)
    counts = np.zeros(feed.shape, dtype=np.int64)
    theta = 1.0
    for _ in range(iters):
        theta *= PCNN_THRESHOLD_DECAY
        link = (_shift(fired, 0, -1) + _shift(fired, 0, 1)
                + _shift(fired, -1, 0) + _shift(fired, 1, 0)
                + _shift(fired, -1, -1) + _shift(fired, -1, 1)
                + _shift(fired, 1, -1) + _shift(fired, 1, 1))
        internal = feed * (1.0 + PCNN_LINK_STRENGTH * link)
        fired = (internal > theta).astype(np.float64)
        counts += fired.astype(np.int64)
    return counts


def pcnn_fuse_detail(a: np.ndarray, b: np.ndarray, window: LaplacianWindow | None = None,
                     pcnn_iters: int = DEFAULT_PCNN_ITERS) -> np.ndarray:
    """Per-pixel selection between two detail layers.

    The source whose activity-driven neuron fires more often contributes
    the pixel; ties go to ``a``.  Every output pixel equals one of the two
    inputs exactly.
    """
    a = as_plane(a, "a")
    b = as_plane(b, "b")
    check_same_shape(a, b)
    act_a = modified_laplacian(a, window)
    act_b = modified_laplacian(b, window)
    scale = max(act_a.max(), act_b.max())
    if scale <= 0.0:
        return a.copy()
    counts_a = _pcnn_fire_counts(act_a / scale, pcnn_iters)
    counts_b = _pcnn_fire_counts(act_b / scale, pcnn_iters)
    return np.where(counts_b > counts_a, b, a)


def saliency(base: np.ndarray) -> np.ndarray:
    """Histogram-contrast saliency map, min-max normalized to [0, 1].

    Intensities are min-max scaled and quantized to 256 bins; a pixel's raw
    score is the count-weighted sum of absolute bin-value differences to
    every bin.  A constant raw map (e.g. a constant input) normalizes to a
    uniform 0.5, the neutral blending weight.
    """
    base = as_plane(base, "base")
    lo, hi = base.min(), base.max()
    if hi > lo:
        scaled = (base - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(base)
    bins = np.rint(scaled * 255.0).astype(np.int64)
    hist = np.bincount(bins.ravel(), minlength=256).astype(np.float64)
    levels = np.arange(256, dtype=np.float64) / 255.0
    # raw[bin] = sum_n hist[n] * |level(bin) - level(n)|
    raw_per_bin = np.abs(levels[:, None] - levels[None, :]) @ hist
    raw = raw_per_bin[bins]
    rlo, rhi = raw.min(), raw.max()
    if rhi > rlo:
        return (raw - rlo) / (rhi - rlo)
    return np.full_like(base, 0.5)


def base_fuse(b_rgb: np.ndarray, b_ir: np.ndarray,
              v_rgb: np.ndarray, v_ir: np.ndarray) -> np.ndarray:
    """Saliency-weighted blend of the two base layers.

    Per pixel, each saliency map mixes its own source with the other and
    the two mixes are averaged, so the output stays between the two base
    values.
    """
    check_same_shape(b_rgb, b_ir, v_rgb, v_ir)
    alpha = v_ir * b_ir + (1.0 - v_ir) * b_rgb
    beta = v_rgb * b_rgb + (1.0 - v_rgb) * b_ir
    return 0.5 * (alpha + beta)


def fuse_frames(rgb: tuple[np.ndarray, np.ndarray, np.ndarray], ir: np.ndarray,
                smoother_iters: int = DEFAULT_SMOOTHER_ITERS,
                gaussian_sigma: float = DEFAULT_GAUSSIAN_SIGMA,
                window: LaplacianWindow | None = None,
                pcnn_iters: int = DEFAULT_PCNN_ITERS) -> np.ndarray:
    """Fuse an RGB triple with an IR plane into one [0,1] frame.

    The RGB frame enters as luminance.  Fine and coarse layers fuse by
    activity selection, base layers by saliency blending; the sum is
    clamped to [0, 1].
    """
    lum = luminance(*rgb)
    ir = as_plane(ir, "ir")
    check_same_shape(lum, ir)
    d_rgb = decompose(lum, smoother_iters, gaussian_sigma)
    d_ir = decompose(ir, smoother_iters, gaussian_sigma)
    fused_fine = pcnn_fuse_detail(d_rgb.fine, d_ir.fine, window, pcnn_iters)
    fused_coarse = pcnn_fuse_detail(d_rgb.coarse, d_ir.coarse, window, pcnn_iters)
    fused_base = base_fuse(d_rgb.base, d_ir.base,
                           saliency(d_rgb.base), saliency(d_ir.base))
    return np.clip(fused_base + fused_coarse + fused_fine, 0.0, 1.0)
