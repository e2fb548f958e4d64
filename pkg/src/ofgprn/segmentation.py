"""Superpixel segmentation and region adjacency graphs.

Three segmenters (SLIC, Felzenszwalb, Quickshift) partition a plane into
superpixels; the label map turns into a graph whose nodes carry per-region
descriptors and whose edges join 4-adjacent regions.  All three are
deterministic: identical inputs give identical labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fusion import gaussian_smooth
from .image import as_plane, check_same_shape

__all__ = [
    "LabelMap",
    "Rag",
    "slic",
    "felzenszwalb",
    "quickshift",
    "quickshift_forest",
    "build_rag",
    "write_rag",
    "read_rag",
]

# intensity axis of the joint (intensity, x, y) spaces, in luminance-percent
# units so pixel-unit kernel sizes act like the standard implementations
QS_INTENSITY_SCALE = 100.0


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel segment labels, compact 0..segment_count-1, all used."""

    labels: np.ndarray
    segment_count: int

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ValueError("labels must be 2-D")


@dataclass(frozen=True)
class Rag:
    """Region adjacency graph over superpixels.

    adjacency: symmetric bool (N, N), zero diagonal.
    features:  (N, D) node descriptors.
    boxes:     (N, 4) pixel bounding boxes (x_min, y_min, x_max, y_max),
               max edges exclusive.
    areas:     (N,) pixel counts.
    """

    adjacency: np.ndarray
    features: np.ndarray
    boxes: np.ndarray
    areas: np.ndarray

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]


class _UnionFind:
    __slots__ = ("parent", "size")

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, a: int) -> int:
        p = self.parent
        root = a
        while p[root] != root:
            root = p[root]
        while p[a] != root:
            p[a], a = root, p[a]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra


def _compact_labels(raw: np.ndarray) -> LabelMap:
    """Relabel to 0..K-1 in order of first appearance (row-major)."""
    flat = raw.ravel()
    uniq, first = np.unique(flat, return_index=True)
    order = uniq[np.argsort(first, kind="stable")]
    remap = np.empty(int(raw.max()) + 1, dtype=np.int64)
    remap[order] = np.arange(len(order))
    return LabelMap(labels=remap[flat].reshape(raw.shape), segment_count=len(order))


def _pixel_components(labels: np.ndarray) -> np.ndarray:
    """Connected components (4-adjacency) of equal-label pixels."""
    h, w = labels.shape
    uf = _UnionFind(h * w)
    flat = labels.ravel()
    idx = np.arange(h * w).reshape(h, w)
    right = flat[idx[:, :-1].ravel()] == flat[idx[:, 1:].ravel()]
    down = flat[idx[:-1, :].ravel()] == flat[idx[1:, :].ravel()]
    for a, b in zip(idx[:, :-1].ravel()[right], idx[:, 1:].ravel()[right]):
        uf.union(int(a), int(b))
    for a, b in zip(idx[:-1, :].ravel()[down], idx[1:, :].ravel()[down]):
        uf.union(int(a), int(b))
    roots = np.fromiter((uf.find(i) for i in range(h * w)), dtype=np.int64, count=h * w)
    return roots.reshape(h, w)


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Keep each label's largest component; merge orphans into the
    adjacent segment with the most pixels."""
    h, w = labels.shape
    comp = _pixel_components(labels)
    out = labels.copy()
    comp_ids, comp_sizes = np.unique(comp, return_counts=True)
    size_of = dict(zip(comp_ids.tolist(), comp_sizes.tolist()))
    # largest component per label (ties: lower component id, i.e. earlier pixel)
    main: dict[int, int] = {}
    for cid in comp_ids.tolist():
        y, x = divmod(cid, w)
        lab = int(labels[y, x])
        if lab not in main or size_of[cid] > size_of[main[lab]] or (
                size_of[cid] == size_of[main[lab]] and cid < main[lab]):
            main[lab] = cid
    orphans = [cid for cid in comp_ids.tolist() if main[int(labels[divmod(cid, w)])] != cid]
    if not orphans:
        return out
    label_area = dict(zip(*[arr.tolist() for arr in np.unique(out, return_counts=True)]))
    for cid in sorted(orphans):
        mask = comp == cid
        own = int(out[mask][0])
        neigh_labels: dict[int, int] = {}
        ys, xs = np.nonzero(mask)
        for y, x in zip(ys.tolist(), xs.tolist()):
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                if 0 <= ny < h and 0 <= nx < w and not mask[ny, nx]:
                    lab = int(out[ny, nx])
                    if lab != own:
                        neigh_labels[lab] = label_area.get(lab, 0)
        if not neigh_labels:
            continue
        target = max(neigh_labels, key=lambda lab: (neigh_labels[lab], -lab))
        n = int(mask.sum())
        out[mask] = target
        label_area[target] = label_area.get(target, 0) + n
        label_area[own] = label_area.get(own, 0) - n
    return out


def slic(img: np.ndarray, n_segments: int, compactness: float, sigma: float = 0.0) -> LabelMap:
    """Grid-initialized k-means over (intensity, x, y), 10 iterations,
    then connectivity enforcement.

    Spatial distances are scaled by compactness / grid-interval, the
    standard trade-off knob.
    """
    img = as_plane(img, "img")
    h, w = img.shape
    if n_segments < 1 or n_segments > img.size:
        raise ValueError(f"n_segments must be in [1, {img.size}], got {n_segments}")
    if compactness <= 0:
        raise ValueError("compactness must be > 0")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    work = gaussian_smooth(img, sigma) if sigma > 0 else img
    interval = math.sqrt(img.size / n_segments)
    nx = max(1, round(w / interval))
    ny = max(1, round(h / interval))
    cx = (np.arange(nx) + 0.5) * (w / nx)
    cy = (np.arange(ny) + 0.5) * (h / ny)
    centers_y, centers_x = [g.ravel() for g in np.meshgrid(cy, cx, indexing="ij")]
    centers_i = work[np.clip(centers_y.astype(int), 0, h - 1),
                     np.clip(centers_x.astype(int), 0, w - 1)]
    k = len(centers_x)
    half = int(math.ceil(max(w / nx, h / ny))) + 1
    ratio = compactness / interval
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    labels = np.zeros((h, w), dtype=np.int64)
    for _ in range(10):
        best = np.full((h, w), np.inf)
        labels.fill(0)
        for ci in range(k):
            y0 = max(0, int(centers_y[ci]) - half)
            y1 = min(h, int(centers_y[ci]) + half + 1)
            x0 = max(0, int(centers_x[ci]) - half)
            x1 = min(w, int(centers_x[ci]) + half + 1)
            sub = work[y0:y1, x0:x1]
            dy = (ys[y0:y1] + 0.5) - centers_y[ci]
            dx = (xs[:, x0:x1] + 0.5) - centers_x[ci]
            dist = (sub - centers_i[ci]) ** 2 + (ratio ** 2) * (dy * dy + dx * dx)
            win = dist < best[y0:y1, x0:x1]
            best[y0:y1, x0:x1][win] = dist[win]
            labels[y0:y1, x0:x1][win] = ci
        counts = np.bincount(labels.ravel(), minlength=k).astype(np.float64)
        counts[counts == 0] = 1.0
        centers_i = np.bincount(labels.ravel(), weights=work.ravel(), minlength=k) / counts
        centers_y = np.bincount(labels.ravel(),
                                weights=(ys + 0.5 + 0 * xs).ravel(), minlength=k) / counts
        centers_x = np.bincount(labels.ravel(),
                                weights=(xs + 0.5 + 0 * ys).ravel(), minlength=k) / counts
    return _compact_labels(_enforce_connectivity(labels))


def felzenszwalb(img: np.ndarray, scale: float, sigma: float = 0.0,
                 min_size: int = 1) -> LabelMap:
    """Graph-based greedy merging on sorted 8-neighbor edges with the
    adaptive threshold scale/|C|, plus a small-component merge pass."""
    img = as_plane(img, "img")
    if scale <= 0:
        raise ValueError("scale must be > 0")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    work = gaussian_smooth(img, sigma) if sigma > 0 else img
    h, w = work.shape
    idx = np.arange(h * w).reshape(h, w)
    pairs = []
    weights = []
    for (sa, sb) in (((slice(None), slice(None, -1)), (slice(None), slice(1, None))),
                     ((slice(None, -1), slice(None)), (slice(1, None), slice(None))),
                     ((slice(None, -1), slice(None, -1)), (slice(1, None), slice(1, None))),
                     ((slice(None, -1), slice(1, None)), (slice(1, None), slice(None, -1)))):
        pairs.append(np.stack([idx[sa].ravel(), idx[sb].ravel()], axis=1))
        weights.append(np.abs(work[sa].ravel() - work[sb].ravel()))
    edges = np.concatenate(pairs, axis=0)
    wts = np.concatenate(weights)
    order = np.argsort(wts, kind="stable")
    uf = _UnionFind(h * w)
    threshold = [float(scale)] * (h * w)
    for e in order.tolist():
        a, b = int(edges[e, 0]), int(edges[e, 1])
        ra, rb = uf.find(a), uf.find(b)
        if ra == rb:
            continue
        wt = float(wts[e])
        if wt <= threshold[ra] and wt <= threshold[rb]:
            r = uf.union(ra, rb)
            threshold[r] = wt + scale / uf.size[r]
    if min_size > 1:
        for e in order.tolist():
            ra, rb = uf.find(int(edges[e, 0])), uf.find(int(edges[e, 1]))
            if ra != rb and (uf.size[ra] < min_size or uf.size[rb] < min_size):
                uf.union(ra, rb)
    roots = np.fromiter((uf.find(i) for i in range(h * w)), dtype=np.int64, count=h * w)
    return _compact_labels(roots.reshape(h, w))


def _window_offsets(radius: int):
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            yield dy, dx


def _offset_views(shape, dy: int, dx: int):
    """Index slices (target, source) pairing each pixel with its (dy,dx)
    neighbor, restricted to in-image pairs."""
    h, w = shape
    ty = slice(max(0, -dy), min(h, h - dy))
    tx = slice(max(0, -dx), min(w, w - dx))
    sy = slice(max(0, dy), min(h, h + dy))
    sx = slice(max(0, dx), min(w, w + dx))
    return (ty, tx), (sy, sx)


def quickshift_forest(img: np.ndarray, kernel_size: float, max_dist: float,
                      ratio: float):
    """Parent links and densities behind ``quickshift``.

    Returns (parent, density) with parent holding linear pixel indices;
    roots point at themselves.  Exposed so the forest invariants (uphill
    links, bounded parent distance) stay directly checkable.
    """
    img = as_plane(img, "img")
    if kernel_size <= 0 or max_dist <= 0 or not (0 < ratio <= 1):
        raise ValueError("kernel_size > 0, max_dist > 0, 0 < ratio <= 1 required")
    h, w = img.shape
    feat = img * (QS_INTENSITY_SCALE * ratio)
    inv2s2 = 1.0 / (2.0 * kernel_size * kernel_size)
    density = np.zeros((h, w))
    for dy, dx in _window_offsets(int(math.ceil(3.0 * kernel_size))):
        t, s = _offset_views((h, w), dy, dx)
        di = feat[t] - feat[s]
        density[t] += np.exp(-(di * di + dy * dy + dx * dx) * inv2s2)
    lin = np.arange(h * w).reshape(h, w)
    parent = lin.copy()
    best_d = np.full((h, w), np.inf)
    best_idx = np.full((h, w), h * w, dtype=np.int64)
    md2 = max_dist * max_dist
    for dy, dx in _window_offsets(int(math.ceil(max_dist))):
        t, s = _offset_views((h, w), dy, dx)
        di = feat[t] - feat[s]
        d2 = di * di + dy * dy + dx * dx
        uphill = (density[s] > density[t]) | (
            (density[s] == density[t]) & (lin[s] < lin[t]))
        ok = uphill & (d2 <= md2)
        bd, bi, pa = best_d[t], best_idx[t], parent[t]
        better = ok & ((d2 < bd) | ((d2 == bd) & (lin[s] < bi)))
        bd[better] = d2[better]
        bi[better] = lin[s][better]
        pa[better] = lin[s][better]
    return parent, density


def quickshift(img: np.ndarray, kernel_size: float, max_dist: float,
               ratio: float) -> LabelMap:
    """Medoid-shift style segmentation: Gaussian density over the joint
    (ratio-scaled intensity, x, y) space; each pixel links to its nearest
    neighbor of higher density within max_dist.  Plateau ties link toward
    the lowest linear pixel index, so flat regions form a single tree.
    """
    parent, _ = quickshift_forest(img, kernel_size, max_dist, ratio)
    flat = parent.ravel().copy()
    while True:
        nxt = flat[flat]
        if np.array_equal(nxt, flat):
            break
        flat = nxt
    return _compact_labels(flat.reshape(parent.shape))


def build_rag(labels: LabelMap, feature_planes: list[np.ndarray]) -> Rag:
    """Graph over segments: edges join 4-adjacent segments; node features
    are [per-plane means, centroid x/width, centroid y/height, area
    fraction] (D = planes + 3)."""
    if not feature_planes:
        raise ValueError("at least one feature plane is required")
    lab = labels.labels
    for p in feature_planes:
        check_same_shape(np.asarray(p), lab)
    k = labels.segment_count
    if k < 1:
        raise ValueError("empty segment set")
    h, w = lab.shape
    adj = np.zeros((k, k), dtype=bool)
    for (sa, sb) in (((slice(None), slice(None, -1)), (slice(None), slice(1, None))),
                     ((slice(None, -1), slice(None)), (slice(1, None), slice(None)))):
        la = lab[sa].ravel()
        lb = lab[sb].ravel()
        diff = la != lb
        adj[la[diff], lb[diff]] = True
        adj[lb[diff], la[diff]] = True
    flat = lab.ravel()
    areas = np.bincount(flat, minlength=k).astype(np.float64)
    ys, xs = np.mgrid[0:h, 0:w]
    cols = [np.bincount(flat, weights=np.asarray(p).ravel(), minlength=k) / areas
            for p in feature_planes]
    cols.append(np.bincount(flat, weights=(xs + 0.5).ravel(), minlength=k) / areas / w)
    cols.append(np.bincount(flat, weights=(ys + 0.5).ravel(), minlength=k) / areas / h)
    cols.append(areas / (h * w))
    features = np.stack(cols, axis=1)
    boxes = np.zeros((k, 4), dtype=np.int64)
    big = np.iinfo(np.int64).max
    xmin = np.full(k, big)
    ymin = np.full(k, big)
    xmax = np.full(k, -1)
    ymax = np.full(k, -1)
    np.minimum.at(xmin, flat, xs.ravel())
    np.minimum.at(ymin, flat, ys.ravel())
    np.maximum.at(xmax, flat, xs.ravel())
    np.maximum.at(ymax, flat, ys.ravel())
    boxes[:, 0] = xmin
    boxes[:, 1] = ymin
    boxes[:, 2] = xmax + 1
    boxes[:, 3] = ymax + 1
    return Rag(adjacency=adj, features=features, boxes=boxes,
               areas=areas.astype(np.int64))


def _fmt_floats(row) -> str:
    return " ".join(repr(float(v)) for v in row)


def write_rag(path, rag: Rag) -> None:
    """Structured-text export with fixed key order for golden-file tests."""
    lines = [f"nodes {rag.node_count}"]
    ei, ej = np.nonzero(np.triu(rag.adjacency))
    lines.append(f"edges {len(ei)}")
    lines.extend(f"{int(a)} {int(b)}" for a, b in zip(ei, ej))
    lines.append(f"features {rag.features.shape[0]} {rag.features.shape[1]}")
    lines.extend(_fmt_floats(row) for row in rag.features)
    lines.append(f"boxes {rag.node_count}")
    lines.extend(" ".join(str(int(v)) for v in row) for row in rag.boxes)
    lines.append(f"areas {rag.node_count}")
    lines.append(" ".join(str(int(a)) for a in rag.areas))
    Path(path).write_text("\n".join(lines) + "\n")


def read_rag(path) -> Rag:
    tokens = Path(path).read_text().split("\n")
    pos = 0

    def take() -> str:
        nonlocal pos
        line = tokens[pos]
        pos += 1
        return line

    n = int(take().split()[1])
    adj = np.zeros((n, n), dtype=bool)
    n_edges = int(take().split()[1])
    for _ in range(n_edges):
        a, b = (int(v) for v in take().split())
        adj[a, b] = adj[b, a] = True
    _, rows, cols = take().split()
    features = np.array([[float(v) for v in take().split()] for _ in range(int(rows))],
                        dtype=np.float64).reshape(int(rows), int(cols))
    take()
    boxes = np.array([[int(v) for v in take().split()] for _ in range(n)], dtype=np.int64)
    take()
    areas = np.array([int(v) for v in take().split()], dtype=np.int64)
    return Rag(adjacency=adj, features=features, boxes=boxes, areas=areas)
