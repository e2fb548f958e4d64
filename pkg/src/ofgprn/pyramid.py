"""Superpixel hierarchy and top-down feature fusion.

The region graph coarsens through 5 levels, each holding at most a
quarter of the previous level's nodes; greedy agglomeration merges the
adjacent pair with the closest mean features, so every coarse node covers
a connected patch.  Network block outputs map onto the levels, are
laterally projected, fused top-down by element-wise addition, and scored
per node.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .grsan import normalize_adjacency
from .segmentation import Rag

__all__ = [
    "Hierarchy",
    "level_counts",
    "build_hierarchy",
    "pool_up",
    "unpool",
    "averaging_matrix",
    "indicator_matrix",
    "init_pyramid",
    "top_down_fuse",
    "write_hierarchy",
]

DEFAULT_LEVELS = 5
REDUCTION = 4


def contextual_levels(levels: int) -> tuple:
    """Of the full five levels (finest first) the first and last two refine
    with a context convolution over level edges; the middle two bridge
    levels only.  Truncated pyramids skip context refinement."""
    return (0, 3, 4) if levels == DEFAULT_LEVELS else ()


@dataclass(frozen=True)
class Hierarchy:
    """counts[i] nodes at level i; assignments[i] maps level-i nodes to
    their level-(i+1) parent; adjacency[i] is the level-i edge matrix."""

    counts: tuple
    assignments: tuple
    adjacency: tuple

    @property
    def levels(self) -> int:
        return len(self.counts)


def level_counts(n: int, levels: int = DEFAULT_LEVELS) -> list[int]:
    """Node-count schedule: repeated division by 4, clamped at one node."""
    if n < 1:
        raise ValueError("node count must be >= 1")
    counts = [n]
    for _ in range(levels - 1):
        counts.append(max(1, math.ceil(counts[-1] / REDUCTION)))
    return counts


def _merge_level(features: np.ndarray, adjacency: np.ndarray, target: int):
    """Greedily merge adjacent clusters with minimal feature distance until
    ``target`` clusters remain; ties break on the lowest id pair."""
    n = features.shape[0]
    sums = features.astype(np.float64).copy()
    counts = np.ones(n)
    alive = set(range(n))
    neighbors = {i: set(np.nonzero(adjacency[i])[0].tolist()) for i in range(n)}
    version = [0] * n
    members: dict[int, list[int]] = {i: [i] for i in range(n)}

    def dist(i: int, j: int) -> float:
        d = sums[i] / counts[i] - sums[j] / counts[j]
        return float(np.sqrt(np.dot(d, d)))

    heap = []
    for i in range(n):
        for j in neighbors[i]:
            if i < j:
                heapq.heappush(heap, (dist(i, j), i, j, version[i], version[j]))
    remaining = n
    while remaining > target:
        pair = None
        while heap:
            d, i, j, vi, vj = heapq.heappop(heap)
            if i in alive and j in alive and version[i] == vi and version[j] == vj:
                pair = (i, j)
                break
        if pair is None:
            # disconnected level graph: fall back to the lowest-id pair
            live = sorted(alive)
            pair = (live[0], live[1])
        i, j = pair
        keep, drop = (i, j) if i < j else (j, i)
        sums[keep] += sums[drop]
        counts[keep] += counts[drop]
        members[keep].extend(members.pop(drop))
        alive.discard(drop)
        version[keep] += 1
        merged_neighbors = (neighbors[keep] | neighbors[drop]) - {keep, drop}
        neighbors[keep] = merged_neighbors
        for nb in merged_neighbors:
            neighbors[nb].discard(drop)
            neighbors[nb].add(keep)
            a, b = (keep, nb) if keep < nb else (nb, keep)
            heapq.heappush(heap, (dist(a, b), a, b, version[a], version[b]))
        remaining -= 1
    order = sorted(alive, key=lambda cid: min(members[cid]))
    assignment = np.zeros(n, dtype=np.int64)
    for new_id, cid in enumerate(order):
        for m in members[cid]:
            assignment[m] = new_id
    m = len(order)
    coarse_adj = np.zeros((m, m), dtype=bool)
    src, dst = np.nonzero(adjacency)
    ps, pd = assignment[src], assignment[dst]
    off = ps != pd
    coarse_adj[ps[off], pd[off]] = True
    coarse_adj[pd[off], ps[off]] = True
    coarse_feat = averaging_matrix(assignment, m) @ features
    return assignment, coarse_adj, coarse_feat


def build_hierarchy(rag: Rag, levels: int = DEFAULT_LEVELS) -> Hierarchy:
    if rag.node_count < 1:
        raise ValueError("empty graph")
    counts = level_counts(rag.node_count, levels)
    features = rag.features
    adjacency = rag.adjacency
    assignments = []
    adjacencies = [adjacency]
    for target in counts[1:]:
        assignment, adjacency, features = _merge_level(features, adjacency, target)
        assignments.append(assignment)
        adjacencies.append(adjacency)
    return Hierarchy(counts=tuple(counts), assignments=tuple(assignments),
                     adjacency=tuple(adjacencies))


def averaging_matrix(assignment: np.ndarray, parents: int) -> np.ndarray:
    """(parents, children) matrix whose rows average each parent's children."""
    assignment = np.asarray(assignment)
    used = np.bincount(assignment, minlength=parents)
    if assignment.ndim != 1 or np.any(used == 0):
        raise ValueError("assignment must cover every parent with >= 1 child")
    mat = np.zeros((parents, len(assignment)))
    mat[assignment, np.arange(len(assignment))] = 1.0 / used[assignment]
    return mat


def indicator_matrix(assignment: np.ndarray, parents: int) -> np.ndarray:
    """(children, parents) matrix copying each parent row to its children."""
    assignment = np.asarray(assignment)
    mat = np.zeros((len(assignment), parents))
    mat[np.arange(len(assignment)), assignment] = 1.0
    return mat


def pool_up(features, assignment: np.ndarray, parents: int | None = None):
    """Parent feature = mean of its children's features."""
    rows = features.shape[0]
    assignment = np.asarray(assignment)
    if len(assignment) != rows:
        raise ValueError(f"assignment covers {len(assignment)} rows, features have {rows}")
    if parents is None:
        parents = int(assignment.max()) + 1
    mat = averaging_matrix(assignment, parents)
    if isinstance(features, Tensor):
        return ad.matmul(ad.constant(mat), features)
    return mat @ features


def unpool(features, assignment: np.ndarray):
    """Copy each parent's feature down to its children."""
    assignment = np.asarray(assignment)
    parents = features.shape[0]
    mat = indicator_matrix(assignment, parents)
    if isinstance(features, Tensor):
        return ad.matmul(ad.constant(mat), features)
    return mat @ features


def init_pyramid(params: ParamStore, prefix: str, block_widths: list[int],
                 width: int, levels: int = DEFAULT_LEVELS) -> None:
    """Per-level lateral, context and score parameters (never shared)."""
    if len(block_widths) != levels:
        raise ValueError("one block width per level is required")
    ctx = contextual_levels(levels)
    for lvl in range(levels):
        params.create(f"{prefix}{lvl}.lat.w", (block_widths[lvl], width))
        params.create(f"{prefix}{lvl}.lat.b", (1, width), init="zeros")
        if lvl in ctx:
            params.create(f"{prefix}{lvl}.ctx.w", (width, width))
        params.create(f"{prefix}{lvl}.score.w", (width, 1))
        params.create(f"{prefix}{lvl}.score.b", (1, 1), init="zeros")


def top_down_fuse(block_outputs: list, hierarchy: Hierarchy, params: ParamStore,
                  prefix: str = "pyr", a_hats: list[np.ndarray] | None = None):
    """Fuse per-level projections from the coarsest level down.

    Each block output is pooled to its level's node count, laterally
    projected, and summed element-wise with the unpooled fusion of the
    level above.  Contextual levels add a residual graph convolution over
    their own edges.  Returns (fused features, node scores) per level,
    finest first.
    """
    levels = hierarchy.levels
    if len(block_outputs) != levels:
        raise ValueError(f"expected {levels} block outputs, got {len(block_outputs)}")
    if a_hats is None:
        a_hats = [normalize_adjacency(adj) for adj in hierarchy.adjacency]
    pooled = []
    for lvl in range(levels):
        feat = block_outputs[lvl]
        feat = feat if isinstance(feat, Tensor) else ad.constant(feat)
        if feat.shape[0] != hierarchy.counts[0]:
            raise ValueError(
                f"block output {lvl} has {feat.shape[0]} rows, graph has "
                f"{hierarchy.counts[0]} nodes")
        for step in range(lvl):
            feat = pool_up(feat, hierarchy.assignments[step], hierarchy.counts[step + 1])
        pooled.append(feat)
    fused: list = [None] * levels
    ctx_levels = contextual_levels(levels)
    for lvl in range(levels - 1, -1, -1):
        lateral = ad.add(ad.matmul(pooled[lvl], params[f"{prefix}{lvl}.lat.w"]),
                         params[f"{prefix}{lvl}.lat.b"])
        if lvl == levels - 1:
            level_fused = lateral
        else:
            level_fused = ad.add(lateral, unpool(fused[lvl + 1], hierarchy.assignments[lvl]))
        if lvl in ctx_levels and f"{prefix}{lvl}.ctx.w" in params:
            conv = ad.matmul(ad.matmul(ad.constant(a_hats[lvl]), level_fused),
                             params[f"{prefix}{lvl}.ctx.w"])
            level_fused = ad.add(level_fused, conv)
        fused[lvl] = level_fused
    # the head standardizes its input across the level's nodes so that
    # scores rank within-graph contrasts rather than scene-global offsets
    scores = [ad.sigmoid(ad.add(ad.matmul(ad.standardize(fused[lvl], axis=0),
                                          params[f"{prefix}{lvl}.score.w"]),
                                params[f"{prefix}{lvl}.score.b"]))
              for lvl in range(levels)]
    return fused, scores


def write_hierarchy(path, hierarchy: Hierarchy) -> None:
    """Structured-text export, one section per level."""
    lines = [f"levels {hierarchy.levels}"]
    for lvl in range(hierarchy.levels):
        lines.append(f"level {lvl}")
        lines.append(f"nodes {hierarchy.counts[lvl]}")
        adj = hierarchy.adjacency[lvl]
        ei, ej = np.nonzero(np.triu(adj))
        lines.append(f"edges {len(ei)}")
        lines.extend(f"{int(a)} {int(b)}" for a, b in zip(ei, ej))
        if lvl < hierarchy.levels - 1:
            lines.append("parents " + " ".join(str(int(p))
                                               for p in hierarchy.assignments[lvl]))
    Path(path).write_text("\n".join(lines) + "\n")
