"""Residual split-attention graph network core.

A block splits its output channels into ``cardinality`` groups; inside a
group, ``radix`` parallel graph convolutions produce branches whose sum is
max-pooled over nodes into a channel descriptor.  The descriptor is
normalized, rectified and projected once per radix; a softmax across the
radix axis yields per-channel attention weights that recombine the
branches.  Groups concatenate back to the full width and a shortcut
(identity, or a projecting graph convolution when widths differ) closes
the residual path.

Chained blocks accumulate a dense shortcut: each block adds its shortcut
map applied to the running sum of the chain input and all earlier block
outputs, carried through width changes by the same projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor

__all__ = [
    "BlockConfig",
    "normalize_adjacency",
    "graph_conv",
    "init_split_attention",
    "split_attention_block",
    "init_dense_chain",
    "dense_residual_forward",
]

NORM_EPS = 1e-5
RUNNING_MOMENTUM = 0.9


@dataclass(frozen=True)
class BlockConfig:
    """Shape of one split-attention block."""

    radix: int
    cardinality: int
    in_channels: int
    out_channels: int

    def __post_init__(self):
        if self.radix < 1 or self.cardinality < 1:
            raise ValueError("radix and cardinality must be >= 1")
        if self.out_channels % self.cardinality != 0:
            raise ValueError(
                f"out_channels {self.out_channels} not divisible by "
                f"cardinality {self.cardinality}")

    @property
    def group_channels(self) -> int:
        return self.out_channels // self.cardinality

    @property
    def shortcut_kind(self) -> str:
        return "identity" if self.in_channels == self.out_channels else "projected"


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Symmetric normalization with self-loops:
    D^{-1/2} (A + I) D^{-1/2} where D is the degree matrix of A + I."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency must be symmetric")
    if np.any(np.diag(a) != 0):
        raise ValueError("adjacency must have a zero diagonal")
    ai = a + np.eye(a.shape[0])
    dinv = 1.0 / np.sqrt(ai.sum(axis=1))
    return ai * dinv[:, None] * dinv[None, :]


def graph_conv(a_hat, h, w, activation: str = "none") -> Tensor:
    """act(A_hat @ H @ W)."""
    a_hat = a_hat if isinstance(a_hat, Tensor) else ad.constant(a_hat)
    h = h if isinstance(h, Tensor) else ad.constant(h)
    if a_hat.shape[1] != h.shape[0] or h.shape[1] != w.shape[0]:
        raise ValueError(
            f"shape mismatch: A_hat {a_hat.shape}, H {h.shape}, W {w.shape}")
    out = ad.matmul(ad.matmul(a_hat, h), w)
    if activation == "relu":
        return ad.relu(out)
    if activation != "none":
        raise ValueError(f"unknown activation {activation!r}")
    return out


def init_split_attention(params: ParamStore, prefix: str, cfg: BlockConfig) -> None:
    """Register one block's parameters under ``prefix``."""
    cg = cfg.group_channels
    for j in range(cfg.cardinality):
        for r in range(cfg.radix):
            params.create(f"{prefix}.g{j}.r{r}.w", (cfg.in_channels, cg))
            params.create(f"{prefix}.g{j}.r{r}.b", (1, cg), init="zeros")
            params.create(f"{prefix}.g{j}.att{r}.w", (cg, cg))
            params.create(f"{prefix}.g{j}.att{r}.b", (1, cg), init="zeros")
        params.create(f"{prefix}.g{j}.norm.gamma", (1, cg), init="ones")
        params.create(f"{prefix}.g{j}.norm.beta", (1, cg), init="zeros")
    if cfg.shortcut_kind == "projected":
        params.create(f"{prefix}.tau.w", (cfg.in_channels, cfg.out_channels))


def _descriptor_norm(pooled: Tensor, gamma: Tensor, beta: Tensor,
                     running: dict | None, key: str, train: bool) -> Tensor:
    """Normalize the pooled channel descriptor; batch statistics while
    training, running averages (momentum 0.9) in eval mode."""
    if train or running is None or key not in running:
        z = ad.standardize(pooled, axis=1, eps=NORM_EPS)
        if running is not None:
            mu = float(pooled.value.mean())
            var = float(pooled.value.var())
            if key in running:
                rm, rv = running[key]
                running[key] = (RUNNING_MOMENTUM * rm + (1 - RUNNING_MOMENTUM) * mu,
                                RUNNING_MOMENTUM * rv + (1 - RUNNING_MOMENTUM) * var)
            else:
                running[key] = (mu, var)
    else:
        rm, rv = running[key]
        inv = 1.0 / np.sqrt(rv + NORM_EPS)
        z = ad.elementwise(pooled, (pooled.value - rm) * inv,
                           np.full_like(pooled.value, inv), op="norm_eval")
    return ad.add(ad.mul(z, gamma), beta)


def _attention_group(a_hat: Tensor, g: Tensor, cfg: BlockConfig, params: ParamStore,
                     prefix: str, j: int, running: dict | None, train: bool) -> Tensor:
    branches = []
    for r in range(cfg.radix):
        conv = graph_conv(a_hat, g, params[f"{prefix}.g{j}.r{r}.w"], activation="relu")
        branches.append(ad.add(conv, params[f"{prefix}.g{j}.r{r}.b"]))
    total = branches[0]
    for b in branches[1:]:
        total = ad.add(total, b)
    pooled = ad.max_over_rows(total)
    z = ad.relu(_descriptor_norm(pooled, params[f"{prefix}.g{j}.norm.gamma"],
                                 params[f"{prefix}.g{j}.norm.beta"],
                                 running, f"{prefix}.g{j}", train))
    logits = ad.concat(
        [ad.add(ad.matmul(z, params[f"{prefix}.g{j}.att{r}.w"]),
                params[f"{prefix}.g{j}.att{r}.b"]) for r in range(cfg.radix)],
        axis=0)
    attention = ad.softmax(logits, axis=0)
    weighted = None
    for r in range(cfg.radix):
        term = ad.mul(ad.slice_rows(attention, r, r + 1), branches[r])
        weighted = term if weighted is None else ad.add(weighted, term)
    return weighted


def _trunk(a_hat: Tensor, g: Tensor, cfg: BlockConfig, params: ParamStore,
           prefix: str, running: dict | None, train: bool) -> Tensor:
    groups = [_attention_group(a_hat, g, cfg, params, prefix, j, running, train)
              for j in range(cfg.cardinality)]
    return groups[0] if len(groups) == 1 else ad.concat(groups, axis=1)


def _shortcut(a_hat: Tensor, x: Tensor, cfg: BlockConfig, params: ParamStore,
              prefix: str) -> Tensor:
    # 1x1-style projection: per-node linear map, no neighborhood mixing,
    # so the residual path degenerates to the identity exactly when W = I
    if cfg.shortcut_kind == "identity":
        return x
    return ad.matmul(x, params[f"{prefix}.tau.w"])


def split_attention_block(a_hat, g, cfg: BlockConfig, params: ParamStore,
                          prefix: str = "block", running: dict | None = None,
                          train: bool = True) -> Tensor:
    """One residual split-attention block: attention trunk + shortcut."""
    a_hat = a_hat if isinstance(a_hat, Tensor) else ad.constant(a_hat)
    g = g if isinstance(g, Tensor) else ad.constant(g)
    if g.shape[1] != cfg.in_channels:
        raise ValueError(f"input width {g.shape[1]} != cfg.in_channels {cfg.in_channels}")
    trunk = _trunk(a_hat, g, cfg, params, prefix, running, train)
    return ad.add(trunk, _shortcut(a_hat, g, cfg, params, prefix))


def init_dense_chain(params: ParamStore, prefix: str, blocks: list[BlockConfig]) -> None:
    for i, cfg in enumerate(blocks):
        init_split_attention(params, f"{prefix}{i}", cfg)


def dense_residual_forward(a_hat, g, blocks: list[BlockConfig], params: ParamStore,
                           prefix: str = "b", running: dict | None = None,
                           train: bool = True) -> list[Tensor]:
    """Run the block chain; returns every block output (last is the head).

    Block i's shortcut applies to the accumulated sum of the chain input
    and all earlier block outputs; a width change projects the whole
    accumulated sum through the block's shortcut convolution.
    """
    for prev_cfg, cfg in zip(blocks, blocks[1:]):
        if prev_cfg.out_channels != cfg.in_channels:
            raise ValueError("consecutive block widths do not conform")
    a_hat = a_hat if isinstance(a_hat, Tensor) else ad.constant(a_hat)
    g = g if isinstance(g, Tensor) else ad.constant(g)
    accumulated = g
    prev = g
    outputs: list[Tensor] = []
    for i, cfg in enumerate(blocks):
        if prev.shape[1] != cfg.in_channels:
            raise ValueError(
                f"block {i} expects width {cfg.in_channels}, got {prev.shape[1]}")
        name = f"{prefix}{i}"
        shortcut = _shortcut(a_hat, accumulated, cfg, params, name)
        trunk = _trunk(a_hat, prev, cfg, params, name, running, train)
        y = ad.add(trunk, shortcut)
        accumulated = ad.add(shortcut, y)
        prev = y
        outputs.append(y)
    return outputs
