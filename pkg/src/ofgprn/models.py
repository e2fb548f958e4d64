"""Network assemblies: the split-attention pyramid detector and the plain
residual graph-convolution baseline used by the ablation arms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .detection import LossConfig, ce_op, consistent_ce_op, focal_op
from .grsan import BlockConfig, dense_residual_forward, graph_conv, init_dense_chain
from .pyramid import Hierarchy, init_pyramid, top_down_fuse

__all__ = ["NetworkConfig", "OfGprnModel", "ResGcnModel", "build_model"]

DEFAULT_WIDTHS = (32, 64, 64, 64, 64)


@dataclass(frozen=True)
class NetworkConfig:
    in_features: int
    widths: tuple = DEFAULT_WIDTHS
    radix: int = 2
    cardinality: int = 2
    pyramid_width: int = 32
    levels: int = 5
    seed: int = 0


def _loss_terms(kind: str, scores: Tensor, targets: np.ndarray, overlaps: np.ndarray,
                cfg: LossConfig) -> Tensor:
    if kind == "ce":
        return ce_op(scores, targets, cfg.lambda1)
    if kind == "consistent_ce":
        return consistent_ce_op(scores, targets, overlaps, cfg)
    if kind == "focal":
        return focal_op(scores, targets, cfg)
    raise ValueError(f"unknown loss kind {kind!r}")


class OfGprnModel:
    """Dense split-attention chain feeding a graph feature pyramid; one
    score head per pyramid level."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.params = ParamStore(seed=config.seed)
        self.running: dict = {}
        widths = list(config.widths)
        chain_in = [config.in_features] + widths[:-1]
        self.blocks = [BlockConfig(config.radix, config.cardinality, cin, cout)
                       for cin, cout in zip(chain_in, widths)]
        init_dense_chain(self.params, "b", self.blocks)
        init_pyramid(self.params, "pyr", widths, config.pyramid_width, config.levels)

    def forward(self, a_hats: list[np.ndarray], features: np.ndarray,
                hierarchy: Hierarchy, train: bool = True):
        """Returns per-level node-score tensors, finest level first."""
        outputs = dense_residual_forward(a_hats[0], features, self.blocks, self.params,
                                         "b", self.running, train)
        _, scores = top_down_fuse(outputs, hierarchy, self.params, "pyr", a_hats=a_hats)
        return scores

    def loss(self, scores, targets: list[np.ndarray], overlaps: list[np.ndarray],
             kind: str, cfg: LossConfig) -> Tensor:
        # localization reads the finest level, so its loss dominates; each
        # coarser level contributes at half the previous level's weight
        weights = np.array([0.5 ** lvl for lvl in range(len(scores))])
        weights /= weights.sum()
        total = None
        for weight, s, t, o in zip(weights, scores, targets, overlaps):
            term = ad.mul(ad.mean_all(_loss_terms(kind, s, t, o, cfg)), float(weight))
            total = term if total is None else ad.add(total, term)
        return total


class ResGcnModel:
    """Residual graph convolution baseline: per block,
    relu(conv(H)) + bias + shortcut(H); a single sigmoid score head."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.params = ParamStore(seed=config.seed)
        self.running: dict = {}
        widths = list(config.widths)
        chain_in = [config.in_features] + widths[:-1]
        self.block_io = list(zip(chain_in, widths))
        for i, (cin, cout) in enumerate(self.block_io):
            self.params.create(f"b{i}.w", (cin, cout))
            self.params.create(f"b{i}.b", (1, cout), init="zeros")
            if cin != cout:
                self.params.create(f"b{i}.tau.w", (cin, cout))
        self.params.create("score.w", (widths[-1], 1))
        self.params.create("score.b", (1, 1), init="zeros")

    def forward(self, a_hats: list[np.ndarray], features: np.ndarray,
                hierarchy: Hierarchy | None = None, train: bool = True):
        a_hat = ad.constant(a_hats[0])
        h = ad.constant(features)
        for i, (cin, cout) in enumerate(self.block_io):
            trunk = ad.add(graph_conv(a_hat, h, self.params[f"b{i}.w"], activation="relu"),
                           self.params[f"b{i}.b"])
            shortcut = (h if cin == cout
                        else ad.matmul(h, self.params[f"b{i}.tau.w"]))
            h = ad.add(trunk, shortcut)
        # same standardized head as the pyramid levels, for ablation parity
        scores = ad.sigmoid(ad.add(ad.matmul(ad.standardize(h, axis=0),
                                             self.params["score.w"]),
                                   self.params["score.b"]))
        return [scores]

    def loss(self, scores, targets: list[np.ndarray], overlaps: list[np.ndarray],
             kind: str, cfg: LossConfig) -> Tensor:
        return ad.mean_all(_loss_terms(kind, scores[0], targets[0], overlaps[0], cfg))


def build_model(mode: str, config: NetworkConfig):
    """The full arm runs split attention + pyramid; every other ablation
    arm runs the plain residual baseline."""
    return OfGprnModel(config) if mode == "full" else ResGcnModel(config)
