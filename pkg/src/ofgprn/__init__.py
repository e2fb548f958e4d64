"""Dual-vision small-target detection over superpixel graphs.

Pipeline: RGB/IR frame fusion -> optical-flow background suppression ->
superpixel region adjacency graphs -> residual split-attention graph
network with a graph feature pyramid -> single-box localization.
"""

__version__ = "0.1.0"

from .detection import (BBox, Detection, LossConfig, average_precision,
                        consistent_cross_entropy, cross_entropy, focal_loss, iou,
                        localize)
from .flow import FlowField, estimate_flow, motion_mask, suppress_background
from .fusion import (LaplacianWindow, LayerTriple, base_fuse, decompose, fuse_frames,
                     modified_laplacian, pcnn_fuse_detail, saliency)
from .grsan import (BlockConfig, dense_residual_forward, graph_conv,
                    normalize_adjacency, split_attention_block)
from .models import NetworkConfig, OfGprnModel, ResGcnModel
from .pyramid import Hierarchy, build_hierarchy, level_counts, pool_up, top_down_fuse, unpool
from .segmentation import LabelMap, Rag, build_rag, felzenszwalb, quickshift, slic
from .training import (MetricsLog, SamplePair, TrainConfig, adam_step, ingest_anti_uav,
                       lr_schedule, run_training, synth_dataset)

__all__ = [
    "__version__",
    "BBox", "Detection", "LossConfig", "average_precision", "consistent_cross_entropy",
    "cross_entropy", "focal_loss", "iou", "localize",
    "FlowField", "estimate_flow", "motion_mask", "suppress_background",
    "LaplacianWindow", "LayerTriple", "base_fuse", "decompose", "fuse_frames",
    "modified_laplacian", "pcnn_fuse_detail", "saliency",
    "BlockConfig", "dense_residual_forward", "graph_conv", "normalize_adjacency",
    "split_attention_block",
    "NetworkConfig", "OfGprnModel", "ResGcnModel",
    "Hierarchy", "build_hierarchy", "level_counts", "pool_up", "top_down_fuse", "unpool",
    "LabelMap", "Rag", "build_rag", "felzenszwalb", "quickshift", "slic",
    "MetricsLog", "SamplePair", "TrainConfig", "adam_step", "ingest_anti_uav",
    "lr_schedule", "run_training", "synth_dataset",
]
