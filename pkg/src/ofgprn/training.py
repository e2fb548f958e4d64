"""Synthetic paired dual-vision data, Adam, and the training loop.

Each synthetic sample carries two consecutive RGB+IR frames of a scene
whose small target moves along a random heading; static distractors share
the target's appearance signature (IR-hot, faint in RGB), so motion is the
only reliable cue.  The four pipeline arms differ in preprocessing and
network:

  rgbir        raw luminance + IR planes, residual GCN
  fusion       fused frame, residual GCN
  fusion+flow  fused frame with flow-suppressed background, residual GCN
  full         suppressed input, split attention + graph feature pyramid
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ParamStore, backward, first_nonfinite, load_params, save_params
from .detection import BBox, LossConfig, average_precision, iou, localize
from .flow import estimate_flow, flow_magnitude, motion_mask, suppress_background
from .fusion import fuse_frames
from .grsan import normalize_adjacency
from .image import luminance
from .models import NetworkConfig, build_model
from .pyramid import Hierarchy, build_hierarchy
from .segmentation import LabelMap, Rag, build_rag, felzenszwalb, quickshift, slic

logger = logging.getLogger("ofgprn")

__all__ = [
    "TrainConfig",
    "SamplePair",
    "MetricsLog",
    "SEGMENTATION_PRESETS",
    "synth_dataset",
    "adam_step",
    "lr_schedule",
    "preprocess_sample",
    "run_training",
    "ingest_anti_uav",
    "worker_count",
]

MODES = ("rgbir", "fusion", "fusion+flow", "full")
LOSS_KINDS = ("ce", "consistent_ce", "focal")

# segmentation presets; rows named paper-* pin the published sweeps (the
# felzenszwalb min-size value below 1 reads as an image-area fraction)
SEGMENTATION_PRESETS = {
    "paper-slic": ("slic", {"n_segments": 250, "compactness": 20.0, "sigma": 0.5}),
    "paper-felz": ("felzenszwalb", {"scale": 50.0, "sigma": 10.0, "min_size": 0.5}),
    "paper-quickshift": ("quickshift", {"kernel_size": 3.0, "max_dist": 6.0, "ratio": 0.5}),
    "paper": ("quickshift", {"kernel_size": 3.0, "max_dist": 6.0, "ratio": 0.5}),
}


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 4
    epochs: int = 200
    lr_start: float = 1e-4
    lr_end: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: str = "focal"
    mode: str = "full"
    segmentation: str = "paper-quickshift"
    loss_config: LossConfig = field(default_factory=LossConfig)
    flow_threshold: float = 0.5
    flow_iterations: int = 200
    levels: int = 5
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr_end > self.lr_start:
            raise ValueError("lr_end must be <= lr_start")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.segmentation not in SEGMENTATION_PRESETS:
            raise ValueError(f"unknown segmentation preset {self.segmentation!r}")


@dataclass(frozen=True)
class SamplePair:
    """Two consecutive aligned RGB+IR frames plus the current frame's box."""

    rgb: tuple
    ir: np.ndarray
    box: BBox
    index: int
    prev_rgb: tuple
    prev_ir: np.ndarray


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)

    def record(self, epoch: int, train_loss: float, val_loss: float,
               val_map: float, lr: float) -> None:
        self.rows.append((epoch, train_loss, val_loss, val_map, lr))

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_map", "lr"])
            for epoch, tl, vl, vm, lr in self.rows:
                writer.writerow([epoch, repr(float(tl)), repr(float(vl)),
                                 repr(float(vm)), repr(float(lr))])

    @property
    def final(self):
        return self.rows[-1]


class NumericalAbort(RuntimeError):
    """Training hit a non-finite loss; message names the first bad tensor."""


def worker_count() -> int:
    """Preprocessing worker cap from OFGPRN_THREADS (0 or unset = auto).

    Auto means sequential: the per-sample work is many small numpy calls,
    which a thread pool only slows down at desk-scale frame sizes.
    """
    raw = os.environ.get("OFGPRN_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else 1


def _value_noise(rng: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    """Bilinearly upsampled random lattice: smooth seeded texture."""
    gh, gw = h // cell + 3, w // cell + 3
    coarse = rng.random((gh, gw))
    ys = np.arange(h) / cell
    xs = np.arange(w) / cell
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = coarse[np.ix_(y0, x0)]
    b = coarse[np.ix_(y0, x0 + 1)]
    c = coarse[np.ix_(y0 + 1, x0)]
    d = coarse[np.ix_(y0 + 1, x0 + 1)]
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx


def _stamp(plane: np.ndarray, y: int, x: int, size: int, value: float) -> None:
    plane[y:y + size, x:x + size] = value


def synth_dataset(seed: int, n_pairs: int, width: int = 64, height: int = 64,
                  target_size_range: tuple = (6, 9), speed_range: tuple = (1.0, 3.0),
                  n_distractors: int = 2, rgb_target_delta: float = 0.04,
                  rgb_noise: float = 0.01, night_fraction: float = 0.5) -> list[SamplePair]:
    """Seeded scenes: smooth textured background with day/night
    illumination variation, one moving target and static distractors.

    Target and distractors share the same appearance signature (bright in
    IR, nearly invisible in noisy RGB) and the same size range, so
    appearance alone cannot tell them apart; only the motion field singles
    out the target.  On night scenes the RGB stream is almost black, which
    cripples raw-channel processing while saliency-weighted fusion keeps
    the full IR contrast.  Ground-truth boxes are exact; the same seed
    reproduces the dataset bit for bit."""
    if width < 16 or height < 16:
        raise ValueError("frames must be at least 16x16")
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    for index in range(n_pairs):
        base = _value_noise(rng, height, width, cell=8)
        angle = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:height, 0:width]
        drift = ((np.cos(angle) * xx + np.sin(angle) * yy)
                 / math.hypot(width, height))
        if rng.random() < night_fraction:
            gain = rng.uniform(0.08, 0.18)  # night: RGB nearly black
        else:
            gain = rng.uniform(0.55, 1.0)   # day
        bg_rgb = np.clip(gain * (0.25 + 0.35 * base + 0.15 * drift), 0.0, 1.0)
        bg_ir = np.clip(0.20 + 0.30 * (1.0 - base) + 0.05 * drift, 0.0, 1.0)

        size = int(rng.integers(target_size_range[0], target_size_range[1] + 1))
        speed = rng.uniform(*speed_range)
        heading = rng.uniform(0, 2 * np.pi)
        dx = speed * math.cos(heading)
        dy = speed * math.sin(heading)
        margin = size + int(math.ceil(speed)) + 2
        cx = rng.uniform(margin, width - margin)
        cy = rng.uniform(margin, height - margin)
        x1, y1 = int(round(cx)), int(round(cy))
        x0, y0 = int(round(cx - dx)), int(round(cy - dy))

        spots = []
        for _ in range(n_distractors):
            ssize = int(rng.integers(target_size_range[0], target_size_range[1] + 1))
            sy = int(rng.integers(1, height - ssize - 1))
            sx = int(rng.integers(1, width - ssize - 1))
            # keep distractors clear of both target positions
            if (abs(sy - y1) < size + ssize + 2 and abs(sx - x1) < size + ssize + 2) or \
               (abs(sy - y0) < size + ssize + 2 and abs(sx - x0) < size + ssize + 2):
                continue
            spots.append((sy, sx, ssize))

        delta = gain * rgb_target_delta  # appearance deltas dim with the scene

        def render(bg: np.ndarray, tx: int, ty: int, target_value, spot_value, chan_rng):
            frame = bg.copy()
            for sy, sx, ssize in spots:
                if spot_value is None:
                    _stamp(frame, sy, sx, ssize,
                           float(np.clip(bg[sy, sx] + delta, 0.0, 1.0)))
                else:
                    _stamp(frame, sy, sx, ssize, spot_value)
            if target_value is not None:
                _stamp(frame, ty, tx, size, target_value)
            if chan_rng is not None:
                frame = frame + chan_rng.normal(0.0, rgb_noise, frame.shape)
            return np.clip(frame, 0.0, 1.0)

        noise_rngs = [np.random.default_rng(rng.integers(0, 2 ** 63)) for _ in range(6)]
        rgb_val0 = float(np.clip(bg_rgb[y0, x0] + delta, 0.0, 1.0))
        rgb_val = float(np.clip(bg_rgb[y1, x1] + delta, 0.0, 1.0))
        # distractors mirror the target: IR-hot, barely-there in RGB
        prev_rgb = tuple(render(bg_rgb, x0, y0, rgb_val0, None, noise_rngs[c])
                         for c in range(3))
        cur_rgb = tuple(render(bg_rgb, x1, y1, rgb_val, None, noise_rngs[3 + c])
                        for c in range(3))
        prev_ir = render(bg_ir, x0, y0, 0.95, 0.95, None)
        cur_ir = render(bg_ir, x1, y1, 0.95, 0.95, None)
        box = BBox(float(x1), float(y1), float(x1 + size), float(y1 + size))
        samples.append(SamplePair(rgb=cur_rgb, ir=cur_ir, box=box, index=index,
                                  prev_rgb=prev_rgb, prev_ir=prev_ir))
    return samples


def adam_step(params: ParamStore, grads: dict, state: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """Standard bias-corrected Adam update, applied in parameter order."""
    if not state:
        state["t"] = 0
        state["m"] = {name: np.zeros_like(t.value) for name, t in params.items()}
        state["v"] = {name: np.zeros_like(t.value) for name, t in params.items()}
    state["t"] += 1
    t = state["t"]
    for name, tensor in params.items():
        g = grads[name]
        if g.shape != tensor.value.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name!r} "
                             f"shape {tensor.value.shape}")
        m = state["m"][name] = beta1 * state["m"][name] + (1 - beta1) * g
        v = state["v"][name] = beta2 * state["v"][name] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        tensor.value = tensor.value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Geometric interpolation from lr_start (first epoch) to lr_end (last)."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if config.epochs == 1:
        return config.lr_start
    frac = epoch / (config.epochs - 1)
    return config.lr_start * (config.lr_end / config.lr_start) ** frac


def segment_plane(plane: np.ndarray, preset: str) -> LabelMap:
    method, kw = SEGMENTATION_PRESETS[preset]
    if method == "slic":
        n = min(kw["n_segments"], plane.size)
        return slic(plane, n, kw["compactness"], kw["sigma"])
    if method == "felzenszwalb":
        min_size = kw["min_size"]
        if min_size < 1:
            min_size = max(1, int(round(min_size * plane.size)))
        return felzenszwalb(plane, kw["scale"], kw["sigma"], int(min_size))
    return quickshift(plane, kw["kernel_size"], kw["max_dist"], kw["ratio"])


@dataclass
class GraphSample:
    """Preprocessed, network-ready view of one SamplePair."""

    features: np.ndarray
    a_hats: list
    hierarchy: Hierarchy
    rag: Rag
    targets: list
    overlaps: list
    gt_box: BBox
    frame_id: int


def _level_supervision(rag: Rag, hierarchy: Hierarchy, gt: BBox, labels: LabelMap):
    """Per-level +/-1 targets and node-box IoU overlaps.

    A node is positive when its pixel bounding box is itself a good
    detection (IoU with the ground truth >= 0.5), which ties the training
    signal directly to the localization metric.
    """
    k = rag.node_count
    areas = rag.areas.astype(np.float64)
    boxes = rag.boxes.astype(np.float64)
    targets, overlaps = [], []
    for lvl in range(hierarchy.levels):
        o = np.array([iou(BBox(*b), gt) for b in boxes])[:, None]
        t = np.where(o >= 0.5, 1.0, -1.0)
        targets.append(t)
        overlaps.append(o)
        if lvl == hierarchy.levels - 1:
            break
        assign = hierarchy.assignments[lvl]
        m = hierarchy.counts[lvl + 1]
        parent_area = np.bincount(assign, weights=areas, minlength=m)
        parent_boxes = np.zeros((m, 4))
        parent_boxes[:, 0] = np.full(m, np.inf)
        parent_boxes[:, 1] = np.full(m, np.inf)
        np.minimum.at(parent_boxes[:, 0], assign, boxes[:, 0])
        np.minimum.at(parent_boxes[:, 1], assign, boxes[:, 1])
        np.maximum.at(parent_boxes[:, 2], assign, boxes[:, 2])
        np.maximum.at(parent_boxes[:, 3], assign, boxes[:, 3])
        areas = parent_area
        boxes = parent_boxes
    return targets, overlaps


def preprocess_sample(sample: SamplePair, config: TrainConfig) -> GraphSample:
    """Run the configured pipeline prefix and build the graph inputs."""
    lum = luminance(*sample.rgb)
    if config.mode == "rgbir":
        seg_input = 0.5 * (lum + sample.ir)
        planes = [lum, sample.ir]
    else:
        fused = fuse_frames(sample.rgb, sample.ir)
        if config.mode == "fusion":
            seg_input = fused
            planes = [fused]
        else:
            fused_prev = fuse_frames(sample.prev_rgb, sample.prev_ir)
            flow = estimate_flow(fused_prev, fused, iterations=config.flow_iterations)
            mask = motion_mask(flow, config.flow_threshold, dilate=True)
            seg_input = suppress_background(fused, mask)
            planes = [fused, flow_magnitude(flow)]
    labels = segment_plane(seg_input, config.segmentation)
    rag = build_rag(labels, planes)
    levels = config.levels if config.mode == "full" else 1
    hierarchy = build_hierarchy(rag, levels)
    a_hats = [normalize_adjacency(adj) for adj in hierarchy.adjacency]
    targets, overlaps = _level_supervision(rag, hierarchy, sample.box, labels)
    return GraphSample(features=rag.features, a_hats=a_hats, hierarchy=hierarchy,
                       rag=rag, targets=targets, overlaps=overlaps,
                       gt_box=sample.box, frame_id=sample.index)


def preprocess_dataset(samples: list[SamplePair], config: TrainConfig) -> list[GraphSample]:
    workers = worker_count()
    if workers <= 1 or len(samples) < 4:
        return [preprocess_sample(s, config) for s in samples]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: preprocess_sample(s, config), samples))


RUNNING_PREFIX = "_running."


def _snapshot_values(model) -> dict:
    """Parameter values plus the descriptor-norm running statistics, so a
    reloaded checkpoint reproduces eval-mode numbers exactly."""
    values = model.params.values()
    for key, (mean, var) in model.running.items():
        values[RUNNING_PREFIX + key] = np.array([[mean, var]])
    return values


def _restore_values(model, values: dict) -> None:
    params = {}
    for name, arr in values.items():
        if name.startswith(RUNNING_PREFIX):
            key = name[len(RUNNING_PREFIX):]
            model.running[key] = (float(arr[0, 0]), float(arr[0, 1]))
        else:
            params[name] = arr
    model.params.load_values(params)


def _evaluate(model, graphs: list[GraphSample], config: TrainConfig):
    """Validation loss and mAP in eval mode."""
    losses = []
    detections = []
    truth = {}
    for g in graphs:
        scores = model.forward(g.a_hats, g.features, g.hierarchy, train=False)
        loss = model.loss(scores, g.targets, g.overlaps, config.loss, config.loss_config)
        losses.append(float(loss.value))
        det = localize(scores[0].value, g.rag, g.hierarchy, frame_id=g.frame_id)
        detections.append(det)
        truth[g.frame_id] = g.gt_box
    val_map = average_precision(detections, truth)
    return float(np.mean(losses)), val_map, detections


def run_training(config: TrainConfig, data: list[SamplePair],
                 graphs: list[GraphSample] | None = None):
    """Train on the 80/20 by-index split; returns (MetricsLog, best
    parameter values, final model)."""
    if not data:
        raise ValueError("dataset is empty")
    if graphs is None:
        graphs = preprocess_dataset(data, config)
    n_val = max(1, int(round(len(graphs) * config.val_fraction)))
    train_graphs = graphs[:-n_val]
    val_graphs = graphs[-n_val:]
    if not train_graphs:
        raise ValueError("no training samples after split")
    in_features = train_graphs[0].features.shape[1]
    net_cfg = NetworkConfig(in_features=in_features, seed=config.seed,
                            levels=config.levels if config.mode == "full" else 1)
    model = build_model(config.mode, net_cfg)
    rng = np.random.default_rng(config.seed)
    state: dict = {}
    log = MetricsLog()
    best_map = -1.0
    best_values: dict | None = None
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        order = rng.permutation(len(train_graphs))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            model.params.zero_grads()
            for gi in batch:
                g = train_graphs[int(gi)]
                scores = model.forward(g.a_hats, g.features, g.hierarchy, train=True)
                loss = model.loss(scores, g.targets, g.overlaps,
                                  config.loss, config.loss_config)
                if not np.isfinite(loss.value):
                    culprit = first_nonfinite(loss) or "loss"
                    raise NumericalAbort(
                        f"non-finite loss at epoch {epoch}, sample {g.frame_id}; "
                        f"first non-finite tensor: {culprit}")
                backward(loss)
                epoch_losses.append(float(loss.value))
            grads = {name: arr / len(batch)
                     for name, arr in model.params.gradients().items()}
            adam_step(model.params, grads, state, lr,
                      config.beta1, config.beta2, config.adam_eps)
        val_loss, val_map, _ = _evaluate(model, val_graphs, config)
        log.record(epoch, float(np.mean(epoch_losses)), val_loss, val_map, lr)
        if val_map > best_map:
            best_map = val_map
            best_values = _snapshot_values(model)
    if best_values is None:
        best_values = _snapshot_values(model)
    return log, best_values, model


def evaluate_checkpoint(path, config: TrainConfig, data: list[SamplePair],
                        graphs: list[GraphSample] | None = None):
    """Load parameters and report validation loss, mAP and detections."""
    if graphs is None:
        graphs = preprocess_dataset(data, config)
    in_features = graphs[0].features.shape[1]
    net_cfg = NetworkConfig(in_features=in_features, seed=config.seed,
                            levels=config.levels if config.mode == "full" else 1)
    model = build_model(config.mode, net_cfg)
    _restore_values(model, load_params(path))
    return _evaluate(model, graphs, config)


def save_checkpoint(path, values: dict) -> None:
    save_params(path, values)


def save_dataset(path, samples: list[SamplePair]) -> None:
    """Write a dataset as PNG pairs plus a JSON box table.

    Layout: <root>/pair_<index>/{rgb,ir,prev_rgb,prev_ir}.png and a root
    boxes.json mapping pair index to [x_min, y_min, x_max, y_max].
    """
    from PIL import Image

    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    boxes = {}
    for s in samples:
        pair_dir = root / f"pair_{s.index:05d}"
        pair_dir.mkdir(exist_ok=True)
        for name, planes in (("rgb", s.rgb), ("prev_rgb", s.prev_rgb)):
            arr = np.rint(np.clip(np.stack(planes, axis=-1), 0, 1) * 255).astype(np.uint8)
            Image.fromarray(arr, mode="RGB").save(pair_dir / f"{name}.png", format="PNG")
        for name, plane in (("ir", s.ir), ("prev_ir", s.prev_ir)):
            arr = np.rint(np.clip(plane, 0, 1) * 255).astype(np.uint8)
            Image.fromarray(arr, mode="L").save(pair_dir / f"{name}.png", format="PNG")
        boxes[str(s.index)] = [float(v) for v in s.box]
    (root / "boxes.json").write_text(json.dumps(boxes, sort_keys=True, indent=1))


def load_dataset(path) -> list[SamplePair]:
    """Read a dataset directory produced by save_dataset."""
    from .image import read_plane, read_rgb

    root = Path(path)
    ann = root / "boxes.json"
    if not ann.is_file():
        raise ValueError(f"{root} is not a dataset directory (missing boxes.json)")
    boxes = json.loads(ann.read_text())
    samples = []
    for pair_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        index = int(pair_dir.name.split("_")[1])
        key = str(index)
        if key not in boxes:
            raise ValueError(f"boxes.json is missing an entry for pair {index}")
        samples.append(SamplePair(
            rgb=read_rgb(pair_dir / "rgb.png"),
            ir=read_plane(pair_dir / "ir.png"),
            box=BBox(*boxes[key]),
            index=index,
            prev_rgb=read_rgb(pair_dir / "prev_rgb.png"),
            prev_ir=read_plane(pair_dir / "prev_ir.png")))
    return samples


def _resize_plane(plane: np.ndarray, size: tuple) -> np.ndarray:
    from PIL import Image

    h, w = size
    img = Image.fromarray(plane.astype(np.float32), mode="F")
    return np.asarray(img.resize((w, h), Image.BILINEAR), dtype=np.float64)


def ingest_anti_uav(root_path, size: tuple = (128, 128)) -> list[SamplePair]:
    """Load aligned RGB/IR clip folders with per-frame box annotations.

    Layout: <root>/<clip>/rgb/*.png, <root>/<clip>/ir/*.png and
    <root>/<clip>/boxes.json mapping each RGB frame filename to
    [x_min, y_min, x_max, y_max] in source pixels.  Clips missing either
    stream are skipped with a warning; malformed annotations raise an
    error naming the file.  Frames resample to ``size`` (height, width).
    """
    from .image import read_plane, read_rgb

    root = Path(root_path)
    samples: list[SamplePair] = []
    index = 0
    clips = sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []
    if not clips:
        logger.warning("no clips found under %s", root)
        return samples
    for clip in clips:
        rgb_dir, ir_dir = clip / "rgb", clip / "ir"
        ann_path = clip / "boxes.json"
        if not rgb_dir.is_dir() or not ir_dir.is_dir():
            logger.warning("skipping clip %s: missing rgb or ir stream", clip.name)
            continue
        rgb_frames = sorted(rgb_dir.iterdir())
        ir_frames = sorted(ir_dir.iterdir())
        if len(rgb_frames) != len(ir_frames) or not rgb_frames:
            logger.warning("skipping clip %s: unaligned frame counts", clip.name)
            continue
        try:
            boxes = json.loads(ann_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"malformed annotation file {ann_path}: {exc}") from exc
        prev: tuple | None = None
        for rgb_path, ir_path in zip(rgb_frames, ir_frames):
            if rgb_path.name not in boxes:
                raise ValueError(f"annotation file {ann_path} is missing an entry "
                                 f"for frame {rgb_path.name}")
            raw_box = boxes[rgb_path.name]
            if not (isinstance(raw_box, list) and len(raw_box) == 4):
                raise ValueError(f"annotation file {ann_path}: bad box for "
                                 f"{rgb_path.name}: {raw_box!r}")
            r, g, b = read_rgb(rgb_path)
            ir = read_plane(ir_path)
            sy = size[0] / r.shape[0]
            sx = size[1] / r.shape[1]
            rgb = tuple(_resize_plane(p, size) for p in (r, g, b))
            ir = _resize_plane(ir, size)
            box = BBox(raw_box[0] * sx, raw_box[1] * sy, raw_box[2] * sx, raw_box[3] * sy)
            if prev is None:
                prev = (rgb, ir)
            samples.append(SamplePair(rgb=rgb, ir=ir, box=box, index=index,
                                      prev_rgb=prev[0], prev_ir=prev[1]))
            prev = (rgb, ir)
            index += 1
    return samples
