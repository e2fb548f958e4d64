"""Command-line entry point.

Subcommands expose each pipeline stage (fuse, flow, segment, rag), data
generation (synth), training/evaluation (train, eval) and the composed
pipeline.  Every run writes a manifest next to its outputs: a flat
``key = value`` dump of the resolved configuration (plus commented
metadata and stage timings) that can be fed back through ``--config`` to
reproduce the outputs byte for byte.

Exit codes: 0 success, 2 argument error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .detection import write_detections, write_pr_curve
from .flow import (estimate_flow, motion_mask, read_flow, suppress_background,
                   write_flow, write_flow_png)
from .fusion import fuse_frames
from .image import luminance, read_plane, read_rgb, write_labels, write_plane
from .segmentation import build_rag, felzenszwalb, quickshift, slic, write_rag
from .training import (SEGMENTATION_PRESETS, NumericalAbort, TrainConfig,
                       evaluate_checkpoint, preprocess_dataset, run_training,
                       save_checkpoint, segment_plane, synth_dataset)

USAGE = """\
usage: ofgprn <command> [--flag value ...]

commands:
  fuse      fuse an RGB frame with an IR frame
  flow      estimate optical flow between two frames
  segment   superpixel-segment a frame
  rag       build and export a region adjacency graph
  synth     generate a synthetic paired dual-vision dataset
  train     train a detector on a dataset directory
  eval      evaluate a checkpoint on a dataset directory
  pipeline  run fuse -> flow -> segment -> rag in one step

Flags are long-form only.  --config FILE loads `key = value` defaults that
flags override.  OFGPRN_THREADS caps preprocessing workers (0 = auto).
"""


class ArgumentError(Exception):
    pass


class DataError(Exception):
    pass


# per-command option schema: name -> (parser, default); None default means
# the option is required when the command runs
SCHEMAS: dict[str, dict] = {
    "fuse": {"rgb": (str, None), "ir": (str, None), "out": (str, None),
             "color-out": (str, ""), "smoother-iters": (int, 4),
             "gaussian-sigma": (float, 2.0), "seed": (int, 0)},
    "flow": {"prev": (str, None), "next": (str, None), "out": (str, None),
             "png": (str, ""), "smoothness": (float, 15.0),
             "iterations": (int, 200), "seed": (int, 0)},
    "segment": {"image": (str, None), "out": (str, None), "method": (str, "quickshift"),
                "preset": (str, ""), "n-segments": (int, 250),
                "compactness": (float, 20.0), "sigma": (float, 0.5),
                "scale": (float, 50.0), "min-size": (float, 64),
                "kernel-size": (float, 3.0), "max-dist": (float, 6.0),
                "ratio": (float, 0.5), "seed": (int, 0)},
    "rag": {"image": (str, None), "out": (str, None), "flow": (str, ""),
            "preset": (str, "paper-quickshift"), "seed": (int, 0)},
    "synth": {"out": (str, None), "seed": (int, 0), "pairs": (int, 200),
              "width": (int, 64), "height": (int, 64)},
    "train": {"data": (str, None), "out": (str, None), "mode": (str, "full"),
              "seed": (int, 0), "epochs": (int, 200), "batch-size": (int, 4),
              "loss": (str, "focal"), "preset": (str, "paper-quickshift"),
              "lr-start": (float, 1e-4), "lr-end": (float, 1e-6)},
    "eval": {"data": (str, None), "checkpoint": (str, None), "out": (str, None),
             "mode": (str, "full"), "seed": (int, 0), "loss": (str, "focal"),
             "preset": (str, "paper-quickshift")},
    "pipeline": {"rgb": (str, None), "ir": (str, None), "prev-rgb": (str, None),
                 "prev-ir": (str, None), "out": (str, None),
                 "preset": (str, "paper-quickshift"), "threshold": (float, 0.5),
                 "seed": (int, 0)},
}


def _parse_flags(argv: list[str]) -> dict[str, str]:
    flags = {}
    i = 0
    while i < len(argv):
        arg = argv[i]
        if not arg.startswith("--"):
            raise ArgumentError(f"expected a --flag, got {arg!r}")
        name = arg[2:]
        if i + 1 >= len(argv):
            raise ArgumentError(f"flag --{name} is missing a value")
        flags[name] = argv[i + 1]
        i += 2
    return flags


def _read_config_file(path: str) -> dict[str, str]:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{line_no}: expected `key = value`")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _resolve(command: str, flags: dict[str, str]) -> dict:
    schema = SCHEMAS[command]
    raw = dict(flags)
    if "config" in raw:
        file_values = _read_config_file(raw.pop("config"))
        file_values.pop("command", None)
        merged = {**file_values, **raw}
    else:
        merged = raw
    unknown = set(merged) - set(schema)
    if unknown:
        raise ArgumentError(f"unknown flags for {command}: "
                            + ", ".join(f"--{u}" for u in sorted(unknown)))
    resolved = {}
    for name, (parser, default) in schema.items():
        if name in merged:
            try:
                resolved[name] = parser(merged[name])
            except ValueError as exc:
                raise ArgumentError(f"bad value for --{name}: {merged[name]!r}") from exc
        elif default is None:
            raise ArgumentError(f"{command} requires --{name}")
        else:
            resolved[name] = default
    return resolved


class Manifest:
    """Stage timings plus the resolved configuration; the written file is
    itself a valid --config input."""

    def __init__(self, command: str, resolved: dict):
        self.command = command
        self.resolved = resolved
        self.timings: list[tuple[str, float]] = []

    def time_stage(self, name: str):
        manifest = self

        class _Stage:
            def __enter__(self):
                self.start = time.perf_counter()
                return self

            def __exit__(self, *exc):
                elapsed = (time.perf_counter() - self.start) * 1000.0
                manifest.timings.append((name, elapsed))
                print(f"stage {name}: {elapsed:.1f} ms")
                return False

        return _Stage()

    def write(self, out_path) -> Path:
        path = Path(str(out_path) + ".manifest")
        lines = [f"# ofgprn {__version__} manifest", f"command = {self.command}"]
        for key in sorted(self.resolved):
            lines.append(f"{key} = {self.resolved[key]}")
        for name, ms in self.timings:
            lines.append(f"# timing.{name} = {ms:.3f} ms")
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text("\n".join(lines) + "\n")
        os.replace(tmp, path)
        return path


def _load_planes(path: str):
    try:
        return read_rgb(path)
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def _load_plane(path: str):
    try:
        return read_plane(path)
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def _cmd_fuse(opts: dict, manifest: Manifest) -> int:
    rgb = _load_planes(opts["rgb"])
    ir = _load_plane(opts["ir"])
    with manifest.time_stage("fusion"):
        fused = fuse_frames(rgb, ir, opts["smoother-iters"], opts["gaussian-sigma"])
    write_plane(opts["out"], fused)
    if opts["color-out"]:
        lum = luminance(*rgb)
        color = np.stack([np.clip(c + (fused - lum), 0.0, 1.0) for c in rgb], axis=-1)
        from PIL import Image
        Image.fromarray(np.rint(color * 255.0).astype(np.uint8), mode="RGB").save(
            opts["color-out"], format="PNG")
    return 0


def _cmd_flow(opts: dict, manifest: Manifest) -> int:
    prev = _load_plane(opts["prev"])
    nxt = _load_plane(opts["next"])
    with manifest.time_stage("flow"):
        field = estimate_flow(prev, nxt, opts["smoothness"], opts["iterations"])
    write_flow(opts["out"], field)
    if opts["png"]:
        write_flow_png(opts["png"], field)
    return 0


def _segment_with_opts(plane, opts: dict):
    if opts.get("preset"):
        preset = opts["preset"]
        if preset not in SEGMENTATION_PRESETS:
            raise ArgumentError(f"unknown preset {preset!r}; choices: "
                                + ", ".join(sorted(SEGMENTATION_PRESETS)))
        return segment_plane(plane, preset)
    method = opts["method"]
    if method == "slic":
        return slic(plane, opts["n-segments"], opts["compactness"], opts["sigma"])
    if method == "felzenszwalb":
        min_size = opts["min-size"]
        if min_size < 1:
            min_size = max(1, int(round(min_size * plane.size)))
        return felzenszwalb(plane, opts["scale"], opts["sigma"], int(min_size))
    if method == "quickshift":
        return quickshift(plane, opts["kernel-size"], opts["max-dist"], opts["ratio"])
    raise ArgumentError(f"unknown method {method!r}")


def _cmd_segment(opts: dict, manifest: Manifest) -> int:
    plane = _load_plane(opts["image"])
    with manifest.time_stage("segmentation"):
        labels = _segment_with_opts(plane, opts)
    write_labels(opts["out"], labels.labels)
    print(f"segments: {labels.segment_count}")
    return 0


def _cmd_rag(opts: dict, manifest: Manifest) -> int:
    plane = _load_plane(opts["image"])
    planes = [plane]
    if opts["flow"]:
        field = read_flow(opts["flow"])
        planes.append(np.hypot(field.u, field.v))
    with manifest.time_stage("segmentation"):
        labels = segment_plane(plane, opts["preset"])
    with manifest.time_stage("rag"):
        rag = build_rag(labels, planes)
    write_rag(opts["out"], rag)
    print(f"nodes: {rag.node_count}")
    return 0


def _cmd_synth(opts: dict, manifest: Manifest) -> int:
    from .training import save_dataset

    with manifest.time_stage("synth"):
        samples = synth_dataset(opts["seed"], opts["pairs"], opts["width"],
                                opts["height"])
        save_dataset(opts["out"], samples)
    print(f"wrote {len(samples)} pairs to {opts['out']}")
    return 0


def _train_config(opts: dict) -> TrainConfig:
    try:
        return TrainConfig(seed=opts["seed"], epochs=opts.get("epochs", 1),
                           batch_size=opts.get("batch-size", 4),
                           lr_start=opts.get("lr-start", 1e-4),
                           lr_end=opts.get("lr-end", 1e-6),
                           loss=opts["loss"], mode=opts["mode"],
                           segmentation=opts["preset"])
    except ValueError as exc:
        raise ArgumentError(str(exc)) from exc


def _cmd_train(opts: dict, manifest: Manifest) -> int:
    from .training import load_dataset

    config = _train_config(opts)
    data = load_dataset(opts["data"])
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    with manifest.time_stage("preprocess"):
        graphs = preprocess_dataset(data, config)
    with manifest.time_stage("train"):
        log, best_values, _ = run_training(config, data, graphs=graphs)
    log.write_csv(out_dir / "metrics.csv")
    save_checkpoint(out_dir / "checkpoint.bin", best_values)
    final = log.final
    print(f"final epoch {final[0]}: train {final[1]:.4f} val {final[2]:.4f} "
          f"mAP {final[3]:.3f}")
    return 0


def _cmd_eval(opts: dict, manifest: Manifest) -> int:
    from .training import load_dataset

    config = _train_config(opts)
    data = load_dataset(opts["data"])
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    with manifest.time_stage("evaluate"):
        val_loss, val_map, detections = evaluate_checkpoint(
            opts["checkpoint"], config, data)
    truth = {s.index: s.box for s in data}
    write_detections(out_dir / "detections.txt", detections, truth)
    write_pr_curve(out_dir / "pr_curve.csv", detections, truth)
    (out_dir / "ap.txt").write_text(f"ap {repr(float(val_map))}\n"
                                    f"loss {repr(float(val_loss))}\n")
    print(f"loss {val_loss:.4f} mAP {val_map:.3f}")
    return 0


def _cmd_pipeline(opts: dict, manifest: Manifest) -> int:
    out_dir = Path(opts["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rgb = _load_planes(opts["rgb"])
    ir = _load_plane(opts["ir"])
    prev_rgb = _load_planes(opts["prev-rgb"])
    prev_ir = _load_plane(opts["prev-ir"])
    with manifest.time_stage("fusion"):
        fused_prev = fuse_frames(prev_rgb, prev_ir)
        fused = fuse_frames(rgb, ir)
    write_plane(out_dir / "fused_prev.png", fused_prev)
    write_plane(out_dir / "fused.png", fused)
    # downstream stages consume the written 8-bit frames so that composing
    # the individual commands over the same files is byte-identical
    fused_prev = read_plane(out_dir / "fused_prev.png")
    fused = read_plane(out_dir / "fused.png")
    with manifest.time_stage("flow"):
        field = estimate_flow(fused_prev, fused)
    write_flow(out_dir / "flow.bin", field)
    write_flow_png(out_dir / "flow.png", field)
    with manifest.time_stage("suppress"):
        mask = motion_mask(field, opts["threshold"], dilate=True)
        suppressed = suppress_background(fused, mask)
    write_plane(out_dir / "suppressed.png", suppressed)
    suppressed = read_plane(out_dir / "suppressed.png")
    with manifest.time_stage("segmentation"):
        labels = segment_plane(suppressed, opts["preset"])
    write_labels(out_dir / "labels.png", labels.labels)
    with manifest.time_stage("rag"):
        planes = [suppressed, np.hypot(field.u, field.v)]
        rag = build_rag(labels, planes)
    write_rag(out_dir / "graph.txt", rag)
    print(f"pipeline complete: {rag.node_count} nodes")
    return 0


COMMANDS = {
    "fuse": _cmd_fuse,
    "flow": _cmd_flow,
    "segment": _cmd_segment,
    "rag": _cmd_rag,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "pipeline": _cmd_pipeline,
}


def dispatch(argv: list[str]) -> int:
    if not argv:
        print(USAGE, file=sys.stderr)
        return 2
    if argv[0] in ("--help", "help"):
        print(USAGE)
        return 0
    command = argv[0]
    if command not in COMMANDS:
        print(f"error: unknown subcommand {command!r}\n{USAGE}", file=sys.stderr)
        return 2
    try:
        flags = _parse_flags(argv[1:])
        resolved = _resolve(command, flags)
    except ArgumentError as exc:
        print(f"error: {exc}\n{USAGE}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    manifest = Manifest(command, resolved)
    try:
        code = COMMANDS[command](resolved, manifest)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    manifest.write(Path(resolved["out"]))
    return code


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
