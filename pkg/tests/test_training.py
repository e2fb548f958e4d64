"""Data generation, optimizer, schedule, loop determinism and ingestion."""

import json

import numpy as np
import pytest

from ofgprn.autodiff import ParamStore, load_params, save_params
from ofgprn.detection import BBox
from ofgprn.training import (SEGMENTATION_PRESETS, TrainConfig, adam_step,
                             ingest_anti_uav, load_dataset, lr_schedule,
                             preprocess_sample, save_dataset, synth_dataset)


class TestSynthDataset:
    def test_same_seed_bit_identical(self):
        a = synth_dataset(seed=3, n_pairs=4, width=32, height=32)
        b = synth_dataset(seed=3, n_pairs=4, width=32, height=32)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.ir, sb.ir)
            assert all(np.array_equal(x, y) for x, y in zip(sa.rgb, sb.rgb))
            assert sa.box == sb.box

    def test_different_seed_differs(self):
        a = synth_dataset(seed=3, n_pairs=2, width=32, height=32)
        b = synth_dataset(seed=4, n_pairs=2, width=32, height=32)
        assert not np.array_equal(a[0].ir, b[0].ir)

    def test_boxes_inside_frame(self):
        for s in synth_dataset(seed=5, n_pairs=20, width=48, height=40):
            assert 0 <= s.box.x_min < s.box.x_max <= 48
            assert 0 <= s.box.y_min < s.box.y_max <= 40

    def test_ir_michelson_contrast(self):
        for s in synth_dataset(seed=6, n_pairs=10, width=48, height=48):
            x0, y0, x1, y1 = (int(v) for v in s.box)
            inside = s.ir[y0:y1, x0:x1].mean()
            outside = s.ir.copy()
            outside[y0:y1, x0:x1] = np.nan
            bg = np.nanmean(outside)
            michelson = (inside - bg) / (inside + bg)
            assert michelson >= 0.3

    def test_degenerate_sizes_rejected(self):
        with pytest.raises(ValueError):
            synth_dataset(seed=0, n_pairs=1, width=8, height=8)
        with pytest.raises(ValueError):
            synth_dataset(seed=0, n_pairs=0)


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        store = ParamStore(seed=0)
        w = store.create("w", (1, 1))
        start = w.value.copy()
        adam_step(store, {"w": np.array([[0.5]])}, {}, lr=1e-2)
        # bias-corrected first step moves by ~lr regardless of grad scale
        assert abs(abs(start[0, 0] - w.value[0, 0]) - 1e-2) < 1e-6

    def test_zero_gradient_keeps_parameters(self):
        store = ParamStore(seed=1)
        w = store.create("w", (2, 3))
        before = w.value.copy()
        state: dict = {}
        adam_step(store, {"w": np.zeros((2, 3))}, state, lr=1e-2)
        assert np.array_equal(w.value, before)
        assert state["t"] == 1

    def test_five_steps_match_scalar_oracle(self):
        store = ParamStore(seed=2)
        w = store.create("w", (1, 1))
        w.value = np.array([[2.0]])
        state: dict = {}
        beta1, beta2, eps, lr = 0.9, 0.999, 1e-8, 0.05

        # independent scalar re-implementation of bias-corrected Adam
        theta, m, v = 2.0, 0.0, 0.0
        for t in range(1, 6):
            g = 2.0 * theta  # gradient of theta^2
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            m_hat = m / (1 - beta1 ** t)
            v_hat = v / (1 - beta2 ** t)
            theta -= lr * m_hat / (np.sqrt(v_hat) + eps)

            grad = np.array([[2.0 * w.value[0, 0]]])
            adam_step(store, {"w": grad}, state, lr, beta1, beta2, eps)
        assert abs(w.value[0, 0] - theta) <= 1e-12

    def test_shape_mismatch_rejected(self):
        store = ParamStore(seed=3)
        store.create("w", (2, 2))
        with pytest.raises(ValueError):
            adam_step(store, {"w": np.zeros((3, 3))}, {}, lr=1e-3)


class TestLrSchedule:
    def test_endpoints(self):
        cfg = TrainConfig(epochs=200)
        assert lr_schedule(0, cfg) == pytest.approx(1e-4)
        assert lr_schedule(199, cfg) == pytest.approx(1e-6)

    def test_geometric_midpoint(self):
        cfg = TrainConfig(epochs=201)
        assert lr_schedule(100, cfg) == pytest.approx(1e-5)

    def test_monotone_nonincreasing(self):
        cfg = TrainConfig(epochs=50)
        values = [lr_schedule(e, cfg) for e in range(50)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_single_epoch(self):
        cfg = TrainConfig(epochs=1)
        assert lr_schedule(0, cfg) == pytest.approx(1e-4)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            lr_schedule(10, TrainConfig(epochs=10))


class TestTrainConfig:
    def test_invalid_mode_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(mode="hybrid")

    def test_lr_ordering_enforced(self):
        with pytest.raises(ValueError):
            TrainConfig(lr_start=1e-6, lr_end=1e-4)

    def test_presets_contain_published_rows(self):
        method, kw = SEGMENTATION_PRESETS["paper-quickshift"]
        assert method == "quickshift"
        assert (kw["kernel_size"], kw["max_dist"], kw["ratio"]) == (3.0, 6.0, 0.5)
        method, kw = SEGMENTATION_PRESETS["paper-slic"]
        assert (kw["n_segments"], kw["compactness"], kw["sigma"]) == (250, 20.0, 0.5)
        method, kw = SEGMENTATION_PRESETS["paper-felz"]
        assert (kw["scale"], kw["sigma"], kw["min_size"]) == (50.0, 10.0, 0.5)
        assert SEGMENTATION_PRESETS["paper"] == SEGMENTATION_PRESETS["paper-quickshift"]


class TestPreprocess:
    def test_modes_produce_expected_feature_planes(self):
        data = synth_dataset(seed=7, n_pairs=1, width=32, height=32)
        widths = {}
        for mode in ("rgbir", "fusion", "fusion+flow", "full"):
            cfg = TrainConfig(mode=mode, epochs=1, flow_iterations=40)
            g = preprocess_sample(data[0], cfg)
            widths[mode] = g.features.shape[1]
            levels = 5 if mode == "full" else 1
            assert g.hierarchy.levels == levels
            assert len(g.targets) == levels
        assert widths == {"rgbir": 5, "fusion": 4, "fusion+flow": 5, "full": 5}

    def test_supervision_positive_matches_good_box(self):
        from ofgprn.detection import iou

        data = synth_dataset(seed=8, n_pairs=3, width=48, height=48)
        cfg = TrainConfig(mode="full", epochs=1)
        for s in data:
            g = preprocess_sample(s, cfg)
            pos = np.nonzero(g.targets[0].ravel() > 0)[0]
            assert len(pos) >= 1
            for node in pos:
                assert iou(BBox(*g.rag.boxes[node].astype(float)), s.box) >= 0.5


class TestDatasetIO:
    def test_save_load_round_trip(self, tmp_path):
        data = synth_dataset(seed=9, n_pairs=3, width=32, height=32)
        save_dataset(tmp_path / "set", data)
        back = load_dataset(tmp_path / "set")
        assert len(back) == 3
        for orig, loaded in zip(data, back):
            assert loaded.index == orig.index
            assert loaded.box == orig.box
            # 8-bit quantization bounds the reload error
            assert np.abs(loaded.ir - orig.ir).max() <= 0.5 / 255.0 + 1e-9
            assert np.abs(loaded.rgb[0] - orig.rgb[0]).max() <= 0.5 / 255.0 + 1e-9

    def test_missing_annotation_rejected(self, tmp_path):
        (tmp_path / "set").mkdir()
        with pytest.raises(ValueError):
            load_dataset(tmp_path / "set")


class TestIngestAntiUav:
    def build_clip(self, root, name, frames=4, with_ir=True, bad_json=False):
        from PIL import Image

        clip = root / name
        (clip / "rgb").mkdir(parents=True)
        if with_ir:
            (clip / "ir").mkdir()
        rng = np.random.default_rng(0)
        boxes = {}
        for i in range(frames):
            fname = f"{i:04d}.png"
            arr = (rng.random((20, 30, 3)) * 255).astype(np.uint8)
            Image.fromarray(arr, mode="RGB").save(clip / "rgb" / fname)
            if with_ir:
                ir = (rng.random((20, 30)) * 255).astype(np.uint8)
                Image.fromarray(ir, mode="L").save(clip / "ir" / fname)
            boxes[fname] = [5, 5, 12, 12]
        if bad_json:
            (clip / "boxes.json").write_text("{ not json")
        else:
            (clip / "boxes.json").write_text(json.dumps(boxes))
        return clip

    def test_empty_directory_returns_empty(self, tmp_path):
        assert ingest_anti_uav(tmp_path) == []

    def test_aligned_clip_loads_every_frame(self, tmp_path):
        self.build_clip(tmp_path, "clip_a", frames=10)
        samples = ingest_anti_uav(tmp_path, size=(40, 60))
        assert len(samples) == 10
        for s in samples:
            assert s.ir.shape == (40, 60)
            assert s.rgb[0].shape == (40, 60)
            # boxes scale with the resample: x by 2, y by 2
            assert s.box == BBox(10.0, 10.0, 24.0, 24.0)

    def test_clip_without_ir_skipped(self, tmp_path):
        self.build_clip(tmp_path, "clip_a", frames=3)
        self.build_clip(tmp_path, "clip_b", frames=3, with_ir=False)
        samples = ingest_anti_uav(tmp_path, size=(20, 30))
        assert len(samples) == 3

    def test_malformed_annotation_raises_with_filename(self, tmp_path):
        self.build_clip(tmp_path, "clip_a", frames=2, bad_json=True)
        with pytest.raises(ValueError, match="boxes.json"):
            ingest_anti_uav(tmp_path)


class TestCheckpointFormat:
    def test_values_round_trip_via_container(self, tmp_path):
        values = {"a": np.arange(6, dtype=np.float64).reshape(2, 3)}
        save_params(tmp_path / "c.bin", values)
        assert np.array_equal(load_params(tmp_path / "c.bin")["a"], values["a"])

    def test_checkpoint_round_trip_reproduces_val_map(self, tmp_path):
        from ofgprn.models import NetworkConfig, build_model
        from ofgprn.training import (_evaluate, _restore_values, preprocess_dataset,
                                     run_training, save_checkpoint)

        data = synth_dataset(seed=17, n_pairs=12, width=48, height=48)
        cfg = TrainConfig(mode="full", epochs=3, seed=17)
        graphs = preprocess_dataset(data, cfg)
        log, best_values, _ = run_training(cfg, data, graphs=graphs)
        best_map = max(row[3] for row in log.rows)
        path = tmp_path / "best.bin"
        save_checkpoint(path, best_values)

        n_val = max(1, int(round(len(graphs) * cfg.val_fraction)))
        model = build_model(cfg.mode, NetworkConfig(
            in_features=graphs[0].features.shape[1], seed=cfg.seed, levels=cfg.levels))
        _restore_values(model, load_params(path))
        _, val_map, _ = _evaluate(model, graphs[-n_val:], cfg)
        assert val_map == best_map  # exact, including the norm running stats


class TestTrainingLoop:
    def test_zero_lr_keeps_parameters_and_still_evaluates(self):
        data = synth_dataset(seed=19, n_pairs=8, width=32, height=32)
        from ofgprn.training import preprocess_dataset, run_training

        cfg = TrainConfig(mode="fusion+flow", epochs=1, seed=19,
                          lr_start=0.0, lr_end=0.0, flow_iterations=40)
        graphs = preprocess_dataset(data, cfg)
        log, best_values, model = run_training(cfg, data, graphs=graphs)
        fresh = type(model)(model.config)
        for name, tensor in model.params.items():
            assert np.array_equal(tensor.value, fresh.params[name].value)
        assert len(log.rows) == 1
        assert np.isfinite(log.rows[0][2]) and 0.0 <= log.rows[0][3] <= 1.0

    def test_loss_decreases_within_twenty_epochs(self):
        from ofgprn.training import preprocess_dataset, run_training

        for seed in (31, 32, 33):
            data = synth_dataset(seed=seed, n_pairs=10, width=32, height=32)
            cfg = TrainConfig(mode="full", epochs=20, seed=seed,
                              flow_iterations=60)
            graphs = preprocess_dataset(data, cfg)
            log, _, _ = run_training(cfg, data, graphs=graphs)
            assert log.rows[19][1] < log.rows[0][1]

    def test_metrics_log_csv_format(self, tmp_path):
        from ofgprn.training import MetricsLog

        log = MetricsLog()
        log.record(0, 1.5, 1.25, 0.5, 1e-4)
        path = tmp_path / "metrics.csv"
        log.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,val_map,lr"
        assert lines[1] == "0,1.5,1.25,0.5,0.0001"
