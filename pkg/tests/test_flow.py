"""Optical-flow solver contracts: fixed points, known-shift recovery,
energy descent, mask algebra and the raw dump format."""

import numpy as np
import pytest

from ofgprn.flow import (FlowField, estimate_flow, flow_magnitude, hs_energy,
                         motion_mask, read_flow, suppress_background, write_flow)
from ofgprn.image import DimensionError


def smooth_texture(rng, h, w, cell=8):
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


def shifted_pair(seed=0, size=128, shift=2):
    """Scene content moves right by ``shift`` pixels between the frames."""
    rng = np.random.default_rng(seed)
    canvas = smooth_texture(rng, size + 8, size + 8)
    prev = canvas[4:4 + size, 4:4 + size].copy()
    nxt = canvas[4:4 + size, 4 - shift:4 - shift + size].copy()
    return prev, nxt


class TestEstimateFlow:
    def test_identical_frames_zero_flow(self):
        rng = np.random.default_rng(1)
        frame = rng.random((48, 48))
        flow = estimate_flow(frame, frame.copy())
        assert np.abs(flow.u).max() <= 1e-9
        assert np.abs(flow.v).max() <= 1e-9

    def test_two_pixel_translation_recovered(self):
        prev, nxt = shifted_pair(seed=0, size=128, shift=2)
        flow = estimate_flow(prev, nxt)
        interior = (slice(16, -16), slice(16, -16))
        epe = np.hypot(flow.u[interior] - 2.0, flow.v[interior]).mean()
        assert epe <= 0.5

    def test_uniform_frames_stay_zero(self):
        prev = np.full((32, 32), 0.2)
        nxt = np.full((32, 32), 0.8)
        flow = estimate_flow(prev, nxt)
        # zero spatial gradient keeps the update at zero flow
        assert np.abs(flow.u).max() <= 1e-9
        assert np.abs(flow.v).max() <= 1e-9

    def test_energy_nonincreasing(self):
        prev, nxt = shifted_pair(seed=3, size=64, shift=2)
        energies = [hs_energy(estimate_flow(prev, nxt, iterations=it), prev, nxt)
                    for it in range(10, 210, 10)]
        diffs = np.diff(energies)
        assert np.all(diffs <= 1e-9 * abs(energies[0]))

    def test_translation_equivariance_on_wrapped_texture(self):
        size = 64
        ys, xs = np.mgrid[0:size, 0:size]
        texture = (0.5 + 0.2 * np.sin(2 * np.pi * 3 * xs / size)
                   + 0.2 * np.cos(2 * np.pi * 4 * ys / size)
                   + 0.1 * np.sin(2 * np.pi * 5 * (xs + ys) / size))
        prev = texture
        nxt = np.roll(texture, 2, axis=1)
        base = estimate_flow(prev, nxt)
        dy, dx = 7, 11
        shifted = estimate_flow(np.roll(prev, (dy, dx), (0, 1)),
                                np.roll(nxt, (dy, dx), (0, 1)))
        interior = (slice(16, -16), slice(16, -16))
        du = shifted.u[interior] - np.roll(base.u, (dy, dx), (0, 1))[interior]
        dv = shifted.v[interior] - np.roll(base.v, (dy, dx), (0, 1))[interior]
        assert np.abs(du).max() <= 0.25
        assert np.abs(dv).max() <= 0.25

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            estimate_flow(np.zeros((8, 8)), np.zeros((8, 9)))

    def test_bad_parameters_rejected(self):
        frame = np.zeros((8, 8))
        with pytest.raises(ValueError):
            estimate_flow(frame, frame, smoothness=0.0)
        with pytest.raises(ValueError):
            estimate_flow(frame, frame, iterations=0)


class TestMotionMask:
    def test_zero_flow_empty_mask(self):
        flow = FlowField(np.zeros((8, 8)), np.zeros((8, 8)))
        assert not motion_mask(flow, 0.5).any()

    def test_uniform_magnitude_full_mask(self):
        flow = FlowField(np.full((8, 8), 3.0), np.zeros((8, 8)))
        assert motion_mask(flow, 1.0).all()

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(4)
        flow = FlowField(rng.normal(0, 2, (16, 16)), rng.normal(0, 2, (16, 16)))
        previous = None
        for thr in (0.0, 0.5, 1.0, 2.0, 4.0):
            mask = motion_mask(flow, thr)
            if previous is not None:
                assert np.all(previous | ~mask)  # mask(thr2) subset of mask(thr1)
            previous = mask

    def test_blob_translation_mask_overlaps_support(self):
        size = 128
        rng = np.random.default_rng(5)
        texture = 0.3 * smooth_texture(rng, size, size)
        yy, xx = np.mgrid[0:size, 0:size]

        def blob(cx):
            return 0.7 * np.exp(-(((yy - 64) ** 2 + (xx - cx) ** 2) / (2 * 6.0 ** 2)))

        prev = np.clip(texture + blob(64), 0, 1)   # static scene, moving blob
        nxt = np.clip(texture + blob(66), 0, 1)
        flow = estimate_flow(prev, nxt)
        mask = motion_mask(flow, 0.5)
        support = (blob(64) > 0.07) | (blob(66) > 0.07)
        inter = (mask & support).sum()
        union = (mask | support).sum()
        assert inter / union >= 0.5

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            motion_mask(FlowField(np.zeros((4, 4)), np.zeros((4, 4))), -1.0)


class TestSuppressBackground:
    def test_full_mask_is_identity(self):
        rng = np.random.default_rng(6)
        frame = rng.random((8, 8))
        assert np.array_equal(suppress_background(frame, np.ones((8, 8), bool)), frame)

    def test_empty_mask_zeroes_frame(self):
        rng = np.random.default_rng(7)
        frame = rng.random((8, 8))
        out = suppress_background(frame, np.zeros((8, 8), bool))
        assert np.all(out == 0.0)

    def test_masked_out_area_exactly_zero(self):
        rng = np.random.default_rng(8)
        frame = rng.random((8, 8))
        mask = rng.random((8, 8)) > 0.5
        out = suppress_background(frame, mask)
        assert np.all(out[~mask] == 0.0)
        assert np.array_equal(out[mask], frame[mask])


class TestFlowIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        flow = FlowField(rng.normal(size=(12, 10)), rng.normal(size=(12, 10)))
        path = tmp_path / "field.bin"
        write_flow(path, flow)
        blob = path.read_bytes()
        assert blob[:8] == b"OFGPFLOW"
        back = read_flow(path)
        assert np.abs(back.u - flow.u).max() <= 1e-6  # float32 storage
        assert np.abs(back.v - flow.v).max() <= 1e-6

    def test_magnitude(self):
        flow = FlowField(np.full((2, 2), 3.0), np.full((2, 2), 4.0))
        assert np.allclose(flow_magnitude(flow), 5.0)
