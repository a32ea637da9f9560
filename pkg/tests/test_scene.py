import math

import numpy as np
import pytest

from anyprop.errors import ParseError
from anyprop.scene import (
    SceneConfig,
    SceneObject,
    dumps_scene,
    events_from_log_frames,
    loads_scene,
    oracle_flow,
    render_scene,
    simulate_events,
)


def single_rect_scene(vel=(0.0, 0.0), pos=(10.0, 10.0), size=(4.0, 4.0)):
    return SceneConfig(
        dims=(32, 32),
        background=0.35,
        objects=(SceneObject("rect", size, 1, 0.75, pos, vel, 1),),
    )


def scalar_sensor(levels, contrast):
    """Independent scalar threshold-crossing simulation for one pixel."""
    ref = levels[0]
    events = []
    for level in levels[1:]:
        d = level - ref
        n = math.floor(abs(d) / contrast)
        s = 1.0 if d > 0 else (-1.0 if d < 0 else 0.0)
        ref = ref + s * (contrast * n)
        if n:
            events.append((int(n), int(s)))
    return events, ref


class TestRender:
    def test_static_scene_time_invariant(self):
        cfg = single_rect_scene()
        f1, l1 = render_scene(cfg, 0)
        f2, l2 = render_scene(cfg, 777_000)
        assert np.array_equal(f1.values, f2.values)
        assert np.array_equal(l1.labels, l2.labels)

    def test_rect_translation(self):
        # 4x4 rect at (10,10), vel (20,0) px/s, t = 100 ms -> columns 12..16
        cfg = single_rect_scene(vel=(20.0, 0.0))
        _, labels = render_scene(cfg, 100_000)
        cols = np.nonzero(labels.labels.any(axis=0))[0]
        rows = np.nonzero(labels.labels.any(axis=1))[0]
        assert cols.tolist() == [12, 13, 14, 15]
        assert rows.tolist() == [10, 11, 12, 13]

    def test_z_order_wins(self):
        cfg = SceneConfig(
            dims=(16, 16),
            objects=(
                SceneObject("rect", (6.0, 6.0), 1, 0.5, (4.0, 4.0), (0.0, 0.0), 1),
                SceneObject("rect", (6.0, 6.0), 2, 0.9, (6.0, 6.0), (0.0, 0.0), 7),
            ),
        )
        _, labels = render_scene(cfg, 0)
        assert labels.labels[7, 7] == 2
        assert labels.labels[4, 4] == 1

    def test_disk_membership(self):
        cfg = SceneConfig(
            dims=(16, 16),
            objects=(SceneObject("disk", (3.0, 3.0), 1, 0.5, (8.0, 8.0), (0.0, 0.0), 1),),
        )
        _, labels = render_scene(cfg, 0)
        assert labels.labels[8, 8] == 1
        assert labels.labels[8, 11] == 1   # distance exactly 3
        assert labels.labels[8, 12] == 0

    def test_class_id_validation(self):
        with pytest.raises(ValueError):
            SceneConfig(
                dims=(8, 8),
                objects=(SceneObject("rect", (2, 2), 11, 0.5, (0, 0), (0, 0), 1),),
                num_classes=11,
            )

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            render_scene(single_rect_scene(), -1)


class TestOracleFlow:
    def test_zero_elapsed(self):
        fl = oracle_flow(single_rect_scene(vel=(50.0, 50.0)), 1000, 1000)
        assert not fl.u.any() and not fl.v.any()

    def test_velocity_times_dt(self):
        # (20, -10) px/s over 50 ms -> (1.0, -0.5) px on object pixels
        cfg = single_rect_scene(vel=(20.0, -10.0))
        fl = oracle_flow(cfg, 0, 50_000)
        _, labels = render_scene(cfg, 0)
        mask = labels.labels == 1
        assert np.allclose(fl.u[mask], 1.0)
        assert np.allclose(fl.v[mask], -0.5)
        assert not fl.u[~mask].any()

    def test_piecewise_per_object(self):
        cfg = SceneConfig(
            dims=(24, 24),
            objects=(
                SceneObject("rect", (5.0, 5.0), 1, 0.5, (2.0, 2.0), (40.0, 0.0), 1),
                SceneObject("rect", (5.0, 5.0), 2, 0.9, (14.0, 14.0), (0.0, -40.0), 2),
            ),
        )
        fl = oracle_flow(cfg, 0, 100_000)
        _, labels = render_scene(cfg, 0)
        assert np.allclose(fl.u[labels.labels == 1], 4.0)
        assert np.allclose(fl.v[labels.labels == 2], -4.0)
        values = {(round(float(u), 6), round(float(v), 6))
                  for u, v in zip(fl.u.ravel(), fl.v.ravel())}
        assert values == {(0.0, 0.0), (4.0, 0.0), (0.0, -4.0)}


class TestEventSimulation:
    def test_static_scene_no_events(self):
        stream = simulate_events(single_rect_scene(), 0, 100_000)
        assert len(stream) == 0
        assert stream.window == (0, 100_000)

    def test_ramp_095_three_events(self):
        # +0.95 of log intensity at C=0.3 crosses the threshold 3 times,
        # whether in one jump or spread over many steps
        times = [0, 1000]
        frames = [np.zeros((1, 1)), np.full((1, 1), 0.95)]
        stream = events_from_log_frames(frames, times, (1, 1), contrast=0.3)
        assert len(stream) == 3
        assert np.all(stream.ps == 1)

        steps = 19
        times = [k * 1000 for k in range(steps + 1)]
        frames = [np.full((1, 1), 0.95 * k / steps) for k in range(steps + 1)]
        stream = events_from_log_frames(frames, times, (1, 1), contrast=0.3)
        assert len(stream) == 3
        assert np.all(stream.ps == 1)

    def test_scalar_oracle_piecewise_linear(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            knots = rng.uniform(-1.5, 1.5, size=int(rng.integers(2, 6)))
            steps_per_seg = int(rng.integers(1, 8))
            levels = [float(knots[0])]
            for a, b in zip(knots, knots[1:]):
                for k in range(1, steps_per_seg + 1):
                    levels.append(float(a + (b - a) * k / steps_per_seg))
            times = [1000 * i for i in range(len(levels))]
            frames = [np.full((1, 1), lv) for lv in levels]
            stream = events_from_log_frames(frames, times, (1, 1), contrast=0.3)
            expected, ref = scalar_sensor(levels, 0.3)
            assert len(stream) == sum(n for n, _ in expected)
            # residual stays under one threshold
            assert abs(ref - levels[-1]) < 0.3

    def test_polarity_correctness_monotone(self):
        levels = np.cumsum(np.abs(np.random.default_rng(5).normal(0.1, 0.1, 40)))
        frames = [np.full((2, 2), lv) for lv in levels]
        times = [1000 * i for i in range(len(levels))]
        stream = events_from_log_frames(frames, times, (2, 2), contrast=0.3)
        assert np.all(stream.ps == 1)

    def test_reconstruction_bound(self):
        cfg = single_rect_scene(vel=(90.0, 35.0))
        t1 = 150_000
        simulate_events(cfg, 0, t1)  # determinism covered below; bound here
        # replay manually to check the residual
        frame0, _ = render_scene(cfg, 0)
        ref = np.log(frame0.values)
        from anyprop import kernels

        t = 0
        while t < t1:
            t = min(t + 1000, t1)
            frame, _ = render_scene(cfg, t)
            kernels.event_counts(np.log(frame.values), ref, 0.3)
        final, _ = render_scene(cfg, t1)
        assert np.abs(ref - np.log(final.values)).max() < 0.3

    def test_deterministic(self):
        cfg = single_rect_scene(vel=(60.0, -25.0))
        a = simulate_events(cfg, 0, 80_000)
        b = simulate_events(cfg, 0, 80_000)
        assert a == b

    def test_sorted_with_row_major_ties(self):
        cfg = single_rect_scene(vel=(120.0, 0.0))
        stream = simulate_events(cfg, 0, 60_000)
        assert len(stream) > 0
        assert np.all(np.diff(stream.ts) >= 0)
        same_t = stream.ts == stream.ts[0]
        keys = stream.ys[same_t] * 32 + stream.xs[same_t]
        assert np.all(np.diff(keys) >= 0)

    def test_bad_contrast(self):
        with pytest.raises(ValueError):
            simulate_events(single_rect_scene(), 0, 1000, contrast=0.0)


class TestSceneIO:
    def test_round_trip(self):
        from anyprop.bench import SCENE_BUILDERS

        for name, builder in SCENE_BUILDERS.items():
            cfg = builder()
            assert loads_scene(dumps_scene(cfg)) == cfg, name

    def test_shipped_files_match_builders(self):
        from pathlib import Path

        from anyprop.bench import SCENE_BUILDERS

        scene_dir = Path(__file__).resolve().parent.parent / "scenes"
        for name, builder in SCENE_BUILDERS.items():
            path = scene_dir / f"{name}.scene"
            assert path.exists(), path
            assert loads_scene(path.read_text()) == builder(), name

    def test_parse_error_line_numbers(self):
        text = "dims=8x8\n[object]\nshape=blob:3\n"
        with pytest.raises(ParseError) as ei:
            loads_scene(text)
        assert ei.value.line == 3

    def test_missing_keys(self):
        text = "dims=8x8\n[object]\nshape=rect:2x2\nclass=1\n"
        with pytest.raises(ParseError, match="missing keys"):
            loads_scene(text)

    def test_missing_dims(self):
        with pytest.raises(ParseError, match="dims"):
            loads_scene("background=0.5\n")

    def test_comments_and_blanks(self):
        cfg = loads_scene(
            "# header comment\ndims=8x8\n\nbackground=0.5  # trailing\n"
        )
        assert cfg.dims == (8, 8)
        assert cfg.background == 0.5
