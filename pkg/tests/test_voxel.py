import numpy as np
import pytest

from anyprop.voxel import VoxelGrid, read_voxel, voxelize, write_voxel

from test_events import make_stream, random_stream


def brute_force_voxel(stream, window, bins, dims):
    """Independent per-event evaluation of the triangular-kernel accumulation:
    every event visits every bin."""
    t0, t1 = window
    height, width = dims
    grid = np.zeros((bins, height, width), dtype=np.float64)
    for e in stream:
        if e.t < t0 or e.t > t1:
            continue
        tstar = ((bins - 1.0) * float(e.t - t0)) / float(t1 - t0)
        for b in range(bins):
            w = max(0.0, 1.0 - abs(tstar - b))
            grid[b, e.y, e.x] += e.p * w
    return grid


class TestVoxelize:
    def test_triangular_split(self):
        # t* = 1.25 for B=4 over [0, 3000] at t=1250; pixel (x=3, y=2)
        s = make_stream([1250], [3], [2], [1])
        grid = voxelize(s, (0, 3000), bins=4)
        assert grid.data[1, 2, 3] == pytest.approx(0.75)
        assert grid.data[2, 2, 3] == pytest.approx(0.25)
        total = np.abs(grid.data).sum()
        assert total == pytest.approx(1.0)

    def test_empty_stream(self):
        s = make_stream([], [], [], [])
        grid = voxelize(s, (0, 1000), bins=4)
        assert not grid.data.any()

    def test_event_at_window_start(self):
        s = make_stream([0], [1], [1], [-1])
        grid = voxelize(s, (0, 1000), bins=4)
        assert grid.data[0, 1, 1] == -1.0
        assert np.count_nonzero(grid.data) == 1

    def test_event_at_window_end_accepted(self):
        s = make_stream([999], [1], [1], [1])
        grid = voxelize(s, (0, 999), bins=4)
        assert grid.data[3, 1, 1] == 1.0

    def test_default_bins_is_four(self):
        s = make_stream([10], [0], [0], [1])
        assert voxelize(s, (0, 100)).bins == 4

    def test_out_of_window_ignored(self):
        s = make_stream([10, 500, 900], [0, 1, 2], [0, 1, 2], [1, 1, 1])
        grid = voxelize(s, (400, 600), bins=4)
        assert np.abs(grid.data).sum() == pytest.approx(1.0)

    def test_empty_window_rejected(self):
        s = make_stream([10], [0], [0], [1])
        with pytest.raises(ValueError):
            voxelize(s, (100, 100))

    def test_single_bin_rejected(self):
        s = make_stream([10], [0], [0], [1])
        with pytest.raises(ValueError):
            voxelize(s, (0, 100), bins=1)

    def test_dims_mismatch_rejected(self):
        s = make_stream([10], [0], [0], [1], dims=(8, 8))
        with pytest.raises(ValueError):
            voxelize(s, (0, 100), dims=(16, 16))


class TestInvariants:
    def test_mass_conservation(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(1, 2000))
            s = random_stream(rng, n, dims=(16, 16), t_max=5000)
            grid = voxelize(s, (0, 5000), bins=4)
            assert float(grid.data.sum(dtype=np.float64)) == pytest.approx(
                float(s.ps.sum()), abs=1e-9 * max(n, 1)
            )

    def test_linearity(self):
        rng = np.random.default_rng(12)
        a = random_stream(rng, 400, dims=(12, 12), t_max=4000)
        b = random_stream(rng, 300, dims=(12, 12), t_max=4000)
        ts = np.concatenate([a.ts, b.ts])
        order = np.argsort(ts, kind="stable")
        merged = make_stream(
            ts[order], np.concatenate([a.xs, b.xs])[order],
            np.concatenate([a.ys, b.ys])[order],
            np.concatenate([a.ps, b.ps])[order], dims=(12, 12),
        )
        ga = voxelize(a, (0, 4000), 4).data.astype(np.float64)
        gb = voxelize(b, (0, 4000), 4).data.astype(np.float64)
        gm = voxelize(merged, (0, 4000), 4).data.astype(np.float64)
        np.testing.assert_allclose(gm, ga + gb, atol=1e-9)

    def test_brute_force_oracle_exact(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            n = int(rng.integers(0, 1500))
            s = random_stream(rng, n, dims=(16, 20), t_max=8000)
            window = (500, 7500)
            got = voxelize(s, window, 4).data
            want = brute_force_voxel(s, window, 4, (16, 20))
            assert np.array_equal(got, want)

    def test_slicing_partition(self):
        from anyprop.events import slice_stream

        rng = np.random.default_rng(14)
        s = random_stream(rng, 800, dims=(10, 10), t_max=6000)
        t0, tm, t1 = 1000, 3000, 5000
        full = voxelize(slice_stream(s, t0, t1), (t0, t1), 4).data
        # each event of the full slice lands in exactly one half-open part
        left = slice_stream(s, t0, tm)
        right = slice_stream(s, tm, t1)
        assert len(left) + len(right) == len(slice_stream(s, t0, t1))
        mass = float(full.sum(dtype=np.float64))
        part_mass = float(left.ps.sum()) + float(right.ps.sum())
        assert mass == pytest.approx(part_mass, abs=1e-6)


class TestVoxelIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(15)
        s = random_stream(rng, 200, dims=(9, 11), t_max=3000)
        grid = voxelize(s, (0, 3000), 4)
        path = tmp_path / "g.vox"
        write_voxel(grid, path)
        back = read_voxel(path)
        # on-disk payload is f32; round-trip is exact at that precision
        assert np.array_equal(back.data, grid.data.astype(np.float32).astype(np.float64))
        assert back.window == grid.window
        assert back.bins == grid.bins

    def test_immutable(self):
        grid = VoxelGrid(np.zeros((2, 3, 3), dtype=np.float32), (0, 10), 2)
        with pytest.raises(ValueError):
            grid.data[0, 0, 0] = 1.0
