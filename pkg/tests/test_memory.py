import numpy as np
import pytest

from anyprop.memory import MemoryBank, attention_weights, mem_enhance, mem_push
from anyprop.warp import FeatureMap


def fm(data):
    return FeatureMap(np.asarray(data, dtype=np.float64))


def rand_fm(rng, c=3, h=4, w=4):
    return fm(rng.standard_normal((c, h, w)))


class TestPush:
    def test_push_into_empty(self):
        bank = MemoryBank(capacity=3)
        mem_push(bank, fm(np.ones((2, 2, 2))), 100)
        assert len(bank) == 1
        assert bank.timestamps == [100]

    def test_fifo_eviction(self):
        rng = np.random.default_rng(80)
        bank = MemoryBank(capacity=3)
        for t in (10, 20, 30, 40):
            mem_push(bank, rand_fm(rng), t)
        assert bank.timestamps == [20, 30, 40]

    def test_non_increasing_timestamp_rejected(self):
        rng = np.random.default_rng(81)
        bank = MemoryBank(capacity=3)
        mem_push(bank, rand_fm(rng), 10)
        with pytest.raises(ValueError):
            mem_push(bank, rand_fm(rng), 10)
        with pytest.raises(ValueError):
            mem_push(bank, rand_fm(rng), 5)

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(82)
        bank = MemoryBank()
        mem_push(bank, rand_fm(rng), 10)
        with pytest.raises(ValueError):
            mem_push(bank, rand_fm(rng, c=2), 20)

    def test_capacity_invariant_random_sequences(self):
        rng = np.random.default_rng(83)
        for cap in (1, 2, 5):
            bank = MemoryBank(capacity=cap)
            t = 0
            for _ in range(20):
                t += int(rng.integers(1, 50))
                mem_push(bank, rand_fm(rng, c=1, h=2, w=2), t)
                assert len(bank) <= cap
                ts = bank.timestamps
                assert all(a < b for a, b in zip(ts, ts[1:]))

    def test_bad_params(self):
        with pytest.raises(ValueError):
            MemoryBank(capacity=0)
        with pytest.raises(ValueError):
            MemoryBank(tau=0.0)


class TestEnhance:
    def test_empty_bank_identity_exact(self):
        rng = np.random.default_rng(84)
        bank = MemoryBank()
        q = rand_fm(rng)
        assert mem_enhance(bank, q) is q

    def test_single_equal_entry_identity_exact(self):
        rng = np.random.default_rng(85)
        q = rand_fm(rng)
        bank = MemoryBank()
        mem_push(bank, q, 10)
        out = mem_enhance(bank, q)
        assert np.array_equal(out.data, q.data)

    def test_similar_entry_weighs_more(self):
        q = fm(np.array([[[2.0]], [[0.0]]]))
        same = q
        other = fm(np.array([[[0.0]], [[1.0]]]))   # orthogonal, smaller norm
        bank = MemoryBank(capacity=2)
        mem_push(bank, same, 1)
        mem_push(bank, other, 2)
        w = attention_weights(bank, q)   # order: same, other, self
        assert w[0, 0, 0] > w[1, 0, 0]
        assert w.sum(axis=0)[0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_weights_nonneg_sum_one(self):
        rng = np.random.default_rng(86)
        bank = MemoryBank(capacity=4)
        for t in (1, 2, 3):
            mem_push(bank, rand_fm(rng, c=5, h=6, w=6), t)
        q = rand_fm(rng, c=5, h=6, w=6)
        w = attention_weights(bank, q)
        assert (w >= 0).all()
        np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-6)

    def test_output_convex_per_pixel(self):
        rng = np.random.default_rng(87)
        bank = MemoryBank(capacity=3)
        feats = [rand_fm(rng) for _ in range(3)]
        for t, f in enumerate(feats, start=1):
            mem_push(bank, f, t)
        q = rand_fm(rng)
        out = mem_enhance(bank, q)
        stack = np.stack([f.data for f in feats] + [q.data])
        assert (out.data <= stack.max(axis=0) + 1e-9).all()
        assert (out.data >= stack.min(axis=0) - 1e-9).all()

    def test_high_temperature_uniform_mean(self):
        rng = np.random.default_rng(88)
        bank = MemoryBank(capacity=4, tau=1e6)
        feats = [rand_fm(rng) for _ in range(4)]
        for t, f in enumerate(feats, start=1):
            mem_push(bank, f, t)
        q = rand_fm(rng)
        out = mem_enhance(bank, q)
        uniform = np.stack([f.data for f in feats] + [q.data]).mean(axis=0)
        np.testing.assert_allclose(out.data, uniform, atol=1e-4)

    def test_dim_mismatch(self):
        rng = np.random.default_rng(89)
        bank = MemoryBank()
        mem_push(bank, rand_fm(rng), 1)
        with pytest.raises(ValueError):
            mem_enhance(bank, rand_fm(rng, h=5))
