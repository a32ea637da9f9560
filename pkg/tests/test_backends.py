"""The numba and numpy kernel backends must agree bit for bit.

Every kernel is exercised on random inputs through both implementations and
compared with exact array equality; a mid-level pipeline run is compared the
same way. The parallel (prange) kernel variants must match the sequential
reference exactly as well.
"""

import numpy as np
import pytest

from anyprop import _backend
from anyprop.kernels import numpy_impl

numba_impl = pytest.importorskip("anyprop.kernels.numba_impl")


def pairs(name):
    return getattr(numpy_impl, name), getattr(numba_impl, name)


def assert_same(a, b):
    if isinstance(a, tuple):
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert_same(x, y)
        return
    a = np.asarray(a)
    b = np.asarray(b)
    assert a.shape == b.shape and a.dtype == b.dtype
    assert np.array_equal(a, b, equal_nan=True)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def test_voxel_accumulate(rng):
    f_np, f_nb = pairs("voxel_accumulate")
    for _ in range(5):
        n = int(rng.integers(0, 3000))
        ts = np.sort(rng.integers(0, 10_000, n)).astype(np.int64)
        xs = rng.integers(0, 30, n).astype(np.int64)
        ys = rng.integers(0, 22, n).astype(np.int64)
        ps = rng.choice([-1, 1], n).astype(np.int8)
        args = (ts, xs, ys, ps, 500, 9500, 4, 22, 30)
        assert_same(f_np(*args), f_nb(*args))


def test_scatter_bilinear(rng):
    f_np, f_nb = pairs("scatter_bilinear")
    for _ in range(5):
        payload = rng.standard_normal((3, 14, 17))
        u = rng.uniform(-5, 5, (14, 17))
        v = rng.uniform(-5, 5, (14, 17))
        w = rng.random((14, 17))
        assert_same(f_np(payload, u, v, w), f_nb(payload, u, v, w))


def test_splat_grads(rng):
    f_np, f_nb = pairs("splat_grads")
    for _ in range(5):
        payload = rng.standard_normal((2, 10, 11))
        u = rng.uniform(-3, 3, (10, 11))
        v = rng.uniform(-3, 3, (10, 11))
        w = np.exp(rng.uniform(-2, 0, (10, 11)))
        num, den = numpy_impl.scatter_bilinear(payload, u, v, w)
        cov = den > 1e-12
        out = np.where(cov[None], num / np.where(cov, den, 1.0)[None], payload)
        upstream = rng.standard_normal((2, 10, 11))
        args = (payload, u, v, w, out, den, cov, upstream)
        assert_same(f_np(*args), f_nb(*args))


def test_gather_bilinear(rng):
    f_np, f_nb = pairs("gather_bilinear")
    payload = rng.standard_normal((4, 12, 13))
    u = rng.uniform(-6, 6, (12, 13))
    v = rng.uniform(-6, 6, (12, 13))
    assert_same(f_np(payload, u, v), f_nb(payload, u, v))


def test_corr_scores_and_norms(rng):
    f_np, f_nb = pairs("corr_scores")
    n_np, n_nb = pairs("patch_norms")
    va = rng.standard_normal((4, 12, 14)) * (rng.random((4, 12, 14)) > 0.5)
    vb = rng.standard_normal((4, 12, 14)) * (rng.random((4, 12, 14)) > 0.5)
    base_u = rng.integers(-3, 4, (12, 14)).astype(np.int64)
    base_v = rng.integers(-3, 4, (12, 14)).astype(np.int64)
    assert_same(n_np(va, 5), n_nb(va, 5))
    assert_same(
        f_np(va, vb, base_u, base_v, 2, 3), f_nb(va, vb, base_u, base_v, 2, 3)
    )


def test_box_sum(rng):
    f_np, f_nb = pairs("box_sum")
    field = np.abs(rng.standard_normal((15, 18)))
    for radius in (1, 3):
        assert_same(f_np(field, radius), f_nb(field, radius))


def test_masked_box_mean(rng):
    f_np, f_nb = pairs("masked_box_mean")
    data = rng.standard_normal((3, 13, 12))
    mask = rng.random((13, 12)) > 0.5
    assert_same(f_np(data, mask), f_nb(data, mask))


def test_attention(rng):
    d_np, d_nb = pairs("attention_dots")
    m_np, m_nb = pairs("attention_mix")
    cands = rng.standard_normal((5, 4, 9, 10))
    query = rng.standard_normal((4, 9, 10))
    dots = d_np(cands, query)
    assert_same(dots, d_nb(cands, query))
    weights = np.exp((dots - dots.max(axis=0)) * 0.37)
    assert_same(m_np(cands, weights), m_nb(cands, weights))


def test_event_counts(rng):
    f_np, f_nb = pairs("event_counts")
    log_l = rng.standard_normal((11, 13))
    ref_a = rng.standard_normal((11, 13))
    ref_b = ref_a.copy()
    out_a = f_np(log_l, ref_a, 0.3)
    out_b = f_nb(log_l, ref_b, 0.3)
    assert_same(out_a, out_b)
    assert_same(ref_a, ref_b)


def _full_propagation(scene_seed=0):
    from anyprop.bench import scene_linear
    from anyprop.memory import MemoryBank, mem_push
    from anyprop.pipeline import PipelineOptions, encode_keyframe, propagate
    from anyprop.scene import render_scene, simulate_events

    scene = scene_linear()
    events = simulate_events(scene, 0, 120_000)
    frame, labels = render_scene(scene, 60_000)
    state = encode_keyframe(frame, labels, dt_key_us=60_000)
    bank = MemoryBank()
    mem_push(bank, state.feature, 60_000)
    pred = propagate(state, events, 40_000, PipelineOptions(), bank)
    return pred


def test_full_pipeline_backend_equality():
    old = _backend._backend
    try:
        _backend.set_backend("numba")
        pred_nb = _full_propagation()
        _backend.set_backend("numpy")
        pred_np = _full_propagation()
    finally:
        _backend.set_backend(old)
    assert np.array_equal(pred_nb.feature.data, pred_np.feature.data)
    assert np.array_equal(pred_nb.labels.labels, pred_np.labels.labels)
    assert np.array_equal(pred_nb.flow.u, pred_np.flow.u)
    assert np.array_equal(pred_nb.flow.v, pred_np.flow.v)
    assert np.array_equal(pred_nb.confidence.s, pred_np.confidence.s)


def test_parallel_variants_match_sequential(rng):
    payload = rng.standard_normal((3, 16, 18))
    u = rng.uniform(-4, 4, (16, 18))
    v = rng.uniform(-4, 4, (16, 18))
    w = np.exp(rng.uniform(-2, 0, (16, 18)))
    va = rng.standard_normal((4, 16, 18)) * (rng.random((4, 16, 18)) > 0.5)
    vb = rng.standard_normal((4, 16, 18)) * (rng.random((4, 16, 18)) > 0.5)
    base = np.zeros((16, 18), dtype=np.int64)
    num, den = numpy_impl.scatter_bilinear(payload, u, v, w)
    cov = den > 1e-12
    out = np.where(cov[None], num / np.where(cov, den, 1.0)[None], payload)
    upstream = rng.standard_normal((3, 16, 18))

    old_threads = _backend._threads
    old_backend = _backend._backend
    try:
        _backend.set_backend("numba")
        _backend.set_threads(0)
        corr_seq = numba_impl.corr_scores(va, vb, base, base, 3, 3)
        gath_seq = numba_impl.gather_bilinear(payload, u, v)
        grads_seq = numba_impl.splat_grads(payload, u, v, w, out, den, cov, upstream)
        _backend.set_threads(4)
        assert _backend.parallel_enabled()
        corr_par = numba_impl.corr_scores(va, vb, base, base, 3, 3)
        gath_par = numba_impl.gather_bilinear(payload, u, v)
        grads_par = numba_impl.splat_grads(payload, u, v, w, out, den, cov, upstream)
    finally:
        _backend.set_threads(old_threads)
        _backend.set_backend(old_backend)
    assert_same(corr_seq, corr_par)
    assert_same(gath_seq, gath_par)
    assert_same(grads_seq, grads_par)
