"""Dispatch layer for the hot numeric kernels.

Every function here forwards to the active backend (numba or numpy, chosen
per ``anyprop._backend``). The two implementations are bit-identical by
construction; switching backends or thread counts never changes results.
"""

from __future__ import annotations

from anyprop import _backend
from anyprop.kernels import numpy_impl

_KERNELS = (
    "voxel_accumulate",
    "scatter_bilinear",
    "splat_grads",
    "gather_bilinear",
    "patch_norms",
    "corr_scores",
    "box_sum",
    "masked_box_mean",
    "attention_dots",
    "attention_mix",
    "event_counts",
)


def _impl():
    if _backend.active_backend() == "numba":
        from anyprop.kernels import numba_impl

        return numba_impl
    return numpy_impl


def __getattr__(name):
    if name in _KERNELS:
        return getattr(_impl(), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def warm_up() -> None:
    """Trigger numba compilation of every kernel on tiny inputs.

    No-op on the numpy backend. Useful before timed runs; compiled kernels
    are also disk-cached, so this cost is paid once per machine.
    """
    import numpy as np

    impl = _impl()
    if impl is numpy_impl:
        return
    ts = np.array([5, 10], dtype=np.int64)
    xy = np.array([0, 1], dtype=np.int64)
    ps = np.array([1, -1], dtype=np.int8)
    impl.voxel_accumulate(ts, xy, xy, ps, 0, 20, 4, 2, 2)
    pay = np.ones((2, 3, 3), dtype=np.float64)
    uv = np.full((3, 3), 0.25, dtype=np.float64)
    w = np.ones((3, 3), dtype=np.float64)
    num, den = impl.scatter_bilinear(pay, uv, uv, w)
    cov = den > 0.0
    out = np.where(cov[None], num / np.where(cov, den, 1.0)[None], pay)
    impl.splat_grads(pay, uv, uv, w, out, den, cov, pay)
    impl.gather_bilinear(pay, uv, uv)
    vox = np.ones((2, 4, 4), dtype=np.float64)
    base = np.zeros((4, 4), dtype=np.int64)
    impl.corr_scores(vox, vox, base, base, 1, 3)
    impl.patch_norms(vox, 3)
    impl.box_sum(w, 1)
    impl.masked_box_mean(pay, cov)
    cands = np.ones((2, 2, 3, 3), dtype=np.float64)
    dots = impl.attention_dots(cands, pay)
    impl.attention_mix(cands, np.exp(dots - dots.max(axis=0)))
    ref = np.zeros((2, 2), dtype=np.float64)
    impl.event_counts(np.full((2, 2), 0.7), ref, 0.3)
