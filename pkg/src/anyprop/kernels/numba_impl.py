"""Numba @njit twins of the numpy reference kernels.

Every kernel performs the exact operation sequence of its twin in
``numpy_impl`` (same expression association, same accumulation order, zero
adds where the numpy version reads zero padding), so outputs are
bit-identical across backends. Scatter accumulation is sequential in
row-major source order; only gather-style kernels (disjoint output writes)
have ``prange`` parallel variants, which are deterministic by construction.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from anyprop import _backend


@njit(cache=True)
def _voxel_accumulate(ts, xs, ys, ps, t0, t1, bins, height, width):
    grid = np.zeros((bins, height, width), dtype=np.float64)
    scale = float(t1 - t0)
    for j in range(ts.shape[0]):
        t = ts[j]
        if t < t0 or t > t1:
            continue
        d = float(t - t0)
        tstar = ((bins - 1.0) * d) / scale
        ti = np.floor(tstar)
        p = float(ps[j])
        x = xs[j]
        y = ys[j]
        for k in range(2):
            b = ti + k
            if b >= 0.0 and b <= bins - 1.0:
                w = max(0.0, 1.0 - abs(tstar - b))
                grid[int(b), y, x] += p * w
    return grid


def voxel_accumulate(ts, xs, ys, ps, t0, t1, bins, height, width):
    return _voxel_accumulate(ts, xs, ys, ps, t0, t1, bins, height, width)


@njit(cache=True)
def _scatter_bilinear(payload, u, v, w):
    C, H, W = payload.shape
    num = np.zeros((C, H, W), dtype=np.float64)
    den = np.zeros((H, W), dtype=np.float64)
    for y in range(H):
        for x in range(W):
            tx = x + u[y, x]
            ty = y + v[y, x]
            x0 = np.floor(tx)
            y0 = np.floor(ty)
            fx = tx - x0
            fy = ty - y0
            ww = w[y, x]
            for j in range(4):
                if j == 0:
                    cyf, cxf, bw = y0, x0, (1.0 - fy) * (1.0 - fx)
                elif j == 1:
                    cyf, cxf, bw = y0, x0 + 1.0, (1.0 - fy) * fx
                elif j == 2:
                    cyf, cxf, bw = y0 + 1.0, x0, fy * (1.0 - fx)
                else:
                    cyf, cxf, bw = y0 + 1.0, x0 + 1.0, fy * fx
                if cxf >= 0.0 and cxf <= W - 1.0 and cyf >= 0.0 and cyf <= H - 1.0:
                    cy = int(cyf)
                    cx = int(cxf)
                    wv = ww * bw
                    den[cy, cx] += wv
                    for c in range(C):
                        num[c, cy, cx] += wv * payload[c, y, x]
    return num, den


def scatter_bilinear(payload, u, v, w):
    return _scatter_bilinear(payload, u, v, w)


@njit(cache=True, inline="always")
def _grads_at_source(payload, u, v, wexp, out, den, covered, upstream,
                     dpay, ds, du, dv, y, x, H, W, C):
    tx = x + u[y, x]
    ty = y + v[y, x]
    x0 = np.floor(tx)
    y0 = np.floor(ty)
    fx = tx - x0
    fy = ty - y0
    wq = wexp[y, x]
    for j in range(4):
        if j == 0:
            cyf, cxf = y0, x0
            kk = (1.0 - fy) * (1.0 - fx)
            dkx = -(1.0 - fy)
            dky = -(1.0 - fx)
        elif j == 1:
            cyf, cxf = y0, x0 + 1.0
            kk = (1.0 - fy) * fx
            dkx = 1.0 - fy
            dky = -fx
        elif j == 2:
            cyf, cxf = y0 + 1.0, x0
            kk = fy * (1.0 - fx)
            dkx = -fy
            dky = 1.0 - fx
        else:
            cyf, cxf = y0 + 1.0, x0 + 1.0
            kk = fy * fx
            dkx = fy
            dky = fx
        if cxf >= 0.0 and cxf <= W - 1.0 and cyf >= 0.0 and cyf <= H - 1.0:
            cy = int(cyf)
            cx = int(cxf)
            if covered[cy, cx]:
                dq = den[cy, cx]
                for c in range(C):
                    g = upstream[c, cy, cx]
                    diff = payload[c, y, x] - out[c, cy, cx]
                    dpay[c, y, x] += g * ((wq * kk) / dq)
                    ds[y, x] += g * (((wq * kk) * diff) / dq)
                    du[y, x] += g * (((wq * dkx) * diff) / dq)
                    dv[y, x] += g * (((wq * dky) * diff) / dq)
    if not covered[y, x]:
        for c in range(C):
            dpay[c, y, x] += upstream[c, y, x]


@njit(cache=True)
def _splat_grads(payload, u, v, wexp, out, den, covered, upstream):
    C, H, W = payload.shape
    dpay = np.zeros((C, H, W), dtype=np.float64)
    ds = np.zeros((H, W), dtype=np.float64)
    du = np.zeros((H, W), dtype=np.float64)
    dv = np.zeros((H, W), dtype=np.float64)
    for y in range(H):
        for x in range(W):
            _grads_at_source(payload, u, v, wexp, out, den, covered, upstream,
                             dpay, ds, du, dv, y, x, H, W, C)
    return dpay, ds, du, dv


@njit(cache=True, parallel=True)
def _splat_grads_par(payload, u, v, wexp, out, den, covered, upstream):
    C, H, W = payload.shape
    dpay = np.zeros((C, H, W), dtype=np.float64)
    ds = np.zeros((H, W), dtype=np.float64)
    du = np.zeros((H, W), dtype=np.float64)
    dv = np.zeros((H, W), dtype=np.float64)
    for y in prange(H):
        for x in range(W):
            _grads_at_source(payload, u, v, wexp, out, den, covered, upstream,
                             dpay, ds, du, dv, y, x, H, W, C)
    return dpay, ds, du, dv


def splat_grads(payload, u, v, wexp, out, den, covered, upstream):
    if _backend.parallel_enabled():
        return _splat_grads_par(payload, u, v, wexp, out, den, covered, upstream)
    return _splat_grads(payload, u, v, wexp, out, den, covered, upstream)


@njit(cache=True, inline="always")
def _gather_row(payload, u, v, out, y, H, W, C):
    for x in range(W):
        sx = min(max(x + u[y, x], 0.0), W - 1.0)
        sy = min(max(y + v[y, x], 0.0), H - 1.0)
        x0 = np.floor(sx)
        y0 = np.floor(sy)
        fx = sx - x0
        fy = sy - y0
        x0i = int(x0)
        y0i = int(y0)
        x1i = min(x0i + 1, W - 1)
        y1i = min(y0i + 1, H - 1)
        for c in range(C):
            r0 = (1.0 - fx) * payload[c, y0i, x0i] + fx * payload[c, y0i, x1i]
            r1 = (1.0 - fx) * payload[c, y1i, x0i] + fx * payload[c, y1i, x1i]
            out[c, y, x] = (1.0 - fy) * r0 + fy * r1


@njit(cache=True)
def _gather_bilinear(payload, u, v):
    C, H, W = payload.shape
    out = np.empty((C, H, W), dtype=np.float64)
    for y in range(H):
        _gather_row(payload, u, v, out, y, H, W, C)
    return out


@njit(cache=True, parallel=True)
def _gather_bilinear_par(payload, u, v):
    C, H, W = payload.shape
    out = np.empty((C, H, W), dtype=np.float64)
    for y in prange(H):
        _gather_row(payload, u, v, out, y, H, W, C)
    return out


def gather_bilinear(payload, u, v):
    if _backend.parallel_enabled():
        return _gather_bilinear_par(payload, u, v)
    return _gather_bilinear(payload, u, v)


@njit(cache=True)
def _patch_norms(vox, patch):
    B, H, W = vox.shape
    h = patch // 2
    norms = np.empty((H, W), dtype=np.float64)
    for y in range(H):
        for x in range(W):
            acc = 0.0
            for b in range(B):
                for ey in range(patch):
                    yy = y + ey - h
                    for ex in range(patch):
                        xx = x + ex - h
                        if yy >= 0 and yy < H and xx >= 0 and xx < W:
                            a = vox[b, yy, xx]
                        else:
                            a = 0.0
                        acc = acc + a * a
            norms[y, x] = np.sqrt(acc)
    return norms


def patch_norms(vox, patch):
    return _patch_norms(vox, patch)


@njit(cache=True, inline="always")
def _corr_row(va, vb, na, nb, base_u, base_v, radius, patch, scores, y, H, W, B, h):
    side = 2 * radius + 1
    for x in range(W):
        naq = na[y, x]
        for iy in range(side):
            dy = iy - radius
            for ix in range(side):
                dx = ix - radius
                cy = y + base_v[y, x] + dy
                cx = x + base_u[y, x] + dx
                if cx < 0 or cx >= W or cy < 0 or cy >= H:
                    scores[y, x, iy, ix] = -np.inf
                    continue
                nbt = nb[cy, cx]
                if naq == 0.0 or nbt == 0.0:
                    scores[y, x, iy, ix] = 0.0
                    continue
                cross = 0.0
                for b in range(B):
                    for ey in range(patch):
                        ay = y + ey - h
                        by = cy + ey - h
                        for ex in range(patch):
                            ax = x + ex - h
                            bx = cx + ex - h
                            if ay >= 0 and ay < H and ax >= 0 and ax < W:
                                av = va[b, ay, ax]
                            else:
                                av = 0.0
                            if by >= 0 and by < H and bx >= 0 and bx < W:
                                bv = vb[b, by, bx]
                            else:
                                bv = 0.0
                            cross = cross + av * bv
                scores[y, x, iy, ix] = cross / (naq * nbt)


@njit(cache=True)
def _corr_scores(va, vb, na, nb, base_u, base_v, radius, patch):
    B, H, W = va.shape
    h = patch // 2
    side = 2 * radius + 1
    scores = np.empty((H, W, side, side), dtype=np.float64)
    for y in range(H):
        _corr_row(va, vb, na, nb, base_u, base_v, radius, patch, scores, y, H, W, B, h)
    return scores


@njit(cache=True, parallel=True)
def _corr_scores_par(va, vb, na, nb, base_u, base_v, radius, patch):
    B, H, W = va.shape
    h = patch // 2
    side = 2 * radius + 1
    scores = np.empty((H, W, side, side), dtype=np.float64)
    for y in prange(H):
        _corr_row(va, vb, na, nb, base_u, base_v, radius, patch, scores, y, H, W, B, h)
    return scores


def corr_scores(va, vb, base_u, base_v, radius, patch):
    na = _patch_norms(va, patch)
    nb = _patch_norms(vb, patch)
    if _backend.parallel_enabled():
        return _corr_scores_par(va, vb, na, nb, base_u, base_v, radius, patch)
    return _corr_scores(va, vb, na, nb, base_u, base_v, radius, patch)


@njit(cache=True)
def _box_sum(field, radius):
    H, W = field.shape
    out = np.empty((H, W), dtype=np.float64)
    side = 2 * radius + 1
    for y in range(H):
        for x in range(W):
            acc = 0.0
            for dy in range(side):
                yy = y + dy - radius
                for dx in range(side):
                    xx = x + dx - radius
                    if yy >= 0 and yy < H and xx >= 0 and xx < W:
                        val = field[yy, xx]
                    else:
                        val = 0.0
                    acc = acc + val
            out[y, x] = acc
    return out


def box_sum(field, radius):
    return _box_sum(field, radius)


@njit(cache=True)
def _masked_box_mean(data, mask):
    C, H, W = data.shape
    maskf = np.zeros((H, W), dtype=np.float64)
    for y in range(H):
        for x in range(W):
            if mask[y, x]:
                maskf[y, x] = 1.0
    cnt = np.empty((H, W), dtype=np.float64)
    for y in range(H):
        for x in range(W):
            acc = 0.0
            for dy in range(3):
                yy = y + dy - 1
                for dx in range(3):
                    xx = x + dx - 1
                    if yy >= 0 and yy < H and xx >= 0 and xx < W:
                        val = maskf[yy, xx]
                    else:
                        val = 0.0
                    acc = acc + val
            cnt[y, x] = acc
    out = np.empty((C, H, W), dtype=np.float64)
    for c in range(C):
        for y in range(H):
            for x in range(W):
                s = 0.0
                for dy in range(3):
                    yy = y + dy - 1
                    for dx in range(3):
                        xx = x + dx - 1
                        if yy >= 0 and yy < H and xx >= 0 and xx < W:
                            val = data[c, yy, xx] * maskf[yy, xx]
                        else:
                            val = 0.0
                        s = s + val
                if cnt[y, x] > 0.0:
                    out[c, y, x] = s / cnt[y, x]
                else:
                    out[c, y, x] = data[c, y, x]
    return out, cnt


def masked_box_mean(data, mask):
    return _masked_box_mean(data, mask)


@njit(cache=True)
def _attention_dots(cands, query):
    N, C, H, W = cands.shape
    dots = np.empty((N, H, W), dtype=np.float64)
    for i in range(N):
        for y in range(H):
            for x in range(W):
                acc = 0.0
                for c in range(C):
                    acc = acc + cands[i, c, y, x] * query[c, y, x]
                dots[i, y, x] = acc
    return dots


def attention_dots(cands, query):
    return _attention_dots(cands, query)


@njit(cache=True)
def _attention_mix(cands, weights):
    N, C, H, W = cands.shape
    out = np.empty((C, H, W), dtype=np.float64)
    for y in range(H):
        for x in range(W):
            wsum = 0.0
            for i in range(N):
                wsum = wsum + weights[i, y, x]
            for c in range(C):
                acc = 0.0
                for i in range(N):
                    acc = acc + weights[i, y, x] * cands[i, c, y, x]
                out[c, y, x] = acc / wsum
    return out


def attention_mix(cands, weights):
    return _attention_mix(cands, weights)


@njit(cache=True)
def _event_counts(log_l, ref, contrast):
    H, W = log_l.shape
    counts = np.empty((H, W), dtype=np.int64)
    pols = np.empty((H, W), dtype=np.int8)
    for y in range(H):
        for x in range(W):
            d = log_l[y, x] - ref[y, x]
            ad = abs(d)
            nf = np.floor(ad / contrast)
            if d > 0.0:
                s = 1.0
            elif d < 0.0:
                s = -1.0
            else:
                s = 0.0
            ref[y, x] = ref[y, x] + s * (contrast * nf)
            counts[y, x] = int(nf)
            pols[y, x] = int(s)
    return counts, pols


def event_counts(log_l, ref, contrast):
    return _event_counts(log_l, ref, contrast)
