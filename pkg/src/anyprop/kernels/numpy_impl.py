"""Pure-numpy reference implementations of the hot kernels.

These define the reference floating-point semantics: accumulations happen in
row-major source order (scatter kernels interleave per-source contributions
via a single ``np.add.at`` call, which applies them sequentially in index
order), and all reductions over small fixed axes are written as explicit
loops so the operation order matches the numba twins in ``numba_impl``
bit for bit.

Parity rules observed here and in ``numba_impl``:

* identical expression shapes (same association of * / + -),
* no ``np.sum``/``np.dot`` where accumulation order matters,
* no transcendental functions inside kernels (exp/log live in shared module
  code so both backends evaluate the very same library call),
* out-of-bounds window taps contribute an explicit ``0.0`` add wherever the
  numpy version reads zero padding.
"""

from __future__ import annotations

import numpy as np


def voxel_accumulate(ts, xs, ys, ps, t0, t1, bins, height, width):
    """Accumulate event polarities into a (bins, H, W) float64 grid.

    Each in-window event spreads its polarity over the two bins adjacent to
    its normalized timestamp with the triangular kernel max(0, 1 - |t* - b|).
    Events are assumed in-bounds; events outside [t0, t1] contribute nothing.
    """
    grid = np.zeros(bins * height * width, dtype=np.float64)
    inw = (ts >= t0) & (ts <= t1)
    t = ts[inw]
    x = xs[inw].astype(np.int64)
    y = ys[inw].astype(np.int64)
    p = ps[inw].astype(np.float64)
    if t.size == 0:
        return grid.reshape(bins, height, width)

    d = (t - t0).astype(np.float64)
    tstar = ((bins - 1.0) * d) / float(t1 - t0)
    ti = np.floor(tstar)

    b_cand = np.stack([ti, ti + 1.0], axis=1)            # (N, 2)
    w_cand = np.maximum(0.0, 1.0 - np.abs(tstar[:, None] - b_cand))
    v_cand = p[:, None] * w_cand
    ok = (b_cand >= 0.0) & (b_cand <= bins - 1.0)

    sel = np.flatnonzero(ok.reshape(-1))                 # event-major, bin-minor
    b_idx = b_cand.reshape(-1)[sel].astype(np.int64)
    pix = np.repeat(y * width + x, 2)[sel]
    np.add.at(grid, b_idx * (height * width) + pix, v_cand.reshape(-1)[sel])
    return grid.reshape(bins, height, width)


def _corner_geometry(u, v):
    H, W = u.shape
    ys, xs = np.indices((H, W), dtype=np.float64)
    tx = xs + u
    ty = ys + v
    x0 = np.floor(tx)
    y0 = np.floor(ty)
    fx = tx - x0
    fy = ty - y0
    return x0, y0, fx, fy


def scatter_bilinear(payload, u, v, w):
    """Forward-splat ``w * payload`` (and ``w``) over bilinear corner targets.

    Accumulation order is row-major over sources, then the fixed corner order
    (y0,x0), (y0,x0+1), (y0+1,x0), (y0+1,x0+1); out-of-frame corners are
    dropped. Returns (numerator (C,H,W), denominator (H,W)).
    """
    C, H, W = payload.shape
    x0, y0, fx, fy = _corner_geometry(u, v)

    cy = np.stack([y0, y0, y0 + 1.0, y0 + 1.0], axis=-1)
    cx = np.stack([x0, x0 + 1.0, x0, x0 + 1.0], axis=-1)
    bw = np.stack(
        [(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx],
        axis=-1,
    )
    ok = (cx >= 0.0) & (cx <= W - 1.0) & (cy >= 0.0) & (cy <= H - 1.0)

    sel = np.flatnonzero(ok.reshape(-1))                 # source-major, corner-minor
    src = np.repeat(np.arange(H * W), 4)[sel]
    tgt = cy.reshape(-1)[sel].astype(np.int64) * W + cx.reshape(-1)[sel].astype(np.int64)
    wv = w.reshape(-1)[src] * bw.reshape(-1)[sel]

    den = np.zeros(H * W, dtype=np.float64)
    np.add.at(den, tgt, wv)
    num = np.zeros((C, H * W), dtype=np.float64)
    for c in range(C):
        np.add.at(num[c], tgt, wv * payload[c].reshape(-1)[src])
    return num.reshape(C, H, W), den.reshape(H, W)


def splat_grads(payload, u, v, wexp, out, den, covered, upstream):
    """Analytic partials of the normalized splat, contracted with upstream.

    ``out``/``den``/``covered`` come from the forward pass; ``wexp`` is the
    exponentiated confidence. Writes are per-source, so slot accumulation
    order is corner-major then channel-minor, followed by the hole self-term.
    Returns (dpayload, ds, du, dv).
    """
    C, H, W = payload.shape
    x0, y0, fx, fy = _corner_geometry(u, v)

    dpay = np.zeros_like(payload)
    ds = np.zeros((H, W), dtype=np.float64)
    du = np.zeros((H, W), dtype=np.float64)
    dv = np.zeros((H, W), dtype=np.float64)

    corners = (
        (y0, x0, (1.0 - fy) * (1.0 - fx), -(1.0 - fy), -(1.0 - fx)),
        (y0, x0 + 1.0, (1.0 - fy) * fx, (1.0 - fy), -fx),
        (y0 + 1.0, x0, fy * (1.0 - fx), -fy, (1.0 - fx)),
        (y0 + 1.0, x0 + 1.0, fy * fx, fy, fx),
    )
    for cyf, cxf, k, dkdx, dkdy in corners:
        inb = (cxf >= 0.0) & (cxf <= W - 1.0) & (cyf >= 0.0) & (cyf <= H - 1.0)
        sy, sx = np.nonzero(inb)
        cyi = cyf[sy, sx].astype(np.int64)
        cxi = cxf[sy, sx].astype(np.int64)
        cov = covered[cyi, cxi]
        sy, sx, cyi, cxi = sy[cov], sx[cov], cyi[cov], cxi[cov]
        if sy.size == 0:
            continue
        wq = wexp[sy, sx]
        dq = den[cyi, cxi]
        kk = k[sy, sx]
        dkx = dkdx[sy, sx]
        dky = dkdy[sy, sx]
        for c in range(C):
            g = upstream[c, cyi, cxi]
            diff = payload[c, sy, sx] - out[c, cyi, cxi]
            dpay[c, sy, sx] += g * ((wq * kk) / dq)
            ds[sy, sx] += g * (((wq * kk) * diff) / dq)
            du[sy, sx] += g * (((wq * dkx) * diff) / dq)
            dv[sy, sx] += g * (((wq * dky) * diff) / dq)

    # Uncovered outputs fall back to the source payload: identity Jacobian.
    hy, hx = np.nonzero(~covered)
    for c in range(C):
        dpay[c, hy, hx] += upstream[c, hy, hx]
    return dpay, ds, du, dv


def gather_bilinear(payload, u, v):
    """Backward warp: bilinear sample of payload at q + flow(q), border clamp."""
    C, H, W = payload.shape
    ys, xs = np.indices((H, W), dtype=np.float64)
    sx = np.minimum(np.maximum(xs + u, 0.0), W - 1.0)
    sy = np.minimum(np.maximum(ys + v, 0.0), H - 1.0)
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0i = x0.astype(np.int64)
    y0i = y0.astype(np.int64)
    x1i = np.minimum(x0i + 1, W - 1)
    y1i = np.minimum(y0i + 1, H - 1)
    out = np.empty_like(payload)
    for c in range(C):
        p = payload[c]
        r0 = (1.0 - fx) * p[y0i, x0i] + fx * p[y0i, x1i]
        r1 = (1.0 - fx) * p[y1i, x0i] + fx * p[y1i, x1i]
        out[c] = (1.0 - fy) * r0 + fy * r1
    return out


def patch_norms(vox, patch):
    """Per-pixel L2 norm of the zero-padded (bins, patch, patch) patch stack."""
    B, H, W = vox.shape
    h = patch // 2
    pad = np.zeros((B, H + 2 * h, W + 2 * h), dtype=np.float64)
    pad[:, h:h + H, h:h + W] = vox
    acc = np.zeros((H, W), dtype=np.float64)
    for b in range(B):
        for ey in range(patch):
            for ex in range(patch):
                a = pad[b, ey:ey + H, ex:ex + W]
                acc = acc + a * a
    return np.sqrt(acc)


def corr_scores(va, vb, base_u, base_v, radius, patch):
    """Normalized cross-correlation scores around per-pixel base offsets.

    scores[y, x, iy, ix] correlates the patch of ``va`` at (x, y) with the
    patch of ``vb`` at (x + base_u + dx, y + base_v + dy) for dy, dx in
    [-radius, radius]. Out-of-frame targets score -inf; zero-energy pairs 0.
    """
    B, H, W = va.shape
    h = patch // 2
    pa = np.zeros((B, H + 2 * h, W + 2 * h), dtype=np.float64)
    pa[:, h:h + H, h:h + W] = va
    pb = np.zeros((B, H + 2 * h, W + 2 * h), dtype=np.float64)
    pb[:, h:h + H, h:h + W] = vb
    na = patch_norms(va, patch)
    nb = patch_norms(vb, patch)

    side = 2 * radius + 1
    scores = np.empty((H, W, side, side), dtype=np.float64)
    ys, xs = np.indices((H, W))
    for iy in range(side):
        dy = iy - radius
        for ix in range(side):
            dx = ix - radius
            cy = ys + base_v + dy
            cx = xs + base_u + dx
            valid = (cx >= 0) & (cx < W) & (cy >= 0) & (cy < H)
            cyc = np.where(valid, cy, 0)
            cxc = np.where(valid, cx, 0)
            cross = np.zeros((H, W), dtype=np.float64)
            for b in range(B):
                for ey in range(patch):
                    for ex in range(patch):
                        cross = cross + pa[b, ey:ey + H, ex:ex + W] * pb[b, cyc + ey, cxc + ex]
            nbt = nb[cyc, cxc]
            with np.errstate(divide="ignore", invalid="ignore"):
                val = cross / (na * nbt)
            val = np.where((na == 0.0) | (nbt == 0.0), 0.0, val)
            scores[:, :, iy, ix] = np.where(valid, val, -np.inf)
    return scores


def box_sum(field, radius):
    """Sum over the (2r+1)^2 window; out-of-frame taps read as zero."""
    H, W = field.shape
    pad = np.zeros((H + 2 * radius, W + 2 * radius), dtype=np.float64)
    pad[radius:radius + H, radius:radius + W] = field
    out = np.zeros((H, W), dtype=np.float64)
    side = 2 * radius + 1
    for dy in range(side):
        for dx in range(side):
            out = out + pad[dy:dy + H, dx:dx + W]
    return out


def masked_box_mean(data, mask):
    """3x3 average of ``data`` over mask-true pixels; identity where none.

    Returns (out (C,H,W), count (H,W)); ``count`` is the number of mask-true
    pixels in each window.
    """
    C, H, W = data.shape
    maskf = mask.astype(np.float64)
    pm = np.zeros((H + 2, W + 2), dtype=np.float64)
    pm[1:1 + H, 1:1 + W] = maskf
    cnt = np.zeros((H, W), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            cnt = cnt + pm[dy:dy + H, dx:dx + W]
    out = np.empty_like(data)
    for c in range(C):
        pd = np.zeros((H + 2, W + 2), dtype=np.float64)
        pd[1:1 + H, 1:1 + W] = data[c] * maskf
        s = np.zeros((H, W), dtype=np.float64)
        for dy in range(3):
            for dx in range(3):
                s = s + pd[dy:dy + H, dx:dx + W]
        # the guard only dodges 0/0 in the unused branch of the where
        out[c] = np.where(cnt > 0.0, s / np.where(cnt > 0.0, cnt, 1.0), data[c])
    return out, cnt


def attention_dots(cands, query):
    """Per-pixel dot products <cands[i], query> over channels; (N,H,W)."""
    N, C, H, W = cands.shape
    dots = np.empty((N, H, W), dtype=np.float64)
    for i in range(N):
        acc = np.zeros((H, W), dtype=np.float64)
        for c in range(C):
            acc = acc + cands[i, c] * query[c]
        dots[i] = acc
    return dots


def attention_mix(cands, weights):
    """Per-pixel normalized mixture sum_i weights[i]*cands[i] / sum_i weights[i]."""
    N, C, H, W = cands.shape
    wsum = np.zeros((H, W), dtype=np.float64)
    for i in range(N):
        wsum = wsum + weights[i]
    out = np.empty((C, H, W), dtype=np.float64)
    for c in range(C):
        acc = np.zeros((H, W), dtype=np.float64)
        for i in range(N):
            acc = acc + weights[i] * cands[i, c]
        out[c] = acc / wsum
    return out


def event_counts(log_l, ref, contrast):
    """Threshold-crossing counts against a per-pixel reference level.

    Emits n = floor(|L - ref| / C) crossings per pixel and advances the
    reference by sign * C * n in place. Returns (counts int64, polarity int8).
    """
    d = log_l - ref
    ad = np.abs(d)
    nf = np.floor(ad / contrast)
    s = np.sign(d)
    ref += s * (contrast * nf)
    return nf.astype(np.int64), s.astype(np.int8)
