"""Motion field estimation from voxel pairs, with an explicit confidence map.

The estimator is deterministic and non-learned: normalized cross-correlation
between per-bin-stacked voxel patches, refined iteratively from a zero
initial field. Each iteration looks up the correlation at the current
(fractional) displacement by bilinear interpolation in offset space, jumps
to the local integer-offset argmax when it scores strictly better, then box
smooths over event-active pixels. Pixels without events are filled by
nearest-active diffusion after the last iteration.

The confidence map is a consensus score: local event density (events support
the flow) plus local flow consistency (low total variation), mapped into a
clamped log-precision value. Regions with no events at all pin to s_min.

Serialized forms: ``FLW1`` is u16 H, u16 W then H*W little-endian f32 (u, v)
pairs row-major; ``CNF1`` is u16 H, u16 W, f32 s_min, f32 s_max, then H*W
little-endian f32 values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from anyprop import kernels
from anyprop.errors import ParseError
from anyprop.voxel import VoxelGrid

_FLW_MAGIC = b"FLW1"
_CNF_MAGIC = b"CNF1"

DEFAULT_S_MIN = -6.0
DEFAULT_S_MAX = 6.0


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (u, v): source pixel q maps to q + (u, v)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=np.float64, copy=True)
        v = np.array(self.v, dtype=np.float64, copy=True)
        if u.shape != v.shape or u.ndim != 2:
            raise ValueError(f"flow components must be equal-shape 2-D, got {u.shape}/{v.shape}")
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            raise ValueError("flow must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        u.setflags(write=False)
        v.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int]:
        return self.u.shape

    def check_max_displacement(self, limit: float) -> None:
        if np.abs(self.u).max(initial=0.0) > limit or np.abs(self.v).max(initial=0.0) > limit:
            raise ValueError(f"flow exceeds configured max displacement {limit}")

    def scaled(self, factor: float) -> "FlowField":
        return FlowField(self.u * factor, self.v * factor)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.u * self.u + self.v * self.v)


@dataclass(frozen=True)
class ConfidenceMap:
    """Per-pixel log-precision of the flow, clamped to [s_min, s_max]."""

    s: np.ndarray
    s_min: float = DEFAULT_S_MIN
    s_max: float = DEFAULT_S_MAX

    def __post_init__(self):
        s = np.array(self.s, dtype=np.float64, copy=True)
        if s.ndim != 2:
            raise ValueError(f"confidence must be 2-D, got shape {s.shape}")
        if not np.isfinite(s).all():
            raise ValueError("confidence must be finite")
        if s.size and (s.min() < self.s_min or s.max() > self.s_max):
            raise ValueError(f"confidence values outside [{self.s_min}, {self.s_max}]")
        object.__setattr__(self, "s", s)
        s.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int]:
        return self.s.shape

    @classmethod
    def constant(cls, dims, value: float = 0.0,
                 s_min: float = DEFAULT_S_MIN, s_max: float = DEFAULT_S_MAX) -> "ConfidenceMap":
        return cls(np.full(dims, value, dtype=np.float64), s_min, s_max)


@dataclass(frozen=True)
class CorrelationVolume:
    """Local NCC scores: scores[y, x, iy, ix] for offsets (iy-r, ix-r)."""

    scores: np.ndarray          # (H, W, 2r+1, 2r+1)
    radius: int
    patch: int
    source_norms: np.ndarray    # per-pixel patch L2 norm of the source voxel
    target_norms: np.ndarray

    @property
    def dims(self) -> tuple[int, int]:
        return self.scores.shape[:2]


def _as_f64(grid: VoxelGrid) -> np.ndarray:
    return grid.data.astype(np.float64)


def _check_pair(voxel_a: VoxelGrid, voxel_b: VoxelGrid) -> None:
    if voxel_a.data.shape != voxel_b.data.shape:
        raise ValueError(
            f"voxel shapes differ: {voxel_a.data.shape} vs {voxel_b.data.shape}"
        )


def build_correlation(voxel_a: VoxelGrid, voxel_b: VoxelGrid,
                      radius: int = 4, patch: int = 5) -> CorrelationVolume:
    """All-offsets correlation volume around zero displacement.

    Out-of-frame targets score -inf; patches with zero energy on either side
    score 0 for every offset.
    """
    _check_pair(voxel_a, voxel_b)
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"patch must be odd and >= 1, got {patch}")
    va = _as_f64(voxel_a)
    vb = _as_f64(voxel_b)
    height, width = va.shape[1:]
    base = np.zeros((height, width), dtype=np.int64)
    scores = kernels.corr_scores(va, vb, base, base, radius, patch)
    return CorrelationVolume(
        scores, radius, patch,
        kernels.patch_norms(va, patch), kernels.patch_norms(vb, patch),
    )


def _lookup_bilinear(look: np.ndarray, gy: np.ndarray, gx: np.ndarray) -> np.ndarray:
    """Sample per-pixel (side, side) score patches at fractional grid coords."""
    side = look.shape[2]
    y0 = np.floor(gy)
    x0 = np.floor(gx)
    fy = gy - y0
    fx = gx - x0
    y0i = np.clip(y0.astype(np.int64), 0, side - 1)
    x0i = np.clip(x0.astype(np.int64), 0, side - 1)
    y1i = np.minimum(y0i + 1, side - 1)
    x1i = np.minimum(x0i + 1, side - 1)
    H, W = look.shape[:2]
    ys, xs = np.indices((H, W))
    p00 = look[ys, xs, y0i, x0i]
    p01 = look[ys, xs, y0i, x1i]
    p10 = look[ys, xs, y1i, x0i]
    p11 = look[ys, xs, y1i, x1i]
    r0 = (1.0 - fx) * p00 + fx * p01
    r1 = (1.0 - fx) * p10 + fx * p11
    return (1.0 - fy) * r0 + fy * r1


def active_mask(voxel: VoxelGrid) -> np.ndarray:
    """Pixels that saw any event mass in the voxel window."""
    return voxel.energy() > 0.0


def estimate_flow(voxel_a: VoxelGrid, voxel_b: VoxelGrid, radius: int = 4,
                  patch: int = 5, iters: int = 8, smooth_passes: int = 1) -> FlowField:
    """Iterative correlation-lookup flow from voxel_a's pattern to voxel_b's.

    Starts at zero; |flow| <= radius * iters component-wise by construction.
    Correlation argmax ties break toward the smallest (dy, dx) in row-major
    order, so results are bit-deterministic.
    """
    _check_pair(voxel_a, voxel_b)
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"patch must be odd and >= 1, got {patch}")

    va = _as_f64(voxel_a)
    vb = _as_f64(voxel_b)
    height, width = va.shape[1:]
    u = np.zeros((height, width), dtype=np.float64)
    v = np.zeros((height, width), dtype=np.float64)

    active = active_mask(voxel_a)
    if not active.any():
        return FlowField(u, v)

    limit = float(radius * iters)
    side = 2 * radius + 1
    uv = np.empty((2, height, width), dtype=np.float64)
    for _ in range(iters):
        base_u = np.floor(u + 0.5).astype(np.int64)
        base_v = np.floor(v + 0.5).astype(np.int64)
        scores = kernels.corr_scores(va, vb, base_u, base_v, radius, patch)
        look = np.where(np.isneginf(scores), -1e30, scores)
        flat = look.reshape(height, width, side * side)
        amax = flat.argmax(axis=2)
        best = np.take_along_axis(flat, amax[..., None], axis=2)[..., 0]
        best_dy = (amax // side - radius).astype(np.float64)
        best_dx = (amax % side - radius).astype(np.float64)
        cur = _lookup_bilinear(look, (v - base_v) + radius, (u - base_u) + radius)
        move = active & (best > cur)
        u = np.where(move, base_u + best_dx, u)
        v = np.where(move, base_v + best_dy, v)
        u = np.minimum(np.maximum(u, -limit), limit)
        v = np.minimum(np.maximum(v, -limit), limit)
        for _ in range(smooth_passes):
            uv[0] = u
            uv[1] = v
            smoothed, cnt = kernels.masked_box_mean(uv, active)
            upd = active & (cnt > 0.0)
            u = np.where(upd, smoothed[0], u)
            v = np.where(upd, smoothed[1], v)

    # diffuse to event-inactive pixels from their nearest active pixel
    iy, ix = ndimage.distance_transform_edt(~active, return_indices=True)[1]
    return FlowField(u[iy, ix], v[iy, ix])


def consensus_confidence(voxel: VoxelGrid, flow: FlowField, density_radius: int = 3,
                         alpha: float = 4.0, beta: float = 2.0,
                         s_min: float = DEFAULT_S_MIN, s_max: float = DEFAULT_S_MAX) -> ConfidenceMap:
    """Deterministic event/flow consensus standing in for a learned scorer.

    s = clamp(alpha * density + beta * consistency, s_min, s_max) with

    * density: local mean event energy in a (2R+1)^2 window, normalized so
      the frame max is 1 (sparse regions score low),
    * consistency: 1 minus the similarly normalized local mean flow total
      variation (disagreeing flow scores low),

    and windows that contain no events at all pinned to exactly s_min.
    """
    height, width = voxel.dims
    if flow.dims != (height, width):
        raise ValueError(f"flow dims {flow.dims} do not match voxel dims {(height, width)}")

    counts = kernels.box_sum(np.ones((height, width), dtype=np.float64), density_radius)
    box_e = kernels.box_sum(voxel.energy(), density_radius)
    density_mean = box_e / counts
    peak = density_mean.max()
    density = density_mean / peak if peak > 0.0 else np.zeros_like(density_mean)

    du_x = np.zeros((height, width), dtype=np.float64)
    du_y = np.zeros_like(du_x)
    dv_x = np.zeros_like(du_x)
    dv_y = np.zeros_like(du_x)
    du_x[:, :-1] = np.abs(flow.u[:, 1:] - flow.u[:, :-1])
    du_y[:-1, :] = np.abs(flow.u[1:, :] - flow.u[:-1, :])
    dv_x[:, :-1] = np.abs(flow.v[:, 1:] - flow.v[:, :-1])
    dv_y[:-1, :] = np.abs(flow.v[1:, :] - flow.v[:-1, :])
    tv = du_x + du_y + dv_x + dv_y
    tv_mean = kernels.box_sum(tv, density_radius) / counts
    tv_peak = tv_mean.max()
    tv_norm = tv_mean / tv_peak if tv_peak > 0.0 else np.zeros_like(tv_mean)
    consistency = 1.0 - tv_norm

    s = np.minimum(np.maximum(alpha * density + beta * consistency, s_min), s_max)
    s = np.where(box_e == 0.0, s_min, s)
    return ConfidenceMap(s, s_min, s_max)


# ---------------------------------------------------------------------------
# serialization


def write_flow(flow: FlowField, path) -> None:
    height, width = flow.dims
    inter = np.empty((height, width, 2), dtype="<f4")
    inter[..., 0] = flow.u
    inter[..., 1] = flow.v
    with open(path, "wb") as f:
        f.write(_FLW_MAGIC)
        f.write(struct.pack("<HH", height, width))
        f.write(inter.tobytes())


def read_flow(path) -> FlowField:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _FLW_MAGIC:
            raise ParseError(f"bad magic {magic!r}, expected {_FLW_MAGIC!r}", offset=0)
        header = f.read(4)
        if len(header) != 4:
            raise ParseError("truncated flow header", offset=4)
        height, width = struct.unpack("<HH", header)
        payload = f.read()
    expected = height * width * 8
    if len(payload) != expected:
        raise ParseError(f"expected {expected} data bytes, got {len(payload)}", offset=8)
    inter = np.frombuffer(payload, dtype="<f4").reshape(height, width, 2)
    return FlowField(inter[..., 0].astype(np.float64), inter[..., 1].astype(np.float64))


def write_confidence(conf: ConfidenceMap, path) -> None:
    height, width = conf.dims
    with open(path, "wb") as f:
        f.write(_CNF_MAGIC)
        f.write(struct.pack("<HHff", height, width, conf.s_min, conf.s_max))
        f.write(conf.s.astype("<f4").tobytes())


def read_confidence(path) -> ConfidenceMap:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _CNF_MAGIC:
            raise ParseError(f"bad magic {magic!r}, expected {_CNF_MAGIC!r}", offset=0)
        header = f.read(12)
        if len(header) != 12:
            raise ParseError("truncated confidence header", offset=4)
        height, width, s_min, s_max = struct.unpack("<HHff", header)
        payload = f.read()
    expected = height * width * 4
    if len(payload) != expected:
        raise ParseError(f"expected {expected} data bytes, got {len(payload)}", offset=16)
    s = np.frombuffer(payload, dtype="<f4").reshape(height, width).astype(np.float64)
    # guard against f32 quantization nudging values past the stored bounds
    s = np.minimum(np.maximum(s, float(s_min)), float(s_max))
    return ConfidenceMap(s, float(s_min), float(s_max))
