"""Event voxelization: temporally-binned polarity accumulation.

Each in-window event spreads its polarity over the two bins adjacent to its
normalized timestamp t* = (B-1)(t - t0)/(t1 - t0) with the triangular kernel
max(0, 1 - |t* - b|), so per-event mass is conserved. Accumulation runs in
64-bit floats in event order and the in-memory grid keeps that precision
(the per-event mass-conservation bound is tighter than float32 rounding);
the serialized form emits 32-bit floats.

An event exactly at t1 maps to t* = B-1 and is accepted; producers that want
half-open windows should slice the stream first (slice_stream is half-open).

Serialized form ``VOX1``: u16 B, u16 H, u16 W, u64 t0, u64 t1, then
B*H*W little-endian f32 values in (bin, row, col) order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from anyprop import kernels
from anyprop.errors import ParseError
from anyprop.events import EventStream

_VOX_MAGIC = b"VOX1"


@dataclass(frozen=True)
class VoxelGrid:
    """B x H x W accumulation of event polarities over a time window."""

    data: np.ndarray          # (bins, H, W) float64
    window: tuple[int, int]   # (t0_us, t1_us)
    bins: int

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3 or data.shape[0] != self.bins:
            raise ValueError(f"voxel data must be (bins, H, W), got {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("voxel data must be finite")
        object.__setattr__(self, "data", data)
        data.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    def energy(self) -> np.ndarray:
        """Per-pixel total absolute polarity mass, summed over bins."""
        acc = np.zeros(self.data.shape[1:], dtype=np.float64)
        for b in range(self.bins):
            acc = acc + np.abs(self.data[b])
        return acc


def voxelize(stream: EventStream, window: tuple[int, int], bins: int = 4,
             dims: tuple[int, int] | None = None) -> VoxelGrid:
    """Accumulate a stream into a voxel grid over [t0, t1].

    Events outside the window contribute nothing; cells default to zero.
    ``dims`` defaults to the stream's sensor dims and must match them.
    """
    t0, t1 = int(window[0]), int(window[1])
    if t1 <= t0:
        raise ValueError(f"empty voxel window: t1={t1} <= t0={t0}")
    if bins < 2:
        raise ValueError(f"bins must be >= 2 (t* is undefined for B=1), got {bins}")
    if dims is None:
        dims = stream.sensor_dims
    elif tuple(dims) != stream.sensor_dims:
        raise ValueError(f"dims {tuple(dims)} do not match stream sensor dims {stream.sensor_dims}")
    height, width = stream.sensor_dims
    grid = kernels.voxel_accumulate(
        stream.ts, stream.xs, stream.ys, stream.ps, t0, t1, bins, height, width
    )
    return VoxelGrid(grid, (t0, t1), bins)


def write_voxel(grid: VoxelGrid, path) -> None:
    height, width = grid.dims
    with open(path, "wb") as f:
        f.write(_VOX_MAGIC)
        f.write(struct.pack("<HHHxxQQ", grid.bins, height, width,
                            grid.window[0], grid.window[1]))
        f.write(grid.data.astype("<f4").tobytes())


def read_voxel(path) -> VoxelGrid:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _VOX_MAGIC:
            raise ParseError(f"bad magic {magic!r}, expected {_VOX_MAGIC!r}", offset=0)
        header = f.read(24)
        if len(header) != 24:
            raise ParseError("truncated voxel header", offset=4)
        bins, height, width, t0, t1 = struct.unpack("<HHHxxQQ", header)
        payload = f.read()
    expected = bins * height * width * 4
    if len(payload) != expected:
        raise ParseError(f"expected {expected} data bytes, got {len(payload)}", offset=28)
    data = np.frombuffer(payload, dtype="<f4").reshape(bins, height, width).astype(np.float64)
    return VoxelGrid(data, (t0, t1), bins)
