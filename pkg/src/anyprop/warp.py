"""Forward splatting, its gradients, backward warping, and refinement.

The summation splat scatters each source pixel's weighted payload to the four
integer neighbors of its flow target with bilinear weights, accumulating in
row-major source order (the deterministic reference order). Softmax splatting
normalizes an exp-confidence-weighted splat by the matching weight splat;
the confidence map is globally max-shifted before exponentiation, which the
normalization cancels exactly, so results are shift-invariant and the exp
never overflows.

Uncovered target pixels (denominator below 1e-12) fall back to the unwarped
source payload at that pixel and are flagged in the coverage mask; the
epsilon only classifies coverage, covered pixels divide by the exact
accumulated denominator.

Gradients are analytic and match central finite differences away from the
bilinear kernel breakpoints; at a breakpoint (exact integer landing) the
right-derivative convention applies, which is what the floor-based kernel
formulas produce naturally.

Feature maps serialize as ``FTR1``: u16 C, u16 H, u16 W, u64 timestamp, u8
semantics tag, then C*H*W little-endian f32 row-major channel-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from anyprop import kernels
from anyprop.errors import ParseError
from anyprop.flow import ConfidenceMap, FlowField

_FTR_MAGIC = b"FTR1"
_SEMANTICS = ("intensity", "class-prob", "generic")

DENOM_EPS = 1e-12
CLASS_PROB_TOL = 1e-5


@dataclass(frozen=True)
class FeatureMap:
    """Dense C x H x W real-valued channels with a semantics tag."""

    data: np.ndarray
    timestamp: int = 0
    semantics: str = "generic"

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 3:
            raise ValueError(f"feature data must be (C, H, W), got shape {data.shape}")
        if not np.isfinite(data).all():
            raise ValueError("feature data must be finite")
        if self.semantics not in _SEMANTICS:
            raise ValueError(f"semantics must be one of {_SEMANTICS}, got {self.semantics!r}")
        if self.semantics == "class-prob":
            sums = data.sum(axis=0)
            if np.abs(sums - 1.0).max(initial=0.0) > CLASS_PROB_TOL:
                raise ValueError("class-prob channels must sum to 1 per pixel")
        object.__setattr__(self, "data", data)
        data.setflags(write=False)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]

    def with_data(self, data: np.ndarray, timestamp: int | None = None) -> "FeatureMap":
        return FeatureMap(data, self.timestamp if timestamp is None else timestamp,
                          self.semantics)


@dataclass(frozen=True)
class SplatResult:
    """Raw accumulators and the normalized, hole-filled output of a splat."""

    numerator: np.ndarray     # (C, H, W)
    denominator: np.ndarray   # (H, W), >= 0
    output: np.ndarray        # (C, H, W): numerator/denominator where covered
    coverage: np.ndarray      # (H, W) bool, denominator > DENOM_EPS

    def hole_fraction(self) -> float:
        return 1.0 - float(self.coverage.mean())


def _check_flow(dims, flow: FlowField) -> None:
    if flow.dims != dims:
        raise ValueError(f"flow dims {flow.dims} do not match payload dims {dims}")


def splat_sum(payload: FeatureMap, flow: FlowField, weight: np.ndarray):
    """Weighted bilinear forward scatter; returns (numerator, denominator).

    Each source pixel q adds weight(q) * payload(q) to the numerator and
    weight(q) to the denominator of the four integer neighbors of
    q + flow(q), with bilinear corner weights; out-of-frame corners drop.
    """
    _check_flow(payload.dims, flow)
    weight = np.ascontiguousarray(weight, dtype=np.float64)
    if weight.shape != payload.dims:
        raise ValueError(f"weight dims {weight.shape} do not match payload dims {payload.dims}")
    if not np.isfinite(weight).all() or (weight < 0.0).any():
        raise ValueError("splat weights must be finite and non-negative")
    return kernels.scatter_bilinear(payload.data, flow.u, flow.v, weight)


def softmax_splat(payload: FeatureMap, flow: FlowField, confidence: ConfidenceMap) -> SplatResult:
    """Confidence-weighted normalized splat of a payload along a flow field.

    output = splat(exp(S') * F) / splat(exp(S')) with S' = S - max(S); the
    global shift cancels in the quotient. Uncovered pixels copy the source
    payload and are marked in the coverage mask.
    """
    _check_flow(payload.dims, flow)
    if confidence.dims != payload.dims:
        raise ValueError(
            f"confidence dims {confidence.dims} do not match payload dims {payload.dims}"
        )
    w = np.exp(confidence.s - confidence.s.max())
    num, den = kernels.scatter_bilinear(payload.data, flow.u, flow.v, w)
    coverage = den > DENOM_EPS
    safe_den = np.where(coverage, den, 1.0)
    output = np.where(coverage[None, :, :], num / safe_den[None, :, :], payload.data)
    return SplatResult(num, den, output, coverage)


def splat_gradients(payload: FeatureMap, flow: FlowField, confidence: ConfidenceMap,
                    upstream: np.ndarray):
    """Analytic partials of softmax_splat contracted with an upstream tensor.

    Returns (dPayload (C,H,W), dS (H,W), dFlow FlowField-shaped (du, dv)).
    At bilinear breakpoints the right-derivative convention applies.
    """
    _check_flow(payload.dims, flow)
    upstream = np.ascontiguousarray(upstream, dtype=np.float64)
    if upstream.shape != payload.data.shape:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match payload shape {payload.data.shape}"
        )
    fwd = softmax_splat(payload, flow, confidence)
    w = np.exp(confidence.s - confidence.s.max())
    dpay, ds, du, dv = kernels.splat_grads(
        payload.data, flow.u, flow.v, w, fwd.output, fwd.denominator,
        fwd.coverage, upstream,
    )
    return dpay, ds, (du, dv)


def backward_warp(payload: FeatureMap, flow: FlowField) -> FeatureMap:
    """Bilinear sample of the payload at q + flow(q), border-clamped."""
    _check_flow(payload.dims, flow)
    return payload.with_data(kernels.gather_bilinear(payload.data, flow.u, flow.v))


def refine(feature: FeatureMap, passes: int = 2,
           coverage: np.ndarray | None = None) -> FeatureMap:
    """Fixed 3x3 smoothing: average over covered pixels, identity if none.

    Pixels whose window contains no covered pixel keep their value; filled
    pixels join the covered set between passes, so holes close from their
    rims inward. Class-prob maps are renormalized per pixel afterwards.
    """
    if passes < 0:
        raise ValueError(f"passes must be >= 0, got {passes}")
    if coverage is None:
        coverage = np.ones(feature.dims, dtype=bool)
    else:
        coverage = np.ascontiguousarray(coverage, dtype=bool)
        if coverage.shape != feature.dims:
            raise ValueError(f"coverage dims {coverage.shape} do not match {feature.dims}")
    if passes == 0:
        return feature
    data = feature.data
    for _ in range(passes):
        data, cnt = kernels.masked_box_mean(data, coverage)
        coverage = coverage | (cnt > 0.0)
    if feature.semantics == "class-prob":
        sums = data.sum(axis=0)
        data = data / np.where(sums > 0.0, sums, 1.0)[None, :, :]
    return feature.with_data(data)


def decode_argmax(data: np.ndarray) -> np.ndarray:
    """Per-pixel argmax over channels; ties break to the smallest index."""
    return data.argmax(axis=0).astype(np.int32)


def warp_domain(mode: str, payload: FeatureMap, flow: FlowField,
                confidence: ConfidenceMap, refine_passes: int = 2):
    """Run one of the three warping strategies; all share softmax_splat.

    * ``image``: splats a 1-channel intensity payload; re-labeling is the
      consumer's job. Returns (FeatureMap, SplatResult).
    * ``segmentation``: splats one-hot class probabilities, then argmax
      decodes immediately. Returns (label array (H, W) int32, SplatResult).
    * ``feature``: splats a generic/class-prob feature stack and applies the
      hole-restricted refinement before handing the features back.
      Returns (FeatureMap, SplatResult).
    """
    if mode == "image":
        if payload.channels != 1 or payload.semantics != "intensity":
            raise ValueError("image mode needs a 1-channel intensity payload")
        res = softmax_splat(payload, flow, confidence)
        return payload.with_data(res.output), res
    if mode == "segmentation":
        if payload.semantics != "class-prob":
            raise ValueError("segmentation mode needs a class-prob payload")
        one_hot = np.zeros_like(payload.data)
        hard = decode_argmax(payload.data)
        cidx = np.arange(payload.channels)[:, None, None]
        one_hot[:] = (hard[None, :, :] == cidx)
        res = softmax_splat(payload.with_data(one_hot), flow, confidence)
        return decode_argmax(res.output), res
    if mode == "feature":
        if payload.channels < 1:
            raise ValueError("feature mode needs at least one channel")
        res = softmax_splat(payload, flow, confidence)
        refined = refine(payload.with_data(res.output), refine_passes, res.coverage)
        data = np.where(res.coverage[None, :, :], res.output, refined.data)
        return payload.with_data(data), res
    raise ValueError(f"unknown warp mode {mode!r} (expected image|segmentation|feature)")


# ---------------------------------------------------------------------------
# serialization


def write_feature(feature: FeatureMap, path) -> None:
    c, (height, width) = feature.channels, feature.dims
    with open(path, "wb") as f:
        f.write(_FTR_MAGIC)
        f.write(struct.pack("<HHHxxQB", c, height, width, feature.timestamp,
                            _SEMANTICS.index(feature.semantics)))
        f.write(feature.data.astype("<f4").tobytes())


def read_feature(path) -> FeatureMap:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _FTR_MAGIC:
            raise ParseError(f"bad magic {magic!r}, expected {_FTR_MAGIC!r}", offset=0)
        header = f.read(17)
        if len(header) != 17:
            raise ParseError("truncated feature header", offset=4)
        c, height, width, timestamp, sem = struct.unpack("<HHHxxQB", header)
        payload = f.read()
    if sem >= len(_SEMANTICS):
        raise ParseError(f"unknown semantics tag {sem}", offset=16)
    expected = c * height * width * 4
    if len(payload) != expected:
        raise ParseError(f"expected {expected} data bytes, got {len(payload)}", offset=21)
    data = np.frombuffer(payload, dtype="<f4").reshape(c, height, width).astype(np.float64)
    feature_semantics = _SEMANTICS[sem]
    if feature_semantics == "class-prob":
        # f32 quantization can break the exact per-pixel sum; renormalize
        sums = data.sum(axis=0)
        data = data / np.where(sums > 0.0, sums, 1.0)[None, :, :]
    return FeatureMap(data, int(timestamp), feature_semantics)
