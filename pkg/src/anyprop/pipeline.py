"""End-to-end anytime propagation from a keyframe through an event stream.

One prediction runs: voxelize the events before and after the keyframe,
estimate the motion field over the gap, score its confidence, softmax-splat
the keyframe features, close splat holes with the refinement pass, optionally
enhance against the memory bank, and decode hard labels.

The keyframe "backbone" stand-in encodes labels as lambda-smoothed one-hot
class probabilities, which keeps every stage of the propagation machinery
exercised on semantically decodable features.

Flow-window scaling: the estimator correlates the pattern of events in
[t - dt_key, t] against the pattern in [t, t + dt]. For roughly uniform
motion those patterns sit (dt_key + dt) / 2 apart in time, so the raw
correlation displacement is rescaled by 2 * dt / (dt_key + dt) to express
motion over [t, t + dt].

Label maps serialize as ``LBL1``: u16 H, u16 W, u16 num_classes, u64
timestamp, then H*W little-endian i32 labels row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from anyprop.errors import InsufficientDataError, ParseError
from anyprop.events import EventStream, slice_stream
from anyprop.flow import (
    ConfidenceMap,
    FlowField,
    consensus_confidence,
    estimate_flow,
)
from anyprop.memory import MemoryBank, mem_enhance
from anyprop.scene import IntensityFrame, LabelMap
from anyprop.voxel import VoxelGrid, voxelize
from anyprop.warp import FeatureMap, decode_argmax, refine, softmax_splat

_LBL_MAGIC = b"LBL1"

LABEL_SMOOTHING = 0.05


@dataclass(frozen=True)
class PipelineOptions:
    """Tunables for one propagation pipeline instance."""

    memory: bool = True
    capacity: int = 4
    tau: float = 1.0
    refine_passes: int = 2
    bins: int = 4
    flow_radius: int = 4
    flow_patch: int = 5
    flow_iters: int = 8
    smooth_passes: int = 1
    density_radius: int = 3
    alpha: float = 4.0
    beta: float = 2.0
    s_min: float = -6.0
    s_max: float = 6.0
    use_confidence: bool = True
    flow_override: FlowField | None = None
    confidence_override: ConfidenceMap | None = None
    flow_oracle: Callable[[int, int], FlowField] | None = None

    @classmethod
    def from_config(cls, text: str) -> "PipelineOptions":
        """Parse key=value lines: memory=on/off, capacity, tau, refine_passes,
        flow_r, flow_p, flow_k, smooth_passes, bins, density_radius, alpha,
        beta, s_min, s_max, confidence=on/off."""
        kwargs = {}
        keymap = {
            "capacity": ("capacity", int),
            "tau": ("tau", float),
            "refine_passes": ("refine_passes", int),
            "bins": ("bins", int),
            "flow_r": ("flow_radius", int),
            "flow_p": ("flow_patch", int),
            "flow_k": ("flow_iters", int),
            "smooth_passes": ("smooth_passes", int),
            "density_radius": ("density_radius", int),
            "alpha": ("alpha", float),
            "beta": ("beta", float),
            "s_min": ("s_min", float),
            "s_max": ("s_max", float),
        }
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", line=lineno)
            key, value = (part.strip() for part in line.split("=", 1))
            if key in ("memory", "confidence"):
                if value not in ("on", "off"):
                    raise ParseError(f"{key} must be on or off, got {value!r}", line=lineno)
                kwargs["memory" if key == "memory" else "use_confidence"] = value == "on"
            elif key in keymap:
                name, conv = keymap[key]
                try:
                    kwargs[name] = conv(value)
                except ValueError:
                    raise ParseError(f"bad value for {key!r}: {value!r}", line=lineno) from None
            else:
                raise ParseError(f"unknown option {key!r}", line=lineno)
        return cls(**kwargs)


@dataclass(frozen=True)
class KeyframeState:
    """Everything known at the keyframe: frame, features, labels, timing."""

    frame: IntensityFrame
    feature: FeatureMap           # class-prob semantics, C = num_classes
    labels: LabelMap
    t_us: int
    dt_key_us: int                # keyframe interval (the gap horizon)

    def __post_init__(self):
        if self.dt_key_us <= 0:
            raise ValueError(f"keyframe interval must be positive, got {self.dt_key_us}")
        if self.feature.channels != self.labels.num_classes:
            raise ValueError("feature channel count must equal num_classes")


@dataclass(frozen=True)
class PredictionState:
    """Dense prediction at t + dt with every intermediate for inspection."""

    feature: FeatureMap
    labels: LabelMap
    flow: FlowField
    confidence: ConfidenceMap
    coverage: np.ndarray
    dt_us: int
    voxel_pre: VoxelGrid | None = None
    voxel_post: VoxelGrid | None = None

    def hole_fraction(self) -> float:
        return 1.0 - float(self.coverage.mean())


def encode_keyframe(frame: IntensityFrame, labels: LabelMap,
                    dt_key_us: int = 50_000,
                    smoothing: float = LABEL_SMOOTHING) -> KeyframeState:
    """Backbone stand-in: lambda-smoothed one-hot class probabilities.

    Channel k at a pixel with label c is (1 - lambda) * [k == c] +
    lambda / num_classes.
    """
    if frame.values.shape != labels.labels.shape:
        raise ValueError(
            f"frame dims {frame.values.shape} do not match label dims {labels.labels.shape}"
        )
    if not (0.0 <= smoothing < 0.5):
        raise ValueError(f"smoothing must lie in [0, 0.5), got {smoothing}")
    k = labels.num_classes
    height, width = labels.labels.shape
    data = np.full((k, height, width), smoothing / k, dtype=np.float64)
    cidx = np.arange(k)[:, None, None]
    data += (1.0 - smoothing) * (labels.labels[None, :, :] == cidx)
    feature = FeatureMap(data, labels.timestamp, "class-prob")
    return KeyframeState(frame, feature, labels, labels.timestamp, dt_key_us)


def decode_labels(feature: FeatureMap, num_classes: int | None = None) -> LabelMap:
    """Per-pixel argmax class; ties break to the smallest class id."""
    if feature.semantics != "class-prob":
        raise ValueError("decode_labels expects class-prob semantics")
    return LabelMap(decode_argmax(feature.data), feature.timestamp,
                    num_classes if num_classes is not None else feature.channels)


def _require_coverage(events: EventStream, t0: int, t1: int) -> None:
    if events.window is None:
        return
    w0, w1 = events.window
    if t0 < w0:
        raise InsufficientDataError(t0, min(w0, t1))
    if t1 > w1:
        raise InsufficientDataError(max(w1, t0), t1)


def _gap_flow(vox_pre: VoxelGrid, vox_post: VoxelGrid, span_pre_us: int,
              span_post_us: int, opts: PipelineOptions) -> FlowField:
    raw = estimate_flow(
        vox_pre, vox_post, radius=opts.flow_radius, patch=opts.flow_patch,
        iters=opts.flow_iters, smooth_passes=opts.smooth_passes,
    )
    scale = 2.0 * span_post_us / float(span_pre_us + span_post_us)
    return raw.scaled(scale)


def _confidence_for(vox_post: VoxelGrid, flow: FlowField,
                    opts: PipelineOptions) -> ConfidenceMap:
    if opts.confidence_override is not None:
        return opts.confidence_override
    if not opts.use_confidence:
        return ConfidenceMap.constant(vox_post.dims, 0.0, opts.s_min, opts.s_max)
    return consensus_confidence(
        vox_post, flow, density_radius=opts.density_radius,
        alpha=opts.alpha, beta=opts.beta, s_min=opts.s_min, s_max=opts.s_max,
    )


def _splat_and_refine(feature: FeatureMap, flow: FlowField, conf: ConfidenceMap,
                      opts: PipelineOptions, timestamp: int):
    res = softmax_splat(feature, flow, conf)
    warped = feature.with_data(res.output, timestamp)
    if opts.refine_passes > 0:
        refined = refine(warped, opts.refine_passes, res.coverage)
        # covered pixels keep the exact splat result; refinement only closes holes
        data = np.where(res.coverage[None, :, :], res.output, refined.data)
        warped = feature.with_data(data, timestamp)
    return warped, res


def propagate(state: KeyframeState, events: EventStream, dt_us: int,
              opts: PipelineOptions = PipelineOptions(),
              bank: MemoryBank | None = None) -> PredictionState:
    """Predict dense labels at t + dt from the keyframe and events alone.

    Requires 0 < dt <= the keyframe interval and an event stream covering
    [t - dt_key, t + dt]. All intermediates are returned for inspection.
    """
    if not (0 < dt_us <= state.dt_key_us):
        raise ValueError(
            f"dt must lie in (0, {state.dt_key_us}] us, got {dt_us}"
        )
    t = state.t_us
    _require_coverage(events, t - state.dt_key_us, t + dt_us)

    dims = state.labels.labels.shape
    ev_pre = slice_stream(events, t - state.dt_key_us, t)
    ev_post = slice_stream(events, t, t + dt_us)
    vox_pre = voxelize(ev_pre, (t - state.dt_key_us, t), opts.bins, dims)
    vox_post = voxelize(ev_post, (t, t + dt_us), opts.bins, dims)

    if opts.flow_override is not None:
        flow = opts.flow_override
    elif opts.flow_oracle is not None:
        flow = opts.flow_oracle(t, t + dt_us)
    else:
        flow = _gap_flow(vox_pre, vox_post, state.dt_key_us, dt_us, opts)

    conf = _confidence_for(vox_post, flow, opts)
    warped, res = _splat_and_refine(state.feature, flow, conf, opts, t + dt_us)

    if opts.memory and bank is not None:
        warped = mem_enhance(bank, warped)

    labels = decode_labels(warped, state.labels.num_classes)
    return PredictionState(
        feature=warped, labels=labels, flow=flow, confidence=conf,
        coverage=res.coverage, dt_us=dt_us, voxel_pre=vox_pre, voxel_post=vox_post,
    )


def two_stage_align(state: KeyframeState, events: EventStream,
                    dt_mid_us: int | None = None,
                    dt_key_us: int | None = None,
                    opts: PipelineOptions = PipelineOptions(),
                    bank: MemoryBank | None = None) -> FeatureMap:
    """Warp to an intermediate time, then warp again to the next keyframe.

    ``dt_mid`` defaults to the midpoint of the keyframe interval. The second
    motion field is estimated from the event slices [t, t + dt_mid] and
    [t + dt_mid, t + dt_key] (or taken from the flow oracle when one is
    configured). Returns the twice-warped feature at t + dt_key.
    """
    dt_key = state.dt_key_us if dt_key_us is None else dt_key_us
    if dt_mid_us is None:
        dt_mid_us = dt_key // 2
    if not (0 < dt_mid_us < dt_key):
        raise ValueError(f"dt_mid must lie in (0, {dt_key}) us, got {dt_mid_us}")
    t = state.t_us
    _require_coverage(events, t - state.dt_key_us, t + dt_key)

    first = propagate(state, events, dt_mid_us, opts, bank)

    dims = state.labels.labels.shape
    span_a = dt_mid_us
    span_b = dt_key - dt_mid_us
    if opts.flow_oracle is not None:
        flow2 = opts.flow_oracle(t + dt_mid_us, t + dt_key)
    else:
        ev_a = slice_stream(events, t, t + dt_mid_us)
        ev_b = slice_stream(events, t + dt_mid_us, t + dt_key)
        vox_a = voxelize(ev_a, (t, t + dt_mid_us), opts.bins, dims)
        vox_b = voxelize(ev_b, (t + dt_mid_us, t + dt_key), opts.bins, dims)
        flow2 = _gap_flow(vox_a, vox_b, span_a, span_b, opts)

    ev_b2 = slice_stream(events, t + dt_mid_us, t + dt_key)
    vox_b2 = voxelize(ev_b2, (t + dt_mid_us, t + dt_key), opts.bins, dims)
    conf2 = _confidence_for(vox_b2, flow2, opts)
    warped, _ = _splat_and_refine(first.feature, flow2, conf2, opts, t + dt_key)
    return warped


# ---------------------------------------------------------------------------
# serialization


def write_labels(labels: LabelMap, path) -> None:
    height, width = labels.labels.shape
    with open(path, "wb") as f:
        f.write(_LBL_MAGIC)
        f.write(struct.pack("<HHHxxQ", height, width, labels.num_classes, labels.timestamp))
        f.write(labels.labels.astype("<i4").tobytes())


def read_labels(path) -> LabelMap:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _LBL_MAGIC:
            raise ParseError(f"bad magic {magic!r}, expected {_LBL_MAGIC!r}", offset=0)
        header = f.read(16)
        if len(header) != 16:
            raise ParseError("truncated label header", offset=4)
        height, width, num_classes, timestamp = struct.unpack("<HHHxxQ", header)
        payload = f.read()
    expected = height * width * 4
    if len(payload) != expected:
        raise ParseError(f"expected {expected} data bytes, got {len(payload)}", offset=20)
    labels = np.frombuffer(payload, dtype="<i4").reshape(height, width).astype(np.int32)
    return LabelMap(labels, int(timestamp), int(num_classes))
