"""Event-driven anytime semantic-feature propagation.

Voxelize asynchronous event streams, estimate a motion field with explicit
confidence, propagate dense feature/label maps to arbitrary timestamps via
uncertainty-guided softmax splatting with memory-attention refinement, and
benchmark "anytime" accuracy against analytic synthetic ground truth.
"""

from anyprop._backend import active_backend, set_backend, set_threads, threads
from anyprop.errors import InsufficientDataError, ParseError
from anyprop.events import Event, EventStream, read_events, slice_stream, write_events
from anyprop.flow import (
    ConfidenceMap,
    CorrelationVolume,
    FlowField,
    build_correlation,
    consensus_confidence,
    estimate_flow,
    read_confidence,
    read_flow,
    write_confidence,
    write_flow,
)
from anyprop.memory import MemoryBank, mem_enhance, mem_push
from anyprop.metrics import ConfusionMatrix, confusion, miou
from anyprop.pipeline import (
    KeyframeState,
    PipelineOptions,
    PredictionState,
    decode_labels,
    encode_keyframe,
    propagate,
    read_labels,
    two_stage_align,
    write_labels,
)
from anyprop.scene import (
    IntensityFrame,
    LabelMap,
    SceneConfig,
    SceneObject,
    events_from_log_frames,
    load_scene,
    oracle_flow,
    render_scene,
    save_scene,
    simulate_events,
)
from anyprop.voxel import VoxelGrid, read_voxel, voxelize, write_voxel
from anyprop.warp import (
    FeatureMap,
    SplatResult,
    backward_warp,
    read_feature,
    refine,
    softmax_splat,
    splat_gradients,
    splat_sum,
    warp_domain,
    write_feature,
)

__version__ = "0.1.0"

__all__ = [
    "ConfidenceMap",
    "ConfusionMatrix",
    "CorrelationVolume",
    "Event",
    "EventStream",
    "FeatureMap",
    "FlowField",
    "InsufficientDataError",
    "IntensityFrame",
    "KeyframeState",
    "LabelMap",
    "MemoryBank",
    "ParseError",
    "PipelineOptions",
    "PredictionState",
    "SceneConfig",
    "SceneObject",
    "SplatResult",
    "VoxelGrid",
    "active_backend",
    "backward_warp",
    "build_correlation",
    "confusion",
    "consensus_confidence",
    "decode_labels",
    "encode_keyframe",
    "estimate_flow",
    "events_from_log_frames",
    "load_scene",
    "mem_enhance",
    "mem_push",
    "miou",
    "oracle_flow",
    "propagate",
    "read_confidence",
    "read_events",
    "read_feature",
    "read_flow",
    "read_labels",
    "read_voxel",
    "refine",
    "render_scene",
    "save_scene",
    "set_backend",
    "set_threads",
    "simulate_events",
    "slice_stream",
    "softmax_splat",
    "splat_gradients",
    "splat_sum",
    "threads",
    "two_stage_align",
    "voxelize",
    "warp_domain",
    "write_confidence",
    "write_events",
    "write_feature",
    "write_flow",
    "write_labels",
    "write_voxel",
]
