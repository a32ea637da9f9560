"""Synthetic scenes with analytic ground truth and an event camera model.

Scenes are flat-shaded translating shapes (rects and disks) over a uniform
background, rasterized hard at integer pixel centers: a pixel belongs to a
rect when its center lies in the half-open box [x, x+w) x [y, y+h), and to a
disk when the center is within the radius. Higher z_order wins overlaps.
This keeps labels and flow exactly computable at any timestamp.

The event model follows the fixed-time-step sensor simulation: per pixel a
log-intensity reference starts at L(t0); at each step every full contrast
threshold C crossed emits one event of the crossing's sign and advances the
reference by C per event (the reference tracks emitted mass, it is not reset
to the current level). Events within one step are ordered row-major by
pixel, so the output stream is deterministically sorted.

Scene config files are line-oriented ``key=value`` with ``[object]`` section
headers::

    dims=48x64          # H x W
    background=0.35
    seed=7
    num_classes=11

    [object]
    shape=rect:12x8     # rect:WxH or disk:R
    class=3
    intensity=0.8
    pos=10.0,20.0       # x,y in px at t=0
    vel=40.0,-10.0      # px/s
    z=1
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from anyprop import kernels
from anyprop.errors import ParseError
from anyprop.events import EventStream
from anyprop.flow import FlowField

DEFAULT_CONTRAST = 0.3        # sensor contrast threshold
DEFAULT_DT_SIM_US = 1000      # fixed 1 ms simulation step
US_PER_S = 1_000_000.0


@dataclass(frozen=True)
class SceneObject:
    shape: str                # "rect" or "disk"
    size: tuple[float, float]  # rect: (w, h); disk: (radius, radius)
    class_id: int
    intensity: float
    pos: tuple[float, float]  # (x, y) at t=0, px
    vel: tuple[float, float]  # (vx, vy), px/s
    z_order: int

    def __post_init__(self):
        if self.shape not in ("rect", "disk"):
            raise ValueError(f"shape must be 'rect' or 'disk', got {self.shape!r}")
        if not (0.0 < self.intensity <= 1.0):
            raise ValueError(f"intensity must be in (0, 1], got {self.intensity}")
        if self.class_id < 1:
            raise ValueError(f"object class ids start at 1 (0 is background), got {self.class_id}")


@dataclass(frozen=True)
class SceneConfig:
    dims: tuple[int, int]     # (H, W)
    background: float = 0.35
    objects: tuple[SceneObject, ...] = field(default_factory=tuple)
    num_classes: int = 11
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.background <= 1.0):
            raise ValueError(f"background intensity must be in (0, 1], got {self.background}")
        object.__setattr__(self, "objects", tuple(self.objects))
        for obj in self.objects:
            if obj.class_id >= self.num_classes:
                raise ValueError(
                    f"object class id {obj.class_id} >= num_classes {self.num_classes}"
                )


@dataclass(frozen=True)
class IntensityFrame:
    values: np.ndarray        # (H, W) float64 in (0, 1]
    timestamp: int            # us

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2:
            raise ValueError(f"intensity frame must be 2-D, got shape {values.shape}")
        if np.any(values <= 0.0) or not np.isfinite(values).all():
            raise ValueError("intensity values must be finite and strictly positive")
        object.__setattr__(self, "values", values)
        values.setflags(write=False)


@dataclass(frozen=True)
class LabelMap:
    labels: np.ndarray        # (H, W) int32 class ids
    timestamp: int            # us
    num_classes: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int32, copy=True)
        if labels.ndim != 2:
            raise ValueError(f"label map must be 2-D, got shape {labels.shape}")
        if np.any(labels < 0) or np.any(labels >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "labels", labels)
        labels.setflags(write=False)


def _object_mask(obj: SceneObject, t_us: int, dims) -> np.ndarray:
    height, width = dims
    t_s = t_us / US_PER_S
    px = obj.pos[0] + obj.vel[0] * t_s
    py = obj.pos[1] + obj.vel[1] * t_s
    ys, xs = np.indices((height, width), dtype=np.float64)
    if obj.shape == "rect":
        w, h = obj.size
        return (xs >= px) & (xs < px + w) & (ys >= py) & (ys < py + h)
    radius = obj.size[0]
    return (xs - px) ** 2 + (ys - py) ** 2 <= radius * radius


def render_scene(config: SceneConfig, t_us: int) -> tuple[IntensityFrame, LabelMap]:
    """Rasterize the scene at time t; deterministic in (config, t)."""
    if t_us < 0:
        raise ValueError(f"render time must be >= 0, got {t_us}")
    height, width = config.dims
    inten = np.full((height, width), config.background, dtype=np.float64)
    labels = np.zeros((height, width), dtype=np.int32)
    for obj in sorted(config.objects, key=lambda o: o.z_order):
        mask = _object_mask(obj, t_us, config.dims)
        inten[mask] = obj.intensity
        labels[mask] = obj.class_id
    return (
        IntensityFrame(inten, t_us),
        LabelMap(labels, t_us, config.num_classes),
    )


def oracle_flow(config: SceneConfig, t_a_us: int, t_b_us: int) -> FlowField:
    """Exact displacement field mapping pixel owners at t_a to their t_b spot.

    Per pixel: velocity * (t_b - t_a) of the front-most object owning the
    pixel at t_a; background pixels get zero.
    """
    if t_b_us < t_a_us:
        raise ValueError(f"oracle_flow needs t_a <= t_b, got {t_a_us} > {t_b_us}")
    height, width = config.dims
    u = np.zeros((height, width), dtype=np.float64)
    v = np.zeros((height, width), dtype=np.float64)
    dt_s = (t_b_us - t_a_us) / US_PER_S
    for obj in sorted(config.objects, key=lambda o: o.z_order):
        mask = _object_mask(obj, t_a_us, config.dims)
        u[mask] = obj.vel[0] * dt_s
        v[mask] = obj.vel[1] * dt_s
    return FlowField(u, v)


def events_from_log_frames(log_frames, times_us, sensor_dims,
                           contrast: float = DEFAULT_CONTRAST,
                           window: tuple[int, int] | None = None) -> EventStream:
    """Run the threshold-crossing sensor over a log-intensity frame sequence.

    The first frame (at ``times_us[0]``) initializes the per-pixel reference;
    each later frame emits floor(|L - ref| / C) events per pixel and advances
    the reference. This is the core of simulate_events, exposed so intensity
    profiles can be fed directly. ``log_frames`` may be any iterable of
    (H, W) arrays; it is consumed lazily.
    """
    if contrast <= 0.0:
        raise ValueError(f"contrast threshold must be positive, got {contrast}")
    height, width = sensor_dims
    frames = iter(log_frames)
    ref = np.array(next(frames), dtype=np.float64, copy=True)
    chunks_t, chunks_x, chunks_y, chunks_p = [], [], [], []
    for k, frame in enumerate(frames, start=1):
        log_l = np.ascontiguousarray(frame, dtype=np.float64)
        counts, pols = kernels.event_counts(log_l, ref, contrast)
        flat = counts.ravel()
        nz = np.flatnonzero(flat)          # row-major pixel order: (y, x) ties
        if nz.size == 0:
            continue
        reps = flat[nz]
        chunks_t.append(np.full(int(reps.sum()), times_us[k], dtype=np.int64))
        chunks_x.append(np.repeat(nz % width, reps))
        chunks_y.append(np.repeat(nz // width, reps))
        chunks_p.append(np.repeat(pols.ravel()[nz], reps))
    if chunks_t:
        ts = np.concatenate(chunks_t)
        xs = np.concatenate(chunks_x)
        ys = np.concatenate(chunks_y)
        ps = np.concatenate(chunks_p)
    else:
        ts = np.empty(0, dtype=np.int64)
        xs = np.empty(0, dtype=np.int64)
        ys = np.empty(0, dtype=np.int64)
        ps = np.empty(0, dtype=np.int8)
    return EventStream(ts, xs, ys, ps, sensor_dims, window=window)


def simulate_events(config: SceneConfig, t0_us: int, t1_us: int,
                    contrast: float = DEFAULT_CONTRAST,
                    dt_sim_us: int = DEFAULT_DT_SIM_US) -> EventStream:
    """Simulate the event camera over [t0, t1] with a fixed time step.

    Steps at t0 + k*dt_sim; the final step lands exactly on t1 (a shorter
    last step when the span is not a multiple of dt_sim), which bounds the
    residual |ref - L(t1)| below the contrast threshold everywhere.
    """
    if t1_us <= t0_us:
        raise ValueError(f"empty simulation window: t1={t1_us} <= t0={t0_us}")
    if contrast <= 0.0:
        raise ValueError(f"contrast threshold must be positive, got {contrast}")
    if dt_sim_us < 1:
        raise ValueError(f"simulation step must be >= 1 us, got {dt_sim_us}")

    times = [t0_us]
    t = t0_us
    while t + dt_sim_us < t1_us:
        t += dt_sim_us
        times.append(t)
    times.append(t1_us)

    def log_frames():
        for t_us in times:
            frame, _ = render_scene(config, t_us)
            yield np.log(frame.values)

    return events_from_log_frames(
        log_frames(), times, config.dims, contrast, window=(t0_us, t1_us)
    )


# ---------------------------------------------------------------------------
# scene config file format


def dumps_scene(config: SceneConfig) -> str:
    lines = [
        f"dims={config.dims[0]}x{config.dims[1]}",
        f"background={config.background!r}",
        f"seed={config.seed}",
        f"num_classes={config.num_classes}",
    ]
    for obj in config.objects:
        lines.append("")
        lines.append("[object]")
        if obj.shape == "rect":
            lines.append(f"shape=rect:{obj.size[0]!r}x{obj.size[1]!r}")
        else:
            lines.append(f"shape=disk:{obj.size[0]!r}")
        lines.append(f"class={obj.class_id}")
        lines.append(f"intensity={obj.intensity!r}")
        lines.append(f"pos={obj.pos[0]!r},{obj.pos[1]!r}")
        lines.append(f"vel={obj.vel[0]!r},{obj.vel[1]!r}")
        lines.append(f"z={obj.z_order}")
    return "\n".join(lines) + "\n"


def save_scene(config: SceneConfig, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(dumps_scene(config))


def _parse_shape(value: str, lineno: int):
    if value.startswith("rect:"):
        body = value[len("rect:"):]
        parts = body.split("x")
        if len(parts) != 2:
            raise ParseError(f"rect size must be WxH, got {body!r}", line=lineno)
        return "rect", (float(parts[0]), float(parts[1]))
    if value.startswith("disk:"):
        radius = float(value[len("disk:"):])
        return "disk", (radius, radius)
    raise ParseError(f"shape must be rect:WxH or disk:R, got {value!r}", line=lineno)


def _parse_pair(value: str, lineno: int):
    parts = value.split(",")
    if len(parts) != 2:
        raise ParseError(f"expected two comma-separated numbers, got {value!r}", line=lineno)
    return float(parts[0]), float(parts[1])


def loads_scene(text: str) -> SceneConfig:
    header: dict[str, str] = {}
    objects: list[dict] = []
    current: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "[object]":
            current = {"_line": lineno}
            objects.append(current)
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if current is None:
                header[key] = value
            elif key == "shape":
                current["shape"], current["size"] = _parse_shape(value, lineno)
            elif key == "class":
                current["class_id"] = int(value)
            elif key == "intensity":
                current["intensity"] = float(value)
            elif key == "pos":
                current["pos"] = _parse_pair(value, lineno)
            elif key == "vel":
                current["vel"] = _parse_pair(value, lineno)
            elif key == "z":
                current["z_order"] = int(value)
            else:
                raise ParseError(f"unknown object key {key!r}", line=lineno)
        except ValueError as exc:
            raise ParseError(f"bad value for {key!r}: {exc}", line=lineno) from None

    try:
        h_str, w_str = header["dims"].split("x")
        dims = (int(h_str), int(w_str))
    except KeyError:
        raise ParseError("missing required key 'dims'") from None
    except ValueError:
        raise ParseError(f"dims must be HxW, got {header['dims']!r}") from None

    objs = []
    for fields in objects:
        lineno = fields.pop("_line")
        missing = {"shape", "size", "class_id", "intensity", "pos", "vel", "z_order"} - set(fields)
        if missing:
            raise ParseError(f"object is missing keys {sorted(missing)}", line=lineno)
        objs.append(SceneObject(**fields))

    return SceneConfig(
        dims=dims,
        background=float(header.get("background", 0.35)),
        objects=tuple(objs),
        num_classes=int(header.get("num_classes", 11)),
        seed=int(header.get("seed", 0)),
    )


def load_scene(path) -> SceneConfig:
    with open(path, "r", encoding="ascii") as f:
        return loads_scene(f.read())
