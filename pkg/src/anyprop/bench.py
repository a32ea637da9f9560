"""Benchmark scenes, harnesses, noise injection, reports, and throughput.

The shipped scene suite maps each benchmark to a concrete claim:

* ``static``: no motion, so every method must hold mIoU 1.0 at every dt.
* ``rigid``: full-frame mosaic under one integer-displacement translation;
  oracle-flow propagation must be exact.
* ``linear``: constant-velocity multi-object scene for the anytime curve;
  the frozen-keyframe baseline decays with dt, propagation does not.
* ``occlusion``: an occluder hides a static object at the last keyframe and
  leaves the frame during the gap; only memory can restore it.
* ``sudden``: an object enters the frame inside the gap (the late-appearance
  hazard scenario).
* ``adversarial``: a textured mover flanked by static structure; noisy flow
  in the event-free region is harmless only when confidence down-weights it.

All reports are deterministic for a fixed seed: CSV output carries no
timings (those go to stdout), floats are emitted with 6 decimals, and SVG
plots are hand-built polylines.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from anyprop.events import slice_stream
from anyprop.flow import ConfidenceMap, FlowField, consensus_confidence
from anyprop.memory import MemoryBank, mem_push
from anyprop.metrics import ConfusionMatrix, miou
from anyprop.pipeline import (
    PipelineOptions,
    decode_labels,
    encode_keyframe,
    propagate,
)
from anyprop.scene import (
    LabelMap,
    SceneConfig,
    SceneObject,
    dumps_scene,
    oracle_flow,
    render_scene,
    simulate_events,
)
from anyprop.voxel import voxelize
from anyprop.warp import FeatureMap, softmax_splat, warp_domain

MS = 1000  # us per ms

ANYTIME_METHODS = ("lfr_baseline", "ours", "ours_no_memory", "ours_no_confidence")
ABLATION_KINDS = ("warp_domain", "memory_gap", "confidence")
MEMORY_GAP_DTS_US = (50 * MS, 200 * MS, 400 * MS, 800 * MS)


# ---------------------------------------------------------------------------
# scene suite


def scene_static() -> SceneConfig:
    return SceneConfig(
        dims=(48, 64),
        background=0.35,
        objects=(
            SceneObject("rect", (14.0, 12.0), 1, 0.75, (8.0, 6.0), (0.0, 0.0), 1),
            SceneObject("disk", (6.0, 6.0), 2, 0.55, (44.0, 14.0), (0.0, 0.0), 2),
            SceneObject("rect", (10.0, 16.0), 3, 0.95, (24.0, 26.0), (0.0, 0.0), 3),
        ),
        seed=1,
    )


def scene_rigid() -> SceneConfig:
    """2x2 class mosaic, oversized horizontally, one shared velocity.

    (100, 0) px/s moves an exact 5 px in 50 ms; the mosaic covers every pixel
    at all times within +-1 s, so disoccluded frame-edge pixels keep their
    class and oracle-flow propagation is exact.
    """
    vel = (100.0, 0.0)
    return SceneConfig(
        dims=(48, 64),
        background=0.35,
        objects=(
            SceneObject("rect", (150.0, 24.0), 1, 0.45, (-110.0, 0.0), vel, 1),
            SceneObject("rect", (200.0, 24.0), 2, 0.65, (32.0, 0.0), vel, 2),
            SceneObject("rect", (150.0, 24.0), 3, 0.85, (-110.0, 24.0), vel, 3),
            SceneObject("rect", (200.0, 24.0), 4, 0.99, (26.0, 24.0), vel, 4),
        ),
        seed=2,
    )


def scene_linear() -> SceneConfig:
    return SceneConfig(
        dims=(48, 64),
        background=0.35,
        objects=(
            SceneObject("rect", (12.0, 10.0), 1, 0.75, (6.0, 6.0), (100.0, 20.0), 1),
            SceneObject("rect", (10.0, 12.0), 2, 0.55, (46.0, 28.0), (-90.0, -20.0), 2),
            SceneObject("disk", (6.0, 6.0), 3, 0.95, (24.0, 32.0), (70.0, -40.0), 3),
        ),
        seed=3,
    )


def scene_occlusion() -> SceneConfig:
    """Static target behind a fast occluder that exits the frame.

    The occluder covers the class-2 target exactly at t = 900 ms (the last
    keyframe of the memory-gap harness) and leaves the frame before
    t + 200 ms, so only the memory bank can recover the target afterwards.
    """
    return SceneConfig(
        dims=(48, 64),
        background=0.35,
        objects=(
            SceneObject("rect", (12.0, 20.0), 2, 0.75, (22.0, 14.0), (0.0, 0.0), 2),
            SceneObject("rect", (16.0, 24.0), 1, 0.55, (-205.0, 12.0), (250.0, 0.0), 5),
        ),
        seed=4,
    )


def scene_sudden() -> SceneConfig:
    return SceneConfig(
        dims=(48, 64),
        background=0.35,
        objects=(
            SceneObject("rect", (12.0, 10.0), 1, 0.75, (10.0, 8.0), (80.0, 0.0), 1),
            SceneObject("disk", (5.0, 5.0), 4, 0.95, (-7.0, 30.0), (150.0, 0.0), 4),
        ),
        seed=5,
    )


def scene_adversarial() -> SceneConfig:
    """One textured moving object flanked by static multi-class structure.

    The mover is built from same-class strips of alternating intensity so its
    whole body stays event-active (its flow earns high confidence end to
    end). The static rects sit just above and below the mover's path; they
    emit no events, so noisy flow injected there splats across the mover's
    target rows unless confidence suppresses those votes.
    """
    strips = tuple(
        SceneObject("rect", (2.0, 14.0), 1, 0.95 if k % 2 == 0 else 0.55,
                    (8.0 + 2.0 * k, 17.0), (120.0, 0.0), 5 + k)
        for k in range(7)
    )
    return SceneConfig(
        dims=(48, 64),
        background=0.35,
        objects=strips + (
            SceneObject("rect", (40.0, 8.0), 2, 0.65, (8.0, 8.0), (0.0, 0.0), 1),
            SceneObject("rect", (40.0, 8.0), 3, 0.8, (8.0, 32.0), (0.0, 0.0), 2),
        ),
        seed=6,
    )


SCENE_BUILDERS = {
    "static": scene_static,
    "rigid": scene_rigid,
    "linear": scene_linear,
    "occlusion": scene_occlusion,
    "sudden": scene_sudden,
    "adversarial": scene_adversarial,
}


def builtin_scene(name: str) -> SceneConfig:
    try:
        return SCENE_BUILDERS[name]()
    except KeyError:
        raise ValueError(
            f"unknown scene {name!r} (expected one of {sorted(SCENE_BUILDERS)})"
        ) from None


# ---------------------------------------------------------------------------
# noise injection


def perturb_flow(flow: FlowField, sigma: float, region_mask: np.ndarray | None,
                 seed: int) -> FlowField:
    """Add seeded Gaussian noise of std sigma (px) inside region_mask."""
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return flow
    if region_mask is None:
        region_mask = np.ones(flow.dims, dtype=bool)
    rng = np.random.default_rng(seed)
    noise_u = rng.normal(0.0, sigma, flow.dims)
    noise_v = rng.normal(0.0, sigma, flow.dims)
    m = region_mask.astype(np.float64)
    return FlowField(flow.u + noise_u * m, flow.v + noise_v * m)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class BenchRow:
    method: str
    dt_us: int
    miou: float
    hole_fraction: float
    per_class_iou: np.ndarray
    confusion: ConfusionMatrix


@dataclass
class BenchReport:
    kind: str
    scene_name: str
    seed: int
    num_classes: int
    rows: list[BenchRow] = field(default_factory=list)
    runtime_s: dict[str, float] = field(default_factory=dict)
    scene_echo: str = ""

    def methods(self) -> list[str]:
        seen: list[str] = []
        for row in self.rows:
            if row.method not in seen:
                seen.append(row.method)
        return seen

    def row(self, method: str, dt_us: int) -> BenchRow:
        for r in self.rows:
            if r.method == method and r.dt_us == dt_us:
                return r
        raise KeyError(f"no row for ({method}, {dt_us})")

    def to_csv(self) -> str:
        lines = [
            f"# anyprop bench kind={self.kind} scene={self.scene_name} seed={self.seed}",
        ]
        for echo_line in self.scene_echo.strip().splitlines():
            lines.append(f"# {echo_line}")
        iou_cols = ",".join(f"iou_{k}" for k in range(self.num_classes))
        lines.append(f"method,dt_us,miou,hole_fraction,{iou_cols}")
        for r in self.rows:
            ious = ",".join(_fmt(x) for x in r.per_class_iou)
            lines.append(
                f"{r.method},{r.dt_us},{_fmt(r.miou)},{_fmt(r.hole_fraction)},{ious}"
            )
        return "\n".join(lines) + "\n"

    def to_svg(self) -> str:
        return _curves_svg(self)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as f:
            f.write(self.to_csv())

    def write_svg(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as f:
            f.write(self.to_svg())


def _fmt(x: float) -> str:
    return f"{float(x):.6f}"


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _curves_svg(report: BenchReport, width: int = 640, height: int = 420) -> str:
    """Minimal polyline chart: mIoU (y, 0..1) against dt in ms (x)."""
    ml, mr, mt, mb = 56, 16, 24, 44
    plot_w = width - ml - mr
    plot_h = height - mt - mb
    dts = sorted({r.dt_us for r in report.rows})
    if not dts:
        raise ValueError("cannot plot an empty report")
    dt_min, dt_max = dts[0], dts[-1]
    span = max(dt_max - dt_min, 1)

    def sx(dt):
        return ml + plot_w * (dt - dt_min) / span

    def sy(m):
        return mt + plot_h * (1.0 - m)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + plot_h}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt + plot_h}" x2="{ml + plot_w}" y2="{mt + plot_h}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(frac)
        parts.append(
            f'<line x1="{ml - 4}" y1="{y:.2f}" x2="{ml}" y2="{y:.2f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{ml - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">{frac:.2f}</text>'
        )
    for dt in dts:
        x = sx(dt)
        parts.append(
            f'<line x1="{x:.2f}" y1="{mt + plot_h}" x2="{x:.2f}" y2="{mt + plot_h + 4}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{mt + plot_h + 16}" font-size="11" '
            f'text-anchor="middle">{dt // MS}</text>'
        )
    parts.append(
        f'<text x="{ml + plot_w / 2:.2f}" y="{height - 8}" font-size="12" '
        f'text-anchor="middle">dt (ms)</text>'
    )
    parts.append(
        f'<text x="14" y="{mt + plot_h / 2:.2f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {mt + plot_h / 2:.2f})">mIoU</text>'
    )
    for mi, method in enumerate(report.methods()):
        color = _PALETTE[mi % len(_PALETTE)]
        pts = [(r.dt_us, r.miou) for r in report.rows if r.method == method]
        pts.sort()
        coords = " ".join(f"{sx(dt):.2f},{sy(m):.2f}" for dt, m in pts)
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>'
        )
        ly = mt + 14 + 14 * mi
        parts.append(
            f'<line x1="{ml + 8}" y1="{ly - 4}" x2="{ml + 28}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{ml + 34}" y="{ly}" font-size="11">{method}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# harnesses


def _opts_for(method: str) -> PipelineOptions:
    if method == "ours":
        return PipelineOptions(memory=True, use_confidence=True)
    if method == "ours_no_memory":
        return PipelineOptions(memory=False, use_confidence=True)
    if method == "ours_no_confidence":
        return PipelineOptions(memory=True, use_confidence=False)
    raise ValueError(f"unknown method {method!r}")


def _mrow(method: str, dt_us: int, pred: LabelMap, gt: LabelMap,
          hole_fraction: float) -> BenchRow:
    cm, per_class, mean = miou(pred, gt)
    return BenchRow(method, dt_us, mean, hole_fraction, per_class, cm)


def anytime_curve(scene: SceneConfig, methods=ANYTIME_METHODS,
                  dt_list_us=tuple(range(10 * MS, 101 * MS, 10 * MS)),
                  seed: int = 0, scene_name: str = "scene",
                  flow_oracle: bool = False) -> BenchReport:
    """mIoU against analytic ground truth for each method over the dt grid.

    The keyframe sits one horizon (max dt) into the sequence so the flow
    estimator has a full event pre-window; memory methods carry a bank with
    the keyframe's own features pushed at keyframe time.
    """
    for method in methods:
        if method not in ANYTIME_METHODS:
            raise ValueError(f"unknown method {method!r} (expected {ANYTIME_METHODS})")
    dt_list = sorted(int(dt) for dt in dt_list_us)
    horizon = dt_list[-1]
    t_key = horizon
    events = simulate_events(scene, 0, t_key + horizon)
    frame, labels = render_scene(scene, t_key)
    state = encode_keyframe(frame, labels, dt_key_us=horizon)

    report = BenchReport("anytime", scene_name, seed, scene.num_classes,
                         scene_echo=dumps_scene(scene))
    for method in methods:
        tic = time.perf_counter()
        if method == "lfr_baseline":
            pred = decode_labels(state.feature)
            for dt in dt_list:
                _, gt = render_scene(scene, t_key + dt)
                report.rows.append(_mrow(method, dt, pred, gt, 0.0))
        else:
            opts = _opts_for(method)
            if flow_oracle:
                opts = _with_oracle(opts, scene)
            bank = None
            if opts.memory:
                bank = MemoryBank(capacity=opts.capacity, tau=opts.tau)
                mem_push(bank, state.feature, t_key)
            for dt in dt_list:
                pred_state = propagate(state, events, dt, opts, bank)
                _, gt = render_scene(scene, t_key + dt)
                report.rows.append(
                    _mrow(method, dt, pred_state.labels, gt, pred_state.hole_fraction())
                )
        report.runtime_s[method] = time.perf_counter() - tic
    return report


def _with_oracle(opts: PipelineOptions, scene: SceneConfig) -> PipelineOptions:
    from dataclasses import replace

    return replace(opts, flow_oracle=lambda ta, tb: oracle_flow(scene, ta, tb))


def event_free_mask(scene: SceneConfig, t0_us: int, t1_us: int, bins: int = 4) -> np.ndarray:
    """Pixels with zero event energy over [t0, t1]."""
    events = simulate_events(scene, t0_us, t1_us)
    vox = voxelize(events, (t0_us, t1_us), bins)
    return vox.energy() == 0.0


def _relabel_intensity(warped: FeatureMap, scene: SceneConfig) -> LabelMap:
    """Image-mode consumer: nearest known class intensity wins, ties to
    the smaller class id."""
    table = [(scene.background, 0)]
    for obj in scene.objects:
        table.append((obj.intensity, obj.class_id))
    table.sort(key=lambda pair: pair[1])
    inten = warped.data[0]
    best = np.full(inten.shape, np.inf)
    labels = np.zeros(inten.shape, dtype=np.int32)
    for value, cls in table:
        dist = np.abs(inten - value)
        take = dist < best
        best = np.where(take, dist, best)
        labels = np.where(take, cls, labels)
    return LabelMap(labels, warped.timestamp, scene.num_classes)


def ablation_warp_domain(scene: SceneConfig, seed: int, dt_us: int = 50 * MS,
                         sigma: float = 1.0, scene_name: str = "scene") -> BenchReport:
    """Image vs segmentation vs feature warping under the same noisy flow.

    The noise models flow-estimation error, so it is injected only where the
    scene actually moves; a static scene keeps its exact zero flow and every
    mode ties at mIoU 1.0.
    """
    t_key = dt_us
    events = simulate_events(scene, 0, t_key + dt_us)
    frame, labels = render_scene(scene, t_key)
    state = encode_keyframe(frame, labels, dt_key_us=dt_us)
    _, gt = render_scene(scene, t_key + dt_us)

    exact = oracle_flow(scene, t_key, t_key + dt_us)
    moving = (np.abs(exact.u) + np.abs(exact.v)) > 0.0
    flow = perturb_flow(exact, sigma, moving, seed)
    vox_post = voxelize(
        slice_stream(events, t_key, t_key + dt_us), (t_key, t_key + dt_us), 4
    )
    conf = consensus_confidence(vox_post, flow)

    report = BenchReport("warp_domain", scene_name, seed, scene.num_classes,
                         scene_echo=dumps_scene(scene))
    tic = time.perf_counter()

    intensity = FeatureMap(frame.values[None, :, :], t_key, "intensity")
    warped_img, res_img = warp_domain("image", intensity, flow, conf)
    report.rows.append(_mrow("image", dt_us, _relabel_intensity(warped_img, scene),
                             gt, res_img.hole_fraction()))

    seg_labels, res_seg = warp_domain("segmentation", state.feature, flow, conf)
    report.rows.append(_mrow("segmentation", dt_us,
                             LabelMap(seg_labels, t_key + dt_us, scene.num_classes),
                             gt, res_seg.hole_fraction()))

    warped_feat, res_feat = warp_domain("feature", state.feature, flow, conf)
    report.rows.append(_mrow("feature", dt_us, decode_labels(warped_feat), gt,
                             res_feat.hole_fraction()))

    report.runtime_s["all"] = time.perf_counter() - tic
    return report


def ablation_memory_gap(scene: SceneConfig, seed: int,
                        dt_list_us=MEMORY_GAP_DTS_US,
                        key_times_us=(0, 300 * MS, 600 * MS, 900 * MS),
                        scene_name: str = "scene") -> BenchReport:
    """Propagation over long gaps with and without the memory bank.

    Keyframes before the gap are encoded and pushed; the final keyframe is
    the propagation source. Both arms see identical flow and confidence.
    """
    dt_list = sorted(int(dt) for dt in dt_list_us)
    t_key = int(key_times_us[-1])
    events = simulate_events(scene, 0, t_key + dt_list[-1])

    keyframes = {}
    for t in key_times_us:
        frame, labels = render_scene(scene, int(t))
        keyframes[int(t)] = encode_keyframe(frame, labels, dt_key_us=max(dt_list))

    report = BenchReport("memory_gap", scene_name, seed, scene.num_classes,
                         scene_echo=dumps_scene(scene))
    for use_memory in (True, False):
        method = "with_memory" if use_memory else "without_memory"
        tic = time.perf_counter()
        opts = PipelineOptions(memory=use_memory, use_confidence=True)
        bank = None
        if use_memory:
            bank = MemoryBank(capacity=opts.capacity, tau=opts.tau)
            for t in key_times_us:
                mem_push(bank, keyframes[int(t)].feature, int(t))
        for dt in dt_list:
            frame, labels = render_scene(scene, t_key)
            state = encode_keyframe(frame, labels, dt_key_us=dt)
            pred = propagate(state, events, dt, opts, bank)
            _, gt = render_scene(scene, t_key + dt)
            report.rows.append(_mrow(method, dt, pred.labels, gt, pred.hole_fraction()))
        report.runtime_s[method] = time.perf_counter() - tic
    return report


def ablation_confidence(scene: SceneConfig, seed: int, dt_us: int = 50 * MS,
                        sigma: float = 2.0, scene_name: str = "scene") -> BenchReport:
    """Consensus confidence against constant confidence under adversarial
    flow noise injected only where no events support the motion."""
    t_key = dt_us
    events = simulate_events(scene, 0, t_key + dt_us)
    frame, labels = render_scene(scene, t_key)
    state = encode_keyframe(frame, labels, dt_key_us=dt_us)
    _, gt = render_scene(scene, t_key + dt_us)

    vox_post = voxelize(
        slice_stream(events, t_key, t_key + dt_us), (t_key, t_key + dt_us), 4
    )
    mask = vox_post.energy() == 0.0
    if mask.all():
        # nothing moved, nothing to hallucinate flow from: keep the exact zero field
        sigma = 0.0
    noisy = perturb_flow(oracle_flow(scene, t_key, t_key + dt_us), sigma, mask, seed)

    report = BenchReport("confidence", scene_name, seed, scene.num_classes,
                         scene_echo=dumps_scene(scene))
    for method in ("consensus", "constant"):
        tic = time.perf_counter()
        opts = PipelineOptions(
            memory=False,
            use_confidence=(method == "consensus"),
            flow_override=noisy,
        )
        pred = propagate(state, events, dt_us, opts, None)
        report.rows.append(_mrow(method, dt_us, pred.labels, gt, pred.hole_fraction()))
        report.runtime_s[method] = time.perf_counter() - tic
    return report


def ablation_run(kind: str, scene: SceneConfig, seed: int,
                 scene_name: str = "scene") -> BenchReport:
    if kind == "warp_domain":
        return ablation_warp_domain(scene, seed, scene_name=scene_name)
    if kind == "memory_gap":
        return ablation_memory_gap(scene, seed, scene_name=scene_name)
    if kind == "confidence":
        return ablation_confidence(scene, seed, scene_name=scene_name)
    raise ValueError(f"unknown ablation kind {kind!r} (expected {ABLATION_KINDS})")


# ---------------------------------------------------------------------------
# throughput microbenchmark


def splat_throughput(height: int = 128, width: int = 160, channels: int = 8,
                     reps: int = 5, seed: int = 0, backends=None) -> dict:
    """Time softmax_splat per backend; reports scatters/s and channel px/s.

    Throughput numbers come from the best repetition (scheduler noise only
    ever slows a run down, so best-of-N is the stable estimator); the full
    rep list and median are reported alongside. Returns {backend:
    {"times_s": [...], "best_s": b, "median_s": m, "events_per_s": e,
    "pixels_per_s": p, "spread": max/min - 1}}.
    """
    from anyprop import _backend

    if backends is None:
        backends = ["numpy"]
        if _backend.NUMBA_AVAILABLE:
            backends.insert(0, "numba")
    rng = np.random.default_rng(seed)
    payload = FeatureMap(rng.standard_normal((channels, height, width)))
    u = rng.uniform(-3.0, 3.0, (height, width))
    v = rng.uniform(-3.0, 3.0, (height, width))
    flow = FlowField(u, v)
    conf = ConfidenceMap(rng.uniform(-4.0, 4.0, (height, width)))

    results = {}
    prev = None
    old = _backend._backend
    try:
        for backend in backends:
            _backend.set_backend(backend)
            for _ in range(2):  # warm: JIT compile, caches, allocator
                softmax_splat(payload, flow, conf)
            times = []
            for _ in range(reps):
                tic = time.perf_counter()
                out = softmax_splat(payload, flow, conf)
                times.append(time.perf_counter() - tic)
            if prev is not None and not np.array_equal(out.output, prev):
                raise AssertionError("backends disagree on splat output")
            prev = out.output
            best = min(times)
            results[backend] = {
                "times_s": times,
                "best_s": best,
                "median_s": float(np.median(times)),
                "events_per_s": height * width / best,
                "pixels_per_s": height * width * channels / best,
                "spread": max(times) / min(times) - 1.0,
            }
    finally:
        _backend.set_backend(old)
    return results
