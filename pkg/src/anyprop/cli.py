"""Command-line interface.

Subcommands::

    anyprop simulate  --scene f --out events.bin [--t0-us N] [--t1-us N]
                      [--contrast C] [--dt-sim-us N]
    anyprop voxelize  --events f --t0 N --t1 N --bins B --out f
    anyprop propagate --scene f --dt-us N [--no-memory] [--no-confidence]
                      [--flow-oracle] --out f [--t-key-us N]
                      [--keyframe-interval-us N] [--options f]
    anyprop bench     {anytime,warp-domain,memory-gap,confidence}
                      --scene f --seed N --csv p [--svg p]
    anyprop perf      splat [--size HxW] [--channels C] [--reps N] [--seed N]

``ANYPROP_THREADS`` caps kernel parallelism (0 = sequential reference mode,
the default); ``ANYPROP_BACKEND`` forces the numba or numpy kernel backend.
Every float written to CSV uses 6 decimal places, and output files are
byte-identical across runs for a fixed seed.
"""

from __future__ import annotations

import argparse
import sys

from anyprop import _backend, bench
from anyprop.events import read_events, write_events
from anyprop.memory import MemoryBank, mem_push
from anyprop.pipeline import PipelineOptions, encode_keyframe, propagate, write_labels
from anyprop.scene import load_scene, render_scene, simulate_events
from anyprop.voxel import voxelize, write_voxel

MS = 1000


def _add_simulate(sub):
    p = sub.add_parser("simulate", help="simulate an event stream for a scene")
    p.add_argument("--scene", required=True, help="scene config file")
    p.add_argument("--out", required=True, help="output events file (EVS1 binary)")
    p.add_argument("--t0-us", type=int, default=0)
    p.add_argument("--t1-us", type=int, default=200 * MS)
    p.add_argument("--contrast", type=float, default=0.3)
    p.add_argument("--dt-sim-us", type=int, default=1000)
    p.set_defaults(func=_run_simulate)


def _run_simulate(args) -> int:
    scene = load_scene(args.scene)
    stream = simulate_events(scene, args.t0_us, args.t1_us,
                             contrast=args.contrast, dt_sim_us=args.dt_sim_us)
    write_events(stream, args.out, "bin")
    print(f"wrote {len(stream)} events to {args.out}")
    return 0


def _add_voxelize(sub):
    p = sub.add_parser("voxelize", help="voxelize an event file over a window")
    p.add_argument("--events", required=True, help="input events file (EVS1 binary)")
    p.add_argument("--t0", type=int, required=True, help="window start (us)")
    p.add_argument("--t1", type=int, required=True, help="window end (us)")
    p.add_argument("--bins", type=int, default=4)
    p.add_argument("--out", required=True, help="output voxel file (VOX1)")
    p.set_defaults(func=_run_voxelize)


def _run_voxelize(args) -> int:
    stream = read_events(args.events, "bin")
    grid = voxelize(stream, (args.t0, args.t1), args.bins)
    write_voxel(grid, args.out)
    print(f"wrote {grid.bins}x{grid.dims[0]}x{grid.dims[1]} voxel grid to {args.out}")
    return 0


def _add_propagate(sub):
    p = sub.add_parser("propagate", help="propagate keyframe labels to t+dt")
    p.add_argument("--scene", required=True, help="scene config file")
    p.add_argument("--dt-us", type=int, required=True, help="offset past the keyframe")
    p.add_argument("--no-memory", action="store_true")
    p.add_argument("--no-confidence", action="store_true")
    p.add_argument("--flow-oracle", action="store_true",
                   help="use the scene's analytic flow instead of the estimator")
    p.add_argument("--out", required=True, help="output label file (LBL1)")
    p.add_argument("--t-key-us", type=int, default=None,
                   help="keyframe time (default: one keyframe interval)")
    p.add_argument("--keyframe-interval-us", type=int, default=50 * MS)
    p.add_argument("--options", default=None,
                   help="pipeline options file (key=value lines)")
    p.set_defaults(func=_run_propagate)


def _run_propagate(args) -> int:
    from dataclasses import replace

    from anyprop.scene import oracle_flow

    scene = load_scene(args.scene)
    if args.options is not None:
        with open(args.options, "r", encoding="ascii") as f:
            opts = PipelineOptions.from_config(f.read())
    else:
        opts = PipelineOptions()
    if args.no_memory:
        opts = replace(opts, memory=False)
    if args.no_confidence:
        opts = replace(opts, use_confidence=False)
    if args.flow_oracle:
        opts = replace(opts, flow_oracle=lambda ta, tb: oracle_flow(scene, ta, tb))

    horizon = max(args.keyframe_interval_us, args.dt_us)
    t_key = horizon if args.t_key_us is None else args.t_key_us
    events = simulate_events(scene, max(0, t_key - horizon), t_key + args.dt_us)
    frame, labels = render_scene(scene, t_key)
    state = encode_keyframe(frame, labels, dt_key_us=horizon)

    bank = None
    if opts.memory:
        bank = MemoryBank(capacity=opts.capacity, tau=opts.tau)
        mem_push(bank, state.feature, t_key)

    pred = propagate(state, events, args.dt_us, opts, bank)
    write_labels(pred.labels, args.out)
    print(f"wrote labels at t+{args.dt_us}us to {args.out} "
          f"(hole fraction {pred.hole_fraction():.6f})")
    return 0


def _add_bench(sub):
    p = sub.add_parser("bench", help="run a benchmark and emit CSV (and SVG)")
    p.add_argument("kind", choices=["anytime", "warp-domain", "memory-gap", "confidence"])
    p.add_argument("--scene", required=True, help="scene config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", required=True, help="output CSV path")
    p.add_argument("--svg", default=None, help="optional SVG plot path")
    p.set_defaults(func=_run_bench)


def _run_bench(args) -> int:
    scene = load_scene(args.scene)
    name = args.scene
    if args.kind == "anytime":
        report = bench.anytime_curve(scene, seed=args.seed, scene_name=name)
    else:
        kind = args.kind.replace("-", "_")
        report = bench.ablation_run(kind, scene, args.seed, scene_name=name)
    report.write_csv(args.csv)
    if args.svg is not None:
        report.write_svg(args.svg)
    for method, seconds in report.runtime_s.items():
        print(f"runtime {method}: {seconds:.3f} s")
    print(f"wrote {args.csv}" + (f" and {args.svg}" if args.svg else ""))
    return 0


def _add_perf(sub):
    p = sub.add_parser("perf", help="throughput microbenchmarks")
    p.add_argument("what", choices=["splat"])
    p.add_argument("--size", default="128x160", help="HxW grid size")
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_run_perf)


def _run_perf(args) -> int:
    try:
        h_str, w_str = args.size.lower().split("x")
        height, width = int(h_str), int(w_str)
    except ValueError:
        raise SystemExit(f"--size must be HxW, got {args.size!r}")
    results = bench.splat_throughput(height, width, args.channels, args.reps, args.seed)
    print(f"softmax splat on {height}x{width}, {args.channels} channels, "
          f"{args.reps} reps per backend")
    for backend, r in results.items():
        print(f"  {backend:6s} best {r['best_s'] * 1e3:8.3f} ms  "
              f"median {r['median_s'] * 1e3:8.3f} ms  "
              f"{r['events_per_s']:.0f} events/s  {r['pixels_per_s']:.0f} pixels/s  "
              f"spread {r['spread'] * 100.0:.1f}%")
    if "numba" in results and "numpy" in results:
        speedup = results["numpy"]["best_s"] / results["numba"]["best_s"]
        print(f"  numba speedup over numpy: {speedup:.2f}x")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="anyprop",
        description="event-driven anytime semantic-feature propagation benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_simulate(sub)
    _add_voxelize(sub)
    _add_propagate(sub)
    _add_bench(sub)
    _add_perf(sub)
    args = parser.parse_args(argv)
    # re-read thread/backend env for this invocation
    _backend.set_threads(None)
    _backend.set_backend(None)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
