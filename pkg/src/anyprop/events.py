"""Event stream representation, temporal slicing, and file codecs.

Events are asynchronous brightness-change records (x, y, t, p) with integer
microsecond timestamps and polarity +1/-1. Streams are stored columnar
(one array per field) and are immutable after construction; time windows are
half-open [t0, t1) throughout so consecutive windows never share an event.

Two interchange formats:

* CSV: header line ``t_us,x,y,p``, one decimal-integer record per line,
  rows sorted by ``t_us``.
* Binary (``.bin``): magic ``EVS1``, little-endian u16 H, u16 W, u64 count,
  then ``count`` records of (u64 t_us, u16 x, u16 y, i8 p, 1 pad byte).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from anyprop.errors import ParseError

_EVS_MAGIC = b"EVS1"
_EVS_RECORD = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "i1")]
)


@dataclass(frozen=True)
class Event:
    """One brightness-change record: pixel (x, y), time t in us, polarity p."""

    x: int
    y: int
    t: int
    p: int

    def __post_init__(self):
        if self.p not in (-1, 1):
            raise ValueError(f"polarity must be +1 or -1, got {self.p}")
        if self.t < 0:
            raise ValueError(f"timestamp must be non-negative, got {self.t}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"coordinates must be non-negative, got ({self.x}, {self.y})")


class EventStream:
    """Time-sorted sequence of events on an (H, W) sensor.

    ``window`` optionally records the time span [t0, t1) the stream is known
    to cover (a stream with no events in a span is not the same as a stream
    that never observed it). The simulator sets it; file codecs do not carry
    it.
    """

    __slots__ = ("ts", "xs", "ys", "ps", "sensor_dims", "window")

    def __init__(self, ts, xs, ys, ps, sensor_dims, window=None):
        ts = np.array(ts, dtype=np.int64, copy=True)
        xs = np.array(xs, dtype=np.int64, copy=True)
        ys = np.array(ys, dtype=np.int64, copy=True)
        ps = np.array(ps, dtype=np.int8, copy=True)
        if not (ts.shape == xs.shape == ys.shape == ps.shape) or ts.ndim != 1:
            raise ValueError("event columns must be 1-D arrays of equal length")
        height, width = int(sensor_dims[0]), int(sensor_dims[1])
        if height <= 0 or width <= 0:
            raise ValueError(f"sensor dims must be positive, got {(height, width)}")
        if ts.size:
            if np.any(ts[1:] < ts[:-1]):
                bad = int(np.argmax(ts[1:] < ts[:-1])) + 1
                raise ValueError(f"timestamps must be non-decreasing (violated at index {bad})")
            if ts[0] < 0:
                raise ValueError("timestamps must be non-negative")
            if np.any((xs < 0) | (xs >= width) | (ys < 0) | (ys >= height)):
                raise ValueError(f"event coordinates outside sensor dims {(height, width)}")
            if np.any((ps != 1) & (ps != -1)):
                raise ValueError("polarities must be +1 or -1")
        for arr in (ts, xs, ys, ps):
            arr.setflags(write=False)
        self.ts = ts
        self.xs = xs
        self.ys = ys
        self.ps = ps
        self.sensor_dims = (height, width)
        self.window = None if window is None else (int(window[0]), int(window[1]))

    @classmethod
    def from_events(cls, events, sensor_dims, window=None) -> "EventStream":
        events = list(events)
        return cls(
            np.array([e.t for e in events], dtype=np.int64),
            np.array([e.x for e in events], dtype=np.int64),
            np.array([e.y for e in events], dtype=np.int64),
            np.array([e.p for e in events], dtype=np.int8),
            sensor_dims,
            window=window,
        )

    def __len__(self) -> int:
        return int(self.ts.size)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.xs[i]), int(self.ys[i]), int(self.ts[i]), int(self.ps[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.sensor_dims == other.sensor_dims
            and np.array_equal(self.ts, other.ts)
            and np.array_equal(self.xs, other.xs)
            and np.array_equal(self.ys, other.ys)
            and np.array_equal(self.ps, other.ps)
        )

    def covers(self, t0: int, t1: int) -> bool:
        """Whether the stream is known to observe the whole span [t0, t1)."""
        if self.window is None:
            return True
        return self.window[0] <= t0 and t1 <= self.window[1]


def slice_stream(stream: EventStream, t0: int, t1: int) -> EventStream:
    """Events with t0 <= t < t1, order preserved; the input is untouched."""
    if t0 > t1:
        raise ValueError(f"slice window is reversed: t0={t0} > t1={t1}")
    lo = int(np.searchsorted(stream.ts, t0, side="left"))
    hi = int(np.searchsorted(stream.ts, t1, side="left"))
    win = None
    if stream.window is not None:
        win = (max(stream.window[0], t0), min(stream.window[1], t1))
    return EventStream(
        stream.ts[lo:hi], stream.xs[lo:hi], stream.ys[lo:hi], stream.ps[lo:hi],
        stream.sensor_dims, window=win,
    )


def write_events(stream: EventStream, path, format: str = "bin") -> None:
    """Serialize a stream; ``format`` is 'csv' or 'bin'."""
    if format == "csv":
        with open(path, "w", encoding="ascii", newline="\n") as f:
            f.write("t_us,x,y,p\n")
            for i in range(len(stream)):
                f.write(f"{stream.ts[i]},{stream.xs[i]},{stream.ys[i]},{stream.ps[i]}\n")
    elif format == "bin":
        height, width = stream.sensor_dims
        rec = np.zeros(len(stream), dtype=_EVS_RECORD)
        rec["t"] = stream.ts
        rec["x"] = stream.xs
        rec["y"] = stream.ys
        rec["p"] = stream.ps
        with open(path, "wb") as f:
            f.write(_EVS_MAGIC)
            f.write(struct.pack("<HHQ", height, width, len(stream)))
            f.write(rec.tobytes())
    else:
        raise ValueError(f"unknown event format {format!r} (expected 'csv' or 'bin')")


def read_events(path, format: str = "bin", sensor_dims=None) -> EventStream:
    """Read a stream back; validates sorting, bounds, and polarity domain.

    CSV carries no sensor dims, so ``sensor_dims`` is required there (events
    are validated against it); the binary header stores dims itself.
    """
    if format == "csv":
        if sensor_dims is None:
            raise ValueError("sensor_dims is required when reading CSV events")
        return _read_csv(path, sensor_dims)
    if format == "bin":
        return _read_bin(path)
    raise ValueError(f"unknown event format {format!r} (expected 'csv' or 'bin')")


def _read_csv(path, sensor_dims) -> EventStream:
    ts, xs, ys, ps = [], [], [], []
    with open(path, "r", encoding="ascii") as f:
        header = f.readline().strip()
        if header != "t_us,x,y,p":
            raise ParseError(f"bad CSV header {header!r}, expected 't_us,x,y,p'", line=1)
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ParseError(f"expected 4 comma-separated fields, got {len(parts)}", line=lineno)
            try:
                t, x, y, p = (int(part) for part in parts)
            except ValueError:
                raise ParseError(f"non-integer field in {line!r}", line=lineno) from None
            if p not in (-1, 1):
                raise ParseError(f"polarity must be +1 or -1, got {p}", line=lineno)
            if ts and t < ts[-1]:
                raise ParseError(f"timestamps regress: {t} after {ts[-1]}", line=lineno)
            ts.append(t)
            xs.append(x)
            ys.append(y)
            ps.append(p)
    try:
        return EventStream(
            np.array(ts, dtype=np.int64), np.array(xs, dtype=np.int64),
            np.array(ys, dtype=np.int64), np.array(ps, dtype=np.int8), sensor_dims,
        )
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def _read_bin(path) -> EventStream:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _EVS_MAGIC:
            raise ParseError(f"bad magic {magic!r}, expected {_EVS_MAGIC!r}", offset=0)
        header = f.read(12)
        if len(header) != 12:
            raise ParseError("truncated header", offset=4)
        height, width, count = struct.unpack("<HHQ", header)
        payload = f.read()
    expected = count * _EVS_RECORD.itemsize
    if len(payload) != expected:
        raise ParseError(
            f"expected {expected} record bytes for {count} events, got {len(payload)}",
            offset=16,
        )
    rec = np.frombuffer(payload, dtype=_EVS_RECORD)
    try:
        return EventStream(
            rec["t"].astype(np.int64), rec["x"].astype(np.int64),
            rec["y"].astype(np.int64), rec["p"].astype(np.int8), (height, width),
        )
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def write_events_bytes(stream: EventStream) -> bytes:
    """Binary encoding of a stream as bytes (same layout as write_events)."""
    buf = io.BytesIO()
    height, width = stream.sensor_dims
    rec = np.zeros(len(stream), dtype=_EVS_RECORD)
    rec["t"] = stream.ts
    rec["x"] = stream.xs
    rec["y"] = stream.ys
    rec["p"] = stream.ps
    buf.write(_EVS_MAGIC)
    buf.write(struct.pack("<HHQ", height, width, len(stream)))
    buf.write(rec.tobytes())
    return buf.getvalue()
