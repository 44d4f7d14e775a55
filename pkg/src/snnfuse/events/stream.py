"""Event-stream data model, window accumulation, alignment and perturbations.

Streams are stored column-wise (x, y, t, p arrays) rather than as lists of
``Event`` objects; a 10^5-event stream stays a handful of numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int
    p: int

    def __post_init__(self):
        if self.p not in (1, -1):
            raise ValueError(f"polarity must be +1 or -1, got {self.p}")
        if self.t < 0:
            raise ValueError(f"timestamp must be non-negative, got {self.t}")


class EventStream:
    """Time-ordered polarity events on a ``width`` x ``height`` sensor.

    Timestamps are integer microseconds in the half-open span
    ``[0, duration_us)`` so that accumulating over ``[0, duration_us)``
    sees every event.
    """

    __slots__ = ("x", "y", "t", "p", "width", "height", "duration_us")

    def __init__(self, x, y, t, p, width: int, height: int, duration_us: int, *, validate: bool = True):
        self.x = np.ascontiguousarray(x, dtype=np.int64)
        self.y = np.ascontiguousarray(y, dtype=np.int64)
        self.t = np.ascontiguousarray(t, dtype=np.int64)
        self.p = np.ascontiguousarray(p, dtype=np.int8)
        self.width = int(width)
        self.height = int(height)
        self.duration_us = int(duration_us)
        if validate:
            self._check()

    def _check(self):
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("x, y, t, p must have equal length")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor resolution must be positive")
        if self.duration_us < 0:
            raise ValueError("duration_us must be non-negative")
        if n == 0:
            return
        if self.x.min() < 0 or self.x.max() >= self.width or self.y.min() < 0 or self.y.max() >= self.height:
            raise ValueError("event coordinates outside sensor resolution")
        if not np.all(np.abs(self.p) == 1):
            raise ValueError("polarity must be +1 or -1")
        if self.t[0] < 0 or self.t[-1] >= self.duration_us:
            raise ValueError("timestamps must lie in [0, duration_us)")
        if n > 1 and np.any(np.diff(self.t) < 0):
            raise ValueError("events must be sorted by timestamp")

    @classmethod
    def empty(cls, width: int, height: int, duration_us: int = 0) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height, duration_us)

    @classmethod
    def from_events(cls, events: Sequence[Event], width: int, height: int, duration_us: int | None = None) -> "EventStream":
        events = sorted(events, key=lambda e: e.t)
        x = [e.x for e in events]
        y = [e.y for e in events]
        t = [e.t for e in events]
        p = [e.p for e in events]
        if duration_us is None:
            duration_us = t[-1] + 1 if t else 0
        return cls(x, y, t, p, width, height, duration_us)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for x, y, t, p in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            (self.width, self.height, self.duration_us) == (other.width, other.height, other.duration_us)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )

    def __repr__(self) -> str:
        return f"EventStream(n={len(self)}, {self.width}x{self.height}, duration_us={self.duration_us})"

    def select(self, mask: np.ndarray, t_offset: int = 0, duration_us: int | None = None) -> "EventStream":
        return EventStream(
            self.x[mask], self.y[mask], self.t[mask] - t_offset, self.p[mask],
            self.width, self.height,
            self.duration_us if duration_us is None else duration_us,
            validate=False,
        )


@dataclass
class EventTensor:
    data: np.ndarray  # T x 2 x H x W
    dt_us: int
    t0_us: int

    @property
    def T(self) -> int:
        return self.data.shape[0]


@dataclass
class FrameImage:
    pixels: np.ndarray  # 3 x H x W in [0, 1]
    t_us: int

    def __post_init__(self):
        self.pixels = np.clip(np.asarray(self.pixels, dtype=np.float64), 0.0, 1.0)


@dataclass
class FrameTensor:
    data: np.ndarray  # T x 3 x H x W
    dt_us: int
    t0_us: int
    source_t_us: list[int] = field(default_factory=list)


@dataclass
class Scenario:
    light: str = "bright"
    position: str = "front"
    subject: int = 0

    def __post_init__(self):
        if self.light not in ("dim", "bright", "natural"):
            raise ValueError(f"unknown light condition {self.light!r}")
        if self.position not in ("front", "back"):
            raise ValueError(f"unknown position {self.position!r}")


@dataclass
class DualSample:
    events: EventStream
    frames: list[FrameImage]
    label: int
    scenario: Scenario = field(default_factory=Scenario)

    @property
    def duration_us(self) -> int:
        return self.events.duration_us


def accumulate_window(stream: EventStream, t0_us: int, dt_us: int) -> np.ndarray:
    """Per-pixel event counts in ``[t0, t0 + dt)``, channel 0 positive, 1 negative."""
    return rasterize(stream, t0_us, dt_us, 1).data[0]


def rasterize(stream: EventStream, t0_us: int, dt_us: int, T: int) -> EventTensor:
    if dt_us <= 0:
        raise ValueError("dt_us must be positive")
    if t0_us < 0:
        raise ValueError("t0_us must be non-negative")
    if T < 1:
        raise ValueError("T must be >= 1")
    H, W = stream.height, stream.width
    rel = stream.t - t0_us
    keep = (rel >= 0) & (rel < T * dt_us)
    win = rel[keep] // dt_us
    ch = (stream.p[keep] < 0).astype(np.int64)
    flat = ((win * 2 + ch) * H + stream.y[keep]) * W + stream.x[keep]
    counts = np.bincount(flat, minlength=T * 2 * H * W).astype(np.float64)
    return EventTensor(counts.reshape(T, 2, H, W), dt_us, t0_us)


def align_frames(frames: Sequence[FrameImage], t0_us: int, dt_us: int, T: int, frame_interval_us: int | None = None) -> FrameTensor:
    """Sample a frame stream onto the event time grid.

    A window holding one or more frames keeps the latest of them. An empty
    window is filled with whichever neighbouring frame (last one before the
    window, first one after it) lies closer to the window midpoint, ties going
    to the earlier frame. ``frame_interval_us`` is informational only.
    """
    if len(frames) == 0:
        raise ValueError("no frames to align")
    times = np.array([f.t_us for f in frames], dtype=np.int64)
    if np.any(np.diff(times) < 0):
        raise ValueError("frames must be time-ordered")
    picks = []
    for k in range(T):
        start = t0_us + k * dt_us
        end = start + dt_us
        # index of the last frame with time < end / < start
        last_before_end = int(np.searchsorted(times, end, side="left")) - 1
        last_before_start = int(np.searchsorted(times, start, side="left")) - 1
        if last_before_end > last_before_start:
            picks.append(last_before_end)
            continue
        prev_i = last_before_start
        next_i = last_before_end + 1
        if prev_i < 0:
            picks.append(next_i)
        elif next_i >= len(times):
            picks.append(prev_i)
        else:
            mid2 = start + end  # compare doubled distances to stay in integers
            d_prev = mid2 - 2 * times[prev_i]
            d_next = 2 * times[next_i] - mid2
            picks.append(prev_i if d_prev <= d_next else next_i)
    data = np.stack([frames[i].pixels for i in picks])
    return FrameTensor(data, dt_us, t0_us, [int(times[i]) for i in picks])


def extract_segment(sample: DualSample, t_lat_us: int, rng: np.random.Generator | None = None, *, start_us: int | None = None) -> DualSample:
    """Cut ``[s, s + t_lat)`` out of a sample and rebase it to time 0.

    ``s`` is drawn uniformly from ``[0, duration - t_lat]`` unless ``start_us``
    pins it.
    """
    D = sample.duration_us
    if t_lat_us > D:
        raise ValueError("segment exceeds sample")
    if t_lat_us <= 0:
        raise ValueError("t_lat_us must be positive")
    if start_us is None:
        if rng is None:
            raise ValueError("either rng or start_us is required")
        start_us = int(rng.integers(0, D - t_lat_us + 1))
    s = int(start_us)
    ev = sample.events
    lo, hi = np.searchsorted(ev.t, [s, s + t_lat_us], side="left")
    mask = np.zeros(len(ev), dtype=bool)
    mask[lo:hi] = True
    events = ev.select(mask, t_offset=s, duration_us=t_lat_us)
    frames = [FrameImage(f.pixels, f.t_us - s) for f in sample.frames if s <= f.t_us < s + t_lat_us]
    return DualSample(events, frames, sample.label, sample.scenario)


def centered_segment(sample: DualSample, t_lat_us: int) -> DualSample:
    return extract_segment(sample, t_lat_us, start_us=(sample.duration_us - t_lat_us) // 2)


def confuse_timing(stream: EventStream, rng: np.random.Generator) -> EventStream:
    """Shuffle timestamps across events; every event keeps its (x, y, p)."""
    n = len(stream)
    if n <= 1:
        return stream
    new_t = stream.t[rng.permutation(n)]
    order = np.argsort(new_t, kind="stable")
    return EventStream(
        stream.x[order], stream.y[order], new_t[order], stream.p[order],
        stream.width, stream.height, stream.duration_us, validate=False,
    )


def eliminate_time(stream: EventStream, replicate: int = 1) -> EventTensor:
    """Collapse the whole stream into a single accumulated frame.

    With ``replicate > 1`` the frame is repeated along the time axis.
    """
    if stream.duration_us <= 0:
        out = EventTensor(np.zeros((1, 2, stream.height, stream.width)), 1, 0)
    else:
        out = rasterize(stream, 0, stream.duration_us, 1)
    if replicate > 1:
        out = EventTensor(np.repeat(out.data, replicate, axis=0), out.dt_us, out.t0_us)
    return out


def event_frequency(stream: EventStream) -> float:
    """Event rate in units of 1000 events per second."""
    if stream.duration_us <= 0:
        raise ValueError("event frequency undefined for zero duration")
    return len(stream) / (stream.duration_us / 1e6) / 1000.0
