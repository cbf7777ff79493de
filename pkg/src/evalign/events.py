"""Event stream data model, timestamp normalization and voxel grids."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._backend import kernels
from .errors import EmptyStream, OutOfBounds, ValidationError

DEFAULT_BINS = 5


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    p: int

    def __post_init__(self):
        if self.p not in (-1, 1):
            raise ValidationError(f"polarity must be -1 or +1, got {self.p!r}")
        if self.t < 0 or self.x < 0 or self.y < 0:
            raise ValidationError("event fields must be non-negative")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """Column-oriented, immutable event record.

    ``t`` is in microseconds (uint64), ``x``/``y`` are pixel indices and
    ``p`` is the polarity in {-1, +1}. The window defaults to the span of the
    events themselves.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int
    window_start: int | None = None
    window_end: int | None = None
    _validated: bool = field(default=False, repr=False)

    def __post_init__(self):
        t = _frozen(self.t, np.uint64)
        x = _frozen(self.x, np.int64)
        y = _frozen(self.y, np.int64)
        p = _frozen(self.p, np.int8)
        n = t.shape[0]
        if not (x.shape[0] == y.shape[0] == p.shape[0] == n):
            raise ValidationError("t, x, y, p must have equal length")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("sensor size must be positive")
        if n:
            if np.any(t[1:] < t[:-1]):
                raise ValidationError("events must be sorted by timestamp")
            if not np.all((p == 1) | (p == -1)):
                raise ValidationError("polarity must be -1 or +1")
            if x.min() < 0 or y.min() < 0 or x.max() >= self.width or y.max() >= self.height:
                raise OutOfBounds(
                    f"event coordinates exceed sensor size {self.width}x{self.height}"
                )
        ws = self.window_start
        we = self.window_end
        if ws is None:
            ws = int(t[0]) if n else 0
        if we is None:
            we = int(t[-1]) if n else ws
        if n:
            if int(t[0]) < ws or int(t[-1]) > we:
                raise ValidationError("events fall outside the stream window")
            if we - ws <= 0 and int(t[-1]) != int(t[0]):
                raise ValidationError("window must have positive length")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "window_start", int(ws))
        object.__setattr__(self, "window_end", int(we))

    @classmethod
    def from_events(cls, events, width, height, window_start=None, window_end=None):
        events = list(events)
        return cls(
            t=[e.t for e in events],
            x=[e.x for e in events],
            y=[e.y for e in events],
            p=[e.p for e in events],
            width=width,
            height=height,
            window_start=window_start,
            window_end=window_end,
        )

    @classmethod
    def empty(cls, width, height, window_start=0, window_end=0):
        return cls([], [], [], [], width, height, window_start, window_end)

    def __len__(self):
        return int(self.t.shape[0])

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.select(np.arange(len(self))[i])
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.window_start == other.window_start
            and self.window_end == other.window_end
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    @property
    def shape(self):
        return (self.height, self.width)

    def select(self, idx, window_start=None, window_end=None):
        """Sub-stream of the events at ``idx`` (indices or boolean mask, order kept)."""
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        idx = np.sort(idx)
        return EventStream(
            self.t[idx], self.x[idx], self.y[idx], self.p[idx],
            self.width, self.height,
            self.window_start if window_start is None else window_start,
            self.window_end if window_end is None else window_end,
        )

    def time_slice(self, start, end):
        """Events with ``start <= t < end`` (microseconds), windowed to [start, end]."""
        lo = np.searchsorted(self.t, np.uint64(start), side="left")
        hi = np.searchsorted(self.t, np.uint64(end), side="left")
        return self.select(np.arange(lo, hi), window_start=int(start), window_end=int(end))


def normalize_timestamps(stream):
    """Map timestamps affinely so the first event is 0.0 and the last is 1.0.

    When every event shares one timestamp the result is all zeros.
    """
    if len(stream) == 0:
        raise EmptyStream("cannot normalize timestamps of an empty stream")
    t = stream.t
    first = int(t[0])
    span = int(t[-1]) - first
    rel = (t - t[0]).astype(np.float64)
    if span == 0:
        return np.zeros_like(rel)
    return rel / float(span)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    data: np.ndarray
    window_start: int = 0
    window_end: int = 0

    @property
    def bins(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape


def voxelize(stream, bins=DEFAULT_BINS):
    """Spread each event's polarity over the two nearest temporal bins.

    Uses the triangular kernel ``max(0, 1 - |b - t*(bins-1)|)``; an event at
    normalized time 1 lands entirely in the last bin. An empty stream gives an
    all-zero grid.
    """
    if int(bins) != bins or bins < 1:
        raise ValidationError(f"bin count must be a positive integer, got {bins!r}")
    bins = int(bins)
    h, w = stream.height, stream.width
    if len(stream) == 0:
        data = np.zeros((bins, h, w))
    else:
        if stream.x.max() >= w or stream.y.max() >= h:
            raise OutOfBounds("event coordinates exceed sensor size")
        tb = normalize_timestamps(stream) * (bins - 1)
        data = kernels.voxel_deposit(tb, stream.x, stream.y, stream.p.astype(np.float64), bins, h, w)
    return VoxelGrid(data, stream.window_start, stream.window_end)
