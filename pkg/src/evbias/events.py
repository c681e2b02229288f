"""Event stream types, bias configuration, and the windowed event-rate estimator.

Streams are numpy structured arrays with dtype :data:`EVENT_DTYPE`; timestamps
are integer microseconds and polarity is stored as ``+1`` / ``-1``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, fields, replace
from typing import Iterable, NamedTuple

import numpy as np

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])

DAVIS346_SHAPE = (346, 260)  # (width, height)

US_PER_S = 1_000_000


class Event(NamedTuple):
    """A single DVS event."""

    x: int
    y: int
    t: int
    p: int


def empty_stream(n: int = 0) -> np.ndarray:
    return np.zeros(n, dtype=EVENT_DTYPE)


def make_stream(t, x, y, p) -> np.ndarray:
    """Pack column arrays into a structured event stream."""
    t = np.asarray(t)
    out = np.empty(t.shape[0], dtype=EVENT_DTYPE)
    out["t"] = t
    out["x"] = x
    out["y"] = y
    out["p"] = p
    return out


def from_events(events: Iterable[Event]) -> np.ndarray:
    events = list(events)
    if not events:
        return empty_stream()
    x, y, t, p = zip(*events)
    return make_stream(t, x, y, p)


def validate_stream(stream: np.ndarray, width: int | None = None, height: int | None = None) -> None:
    """Raise ``ValueError`` if the stream breaks an event invariant."""
    if stream.dtype != EVENT_DTYPE:
        raise ValueError(f"expected dtype {EVENT_DTYPE}, got {stream.dtype}")
    if stream.size == 0:
        return
    if np.any(np.diff(stream["t"].astype(np.int64)) < 0):
        raise ValueError("timestamps are not non-decreasing")
    if not np.all((stream["p"] == 1) | (stream["p"] == -1)):
        raise ValueError("polarity must be +1 or -1")
    if width is not None and int(stream["x"].max()) >= width:
        raise ValueError("x coordinate outside sensor width")
    if height is not None and int(stream["y"].max()) >= height:
        raise ValueError("y coordinate outside sensor height")


@dataclass(frozen=True)
class BiasConfig:
    """The five controllable bias currents, all in picoamperes."""

    b_refr: float = 10_250.0
    b_pr: float = 44.16
    b_sf: float = 1.48
    b_on: float = 762_890.0
    b_off: float = 498.62

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be strictly positive, got {getattr(self, f.name)}")

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **changes) -> "BiasConfig":
        return replace(self, **changes)

    def changed(self, other: "BiasConfig") -> list[str]:
        """Names of the biases whose values differ from ``other``."""
        return [f.name for f in fields(self) if getattr(self, f.name) != getattr(other, f.name)]


BIAS_NAMES = tuple(f.name for f in fields(BiasConfig))

# Device limits applied whenever a controller steps a bias, in pA.
BIAS_FLOOR = 0.1
BIAS_CEIL = 1e7


class BiasChange(NamedTuple):
    t: int
    name: str
    old: float
    new: float


# Initial biases used by the fast-and-slow controller (and the "default"/"constant" runs).
DEFAULT_BIAS = BiasConfig()


@dataclass(frozen=True)
class RateBounds:
    r_lo: float = 5e5
    r_hi: float = 2.5e6

    def __post_init__(self):
        if not 0 < self.r_lo < self.r_hi:
            raise ValueError(f"need 0 < r_lo < r_hi, got {self.r_lo}, {self.r_hi}")

    def contains(self, rate: float) -> bool:
        return self.r_lo <= rate <= self.r_hi


@dataclass(frozen=True)
class RateEstimate:
    """Event rate over the half-open window ``[window_end - window_len, window_end)``."""

    rate: float
    window_end: int
    window_len: int
    count: int

    @classmethod
    def from_count(cls, count: int, window_end: int, window_len: int) -> "RateEstimate":
        return cls(count / (window_len / US_PER_S), int(window_end), int(window_len), int(count))


def _window_slice(ts: np.ndarray, t: int, tau: int) -> slice:
    lo = np.searchsorted(ts, t - tau, side="left")
    hi = np.searchsorted(ts, t, side="left")
    return slice(int(lo), int(hi))


def window_events(stream: np.ndarray, t: int, tau: int) -> np.ndarray:
    """Events with ``t - tau <= t' < t`` from a timestamp-ordered stream."""
    if stream.size == 0:
        return stream[:0]
    ts = stream["t"].astype(np.int64)
    return stream[_window_slice(ts, int(t), int(tau))]


def event_rate(stream: np.ndarray, t: int, tau: int) -> RateEstimate:
    if tau <= 0:
        raise ValueError(f"window length must be positive, got {tau}")
    return RateEstimate.from_count(len(window_events(stream, t, tau)), t, tau)


def rate_stream(stream: np.ndarray, tau: int, step: int, t0: int | None = None,
                t_end: int | None = None) -> list[RateEstimate]:
    """Rate estimates at ``t0 + k*step`` for every k with the window end inside ``(t0, t_end]``.

    ``t0`` defaults to the first timestamp and ``t_end`` to one step past the
    last one.
    """
    if step <= 0 or tau <= 0:
        raise ValueError("tau and step must be positive")
    ts = stream["t"].astype(np.int64)
    if t0 is None:
        t0 = int(ts[0]) if ts.size else 0
    if t_end is None:
        t_end = (int(ts[-1]) if ts.size else t0) + step
    ends = np.arange(t0 + step, t_end + 1, step, dtype=np.int64)
    counts = np.searchsorted(ts, ends, side="left") - np.searchsorted(ts, ends - tau, side="left")
    return [RateEstimate.from_count(int(c), int(e), tau) for c, e in zip(counts, ends)]


class RateEstimator:
    """Incremental sliding-window event counter.

    Timestamps are appended in chunks (``push``) and old ones are discarded
    once they fall out of every window that can still be queried, so memory
    stays proportional to the events in one window. ``estimate(t)`` returns
    the rate over ``[t - tau, t)``; query times must be non-decreasing.

    One thread may push while others call :meth:`estimate` or
    :meth:`snapshot`; both readers see a consistent (count, window_end) pair.
    """

    def __init__(self, tau: int, capacity: int = 1 << 16):
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.tau = int(tau)
        self._buf = np.empty(capacity, dtype=np.int64)
        self._head = 0  # first live index
        self._tail = 0  # one past the last stored index
        self._last_t = -1
        self._lock = threading.Lock()
        self._snapshot = RateEstimate(0.0, 0, self.tau, 0)

    def __len__(self):
        return self._tail - self._head

    def push(self, ts) -> None:
        ts = np.asarray(ts, dtype=np.int64)
        if ts.size == 0:
            return
        with self._lock:
            if ts[0] < self._last_t or (ts.size > 1 and np.any(ts[1:] < ts[:-1])):
                raise ValueError("timestamps must be non-decreasing")
            n = ts.size
            live = self._tail - self._head
            if self._tail + n > self._buf.size:
                if live + n > self._buf.size // 2:
                    grown = np.empty(max(2 * self._buf.size, 2 * (live + n)), dtype=np.int64)
                    grown[:live] = self._buf[self._head:self._tail]
                    self._buf = grown
                else:
                    self._buf[:live] = self._buf[self._head:self._tail]
                self._head, self._tail = 0, live
            self._buf[self._tail:self._tail + n] = ts
            self._tail += n
            self._last_t = int(ts[-1])

    def estimate(self, t: int) -> RateEstimate:
        t = int(t)
        with self._lock:
            if t < self._snapshot.window_end:
                raise ValueError("query times must be non-decreasing")
            live = self._buf[self._head:self._tail]
            lo = int(np.searchsorted(live, t - self.tau, side="left"))
            hi = int(np.searchsorted(live, t, side="left"))
            self._head += lo
            est = RateEstimate.from_count(hi - lo, t, self.tau)
            self._snapshot = est
            return est

    def snapshot(self) -> RateEstimate:
        """The most recent estimate, safe to read from any thread."""
        return self._snapshot
