"""Event frames and the frame-level filters applied before matching."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

FRAME_WINDOW = 66_000  # us


@dataclass(frozen=True)
class EventFrame:
    """Per-pixel event counts over ``[t_start, t_end)``; ``counts`` is (height, width)."""

    counts: np.ndarray
    t_start: int
    t_end: int
    pose: tuple[float, float] | None = None
    route_pos: float | None = None

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def t_mid(self) -> float:
        return 0.5 * (self.t_start + self.t_end)


def accumulate_frames(stream: np.ndarray, width: int, height: int,
                      window: int = FRAME_WINDOW, t0: int = 0, t_end: int | None = None,
                      position: Callable[[np.ndarray], np.ndarray] | None = None) -> list[EventFrame]:
    """Cut a stream into back-to-back frames of ``window`` microseconds.

    Frame k covers ``[t0 + k*window, t0 + (k+1)*window)``; every event adds
    one count regardless of polarity. ``t_end`` defaults to just past the
    last event and frames partially beyond it are still emitted whole.
    ``position(t)`` (meters along the route) labels each frame at its
    midpoint; the pose is then ``(route_pos, 0)``.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    ts = stream["t"].astype(np.int64)
    if t_end is None:
        t_end = int(ts[-1]) + 1 if ts.size else t0
    n_frames = max(0, -(-(int(t_end) - t0) // window))
    n_pix = width * height
    keep = (ts >= t0) & (ts < t0 + n_frames * window)
    k = (ts[keep] - t0) // window
    pix = stream["y"][keep].astype(np.int64) * width + stream["x"][keep].astype(np.int64)
    counts = np.bincount(k * n_pix + pix, minlength=n_frames * n_pix)
    counts = counts.reshape(n_frames, height, width)
    starts = t0 + window * np.arange(n_frames, dtype=np.int64)
    if position is not None and n_frames:
        pos = np.asarray(position(starts + window / 2), dtype=float)
    frames = []
    for i in range(n_frames):
        rp = float(pos[i]) if position is not None else None
        frames.append(EventFrame(counts[i], int(starts[i]), int(starts[i] + window),
                                 pose=None if rp is None else (rp, 0.0), route_pos=rp))
    return frames


def hot_pixel_mask(frames: Sequence[EventFrame], k_sigma: float = 6.0) -> np.ndarray:
    """Pixels whose mean count per frame exceeds ``mu + k_sigma * sigma`` of all pixel means."""
    means = np.mean([f.counts for f in frames], axis=0)
    mu, sigma = means.mean(), means.std()
    if sigma == 0:
        return means > mu
    return means > mu + k_sigma * sigma


def filter_hot_pixels(frames: Sequence[EventFrame], k_sigma: float = 6.0) -> list[EventFrame]:
    if len(frames) < 3:
        logger.warning("hot-pixel filter needs at least 3 frames, got %d; skipped", len(frames))
        return list(frames)
    hot = hot_pixel_mask(frames, k_sigma)
    if not hot.any():
        return list(frames)
    out = []
    for f in frames:
        c = f.counts.copy()
        c[hot] = 0
        out.append(replace(f, counts=c))
    return out


def filter_burst_frames(frames: Sequence[EventFrame], k_burst: float = 5.0) -> list[EventFrame]:
    """Drop frames whose total count exceeds ``k_burst`` times the median total.

    With a zero median nothing is dropped, since any activity would count as a
    burst.
    """
    if not frames:
        return []
    totals = np.array([f.total for f in frames])
    med = float(np.median(totals))
    if med == 0:
        return list(frames)
    return [f for f, n in zip(frames, totals) if n <= k_burst * med]


def filter_stationary(frames: Sequence[EventFrame], min_speed: float = 0.05) -> list[EventFrame]:
    """Drop frames that moved slower than ``min_speed`` m/s since the previous kept frame."""
    if not frames:
        return []
    if any(f.pose is None for f in frames):
        logger.warning("frames without poses; stationary filter skipped")
        return list(frames)
    kept = [frames[0]]
    for f in frames[1:]:
        prev = kept[-1]
        dist = float(np.hypot(f.pose[0] - prev.pose[0], f.pose[1] - prev.pose[1]))
        dt = (f.t_mid - prev.t_mid) * 1e-6
        if dt > 0 and dist / dt >= min_speed:
            kept.append(f)
    return kept


class FrameAccumulator:
    """Incremental :func:`accumulate_frames` for streams that arrive in chunks.

    Chunks must be fed in timestamp order; memory grows with the number of
    frames, not the number of events.
    """

    def __init__(self, width: int, height: int, window: int = FRAME_WINDOW, t0: int = 0):
        if window <= 0:
            raise ValueError("window must be positive")
        self.width, self.height, self.window, self.t0 = width, height, window, t0
        self._counts: dict[int, np.ndarray] = {}
        self.last_t: int | None = None

    def __call__(self, chunk: np.ndarray) -> None:
        self.add(chunk)

    def add(self, chunk: np.ndarray) -> None:
        if chunk.size == 0:
            return
        ts = chunk["t"].astype(np.int64)
        keep = ts >= self.t0
        ts = ts[keep]
        if ts.size == 0:
            return
        n_pix = self.width * self.height
        k = (ts - self.t0) // self.window
        pix = chunk["y"][keep].astype(np.int64) * self.width + chunk["x"][keep].astype(np.int64)
        k_lo, k_hi = int(k[0]), int(k[-1])
        counts = np.bincount((k - k_lo) * n_pix + pix, minlength=(k_hi - k_lo + 1) * n_pix)
        for i, frame in enumerate(counts.reshape(-1, n_pix)):
            if k_lo + i in self._counts:
                self._counts[k_lo + i] += frame
            elif frame.any():
                self._counts[k_lo + i] = frame
        self.last_t = int(ts[-1])

    def frames(self, t_end: int | None = None,
               position: Callable[[np.ndarray], np.ndarray] | None = None) -> list[EventFrame]:
        """Frames covering ``[t0, t_end)`` exactly as :func:`accumulate_frames` would cut them."""
        if t_end is None:
            t_end = self.last_t + 1 if self.last_t is not None else self.t0
        n_frames = max(0, -(-(int(t_end) - self.t0) // self.window))
        starts = self.t0 + self.window * np.arange(n_frames, dtype=np.int64)
        pos = None
        if position is not None and n_frames:
            pos = np.asarray(position(starts + self.window / 2), dtype=float)
        shape = (self.height, self.width)
        out = []
        for i in range(n_frames):
            c = self._counts.get(i)
            c = np.zeros(shape, np.int64) if c is None else c.reshape(shape).copy()
            rp = float(pos[i]) if pos is not None else None
            out.append(EventFrame(c, int(starts[i]), int(starts[i] + self.window),
                                  pose=None if rp is None else (rp, 0.0), route_pos=rp))
        return out
