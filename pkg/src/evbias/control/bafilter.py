"""Background-activity filter: events without a recent neighbor are noise."""

from __future__ import annotations

import numpy as np
from numba import njit

NEVER = np.iinfo(np.int64).min // 2


@njit(cache=True)
def _classify(ts, xs, ys, last, corr):
    h, w = last.shape
    signal = np.zeros(ts.shape[0], dtype=np.bool_)
    for i in range(ts.shape[0]):
        t = ts[i]
        x = xs[i]
        y = ys[i]
        y0 = max(y - 1, 0)
        y1 = min(y + 2, h)
        x0 = max(x - 1, 0)
        x1 = min(x + 2, w)
        for yy in range(y0, y1):
            for xx in range(x0, x1):
                if t - last[yy, xx] <= corr:
                    signal[i] = True
        last[y, x] = t
    return signal


class BAFilter:
    """Stateful filter that remembers the last event time of every pixel.

    An event is signal if the pixel itself or one of its 8 neighbors fired
    within ``correlation_time`` microseconds before it.
    """

    def __init__(self, width: int, height: int, correlation_time: int = 2_000):
        self.correlation_time = int(correlation_time)
        self.last = np.full((height, width), NEVER, dtype=np.int64)

    def mask(self, stream: np.ndarray) -> np.ndarray:
        if stream.size == 0:
            return np.zeros(0, dtype=bool)
        return _classify(stream["t"].astype(np.int64), stream["x"].astype(np.int64),
                         stream["y"].astype(np.int64), self.last, self.correlation_time)

    def __call__(self, stream: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m = self.mask(stream)
        return stream[m], stream[~m]


def ba_filter(stream: np.ndarray, correlation_time: int = 2_000,
              shape: tuple[int, int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Split a stream into (signal, noise); ``shape`` is (width, height)."""
    if stream.size == 0:
        return stream[:0], stream[:0]
    if shape is None:
        shape = (int(stream["x"].max()) + 1, int(stream["y"].max()) + 1)
    return BAFilter(shape[0], shape[1], correlation_time)(stream)
