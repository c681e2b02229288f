"""EVB1 binary and CSV event files.

EVB1 layout, all little-endian: an 18-byte header (magic ``EVB1``, u16
version, u16 width, u16 height, u64 record count) followed by 16-byte
records (u64 t, u16 x, u16 y, u8 p with 0=OFF and 1=ON, 3 zero pad bytes).
"""

from __future__ import annotations

import logging
import struct
import warnings
from pathlib import Path

import numpy as np

from evbias.events import EVENT_DTYPE, empty_stream

logger = logging.getLogger(__name__)

MAGIC = b"EVB1"
VERSION = 1
HEADER = struct.Struct("<4sHHHQ")
RECORD_DTYPE = np.dtype({"names": ["t", "x", "y", "p", "pad"],
                         "formats": ["<u8", "<u2", "<u2", "u1", "V3"],
                         "offsets": [0, 8, 10, 12, 13], "itemsize": 16})
CSV_HEADER = "t_us,x,y,p"


class EventFileError(ValueError):
    """Malformed event file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def to_records(stream: np.ndarray) -> np.ndarray:
    rec = np.zeros(stream.size, dtype=RECORD_DTYPE)
    rec["t"] = stream["t"]
    rec["x"] = stream["x"]
    rec["y"] = stream["y"]
    rec["p"] = stream["p"] > 0
    return rec


def from_records(rec: np.ndarray, base_offset: int = 0) -> np.ndarray:
    bad = np.flatnonzero(rec["p"] > 1)
    if bad.size:
        raise EventFileError(f"polarity byte {rec['p'][bad[0]]} is not 0 or 1",
                             base_offset + 16 * int(bad[0]) + 12)
    out = np.empty(rec.size, dtype=EVENT_DTYPE)
    out["t"] = rec["t"]
    out["x"] = rec["x"]
    out["y"] = rec["y"]
    out["p"] = rec["p"].astype(np.int8) * 2 - 1
    return out


def _check_order(stream: np.ndarray, on_unordered: str, base_offset: int,
                 stride: int = 16) -> np.ndarray:
    ts = stream["t"]
    back = np.flatnonzero(ts[1:] < ts[:-1])
    if not back.size:
        return stream
    if on_unordered == "sort":
        logger.warning("%d out-of-order timestamps; sorting", back.size)
        return stream[np.argsort(ts, kind="stable")]
    raise EventFileError(f"timestamp goes backwards at record {int(back[0]) + 1}",
                         base_offset + stride * (int(back[0]) + 1))


def write_events(path, stream: np.ndarray, width: int, height: int) -> None:
    with EventWriter(path, width, height) as w:
        w.write(stream)


class EventWriter:
    """Incremental EVB1 writer; the record count is patched on close."""

    def __init__(self, path, width: int, height: int):
        if not (0 < width < 65536 and 0 < height < 65536):
            raise ValueError("width and height must fit in 16 bits and be positive")
        self.path = Path(path)
        self.width, self.height = width, height
        self.count = 0
        self._last_t = -1
        self._fh = open(self.path, "wb")
        self._fh.write(HEADER.pack(MAGIC, VERSION, width, height, 0))

    def write(self, stream: np.ndarray) -> None:
        if stream.size == 0:
            return
        ts = stream["t"].astype(np.int64)
        if ts[0] < self._last_t or np.any(ts[1:] < ts[:-1]):
            raise ValueError("events must be written in timestamp order")
        if int(stream["x"].max()) >= self.width or int(stream["y"].max()) >= self.height:
            raise ValueError("event outside the sensor")
        self._fh.write(to_records(stream).tobytes())
        self.count += stream.size
        self._last_t = int(ts[-1])

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(HEADER.pack(MAGIC, VERSION, self.width, self.height, self.count))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_header(data: bytes) -> tuple[int, int, int, int]:
    """(version, width, height, count) from the first bytes of a file."""
    if len(data) < HEADER.size:
        raise EventFileError(f"file too short for the {HEADER.size}-byte header", len(data))
    magic, version, width, height, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise EventFileError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise EventFileError(f"unsupported version {version}", 4)
    if width == 0 or height == 0:
        raise EventFileError("zero sensor size", 6)
    return version, width, height, count


def read_events(path, on_unordered: str = "raise") -> tuple[np.ndarray, int, int]:
    """Read an EVB1 file; returns ``(stream, width, height)``.

    ``on_unordered`` is ``"raise"`` or ``"sort"`` (sort with a warning).
    """
    if on_unordered not in ("raise", "sort"):
        raise ValueError("on_unordered must be 'raise' or 'sort'")
    data = Path(path).read_bytes()
    _, width, height, count = read_header(data)
    need = HEADER.size + RECORD_DTYPE.itemsize * count
    if len(data) < need:
        whole = (len(data) - HEADER.size) // RECORD_DTYPE.itemsize
        raise EventFileError(f"truncated: header promises {count} records, "
                             f"file holds {whole} whole records", len(data))
    if len(data) > need:
        raise EventFileError(f"{len(data) - need} trailing bytes after the last record", need)
    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)
    stream = from_records(rec, HEADER.size)
    if count:
        bad = np.flatnonzero((stream["x"] >= width) | (stream["y"] >= height))
        if bad.size:
            raise EventFileError(f"record {int(bad[0])} lies outside the {width}x{height} sensor",
                                 HEADER.size + 16 * int(bad[0]) + 8)
    return _check_order(stream, on_unordered, HEADER.size), width, height


def write_events_csv(path, stream: np.ndarray) -> None:
    cols = np.column_stack([stream["t"].astype(np.int64), stream["x"], stream["y"], stream["p"]])
    np.savetxt(path, cols, fmt="%d", delimiter=",", header=CSV_HEADER, comments="")


def read_events_csv(path, on_unordered: str = "raise") -> np.ndarray:
    with open(path) as fh:
        first = fh.readline().strip()
        if first != CSV_HEADER:
            raise EventFileError(f"expected header {CSV_HEADER!r}, got {first!r}", 0)
        body_offset = fh.tell()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # header-only file
        cols = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    if cols.size == 0:
        return empty_stream()
    if cols.shape[1] != 4:
        raise EventFileError("expected 4 columns", body_offset)
    if np.any(cols[:, 0] < 0) or np.any(cols[:, 1:3] < 0):
        raise EventFileError("negative timestamp or coordinate", body_offset)
    if not np.all(np.isin(cols[:, 3], (-1, 1))):
        raise EventFileError("polarity must be -1 or 1", body_offset)
    out = np.empty(cols.shape[0], dtype=EVENT_DTYPE)
    out["t"], out["x"], out["y"], out["p"] = cols.T
    return _check_order(out, on_unordered, body_offset, stride=0)
