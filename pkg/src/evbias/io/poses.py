"""Ground-truth pose files: CSV with header ``t_us,x_m,y_m,heading_rad,route_pos_m``."""

from __future__ import annotations

import numpy as np

POSE_HEADER = "t_us,x_m,y_m,heading_rad,route_pos_m"
POSE_DTYPE = np.dtype([("t", "<i8"), ("x", "<f8"), ("y", "<f8"), ("heading", "<f8"),
                       ("route_pos", "<f8")])


def make_poses(t, x, y, heading, route_pos) -> np.ndarray:
    t = np.asarray(t)
    out = np.empty(t.shape[0], dtype=POSE_DTYPE)
    out["t"], out["x"], out["y"], out["heading"], out["route_pos"] = t, x, y, heading, route_pos
    return out


def write_poses(path, poses: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(POSE_HEADER + "\n")
        for p in poses:
            fh.write(f"{int(p['t'])},{float(p['x'])!r},{float(p['y'])!r},"
                     f"{float(p['heading'])!r},{float(p['route_pos'])!r}\n")


def read_poses(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != POSE_HEADER:
            raise ValueError(f"expected pose header {POSE_HEADER!r}, got {header!r}")
        rows = [line.split(",") for line in fh if line.strip()]
    out = np.empty(len(rows), dtype=POSE_DTYPE)
    for i, r in enumerate(rows):
        if len(r) != 5:
            raise ValueError(f"pose line {i + 2}: expected 5 fields, got {len(r)}")
        out[i] = (int(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]))
    if out.size > 1 and np.any(np.diff(out["t"]) < 0):
        raise ValueError("pose timestamps are not non-decreasing")
    return out


def pose_interpolator(poses: np.ndarray):
    """``position(t)`` callable giving route position in meters, linear between samples."""
    t = poses["t"].astype(float)
    pos = poses["route_pos"]
    return lambda ts: np.interp(np.asarray(ts, dtype=float), t, pos)
