"""Plain-text exports: CSV matrices and curves, PGM frames."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from evbias.vpr.matching import MatchResult, PRCurve


def write_matrix_csv(path, d: np.ndarray) -> None:
    np.savetxt(path, d, delimiter=",", fmt="%.17g")


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_pr_csv(path, pr: PRCurve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall"])
        for row in zip(pr.threshold, pr.precision, pr.recall):
            w.writerow([repr(float(v)) for v in row])


def write_matches_csv(path, matches: Sequence[MatchResult], query_pos=None, ref_pos=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query_index", "best_ref_index", "sad", "correct", "query_pos_m", "ref_pos_m"])
        for m in matches:
            qp = "" if query_pos is None else query_pos[m.query_index]
            rp = "" if ref_pos is None else ref_pos[m.best_ref_index]
            ok = "" if m.correct is None else int(m.correct)
            w.writerow([m.query_index, m.best_ref_index, repr(m.sad), ok, qp, rp])


def write_pgm(path, image: np.ndarray) -> None:
    """8-bit binary PGM, linearly stretched from the image minimum to maximum."""
    a = np.asarray(image, dtype=float)
    lo, hi = a.min(), a.max()
    scaled = np.zeros(a.shape, np.uint8) if hi == lo else np.round(255 * (a - lo) / (hi - lo)).astype(np.uint8)
    h, w = a.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + scaled.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval > 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
