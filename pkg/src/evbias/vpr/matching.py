"""Patch normalization, SAD matching and precision/recall evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import cdist

PATCH_SIZE = 8
TOLERANCE_M = 5.0


@dataclass(frozen=True)
class NormalizedFrame:
    values: np.ndarray
    patch_size: int = PATCH_SIZE


def _tile_index(shape: tuple[int, int], patch: int) -> tuple[np.ndarray, int]:
    h, w = shape
    ntx = -(-w // patch)
    nty = -(-h // patch)
    ty = np.arange(h) // patch
    tx = np.arange(w) // patch
    return (ty[:, None] * ntx + tx[None, :]).ravel(), ntx * nty


def patch_normalize(frame, patch: int = PATCH_SIZE) -> NormalizedFrame:
    """Z-score every ``patch`` x ``patch`` tile; edge tiles may be smaller.

    Accepts an :class:`EventFrame` or a 2-D array. Tiles without variation
    become zero.
    """
    counts = getattr(frame, "counts", frame)
    x = np.asarray(counts, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a 2-D frame")
    if patch < 1:
        raise ValueError("patch size must be positive")
    idx, n_tiles = _tile_index(x.shape, patch)
    flat = x.ravel()
    n = np.bincount(idx, minlength=n_tiles)
    mean = np.bincount(idx, weights=flat, minlength=n_tiles) / n
    dev = flat - mean[idx]
    std = np.sqrt(np.bincount(idx, weights=dev * dev, minlength=n_tiles) / n)
    flat_tile = std <= 1e-12 * np.maximum(np.abs(mean), 1.0)
    safe = np.where(flat_tile, 1.0, std)
    z = np.where(flat_tile[idx], 0.0, dev / safe[idx])
    return NormalizedFrame(z.reshape(x.shape), patch)


def _values(f) -> np.ndarray:
    return getattr(f, "values", f)


def sad_distance(a, b) -> float:
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


class MatchResult(NamedTuple):
    query_index: int
    best_ref_index: int
    sad: float
    correct: bool | None


def distance_matrix(queries: Sequence, references: Sequence) -> np.ndarray:
    """Q x R matrix of SAD values."""
    if not len(queries) or not len(references):
        return np.zeros((len(queries), len(references)))
    q = np.stack([np.asarray(_values(f), float).ravel() for f in queries])
    r = np.stack([np.asarray(_values(f), float).ravel() for f in references])
    return cdist(q, r, metric="cityblock")


def match_all(queries: Sequence, references: Sequence,
              query_pos: Sequence[float] | None = None,
              ref_pos: Sequence[float] | None = None,
              tolerance: float = TOLERANCE_M) -> tuple[list[MatchResult], np.ndarray]:
    """Best reference per query (lowest index on ties) and the full distance matrix.

    Without positions ``correct`` is ``None`` for every match.
    """
    if not len(references):
        raise ValueError("need at least one reference frame")
    d = distance_matrix(queries, references)
    best = np.argmin(d, axis=1) if len(queries) else np.zeros(0, int)
    scored = query_pos is not None and ref_pos is not None
    if scored:
        qp = np.asarray(query_pos, float)
        rp = np.asarray(ref_pos, float)
    out = []
    for i, j in enumerate(best):
        ok = bool(abs(qp[i] - rp[j]) <= tolerance) if scored else None
        out.append(MatchResult(i, int(j), float(d[i, j]), ok))
    return out, d


class PRCurve(NamedTuple):
    threshold: np.ndarray
    precision: np.ndarray
    recall: np.ndarray


def pr_curve(results: Sequence[MatchResult]) -> PRCurve:
    """Sweep the acceptance threshold over every observed best-match SAD.

    A match is accepted when its SAD is at most the threshold. Recall counts
    correct accepted matches over all queries, so at the largest threshold
    the precision equals recall@1.
    """
    if not results:
        raise ValueError("no match results")
    if any(r.correct is None for r in results):
        raise ValueError("precision/recall needs ground-truth positions")
    sad = np.array([r.sad for r in results])
    ok = np.array([r.correct for r in results], dtype=bool)
    order = np.argsort(sad, kind="stable")
    s, c = sad[order], ok[order]
    tp = np.cumsum(c)
    accepted = np.arange(1, s.size + 1)
    last = np.r_[s[1:] != s[:-1], True]  # last index of each distinct threshold
    return PRCurve(s[last], tp[last] / accepted[last], tp[last] / s.size)


def recall_at_1(results: Sequence[MatchResult]) -> float:
    if not results:
        raise ValueError("no match results")
    if any(r.correct is None for r in results):
        raise ValueError("recall needs ground-truth positions")
    return float(np.mean([r.correct for r in results]))
