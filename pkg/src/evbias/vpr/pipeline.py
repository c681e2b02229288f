"""Reference-vs-query evaluation of two recorded traverses."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from evbias.vpr.frames import (
    FRAME_WINDOW,
    EventFrame,
    accumulate_frames,
    filter_burst_frames,
    filter_hot_pixels,
    filter_stationary,
)
from evbias.vpr.matching import (
    PATCH_SIZE,
    TOLERANCE_M,
    MatchResult,
    PRCurve,
    match_all,
    patch_normalize,
    pr_curve,
    recall_at_1,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VprSettings:
    window: int = FRAME_WINDOW
    patch: int = PATCH_SIZE
    tolerance: float = TOLERANCE_M
    hot_k_sigma: float = 6.0
    burst_k: float = 5.0
    min_speed: float = 0.05


@dataclass
class VprResult:
    recall_at_1: float | None
    matches: list[MatchResult]
    distances: np.ndarray
    pr: PRCurve | None
    n_reference: int
    n_query: int
    query_frames: list[EventFrame] = field(repr=False, default_factory=list)
    reference_frames: list[EventFrame] = field(repr=False, default_factory=list)


def prepare_frames(stream: np.ndarray, width: int, height: int, settings: VprSettings = VprSettings(),
                   position: Callable | None = None, t_end: int | None = None) -> list[EventFrame]:
    """Accumulate and filter one traverse."""
    frames = accumulate_frames(stream, width, height, settings.window, t_end=t_end, position=position)
    return filter_frames(frames, settings)


def filter_frames(frames: list[EventFrame], settings: VprSettings = VprSettings()) -> list[EventFrame]:
    """Hot-pixel, burst-frame and stationary filtering, in that order."""
    frames = filter_hot_pixels(frames, settings.hot_k_sigma)
    frames = filter_burst_frames(frames, settings.burst_k)
    return filter_stationary(frames, settings.min_speed)


def evaluate(reference: list[EventFrame], query: list[EventFrame],
             settings: VprSettings = VprSettings()) -> VprResult:
    """Match every query frame against the reference traverse.

    Without route positions on both sides the matches are returned unscored
    and recall is ``None``.
    """
    refs = [patch_normalize(f, settings.patch) for f in reference]
    qs = [patch_normalize(f, settings.patch) for f in query]
    scored = all(f.route_pos is not None for f in reference + query)
    if not scored:
        logger.warning("route positions missing; positional scoring disabled")
    matches, d = match_all(
        qs, refs,
        [f.route_pos for f in query] if scored else None,
        [f.route_pos for f in reference] if scored else None,
        settings.tolerance)
    r1 = recall_at_1(matches) if scored and matches else None
    pr = pr_curve(matches) if scored and matches else None
    return VprResult(r1, matches, d, pr, len(refs), len(qs), query, reference)
