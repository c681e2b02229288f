from evbias.vpr.frames import (
    FRAME_WINDOW,
    EventFrame,
    FrameAccumulator,
    accumulate_frames,
    filter_burst_frames,
    filter_hot_pixels,
    filter_stationary,
    hot_pixel_mask,
)
from evbias.vpr.matching import (
    PATCH_SIZE,
    TOLERANCE_M,
    MatchResult,
    NormalizedFrame,
    PRCurve,
    distance_matrix,
    match_all,
    patch_normalize,
    pr_curve,
    recall_at_1,
    sad_distance,
)
from evbias.vpr.pipeline import VprResult, VprSettings, evaluate, filter_frames, prepare_frames
