import logging

import numpy as np
import pytest

from evbias.events import make_stream
from evbias.vpr import (
    EventFrame,
    FrameAccumulator,
    MatchResult,
    VprSettings,
    accumulate_frames,
    distance_matrix,
    evaluate,
    filter_burst_frames,
    filter_hot_pixels,
    filter_stationary,
    match_all,
    patch_normalize,
    pr_curve,
    recall_at_1,
    sad_distance,
)

import oracles


def stream(t, x, y, p=None):
    t = np.asarray(t)
    return make_stream(t, x, y, np.ones(t.size, int) if p is None else p)


def random_stream(rng, n, t_max, w, h):
    t = np.sort(rng.integers(0, t_max, n))
    return stream(t, rng.integers(0, w, n), rng.integers(0, h, n), rng.choice([-1, 1], n))


def frame(counts, t=0, pos=None):
    return EventFrame(np.asarray(counts), t, t + 66_000,
                      pose=None if pos is None else (pos, 0.0), route_pos=pos)


def test_frames_are_back_to_back_and_count_events():
    s = stream([0, 65_999, 66_000, 200_000], [0, 1, 1, 2], [0, 0, 1, 1], [1, -1, 1, -1])
    fr = accumulate_frames(s, 3, 2)
    assert [(f.t_start, f.t_end) for f in fr] == [(0, 66_000), (66_000, 132_000), (132_000, 198_000),
                                                  (198_000, 264_000)]
    assert fr[0].counts.tolist() == [[1, 1, 0], [0, 0, 0]]
    assert fr[1].counts.tolist() == [[0, 0, 0], [0, 1, 0]]
    assert fr[2].total == 0 and fr[3].counts[1, 2] == 1
    assert sum(f.total for f in fr) == 4


def test_frames_empty_stream_and_bad_window():
    assert accumulate_frames(stream([], [], []), 4, 4) == []
    with pytest.raises(ValueError):
        accumulate_frames(stream([], [], []), 4, 4, window=0)


def test_frames_position_labels_midpoints():
    s = stream([10, 70_000], [0, 0], [0, 0])
    fr = accumulate_frames(s, 2, 2, position=lambda t: t / 1e6)
    assert fr[0].route_pos == pytest.approx(0.033) and fr[1].route_pos == pytest.approx(0.099)
    assert fr[0].pose == (fr[0].route_pos, 0.0)


@pytest.mark.parametrize("chunk", [1, 7, 1000, 50_000])
def test_accumulator_matches_batch(chunk):
    rng = np.random.default_rng(chunk)
    s = random_stream(rng, 20_000, 1_000_000, 11, 7)
    acc = FrameAccumulator(11, 7)
    for i in range(0, s.size, chunk):
        acc(s[i:i + chunk])
    pos = lambda t: t * 2e-6
    a = acc.frames(t_end=1_100_000, position=pos)
    b = accumulate_frames(s, 11, 7, t_end=1_100_000, position=pos)
    assert len(a) == len(b)
    for fa, fb in zip(a, b):
        assert np.array_equal(fa.counts, fb.counts)
        assert (fa.t_start, fa.t_end, fa.route_pos) == (fb.t_start, fb.t_end, fb.route_pos)


def test_hot_pixel_filter_zeros_outlier_pixels():
    rng = np.random.default_rng(0)
    frames = [frame(rng.poisson(2.0, (20, 20))) for _ in range(10)]
    for f in frames:
        f.counts[3, 4] = 200
    out = filter_hot_pixels(frames)
    assert all(f.counts[3, 4] == 0 for f in out)
    assert all(np.array_equal(np.delete(a.counts.ravel(), 64), np.delete(b.counts.ravel(), 64))
               for a, b in zip(out, frames))


def test_hot_pixel_filter_needs_three_frames(caplog):
    frames = [frame(np.ones((4, 4), int))] * 2
    with caplog.at_level(logging.WARNING):
        assert filter_hot_pixels(frames) == frames
    assert "at least 3" in caplog.text


def test_burst_filter_drops_spikes_only():
    frames = [frame(np.full((4, 4), v)) for v in (1, 1, 1, 6, 1, 5)]
    kept = filter_burst_frames(frames, k_burst=5.0)
    assert [f.total // 16 for f in kept] == [1, 1, 1, 1, 5]
    zeros = [frame(np.zeros((2, 2), int))] * 3 + [frame(np.ones((2, 2), int))]
    assert len(filter_burst_frames(zeros)) == 4


def test_stationary_filter_uses_distance_since_last_kept():
    pos = [0.0, 0.0, 0.001, 0.5, 0.5, 1.0]
    frames = [frame(np.zeros((2, 2), int), t=66_000 * i, pos=p) for i, p in enumerate(pos)]
    kept = filter_stationary(frames, min_speed=0.05)
    assert [f.route_pos for f in kept] == [0.0, 0.5, 1.0]


def test_stationary_filter_without_poses_warns(caplog):
    frames = [frame(np.zeros((2, 2), int), t=66_000 * i) for i in range(3)]
    with caplog.at_level(logging.WARNING):
        assert filter_stationary(frames) == frames
    assert "without poses" in caplog.text


def test_patch_normalize_hand_example():
    f = np.zeros((8, 8))
    f[0, 0] = 8.0
    z = patch_normalize(f).values
    # mean 1/8, variance 63/64 -> std sqrt(63)/8
    sd = np.sqrt(63) / 8
    assert z[0, 0] == pytest.approx((8 - 0.125) / sd)
    assert z[5, 5] == pytest.approx(-0.125 / sd)
    assert z.mean() == pytest.approx(0.0, abs=1e-12)
    assert z.std() == pytest.approx(1.0)


def test_patch_normalize_flat_and_edge_tiles():
    f = np.full((10, 12), 3.0)
    f[8:, 8:] = [[0, 1, 2, 3], [4, 5, 6, 7]]
    z = patch_normalize(f).values
    assert np.all(z[:8, :8] == 0)
    edge = z[8:, 8:]
    assert edge.mean() == pytest.approx(0, abs=1e-12) and edge.std() == pytest.approx(1)
    with pytest.raises(ValueError):
        patch_normalize(np.zeros(5))


def test_patch_normalize_affine_invariance():
    rng = np.random.default_rng(1)
    f = rng.poisson(3.0, (16, 24)).astype(float)
    a = patch_normalize(f).values
    b = patch_normalize(4.0 * f + 7.0).values
    assert np.allclose(a, b, atol=1e-9)


def test_patch_normalize_matches_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        f = rng.integers(0, 5, (13, 19))
        assert np.allclose(patch_normalize(f, 8).values, oracles.patch_normalize(f.tolist(), 8),
                           rtol=0, atol=1e-12)


def test_sad_metric_properties():
    rng = np.random.default_rng(3)
    a, b, c = (rng.normal(size=(8, 8)) for _ in range(3))
    assert sad_distance(a, a) == 0
    assert sad_distance(a, b) == sad_distance(b, a)
    assert sad_distance(a, c) <= sad_distance(a, b) + sad_distance(b, c) + 1e-12
    assert sad_distance(a, b) == pytest.approx(oracles.sad(a.tolist(), b.tolist()), rel=1e-12)
    with pytest.raises(ValueError):
        sad_distance(a, np.zeros((4, 4)))


def test_matching_ties_go_to_lowest_index():
    q = [np.zeros((2, 2))]
    refs = [np.ones((2, 2)), np.ones((2, 2)), np.full((2, 2), 5.0)]
    (m,), d = match_all(q, refs)
    assert m.best_ref_index == 0 and m.correct is None and d.shape == (1, 3)
    with pytest.raises(ValueError):
        match_all(q, [])


def test_matching_positional_tolerance_inclusive():
    refs = [np.full((2, 2), float(i)) for i in range(3)]
    q = [np.full((2, 2), 1.1), np.full((2, 2), 2.0)]
    res, _ = match_all(q, refs, query_pos=[15.0, 0.0], ref_pos=[0.0, 10.0, 20.0])
    assert [r.best_ref_index for r in res] == [1, 2]
    assert [r.correct for r in res] == [True, False]


def test_distance_matrix_empty_sides():
    assert distance_matrix([], [np.zeros((2, 2))]).shape == (0, 1)


def test_pr_curve_hand_example():
    res = [MatchResult(0, 0, 1.0, True), MatchResult(1, 0, 2.0, False),
           MatchResult(2, 0, 2.0, True), MatchResult(3, 0, 5.0, True)]
    pr = pr_curve(res)
    assert pr.threshold.tolist() == [1.0, 2.0, 5.0]
    assert pr.precision.tolist() == [1.0, 2 / 3, 0.75]
    assert pr.recall.tolist() == [0.25, 0.5, 0.75]
    assert recall_at_1(res) == pr.precision[-1] == 0.75


def test_pr_and_recall_need_positions():
    res = [MatchResult(0, 0, 1.0, None)]
    with pytest.raises(ValueError):
        pr_curve(res)
    with pytest.raises(ValueError):
        recall_at_1(res)
    with pytest.raises(ValueError):
        recall_at_1([])


def test_evaluate_self_match_and_missing_positions(caplog):
    rng = np.random.default_rng(4)
    frames = [frame(rng.poisson(2.0, (16, 16)), t=66_000 * i, pos=float(i)) for i in range(12)]
    res = evaluate(frames, frames)
    assert res.recall_at_1 == 1.0 and res.n_query == 12
    unlabeled = [frame(f.counts, f.t_start) for f in frames]
    with caplog.at_level(logging.WARNING):
        res = evaluate(frames, unlabeled, VprSettings())
    assert res.recall_at_1 is None and res.pr is None
    assert "route positions missing" in caplog.text
    assert [m.best_ref_index for m in res.matches] == list(range(12))


def test_burst_frames_from_a_logged_threshold_change_are_dropped():
    from evbias.events import DEFAULT_BIAS
    from evbias.sim import Brightness, Scene, SimConfig, simulate

    scene = Scene(40, 30, 1_000_000, brightness=Brightness.constant(1.0))
    sim = SimConfig(seed=1, noise_base_rate=0.1, hot_pixel_fraction=0, burst_fraction=1.0)
    t_change = 500_000
    res = simulate(scene, [(0, DEFAULT_BIAS), (t_change, DEFAULT_BIAS.replace(b_on=800_000.0))], sim)
    assert [c.t for c in res.bias_log] == [t_change]
    frames = accumulate_frames(res.events, 40, 30, t_end=scene.duration)
    kept = filter_burst_frames(frames)
    burst_end = t_change + sim.burst_duration
    overlapping = {f.t_start for f in frames if f.t_start <= burst_end and f.t_end > t_change}
    kept_starts = {f.t_start for f in kept}
    assert overlapping and not overlapping & kept_starts
    assert kept_starts == {f.t_start for f in frames} - overlapping
