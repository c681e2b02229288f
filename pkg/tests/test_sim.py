import hashlib
import math

import numpy as np
import pytest

from evbias.events import DEFAULT_BIAS
from evbias.scenes import grating_scene, lab_texture
from evbias.sim import (
    Brightness,
    ClosedLoop,
    Grating,
    MovingBar,
    MovingEdge,
    Scene,
    SimConfig,
    TexturePan,
    Uniform,
    Route,
    bias_to_behavior,
    inject_bias_change_burst,
    simulate,
)
from evbias.sim import _kernel

QUIET = SimConfig(noise_base_rate=0, leak_rate_gain=0, hot_pixel_fraction=0)


def digest(events):
    return hashlib.sha256(events.tobytes()).hexdigest()


def test_behavior_calibration():
    b = bias_to_behavior(DEFAULT_BIAS)
    assert b.t_refr == pytest.approx(100.0)
    assert b.f_cutoff == pytest.approx(300.0)
    assert b.theta_on == pytest.approx(0.25) and b.theta_off == pytest.approx(0.25)


def test_refractory_range_arithmetic():
    slow = bias_to_behavior(DEFAULT_BIAS.replace(b_refr=759.37))
    assert slow.t_refr == pytest.approx(100.0 * 10_250 / 759.37)
    assert slow.t_refr == pytest.approx(1349.8, abs=0.1)


def test_bandwidth_proportional_when_sf_not_binding():
    base = DEFAULT_BIAS.replace(b_sf=100.0)
    assert bias_to_behavior(base.replace(b_pr=88.32)).f_cutoff == pytest.approx(
        2 * bias_to_behavior(base).f_cutoff)


def test_monotone_refractory_and_threshold_direction():
    a = bias_to_behavior(DEFAULT_BIAS.replace(b_refr=2000.0))
    b = bias_to_behavior(DEFAULT_BIAS.replace(b_refr=2001.0))
    assert b.t_refr < a.t_refr
    up = bias_to_behavior(DEFAULT_BIAS.replace(b_on=DEFAULT_BIAS.b_on + 60_550))
    assert up.theta_on > 0.25


def test_behavior_rejects_non_positive():
    class Fake:
        def as_dict(self):
            return {"b_refr": -1.0}

    with pytest.raises(ValueError):
        bias_to_behavior(Fake())


@pytest.mark.parametrize("kw", [dict(dt=0), dict(burst_fraction=1.5), dict(noise_base_rate=-1),
                                dict(hot_pixel_fraction=-0.1)])
def test_simconfig_validation(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


def test_constant_scene_without_noise_is_silent():
    scene = Scene(32, 24, 200_000)
    assert simulate(scene, DEFAULT_BIAS, QUIET).events.size == 0


def test_global_step_gives_one_on_event_per_pixel():
    scene = Scene(20, 10, 100_000, brightness=Brightness((0, 50_000), (1.0, math.exp(0.5))))
    sim = QUIET
    bias = DEFAULT_BIAS.replace(b_pr=1e4, b_sf=1e4)  # fast photoreceptor
    ev = simulate(scene, bias, sim).events
    assert ev.size == 200
    assert np.all(ev["p"] == 1)
    assert len(set(zip(ev["x"].tolist(), ev["y"].tolist()))) == 200


def _count(bias, seed, noise=True):
    sim = SimConfig(seed=seed) if noise else QUIET
    return simulate(grating_scene(), bias, sim).events.size


@pytest.mark.parametrize("seed", range(3))
def test_grating_orderings(seed):
    long_refr = _count(DEFAULT_BIAS.replace(b_refr=759.37), seed)
    short_refr = _count(DEFAULT_BIAS, seed)
    assert long_refr < short_refr
    low_bw = _count(DEFAULT_BIAS.replace(b_pr=10.0, b_sf=0.25), seed)
    assert low_bw < short_refr
    high_th = _count(DEFAULT_BIAS.replace(b_on=2 * DEFAULT_BIAS.b_on, b_off=2 * DEFAULT_BIAS.b_off), seed)
    assert high_th < short_refr


def test_determinism_and_seed_sensitivity():
    a = simulate(grating_scene(duration=200_000), DEFAULT_BIAS, SimConfig(seed=3)).events
    b = simulate(grating_scene(duration=200_000), DEFAULT_BIAS, SimConfig(seed=3)).events
    c = simulate(grating_scene(duration=200_000), DEFAULT_BIAS, SimConfig(seed=4)).events
    assert digest(a) == digest(b)
    assert digest(a) != digest(c)


def test_stream_invariants_and_refractory():
    bias = DEFAULT_BIAS.replace(b_refr=2_000.0)
    scene = grating_scene(duration=300_000)
    ev = simulate(scene, bias, SimConfig(seed=1, burst_fraction=0)).events
    t = ev["t"].astype(np.int64)
    assert np.all(np.diff(t) >= 0)
    assert ev["x"].max() < scene.width and ev["y"].max() < scene.height
    t_refr = math.ceil(bias_to_behavior(bias).t_refr)
    pix = ev["y"].astype(np.int64) * scene.width + ev["x"]
    order = np.lexsort((t, pix))
    same = pix[order][1:] == pix[order][:-1]
    gaps = np.diff(t[order])[same]
    assert gaps.min() >= t_refr


def test_sink_receives_same_stream():
    chunks = []
    scene = grating_scene(duration=400_000)
    res = simulate(scene, DEFAULT_BIAS, SimConfig(seed=2), sink=chunks.append, chunk=100_000)
    full = simulate(scene, DEFAULT_BIAS, SimConfig(seed=2), chunk=100_000).events
    assert res.events.size == 0
    assert digest(np.concatenate(chunks)) == digest(full)


def test_burst_refractory_only_is_empty():
    rng = np.random.default_rng(0)
    assert inject_bias_change_burst(0, ["b_refr"], 346, 260, SimConfig(), rng).size == 0


def test_burst_full_fraction_count():
    rng = np.random.default_rng(0)
    b = inject_bias_change_burst(1000, ["b_on"], 346, 260, SimConfig(burst_fraction=1.0), rng)
    assert b.size == 89_960
    assert b["t"].min() >= 1000 and b["t"].max() <= 1000 + SimConfig().burst_duration
    assert np.all(np.diff(b["t"].astype(np.int64)) >= 0)


def test_burst_half_fraction_binomial_and_repeatable():
    sim = SimConfig(burst_fraction=0.5)
    a = inject_bias_change_burst(0, ["b_pr"], 346, 260, sim, np.random.default_rng(9))
    b = inject_bias_change_burst(0, ["b_pr"], 346, 260, sim, np.random.default_rng(9))
    sd = math.sqrt(89_960 * 0.25)
    assert abs(a.size - 44_980) <= 4 * sd
    assert digest(a) == digest(b)


def test_bias_schedule_logs_changes_and_bursts():
    scene = grating_scene(duration=400_000)
    sched = [(0, DEFAULT_BIAS), (200_000, DEFAULT_BIAS.replace(b_on=900_000.0, b_refr=5_000.0))]
    res = simulate(scene, sched, SimConfig(seed=0))
    assert {c.name for c in res.bias_log} == {"b_refr", "b_on"}
    assert res.burst_count > 0
    with pytest.raises(ValueError):
        simulate(scene, [(5, DEFAULT_BIAS)], SimConfig())


def test_closed_loop_callback_sees_windows():
    seen = []

    def cb(est, events):
        seen.append((est.window_end, est.count, events.size))
        return DEFAULT_BIAS

    res = simulate(grating_scene(duration=1_000_000), ClosedLoop(DEFAULT_BIAS, cb), SimConfig())
    assert [s[0] for s in seen] == [300_000, 600_000, 900_000]
    assert all(c == n for _, c, n in seen)
    assert len(res.rates) == 3


def test_callback_failure_aborts_with_partial_stream():
    def cb(est, events):
        raise RuntimeError("boom")

    res = simulate(grating_scene(duration=1_000_000), ClosedLoop(DEFAULT_BIAS, cb), SimConfig())
    assert res.aborted and isinstance(res.error, RuntimeError)
    assert res.events.size > 0 and res.events["t"].max() < 300_000


def test_noise_respects_refractory_and_scales_with_darkness():
    scene_hi = Scene(40, 30, 500_000, brightness=Brightness.constant(1.0))
    scene_lo = Scene(40, 30, 500_000, brightness=Brightness.constant(0.05))
    sim = SimConfig(hot_pixel_fraction=0)
    assert simulate(scene_lo, DEFAULT_BIAS, sim).events.size > \
        2 * simulate(scene_hi, DEFAULT_BIAS, sim).events.size


def test_hot_pixels_shared_by_sensor_seed():
    scene = Scene(40, 30, 200_000)
    a = simulate(scene, DEFAULT_BIAS, SimConfig(seed=1, sensor_seed=7, noise_base_rate=0)).events
    b = simulate(scene, DEFAULT_BIAS, SimConfig(seed=2, sensor_seed=7, noise_base_rate=0)).events
    hot_a = set(zip(a["x"].tolist(), a["y"].tolist()))
    hot_b = set(zip(b["x"].tolist(), b["y"].tolist()))
    assert hot_a == hot_b and len(hot_a) > 0
    assert digest(a) != digest(b)


def _layer_scene(layer, w=37, h=23):
    return Scene(w, h, 1_000_000, layers=(layer, Uniform(level=1.3)),
                 brightness=Brightness.constant(0.7))


@pytest.mark.parametrize("layer", [
    Grating(contrast=0.5, wavelength=9.0, speed=100.0, angle=0.3),
    MovingEdge(contrast=2.0, position=5.0, speed=50.0, angle=0.2),
    MovingBar(contrast=1.0, position=3.0, width=5.0, speed=40.0),
    TexturePan(lab_texture(1, 120, 30), route=Route.constant_speed(20.0, 5.0), px_per_m=4.0),
    TexturePan(lab_texture(2, 50, 20), velocity=(33.0, 7.5)),
])
def test_layerwise_target_matches_per_pixel_path(layer):
    scene = _layer_scene(layer)
    kinds, params, gphase, tables, tex = scene.compile()
    for t in (0, 123_400, 777_700):
        sh = scene.shifts(np.array([t]))[0]
        tp = np.zeros((kinds.shape[0], 4))
        _kernel.tick_params(kinds, params, tables, sh, tp)
        out = np.empty(scene.width * scene.height)
        lb = float(scene.log_brightness(t))
        _kernel.fill_target(kinds, params, tp, gphase, tables, tex, lb, math.log(scene.lum_floor),
                            scene.width, out)
        assert np.array_equal(out.reshape(scene.height, scene.width), scene.log_luminance(t))


def test_counting_argsort_is_stable_argsort():
    rng = np.random.default_rng(0)
    keys = rng.integers(0, 500, 10_000)
    assert np.array_equal(_kernel.counting_argsort(keys, 500), np.argsort(keys, kind="stable"))


def test_pooled_dead_time_and_hot_pixels_keep_full_refractory():
    bias = DEFAULT_BIAS.replace(b_refr=2_000.0)
    t_refr = bias_to_behavior(bias).t_refr
    scene = Scene(40, 30, 400_000, brightness=Brightness.constant(0.05))
    sim = SimConfig(seed=2, pixel_pooling=16, burst_fraction=0, hot_pixel_fraction=0.02)
    ev = simulate(scene, bias, sim).events
    t = ev["t"].astype(np.int64)
    pix = ev["y"].astype(np.int64) * scene.width + ev["x"]
    hot = set(np.flatnonzero(np.random.default_rng(np.random.SeedSequence(2).spawn(3)[2])
                             .random(scene.width * scene.height) < 0.02).tolist())
    order = np.lexsort((t, pix))
    same = pix[order][1:] == pix[order][:-1]
    gaps = np.diff(t[order])
    is_hot = np.isin(pix[order][1:], list(hot))
    assert gaps[same & is_hot].min() >= math.ceil(t_refr)
    pooled = gaps[same & ~is_hot]
    assert pooled.min() >= math.ceil(t_refr / 16)
    assert pooled.min() < math.ceil(t_refr)  # the pooled blocks really fire faster
    with pytest.raises(ValueError):
        SimConfig(pixel_pooling=0)


def test_pooling_one_is_the_plain_pixel():
    scene = grating_scene(duration=200_000)
    a = simulate(scene, DEFAULT_BIAS, SimConfig(seed=5)).events
    b = simulate(scene, DEFAULT_BIAS, SimConfig(seed=5, pixel_pooling=1)).events
    assert digest(a) == digest(b)
