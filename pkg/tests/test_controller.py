import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evbias.control import (
    ConstantController,
    DefaultController,
    FastOnlyController,
    FastSlowConfig,
    FastSlowController,
    PxBwController,
    PxBwSettings,
    PxThController,
    RfPrController,
    SlowOnlyController,
    ba_filter,
    baseline_pxbw,
    baseline_pxth,
    baseline_rfpr,
    classify,
    fast_update,
    make_controller,
    slow_step,
    slow_update,
)
from evbias.events import BIAS_FLOOR, DEFAULT_BIAS, RateBounds, RateEstimate, make_stream

import oracles

CFG = FastSlowConfig()


def est(rate, k=1, tau=300_000):
    count = int(round(rate * tau / 1e6))
    return RateEstimate(rate, k * tau, tau, count)


def test_config_defaults():
    c = FastSlowConfig()
    assert (c.br_lo, c.br_hi, c.n_consecutive, c.tau) == (759.37, 10_250.0, 5, 300_000)
    assert (c.d_bpr, c.d_bsf, c.d_bon, c.d_boff) == (1.85, 0.23, 60_550.0, 14.84)
    assert c.bounds == RateBounds(5e5, 2.5e6)


@pytest.mark.parametrize("kw", [dict(br_lo=2.0, br_hi=1.0), dict(n_consecutive=0), dict(d_bpr=0.0),
                                dict(tau=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        FastSlowConfig(**kw)


def test_fast_update_examples():
    assert fast_update(5e5, CFG) == 10_250.0
    assert fast_update(2.5e6, CFG) == 759.37
    assert fast_update(1.5e6, CFG) == pytest.approx(5_504.685, rel=1e-12)
    assert fast_update(5e6, CFG) == 759.37
    assert fast_update(0.0, CFG) == 10_250.0
    assert fast_update(est(5e6), CFG) == 759.37


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e9, 1e9, allow_nan=False))
def test_fast_update_range_and_idempotence(r):
    b = fast_update(r, CFG)
    assert CFG.br_lo <= b <= CFG.br_hi
    assert fast_update(r, CFG) == b


def test_classify_ties_are_inside():
    assert classify(5e5, CFG.bounds) == 0 and classify(2.5e6, CFG.bounds) == 0
    assert classify(5e5 - 1, CFG.bounds) == -1 and classify(2.5e6 + 1, CFG.bounds) == 1


def test_slow_step_example_high():
    b = slow_update([3e6] * 5, CFG, DEFAULT_BIAS)
    assert b.b_pr == pytest.approx(42.31) and b.b_sf == pytest.approx(1.25)
    assert b.b_on == pytest.approx(823_440.0) and b.b_off == pytest.approx(513.46)
    assert b.b_refr == DEFAULT_BIAS.b_refr


def test_slow_step_low_direction_and_clamp():
    b = slow_step(DEFAULT_BIAS, -1, CFG)
    assert b.b_pr > DEFAULT_BIAS.b_pr and b.b_on < DEFAULT_BIAS.b_on
    tiny = DEFAULT_BIAS.replace(b_sf=0.2, b_off=1.0)
    assert slow_step(tiny, 1, CFG).b_sf == BIAS_FLOOR


def test_slow_update_needs_homogeneous_history():
    assert slow_update([3e6] * 4, CFG, DEFAULT_BIAS) is None
    assert slow_update([3e6] * 4 + [1e6], CFG, DEFAULT_BIAS) is None
    assert slow_update([3e6, 1e5] * 3, CFG, DEFAULT_BIAS) is None


def test_pinned_high_twelve_ticks_gives_two_slow_changes():
    c = FastSlowController()
    for k in range(1, 13):
        c.tick(est(3e6, k))
    slow_times = sorted({ch.t for ch in c.state.change_log if ch.name != "b_refr"})
    assert slow_times == [5 * 300_000, 10 * 300_000]


def test_four_violations_then_inside_resets():
    c = FastSlowController()
    for k in range(1, 5):
        c.tick(est(3e6, k))
    assert c.state.high_streak == 4
    c.tick(est(1e6, 5))
    assert (c.state.low_streak, c.state.high_streak) == (0, 0)
    assert all(ch.name == "b_refr" for ch in c.state.change_log)


def test_alternating_never_triggers():
    c = FastSlowController()
    for k in range(1, 40):
        c.tick(est(3e6 if k % 2 else 1e5, k))
    assert all(ch.name == "b_refr" for ch in c.state.change_log)


def test_in_bounds_forever_only_refractory_moves():
    c = FastSlowController()
    rng = np.random.default_rng(1)
    for k in range(1, 50):
        r = float(rng.uniform(5e5, 2.5e6))
        b = c.tick(est(r, k))
        assert b.b_refr == fast_update(r, CFG)
    assert {ch.name for ch in c.state.change_log} == {"b_refr"}


def _run_sides(sides, n):
    """Slow-step ticks reported by the controller for a sequence of sides."""
    rate = {-1: 1e5, 0: 1e6, 1: 3e6}
    c = SlowOnlyController(FastSlowConfig(n_consecutive=n))
    fired = []
    for t, s in enumerate(sides):
        before = c.state.bias
        after = c.tick(est(rate[s], t + 1))
        if after.b_pr != before.b_pr:
            fired.append((t, 1 if after.b_pr < before.b_pr else -1))
        assert not (c.state.low_streak and c.state.high_streak)
    return fired


@pytest.mark.parametrize("n", [2, 5, 7, 10])
def test_gating_matches_brute_force_sample(n):
    for length in range(1, 7):
        for seq in itertools.product((-1, 0, 1), repeat=length):
            assert _run_sides(seq, n) == oracles.slow_fires(list(seq), n)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 5e6, allow_nan=False), min_size=1, max_size=40))
def test_monotone_control_direction(rates):
    c = FastSlowController()
    for k, r in enumerate(rates, 1):
        before = c.state.bias
        after = c.tick(est(r, k))
        if r > CFG.bounds.r_hi:
            assert after.b_pr <= before.b_pr and after.b_sf <= before.b_sf
            assert after.b_on >= before.b_on and after.b_off >= before.b_off
        elif r < CFG.bounds.r_lo:
            assert after.b_pr >= before.b_pr and after.b_on <= before.b_on


def test_replay_reproduces_trajectory():
    rng = np.random.default_rng(5)
    rates = [est(float(r), k) for k, r in enumerate(rng.uniform(0, 4e6, 60), 1)]
    for kind in ("fastslow", "rfpr", "pxth", "fast-only", "slow-only", "constant", "default"):
        a = make_controller(kind).replay(rates)
        b = make_controller(kind).replay(rates)
        assert a == b


def test_fast_only_and_slow_only():
    f = FastOnlyController()
    s = SlowOnlyController()
    for k in range(1, 11):
        f.tick(est(3e6, k))
        s.tick(est(3e6, k))
    assert {c.name for c in f.state.change_log} == {"b_refr"}
    assert "b_refr" not in {c.name for c in s.state.change_log}
    assert len({c.t for c in s.state.change_log}) == 2


def test_initial_refractory_is_upper_bound():
    assert FastSlowController().state.bias.b_refr == CFG.br_hi


def test_default_and_constant_never_change():
    for c in (DefaultController(), ConstantController()):
        for k, r in enumerate([0, 1e9, 1e6], 1):
            assert c.tick(est(r, k)) == DEFAULT_BIAS
        assert c.state.change_log == []


def test_rfpr_stays_at_default_when_low():
    c = RfPrController()
    for k in range(1, 20):
        assert c.tick(est(1e6, k)).b_refr == DEFAULT_BIAS.b_refr


def test_rfpr_reaches_floor_geometrically():
    c = RfPrController()
    needed = math.ceil(math.log2(DEFAULT_BIAS.b_refr / BIAS_FLOOR))
    for k in range(1, needed + 1):
        c.tick(est(5e6, k))
    assert c.state.bias.b_refr == BIAS_FLOOR
    assert {ch.name for ch in c.state.change_log} == {"b_refr"}


def test_rfpr_oscillation_never_exceeds_default():
    c = RfPrController()
    for k in range(1, 30):
        b = c.tick(est(5e6 if k % 3 else 1e6, k))
        assert b.b_refr <= DEFAULT_BIAS.b_refr
    assert baseline_rfpr(1e6, 100.0, CFG) == 200.0


def test_rfpr_factor_is_validated_and_used():
    with pytest.raises(ValueError):
        RfPrController(factor=1.5)
    c = RfPrController(factor=0.25)
    assert c.tick(est(5e6)).b_refr == DEFAULT_BIAS.b_refr * 0.25


def test_pxbw_step_logic():
    nb = RateBounds(1e3, 1e5)
    assert baseline_pxbw(5e4, DEFAULT_BIAS, nb, CFG) == DEFAULT_BIAS
    b = DEFAULT_BIAS
    for _ in range(3):
        b = baseline_pxbw(1e6, b, nb, CFG)
    assert b.b_pr == pytest.approx(44.16 - 3 * 1.85) and b.b_sf == pytest.approx(1.48 - 3 * 0.23)
    up = baseline_pxbw(10.0, DEFAULT_BIAS, nb, CFG)
    assert up.b_pr == pytest.approx(44.16 + 1.85) and up.b_on == DEFAULT_BIAS.b_on


def test_pxbw_controller_needs_events():
    c = PxBwController(shape=(8, 8))
    with pytest.raises(ValueError):
        c.tick(est(1e6))


def test_pxbw_controller_counts_isolated_events_as_noise():
    c = PxBwController(shape=(64, 64), settings=PxBwSettings(RateBounds(1.0, 10.0)))
    rng = np.random.default_rng(0)
    ts = np.sort(rng.integers(0, 300_000, 100))
    ev = make_stream(ts, rng.integers(0, 64, 100), rng.integers(0, 64, 100), np.ones(100, int))
    b = c.tick(est(1e6), ev)
    assert c.noise_rates[0] > 10.0 and b.b_pr < DEFAULT_BIAS.b_pr


def test_pxth_pinned_high_k_steps():
    c = PxThController()
    for k in range(1, 5):
        c.tick(est(3e6, k))
    assert c.state.bias.b_on == pytest.approx(762_890 + 4 * 60_550)
    assert len({ch.t for ch in c.state.change_log}) == 4
    assert baseline_pxth(1e6, DEFAULT_BIAS, CFG) == DEFAULT_BIAS
    assert baseline_pxth(1e4, DEFAULT_BIAS, CFG).b_off == pytest.approx(498.62 - 14.84)


def test_make_controller_unknown_kind():
    with pytest.raises(ValueError):
        make_controller("pid")


def test_ba_filter_matches_brute_force():
    rng = np.random.default_rng(2)
    n = 400
    ts = np.sort(rng.integers(0, 50_000, n))
    xs, ys = rng.integers(0, 12, n), rng.integers(0, 9, n)
    s = make_stream(ts, xs, ys, np.ones(n, int))
    signal, noise = ba_filter(s, 2_000, shape=(12, 9))
    flags = oracles.ba_signal(list(zip(ts.tolist(), xs.tolist(), ys.tolist())), 2_000, 12, 9)
    assert signal.size == sum(flags) and noise.size == n - sum(flags)
    assert signal["t"].tolist() == [int(t) for t, f in zip(ts, flags) if f]


def test_ba_filter_empty():
    s, n = ba_filter(make_stream([], [], [], []))
    assert s.size == 0 and n.size == 0


def test_ba_filter_isolated_noise():
    rng = np.random.default_rng(4)
    w, h, dur = 346, 260, 2_000_000
    n = rng.poisson(w * h * 1.0 * dur / 1e6)
    ts = np.sort(rng.integers(0, dur, n))
    s = make_stream(ts, rng.integers(0, w, n), rng.integers(0, h, n), np.ones(n, int))
    _, noise = ba_filter(s, 2_000, shape=(w, h))
    assert noise.size / n >= 0.95


def test_ba_filter_moving_edge_is_signal():
    from evbias.sim import MovingEdge, Scene, SimConfig, simulate

    scene = Scene(64, 48, 300_000, layers=(MovingEdge(contrast=1.5, speed=300.0),))
    sim = SimConfig(noise_base_rate=0, hot_pixel_fraction=0, leak_rate_gain=0)
    ev = simulate(scene, DEFAULT_BIAS, sim).events
    signal, _ = ba_filter(ev, 2_000, shape=(64, 48))
    assert ev.size > 500 and signal.size / ev.size >= 0.99
