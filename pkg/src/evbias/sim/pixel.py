"""Seeded tick-based DVS pixel simulator.

Each pixel low-pass filters its log luminance, compares the result with the
level memorized at its last event, and fires an ON or OFF event when the
difference crosses the corresponding contrast threshold and the pixel is
out of its refractory period. Background noise is injected as per-pixel
Poisson events and bias changes to bandwidth or thresholds add a short burst
of spurious events.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from evbias.events import (
    DEFAULT_BIAS,
    EVENT_DTYPE,
    BiasChange,
    BiasConfig,
    RateEstimate,
    empty_stream,
)
from evbias.sim import _kernel
from evbias.sim.scene import Scene

logger = logging.getLogger(__name__)

BANDWIDTH_BIASES = ("b_pr", "b_sf")
THRESHOLD_BIASES = ("b_on", "b_off")


@dataclass(frozen=True)
class Calibration:
    """Constants of the bias-to-behavior maps.

    The defaults make the initial biases produce a 100 us refractory period,
    a 300 Hz photoreceptor cutoff and 0.25 log-unit thresholds.
    """

    c_refr: float = 100.0 * DEFAULT_BIAS.b_refr  # us * pA
    c_bw: float = 300.0 / DEFAULT_BIAS.b_pr  # Hz / pA
    k_sf: float = 40.0
    c_th_on: float = 0.25 / DEFAULT_BIAS.b_on  # log units / pA
    c_th_off: float = 0.25 / DEFAULT_BIAS.b_off


class Behavior(NamedTuple):
    t_refr: float  # us
    f_cutoff: float  # Hz
    theta_on: float
    theta_off: float


def bias_to_behavior(bias: BiasConfig, cal: Calibration = Calibration()) -> Behavior:
    """Map bias currents to refractory period, cutoff frequency and thresholds.

    Larger threshold currents mean larger contrast thresholds, so stepping a
    threshold bias up always makes the pixel less sensitive.
    """
    for name, value in bias.as_dict().items():
        if not value > 0:
            raise ValueError(f"{name} must be positive")
    return Behavior(
        t_refr=cal.c_refr / bias.b_refr,
        f_cutoff=cal.c_bw * min(bias.b_pr, cal.k_sf * bias.b_sf),
        theta_on=cal.c_th_on * bias.b_on,
        theta_off=cal.c_th_off * bias.b_off,
    )


@dataclass(frozen=True)
class SimConfig:
    """Simulation parameters.

    Noise per pixel (Hz) is ``noise_base_rate * (1 + shot_noise_lowlight_gain
    / brightness)`` split evenly between polarities, scaled by the bandwidth
    relative to the calibrated 300 Hz and by ``(0.25 / theta) **
    noise_theta_exponent``; leak adds ON events at ``leak_rate_gain *
    noise_base_rate * 0.25 / theta_on``. ``photo_knee`` limits the cutoff in
    dim light to ``f_cutoff * b / (b + photo_knee)``.

    A fraction ``hot_pixel_fraction`` of pixels also leaks ON events at
    ``hot_pixel_rate * 0.25 / theta_on`` Hz; those pixels are only held back by
    the refractory period. The hot set is drawn from ``sensor_seed`` (default
    ``seed``) so two recordings can share one sensor but not its noise.

    ``pixel_pooling`` lets one simulated pixel stand for a block of that many
    physical pixels, e.g. 16 when a 4x-downscaled array plays a full sensor.
    The block's pooled dead time is ``t_refr / pixel_pooling``; hot pixels are
    single physical pixels and keep the full ``t_refr``.
    """

    seed: int = 0
    dt: int = 100
    noise_base_rate: float = 1.0
    shot_noise_lowlight_gain: float = 20.0
    leak_rate_gain: float = 0.1
    noise_theta_exponent: float = 8.0
    photo_knee: float = 0.0
    hot_pixel_fraction: float = 0.015
    hot_pixel_rate: float = 30_000.0
    sensor_seed: int | None = None
    burst_fraction: float = 0.2
    burst_duration: int = 20_000
    pixel_pooling: int = 1
    calibration: Calibration = field(default_factory=Calibration)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for name in ("burst_fraction", "hot_pixel_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("noise_base_rate", "shot_noise_lowlight_gain", "leak_rate_gain",
                     "noise_theta_exponent", "photo_knee", "hot_pixel_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.burst_duration < 0:
            raise ValueError("burst_duration must be non-negative")
        if self.pixel_pooling < 1:
            raise ValueError("pixel_pooling must be at least 1")


@dataclass
class SimResult:
    events: np.ndarray
    bias_log: list[BiasChange]
    rates: list[RateEstimate]
    biases: list[tuple[int, BiasConfig]]
    burst_count: int = 0
    aborted: bool = False
    error: BaseException | None = None


Callback = Callable[[RateEstimate, np.ndarray], BiasConfig]


class ClosedLoop(NamedTuple):
    """Bias source that asks ``callback(estimate, window_events)`` every ``tau`` us."""

    initial: BiasConfig
    callback: Callback
    tau: int = 300_000


def _bias_schedule(source) -> list[tuple[int, BiasConfig]] | None:
    if isinstance(source, BiasConfig):
        return [(0, source)]
    if isinstance(source, ClosedLoop):
        return None
    sched = sorted(((int(t), b) for t, b in source), key=lambda tb: tb[0])
    if not sched or sched[0][0] != 0:
        raise ValueError("a bias schedule must start at t=0")
    return sched


def inject_bias_change_burst(t: int, changed: Sequence[str], width: int, height: int,
                             sim: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Spurious events following a bandwidth or threshold bias change.

    Each pixel joins the burst independently with probability
    ``burst_fraction`` and fires one event of random polarity at a time drawn
    uniformly from ``[t, t + burst_duration]``. Refractory-only changes
    produce nothing.
    """
    if not any(name in BANDWIDTH_BIASES + THRESHOLD_BIASES for name in changed):
        return empty_stream()
    n_pix = width * height
    if sim.burst_fraction >= 1.0:
        pix = np.arange(n_pix)
    else:
        pix = np.flatnonzero(rng.random(n_pix) < sim.burst_fraction)
    ts = t + rng.integers(0, sim.burst_duration + 1, size=pix.size)
    order = np.argsort(ts, kind="stable")
    out = np.empty(pix.size, dtype=EVENT_DTYPE)
    out["t"] = ts[order]
    out["x"] = pix[order] % width
    out["y"] = pix[order] // width
    out["p"] = np.where(rng.random(pix.size) < 0.5, 1, -1)
    return out


class Simulator:
    """Stateful pixel array; ``simulate`` is the usual entry point."""

    buffer_events = 1 << 20

    def __init__(self, scene: Scene, sim: SimConfig, bias: BiasConfig):
        self.scene = scene
        self.sim = sim
        self.bias = bias
        self.behavior = bias_to_behavior(bias, sim.calibration)
        self._kinds, self._params, self._gphase, self._tables, self._tex = scene.compile()
        self._log_floor = math.log(scene.lum_floor)
        n_pix = scene.width * scene.height
        self.v_lp = scene.log_luminance(0).ravel().copy()
        self.v_mem = self.v_lp.copy()
        self.refr_until = np.zeros(n_pix, dtype=np.int64)
        seeds = np.random.SeedSequence(sim.seed).spawn(2)
        self.noise_rng = np.random.default_rng(seeds[0])
        self.burst_rng = np.random.default_rng(seeds[1])
        sensor_seed = sim.seed if sim.sensor_seed is None else sim.sensor_seed
        sensor_rng = np.random.default_rng(np.random.SeedSequence(sensor_seed).spawn(3)[2])
        self.hot_pixels = np.flatnonzero(sensor_rng.random(n_pix) < sim.hot_pixel_fraction)
        cap = self.buffer_events + n_pix
        self._out = (np.empty(cap, np.int64), np.empty(cap, np.uint16),
                     np.empty(cap, np.uint16), np.empty(cap, np.int8))
        self.t = 0

    def set_bias(self, bias: BiasConfig) -> list[str]:
        changed = bias.changed(self.bias)
        self.bias = bias
        self.behavior = bias_to_behavior(bias, self.sim.calibration)
        return changed

    def _noise(self, tick_t: np.ndarray, brightness: np.ndarray, f_eff: np.ndarray):
        sim = self.sim
        beh = self.behavior
        n_pix = self.v_lp.size
        rng = self.noise_rng
        ts, pix, pol = [], [], []
        if sim.noise_base_rate > 0:
            b = np.maximum(brightness, self.scene.lum_floor)
            shot = sim.noise_base_rate * (1.0 + sim.shot_noise_lowlight_gain / b) * (f_eff / 300.0)
            lam_on = 0.5 * shot * (0.25 / beh.theta_on) ** sim.noise_theta_exponent
            lam_on = lam_on + sim.leak_rate_gain * sim.noise_base_rate * 0.25 / beh.theta_on
            lam_off = 0.5 * shot * (0.25 / beh.theta_off) ** sim.noise_theta_exponent
            scale = n_pix * sim.dt * 1e-6
            n_on = rng.poisson(lam_on * scale)
            n_off = rng.poisson(lam_off * scale)
            counts = n_on + n_off
            total = int(counts.sum())
            ts.append(np.repeat(tick_t, counts) + rng.integers(0, sim.dt, size=total))
            pol.append(np.repeat(np.tile(np.array([1, -1], np.int8), tick_t.size),
                                 np.column_stack([n_on, n_off]).ravel()))
            pix.append(rng.integers(0, n_pix, size=total))
        hot = self.hot_pixels
        if hot.size and sim.hot_pixel_rate > 0:
            lam = sim.hot_pixel_rate * 0.25 / beh.theta_on * sim.dt * 1e-6
            counts = rng.poisson(lam, size=(tick_t.size, hot.size))
            total = int(counts.sum())
            ts.append(np.repeat(np.repeat(tick_t, hot.size), counts.ravel())
                      + rng.integers(0, sim.dt, size=total))
            pix.append(np.repeat(np.tile(hot, tick_t.size), counts.ravel()))
            pol.append(np.ones(total, np.int8))
        if not ts:
            z = np.zeros(0, np.int64)
            return z, z, np.zeros(0, np.int8)
        ts, pix, pol = np.concatenate(ts), np.concatenate(pix), np.concatenate(pol)
        span = int(tick_t[-1] - tick_t[0]) + sim.dt
        order = _kernel.counting_argsort(ts - tick_t[0], span)
        return ts[order], pix[order], pol[order]

    def _refr_len(self, t_refr: float) -> np.ndarray:
        out = np.full(self.v_lp.size, int(math.ceil(t_refr / self.sim.pixel_pooling)), np.int64)
        out[self.hot_pixels] = int(math.ceil(t_refr))
        return out

    def run(self, t_end: int) -> np.ndarray:
        """Advance from the current time to ``t_end`` (exclusive) with the current bias."""
        sim = self.sim
        t_end = min(int(t_end), self.scene.duration)
        first = -(-self.t // sim.dt) * sim.dt
        tick_t = np.arange(first, t_end, sim.dt, dtype=np.int64)
        self.t = t_end
        if tick_t.size == 0:
            return empty_stream()
        beh = self.behavior
        brightness = self.scene.brightness(tick_t)
        if sim.photo_knee > 0:
            f_eff = beh.f_cutoff * brightness / (brightness + sim.photo_knee)
        else:
            f_eff = np.full(tick_t.size, beh.f_cutoff)
        alpha = 1.0 - np.exp(-2.0 * math.pi * f_eff * sim.dt * 1e-6)
        shifts = self.scene.shifts(tick_t)
        log_b = self.scene.log_brightness(tick_t)
        noise_t, noise_pix, noise_p = self._noise(tick_t, brightness, f_eff)
        refr_len = self._refr_len(beh.t_refr)
        out_t, out_x, out_y, out_p = self._out
        pieces = []
        k = 0
        noise_pos = 0
        while k < tick_t.size:
            done, n, noise_pos = _kernel.run_ticks(
                tick_t[k:], sim.dt, alpha[k:], log_b[k:], shifts[k:],
                self._kinds, self._params, self._gphase, self._tables, self._tex,
                self._log_floor, self.scene.width,
                beh.theta_on, beh.theta_off, refr_len,
                self.v_lp, self.v_mem, self.refr_until,
                noise_t, noise_pix, noise_p, noise_pos,
                out_t, out_x, out_y, out_p)
            chunk = np.empty(n, dtype=EVENT_DTYPE)
            chunk["t"] = out_t[:n]
            chunk["x"] = out_x[:n]
            chunk["y"] = out_y[:n]
            chunk["p"] = out_p[:n]
            pieces.append(chunk)
            if done == 0:
                raise RuntimeError("output buffer too small for a single tick")
            k += done
        return pieces[0] if len(pieces) == 1 else np.concatenate(pieces)


def _merge(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if b.size == 0:
        return a
    if a.size == 0:
        return b
    both = np.concatenate([a, b])
    return both[np.argsort(both["t"], kind="stable")]


def simulate(scene: Scene, bias_source, sim: SimConfig = SimConfig(),
             sink: Callable[[np.ndarray], None] | None = None,
             chunk: int = 300_000) -> SimResult:
    """Run the pixel array over the whole scene.

    ``bias_source`` is a fixed :class:`BiasConfig`, a list of ``(t_us,
    BiasConfig)`` pairs starting at 0, or a :class:`ClosedLoop`. In closed-loop
    mode the callback sees the rate over ``[T - tau, T)`` and the events of that
    window at every ``T = k * tau`` and its result applies from ``T`` on.

    Events go to ``sink`` chunk by chunk when given (and are not kept),
    otherwise they are returned in ``SimResult.events``. Noise is drawn per
    segment, so the stream for a given seed also depends on ``chunk`` (and on
    ``tau`` in closed loop); with or without a sink it is the same. A failing callback
    stops the run; the partial result is returned with ``aborted`` set.
    """
    schedule = _bias_schedule(bias_source)
    initial = bias_source.initial if isinstance(bias_source, ClosedLoop) else schedule[0][1]
    simulator = Simulator(scene, sim, initial)
    result = SimResult(empty_stream(), [], [], [(0, initial)])
    kept: list[np.ndarray] = []
    pending = empty_stream()

    if isinstance(bias_source, ClosedLoop):
        step = int(bias_source.tau)
        boundaries = list(range(step, scene.duration, step)) + [scene.duration]
    else:
        change_times = [t for t, _ in schedule[1:] if t < scene.duration]
        grid = list(range(chunk, scene.duration, chunk))
        boundaries = sorted(set(grid + change_times + [scene.duration]))
        changes = dict((t, b) for t, b in schedule[1:])

    def emit(events):
        if sink is not None:
            sink(events)
        else:
            kept.append(events)

    def apply(t, bias):
        nonlocal pending
        changed = simulator.set_bias(bias)
        if not changed:
            return
        for name in changed:
            result.bias_log.append(BiasChange(t, name, getattr(result.biases[-1][1], name),
                                              getattr(bias, name)))
        result.biases.append((t, bias))
        burst = inject_bias_change_burst(t, changed, scene.width, scene.height, sim,
                                         simulator.burst_rng)
        result.burst_count += burst.size
        pending = _merge(pending, burst)

    for boundary in boundaries:
        events = simulator.run(boundary)
        split = int(np.searchsorted(pending["t"], boundary, side="left"))
        events = _merge(events, pending[:split])
        pending = pending[split:]
        emit(events)
        if boundary >= scene.duration:
            break
        if isinstance(bias_source, ClosedLoop):
            est = RateEstimate.from_count(events.size, boundary, bias_source.tau)
            result.rates.append(est)
            try:
                new_bias = bias_source.callback(est, events)
            except Exception as exc:  # noqa: BLE001 - any controller failure aborts the run
                logger.error("controller callback failed at t=%d us: %s", boundary, exc)
                result.aborted = True
                result.error = exc
                break
            apply(boundary, new_bias)
        elif boundary in changes:
            apply(boundary, changes[boundary])

    if sink is None:
        result.events = np.concatenate(kept) if kept else empty_stream()
    return result
