"""Single-bias feedback baselines: refractory, pixel bandwidth, pixel threshold."""

from __future__ import annotations

from dataclasses import dataclass

from evbias.control.bafilter import BAFilter
from evbias.control.fastslow import (
    ConstantController,
    Controller,
    FastSlowConfig,
    clamp_bias,
)
from evbias.events import BIAS_FLOOR, DEFAULT_BIAS, BiasConfig, RateBounds, RateEstimate


def baseline_default() -> BiasConfig:
    return DEFAULT_BIAS


class DefaultController(ConstantController):
    kind = "default"

    def __init__(self, cfg=None, initial=None):
        super().__init__(cfg, baseline_default() if initial is None else initial)


def baseline_rfpr(r: RateEstimate | float, b_refr: float, cfg: FastSlowConfig,
                  default: float = DEFAULT_BIAS.b_refr, factor: float = 0.5,
                  floor: float = BIAS_FLOOR) -> float:
    """Halve the refractory bias while the rate is above ``r_hi``, else relax back to ``default``."""
    rate = r.rate if isinstance(r, RateEstimate) else float(r)
    if rate > cfg.bounds.r_hi:
        return max(b_refr * factor, floor)
    return min(b_refr / factor, default)


class RfPrController(Controller):
    kind = "rfpr"

    def __init__(self, cfg=None, initial=DEFAULT_BIAS, factor: float = 0.5):
        if not 0.0 < factor < 1.0:
            raise ValueError("factor must lie in (0, 1)")
        super().__init__(cfg, initial)
        self.factor = factor

    def step(self, estimate, events=None):
        bias = self.state.bias
        return bias.replace(b_refr=baseline_rfpr(estimate, bias.b_refr, self.cfg,
                                                 default=self.initial.b_refr, factor=self.factor))


def baseline_pxbw(noise_rate: float, bias: BiasConfig, noise_bounds: RateBounds,
                  cfg: FastSlowConfig) -> BiasConfig:
    """Step bandwidth down when the noise rate is above its band, up when below."""
    if noise_rate > noise_bounds.r_hi:
        s = -1
    elif noise_rate < noise_bounds.r_lo:
        s = 1
    else:
        return bias
    return bias.replace(b_pr=clamp_bias(bias.b_pr + s * cfg.d_bpr),
                        b_sf=clamp_bias(bias.b_sf + s * cfg.d_bsf))


@dataclass(frozen=True)
class PxBwSettings:
    noise_bounds: RateBounds = RateBounds(1e3, 1e5)
    correlation_time: int = 2_000


class PxBwController(Controller):
    """Regulates the BA-filtered noise rate through the bandwidth biases."""

    kind = "pxbw"

    def __init__(self, cfg=None, initial=DEFAULT_BIAS, shape=(346, 260),
                 settings: PxBwSettings = PxBwSettings()):
        super().__init__(cfg, initial)
        self.settings = settings
        self.filter = BAFilter(shape[0], shape[1], settings.correlation_time)
        self.noise_rates: list[float] = []

    def step(self, estimate, events=None):
        if events is None:
            raise ValueError("the bandwidth baseline needs the window's events")
        n_noise = int((~self.filter.mask(events)).sum())
        noise_rate = n_noise / (estimate.window_len * 1e-6)
        self.noise_rates.append(noise_rate)
        return baseline_pxbw(noise_rate, self.state.bias, self.settings.noise_bounds, self.cfg)


def baseline_pxth(r: RateEstimate | float, bias: BiasConfig, cfg: FastSlowConfig) -> BiasConfig:
    """Step both thresholds up when the rate is above bounds, down when below."""
    rate = r.rate if isinstance(r, RateEstimate) else float(r)
    if rate > cfg.bounds.r_hi:
        s = 1
    elif rate < cfg.bounds.r_lo:
        s = -1
    else:
        return bias
    return bias.replace(b_on=clamp_bias(bias.b_on + s * cfg.d_bon),
                        b_off=clamp_bias(bias.b_off + s * cfg.d_boff))


class PxThController(Controller):
    kind = "pxth"

    def step(self, estimate, events=None):
        return baseline_pxth(estimate, self.state.bias, self.cfg)
