"""Fast refractory-period control combined with N-streak-gated slow bias steps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from evbias.events import (
    BIAS_CEIL,
    BIAS_FLOOR,
    DEFAULT_BIAS,
    BiasChange,
    BiasConfig,
    RateBounds,
    RateEstimate,
)

LOW, IN, HIGH = -1, 0, 1


@dataclass(frozen=True)
class FastSlowConfig:
    """Controller constants; all currents in pA, ``tau`` in microseconds."""

    bounds: RateBounds = field(default_factory=RateBounds)
    br_lo: float = 759.37
    br_hi: float = 10_250.0
    n_consecutive: int = 5
    d_bpr: float = 1.85
    d_bsf: float = 0.23
    d_bon: float = 60_550.0
    d_boff: float = 14.84
    tau: int = 300_000

    def __post_init__(self):
        if not self.br_lo < self.br_hi:
            raise ValueError("need br_lo < br_hi")
        if self.n_consecutive < 1:
            raise ValueError("n_consecutive must be at least 1")
        if min(self.d_bpr, self.d_bsf, self.d_bon, self.d_boff) <= 0:
            raise ValueError("slow step sizes must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")


def classify(rate: float, bounds: RateBounds) -> int:
    """-1 below ``r_lo``, +1 above ``r_hi``, 0 otherwise (bounds count as inside)."""
    if rate < bounds.r_lo:
        return LOW
    if rate > bounds.r_hi:
        return HIGH
    return IN


def clamp_bias(value: float) -> float:
    return min(max(value, BIAS_FLOOR), BIAS_CEIL)


def fast_update(r: RateEstimate | float, cfg: FastSlowConfig) -> float:
    """Refractory bias from the current rate: linear between the bounds, clamped outside."""
    rate = r.rate if isinstance(r, RateEstimate) else float(r)
    lo, hi = cfg.bounds.r_lo, cfg.bounds.r_hi
    frac = (rate - lo) / (hi - lo)
    if frac <= 0.0:
        return cfg.br_hi
    if frac >= 1.0:
        return cfg.br_lo
    # same line as br_hi - slope * (rate - lo), written so both endpoints are exact
    return cfg.br_hi * (1.0 - frac) + cfg.br_lo * frac


def slow_step(bias: BiasConfig, direction: int, cfg: FastSlowConfig) -> BiasConfig:
    """One fixed slow step.

    ``direction=LOW`` (rate too low) raises the bandwidth biases and lowers
    the thresholds; ``HIGH`` does the opposite. Results are clamped to the
    device limits.
    """
    s = 1 if direction == LOW else -1
    return bias.replace(
        b_pr=clamp_bias(bias.b_pr + s * cfg.d_bpr),
        b_sf=clamp_bias(bias.b_sf + s * cfg.d_bsf),
        b_on=clamp_bias(bias.b_on - s * cfg.d_bon),
        b_off=clamp_bias(bias.b_off - s * cfg.d_boff),
    )


def slow_update(history: Sequence[RateEstimate | float], cfg: FastSlowConfig,
                bias: BiasConfig) -> BiasConfig | None:
    """Slow step if every one of the last N rates lies on the same side of the bounds.

    Returns the stepped configuration, or ``None`` when no step applies.
    """
    n = cfg.n_consecutive
    if len(history) < n:
        return None
    sides = {classify(r.rate if isinstance(r, RateEstimate) else float(r), cfg.bounds)
             for r in list(history)[-n:]}
    if sides == {LOW}:
        return slow_step(bias, LOW, cfg)
    if sides == {HIGH}:
        return slow_step(bias, HIGH, cfg)
    return None


@dataclass
class ControllerState:
    bias: BiasConfig
    low_streak: int = 0
    high_streak: int = 0
    change_log: list[BiasChange] = field(default_factory=list)

    def record(self, t: int, new: BiasConfig) -> None:
        for name in new.changed(self.bias):
            self.change_log.append(BiasChange(int(t), name, getattr(self.bias, name),
                                              getattr(new, name)))
        self.bias = new


class Controller:
    """Pure state machine: ``tick(estimate, events)`` returns the next bias.

    Subclasses implement :meth:`step`. Instances can be passed directly as
    the callback of :class:`evbias.sim.ClosedLoop`.
    """

    kind = "base"

    def __init__(self, cfg: FastSlowConfig | None = None, initial: BiasConfig = DEFAULT_BIAS):
        self.cfg = cfg or FastSlowConfig()
        self.initial = initial
        self.state = ControllerState(initial)

    def step(self, estimate: RateEstimate, events: np.ndarray | None) -> BiasConfig:
        raise NotImplementedError

    def tick(self, estimate: RateEstimate, events: np.ndarray | None = None) -> BiasConfig:
        new = self.step(estimate, events)
        self.state.record(estimate.window_end, new)
        return new

    __call__ = tick

    def replay(self, estimates: Sequence[RateEstimate]) -> list[BiasConfig]:
        return [self.tick(e) for e in estimates]


class FastSlowController(Controller):
    """Refractory bias from every rate sample plus slow bandwidth/threshold steps.

    The slow step fires when the rate has been on one side of the bounds for
    ``n_consecutive`` ticks in a row; both streak counters reset after a slow
    step or any in-bounds sample.
    """

    kind = "fastslow"
    use_fast = True
    use_slow = True

    def __init__(self, cfg=None, initial=None):
        cfg = cfg or FastSlowConfig()
        if initial is None:
            initial = DEFAULT_BIAS.replace(b_refr=cfg.br_hi)
        super().__init__(cfg, initial)

    def _streak(self, side: int) -> int | None:
        st = self.state
        if side == LOW:
            st.low_streak, st.high_streak = st.low_streak + 1, 0
            streak = st.low_streak
        elif side == HIGH:
            st.high_streak, st.low_streak = st.high_streak + 1, 0
            streak = st.high_streak
        else:
            st.low_streak = st.high_streak = 0
            return None
        if streak >= self.cfg.n_consecutive:
            st.low_streak = st.high_streak = 0
            return side
        return None

    def step(self, estimate, events=None):
        bias = self.state.bias
        if self.use_fast:
            bias = bias.replace(b_refr=fast_update(estimate, self.cfg))
        fire = self._streak(classify(estimate.rate, self.cfg.bounds))
        if self.use_slow and fire is not None:
            bias = slow_step(bias, fire, self.cfg)
        return bias


class FastOnlyController(FastSlowController):
    kind = "fast-only"
    use_slow = False


class SlowOnlyController(FastSlowController):
    kind = "slow-only"
    use_fast = False


class ConstantController(Controller):
    """Keeps the initial biases for the whole run."""

    kind = "constant"

    def step(self, estimate, events=None):
        return self.state.bias
