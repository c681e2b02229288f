from evbias.control.bafilter import BAFilter, ba_filter
from evbias.control.baselines import (
    DefaultController,
    PxBwController,
    PxBwSettings,
    PxThController,
    RfPrController,
    baseline_default,
    baseline_pxbw,
    baseline_pxth,
    baseline_rfpr,
)
from evbias.control.fastslow import (
    ConstantController,
    Controller,
    ControllerState,
    FastOnlyController,
    FastSlowConfig,
    FastSlowController,
    SlowOnlyController,
    classify,
    fast_update,
    slow_step,
    slow_update,
)

CONTROLLERS = {
    cls.kind: cls
    for cls in (FastSlowController, DefaultController, RfPrController, PxBwController,
                PxThController, ConstantController, FastOnlyController, SlowOnlyController)
}


def make_controller(kind: str, cfg: FastSlowConfig | None = None, shape=(346, 260), **kwargs):
    """Controller instance by kind name (``fastslow``, ``default``, ``rfpr``, ...)."""
    try:
        cls = CONTROLLERS[kind]
    except KeyError:
        raise ValueError(f"unknown controller kind {kind!r}; "
                         f"expected one of {sorted(CONTROLLERS)}") from None
    if cls is PxBwController:
        return cls(cfg, shape=shape, **kwargs)
    return cls(cfg, **kwargs)
