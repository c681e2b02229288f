"""Experiment configuration in INI form (``key = value`` under ``[section]`` headers).

Every key is optional; missing keys keep the defaults below, which carry the
published controller constants. Unknown sections or keys are an error.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from evbias.control.baselines import PxBwSettings
from evbias.control.fastslow import FastSlowConfig
from evbias.events import DEFAULT_BIAS, BiasConfig, RateBounds
from evbias.scenes import SCENE_FIELDS, SCENE_PRESETS, SceneSettings
from evbias.sim.pixel import Calibration, SimConfig
from evbias.vpr.pipeline import VprSettings

CONTROLLER_KINDS = ("fastslow", "default", "rfpr", "pxbw", "pxth", "constant", "fast-only", "slow-only")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BaselineSettings:
    rfpr_factor: float = 0.5
    pxbw: PxBwSettings = field(default_factory=PxBwSettings)


@dataclass(frozen=True)
class ExperimentConfig:
    scene: str = "hi-bright-route"
    controller_kind: str = "fastslow"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    controller: FastSlowConfig = field(default_factory=FastSlowConfig)
    bias: BiasConfig = DEFAULT_BIAS
    sim: SimConfig = field(default_factory=SimConfig)
    scene_overrides: dict = field(default_factory=dict)
    baselines: BaselineSettings = field(default_factory=BaselineSettings)
    vpr: VprSettings = field(default_factory=VprSettings)

    def __post_init__(self):
        if self.controller_kind not in CONTROLLER_KINDS:
            raise ConfigError(f"unknown controller kind {self.controller_kind!r}")
        if self.scene not in SCENE_PRESETS:
            raise ConfigError(f"unknown scene preset {self.scene!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        bad = set(self.scene_overrides) - set(SCENE_FIELDS)
        if bad:
            raise ConfigError(f"unknown scene keys: {sorted(bad)}")

    def replace(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "none") else int(text)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# section -> key -> (parse, get, set); get/set act on ExperimentConfig
def _field(path: tuple[str, ...], parse):
    def get(cfg):
        obj = cfg
        for p in path:
            obj = getattr(obj, p)
        return obj

    def set_(cfg, value):
        def rec(obj, i):
            if i == len(path) - 1:
                return replace(obj, **{path[i]: value})
            return replace(obj, **{path[i]: rec(getattr(obj, path[i]), i + 1)})
        return rec(cfg, 0)

    return parse, get, set_


def _bounds_field(which: str):
    def get(cfg):
        return getattr(cfg.controller.bounds, which)

    def set_(cfg, value):
        b = cfg.controller.bounds
        lo, hi = (value, b.r_hi) if which == "r_lo" else (b.r_lo, value)
        return replace(cfg, controller=replace(cfg.controller, bounds=_LazyBounds(lo, hi)))

    return float, get, set_


def _pxbw_bounds_field(which: str):
    def get(cfg):
        return getattr(cfg.baselines.pxbw.noise_bounds, which)

    def set_(cfg, value):
        nb = cfg.baselines.pxbw.noise_bounds
        lo, hi = (value, nb.r_hi) if which == "r_lo" else (nb.r_lo, value)
        pxbw = replace(cfg.baselines.pxbw, noise_bounds=_LazyBounds(lo, hi))
        return replace(cfg, baselines=replace(cfg.baselines, pxbw=pxbw))

    return float, get, set_


@dataclass(frozen=True)
class _LazyBounds:
    """Bounds whose validation waits until every key has been read."""

    r_lo: float
    r_hi: float


SCHEMA: dict[str, dict] = {
    "experiment": {
        "scene": _field(("scene",), str.strip),
        "controller": _field(("controller_kind",), str.strip),
        "seeds": _field(("seeds",), _ints),
    },
    "controller": {
        "r_lo": _bounds_field("r_lo"),
        "r_hi": _bounds_field("r_hi"),
        "br_lo": _field(("controller", "br_lo"), float),
        "br_hi": _field(("controller", "br_hi"), float),
        "n_consecutive": _field(("controller", "n_consecutive"), int),
        "d_bpr": _field(("controller", "d_bpr"), float),
        "d_bsf": _field(("controller", "d_bsf"), float),
        "d_bon": _field(("controller", "d_bon"), float),
        "d_boff": _field(("controller", "d_boff"), float),
        "tau_us": _field(("controller", "tau"), int),
    },
    "bias": {name: _field(("bias", name), float) for name in ("b_refr", "b_pr", "b_sf", "b_on", "b_off")},
    "sim": {
        "dt_us": _field(("sim", "dt"), int),
        "noise_base_rate": _field(("sim", "noise_base_rate"), float),
        "shot_noise_lowlight_gain": _field(("sim", "shot_noise_lowlight_gain"), float),
        "leak_rate_gain": _field(("sim", "leak_rate_gain"), float),
        "noise_theta_exponent": _field(("sim", "noise_theta_exponent"), float),
        "photo_knee": _field(("sim", "photo_knee"), float),
        "hot_pixel_fraction": _field(("sim", "hot_pixel_fraction"), float),
        "hot_pixel_rate": _field(("sim", "hot_pixel_rate"), float),
        "sensor_seed": _field(("sim", "sensor_seed"), _opt_int),
        "pixel_pooling": _field(("sim", "pixel_pooling"), int),
        "burst_fraction": _field(("sim", "burst_fraction"), float),
        "burst_duration_us": _field(("sim", "burst_duration"), int),
        **{name: _field(("sim", "calibration", name), float)
           for name in ("c_refr", "c_bw", "k_sf", "c_th_on", "c_th_off")},
    },
    "baselines": {
        "rfpr_factor": _field(("baselines", "rfpr_factor"), float),
        "pxbw_noise_lo": _pxbw_bounds_field("r_lo"),
        "pxbw_noise_hi": _pxbw_bounds_field("r_hi"),
        "ba_correlation_us": _field(("baselines", "pxbw", "correlation_time"), int),
    },
    "vpr": {
        "window_us": _field(("vpr", "window"), int),
        "patch_px": _field(("vpr", "patch"), int),
        "tolerance_m": _field(("vpr", "tolerance"), float),
        "hot_k_sigma": _field(("vpr", "hot_k_sigma"), float),
        "burst_k": _field(("vpr", "burst_k"), float),
        "min_speed_mps": _field(("vpr", "min_speed"), float),
    },
}

_SCENE_PARSE = {
    "width": int, "height": int, "texture_seed": int, "step_duration_us": int,
    "step_levels": _floats,
}


def _finalize(cfg: ExperimentConfig) -> ExperimentConfig:
    try:
        b = cfg.controller.bounds
        controller = replace(cfg.controller, bounds=RateBounds(b.r_lo, b.r_hi))
        nb = cfg.baselines.pxbw.noise_bounds
        pxbw = replace(cfg.baselines.pxbw, noise_bounds=RateBounds(nb.r_lo, nb.r_hi))
        return replace(cfg, controller=controller,
                       baselines=replace(cfg.baselines, pxbw=pxbw))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = []
    for section in cp.sections():
        if section not in SCHEMA and section != "scene":
            unknown.append(f"[{section}]")
            continue
        known = SCENE_FIELDS if section == "scene" else SCHEMA[section]
        unknown += [f"[{section}] {k}" for k in cp[section] if k not in known]
    if unknown:
        raise ConfigError(f"{source}: unknown config keys: {', '.join(unknown)}")
    cfg = ExperimentConfig()
    try:
        for section, keys in SCHEMA.items():
            if section not in cp:
                continue
            for key, (parse, _, set_) in keys.items():
                if key in cp[section]:
                    cfg = set_(cfg, parse(cp[section][key]))
        if "scene" in cp:
            over = {}
            for k, v in cp["scene"].items():
                over[k] = _SCENE_PARSE.get(k, float)(v)
            cfg = replace(cfg, scene_overrides=over)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = _finalize(cfg)
    if "scene" in cp:
        try:
            SceneSettings(**cfg.scene_overrides)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: [scene] {exc}") from None
    return cfg


def read_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, get, _) in keys.items():
            lines.append(f"{key} = {_fmt(get(cfg))}")
        lines.append("")
    lines.append("[scene]")
    lines.append("# optional overrides of the preset: " + ", ".join(SCENE_FIELDS))
    for k, v in cfg.scene_overrides.items():
        lines.append(f"{k} = {_fmt(v)}")
    lines.append("")
    return "\n".join(lines)


def write_config(path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(format_config(cfg))


def default_config_text() -> str:
    return format_config(ExperimentConfig())
