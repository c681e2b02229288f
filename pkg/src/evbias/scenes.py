"""Named scene presets used by the experiments and the CLI.

All route presets pan the same kind of synthetic lab texture past a reduced
86x65 sensor; they differ only in global brightness, which plays the role of
the lens aperture.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from evbias.sim.scene import Brightness, Grating, Route, Scene, TexturePan

REDUCED_SHAPE = (86, 65)

BRIGHTNESS_PRESETS = {
    "hi-bright-route": 1.0,
    "mid-bright-route": 0.3,
    "lo-bright-route": 0.08,
}
STEP_LEVELS = (1.0, 0.07, 0.12, 0.07)


def lab_texture(seed: int, length: int, height: int, blur: float = 1.0, contrast: float = 1.0,
                min_stripe: int = 3, max_stripe: int = 40, busyness_scale: float = 150.0) -> np.ndarray:
    """Synthetic corridor texture: vertical panels plus rectangular clutter.

    Panel widths and clutter density follow a smooth random "busyness"
    profile along x, so some stretches of the route produce many more events
    than others. Log reflectances are Gaussian with std ``contrast``.
    """
    rng = np.random.default_rng(seed)
    env = gaussian_filter(rng.normal(size=length), busyness_scale, mode="wrap")
    env = (env - env.min()) / (np.ptp(env) + 1e-12)
    logt = np.zeros((height, length))
    x = 0
    while x < length:
        hi = max(min_stripe + 1, int(max_stripe * (1 - env[x])) + min_stripe)
        w = int(rng.integers(min_stripe, hi))
        logt[:, x:x + w] = rng.normal(0, contrast)
        x += w
    for _ in range(length // 8):
        x0 = int(rng.integers(0, length))
        if rng.random() > env[x0]:
            continue
        y0 = int(rng.integers(-height // 2, height))
        w = int(rng.integers(2, 20))
        h = int(rng.integers(3, height))
        logt[max(y0, 0):y0 + h, x0:x0 + w] += rng.normal(0, contrast)
    if blur:
        logt = gaussian_filter(logt, blur)
    return np.exp(logt)


@dataclass(frozen=True)
class SceneSettings:
    """Parameters of a texture-route scene."""

    width: int = REDUCED_SHAPE[0]
    height: int = REDUCED_SHAPE[1]
    route_length_m: float = 80.0
    speed_mps: float = 10.0
    px_per_m: float = 30.0
    texture_seed: int = 100
    edge_blur_px: float = 1.0
    contrast: float = 1.0
    brightness: float = 1.0
    step_levels: tuple[float, ...] = ()
    step_duration_us: int = 6_000_000

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor size must be positive")
        if self.route_length_m <= 0 or self.speed_mps <= 0 or self.px_per_m <= 0:
            raise ValueError("route length, speed and px_per_m must be positive")
        if self.brightness < 0 or any(v < 0 for v in self.step_levels):
            raise ValueError("brightness must be non-negative")

    def replace(self, **changes) -> "SceneSettings":
        return replace(self, **changes)


SCENE_FIELDS = tuple(f.name for f in fields(SceneSettings))


def preset(name: str, **overrides) -> SceneSettings:
    """Settings for a named preset.

    ``brightness-steps`` runs the route through four brightness levels (three
    steps) of ``step_duration_us`` each; ``grating`` is handled by
    :func:`grating_scene` and not here.
    """
    if name in BRIGHTNESS_PRESETS:
        s = SceneSettings(brightness=BRIGHTNESS_PRESETS[name])
    elif name == "brightness-steps":
        n = len(STEP_LEVELS)
        s = SceneSettings(step_levels=STEP_LEVELS,
                          route_length_m=n * 6.0 * SceneSettings.speed_mps + 1.0, texture_seed=7)
    else:
        raise ValueError(f"unknown scene preset {name!r}; expected one of {sorted(SCENE_PRESETS)}")
    return s.replace(**overrides)


def build_scene(s: SceneSettings, name: str = "route") -> Scene:
    route = Route.constant_speed(s.route_length_m, s.speed_mps)
    length_px = int(np.ceil(s.route_length_m * s.px_per_m)) + s.width + 10
    tex = lab_texture(s.texture_seed, length_px, s.height, blur=s.edge_blur_px, contrast=s.contrast)
    if s.step_levels:
        times = tuple(i * s.step_duration_us for i in range(len(s.step_levels)))
        brightness = Brightness(times, tuple(float(v) for v in s.step_levels))
        duration = min(route.duration, len(s.step_levels) * s.step_duration_us)
    else:
        brightness = Brightness.constant(s.brightness)
        duration = route.duration
    return Scene(s.width, s.height, duration,
                 layers=(TexturePan(tex, route=route, px_per_m=s.px_per_m),),
                 brightness=brightness, route=route, name=name)


def grating_scene(width: int = 64, height: int = 48, duration: int = 500_000,
                  contrast: float = 0.6, wavelength: float = 12.0, speed: float = 240.0,
                  brightness: float = 1.0) -> Scene:
    """The standard drifting-grating scene used for the bias-response contracts."""
    return Scene(width, height, duration,
                 layers=(Grating(contrast=contrast, wavelength=wavelength, speed=speed),),
                 brightness=Brightness.constant(brightness), name="grating")


SCENE_PRESETS = tuple(BRIGHTNESS_PRESETS) + ("brightness-steps", "grating")


def scene_from_preset(name: str, **overrides) -> Scene:
    if name == "grating":
        return grating_scene(**overrides)
    return build_scene(preset(name, **overrides), name=name)
