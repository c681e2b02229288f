"""Scripted luminance scenes.

A scene is a product of primitive luminance layers, scaled by a global
brightness profile. Every primitive is described by a kind code, a small
static parameter vector and a per-time shift, so the compiled pixel kernel
can evaluate it without calling back into Python.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

UNIFORM, GRATING, EDGE, BAR, TEXTURE = range(5)
N_PARAMS = 4
TABLE_SIZE = 4096


@dataclass(frozen=True)
class Route:
    """Piecewise-linear position along a 1-D route.

    ``knots_t`` are microseconds and ``knots_pos`` meters. Positions outside
    the knot range are held constant.
    """

    knots_t: tuple[int, ...]
    knots_pos: tuple[float, ...]

    def __post_init__(self):
        if len(self.knots_t) != len(self.knots_pos) or len(self.knots_t) < 2:
            raise ValueError("route needs at least two matching knots")
        if any(b <= a for a, b in zip(self.knots_t, self.knots_t[1:])):
            raise ValueError("route knot times must be strictly increasing")

    @classmethod
    def constant_speed(cls, length_m: float, speed_m_s: float, t_start: int = 0) -> "Route":
        t_end = t_start + int(round(length_m / speed_m_s * 1e6))
        return cls((t_start, t_end), (0.0, float(length_m)))

    @classmethod
    def with_pauses(cls, length_m: float, speed_m_s: float,
                    pauses: list[tuple[float, int]]) -> "Route":
        """Constant speed with stops; ``pauses`` holds (position m, duration us)."""
        ts, ps = [0], [0.0]
        t = 0
        pos = 0.0
        for at_m, dur in sorted(pauses):
            t += int(round((at_m - pos) / speed_m_s * 1e6))
            ts += [t, t + int(dur)]
            ps += [at_m, at_m]
            t += int(dur)
            pos = at_m
        t += int(round((length_m - pos) / speed_m_s * 1e6))
        ts.append(t)
        ps.append(float(length_m))
        # collapse zero-length moves (pause at the very start)
        keep_t, keep_p = [ts[0]], [ps[0]]
        for a, b in zip(ts[1:], ps[1:]):
            if a > keep_t[-1]:
                keep_t.append(a)
                keep_p.append(b)
        return cls(tuple(keep_t), tuple(keep_p))

    @property
    def duration(self) -> int:
        return self.knots_t[-1]

    def position(self, t) -> np.ndarray:
        return np.interp(np.asarray(t, dtype=np.float64), self.knots_t, self.knots_pos)


@dataclass(frozen=True)
class Uniform:
    level: float = 1.0
    kind = UNIFORM

    def __post_init__(self):
        if not self.level > 0:
            raise ValueError("uniform level must be positive")

    def params(self):
        return [math.log(self.level)]

    def shift(self, t):
        return np.zeros((len(t), 2))


@dataclass(frozen=True)
class Grating:
    """Sinusoidal grating drifting along its normal direction."""

    contrast: float = 0.5
    wavelength: float = 16.0
    speed: float = 100.0
    angle: float = 0.0
    phase: float = 0.0
    kind = GRATING

    def __post_init__(self):
        if not 0 <= self.contrast < 1:
            raise ValueError("grating contrast must lie in [0, 1)")

    def params(self):
        return [0.0, 1.0 / self.wavelength, math.cos(self.angle), math.sin(self.angle)]

    def table(self, n=TABLE_SIZE):
        u = np.arange(n) / n
        return np.log1p(self.contrast * np.sin(2 * math.pi * u + self.phase))

    def shift(self, t):
        s = np.zeros((len(t), 2))
        s[:, 0] = self.speed / self.wavelength * np.asarray(t, dtype=np.float64) * 1e-6
        return s


@dataclass(frozen=True)
class MovingEdge:
    """Luminance step: the side behind the moving edge is brighter by ``1 + contrast``."""

    contrast: float = 1.0
    position: float = 0.0
    speed: float = 100.0
    angle: float = 0.0
    kind = EDGE

    def params(self):
        return [math.log1p(self.contrast), math.cos(self.angle), math.sin(self.angle)]

    def shift(self, t):
        s = np.zeros((len(t), 2))
        s[:, 0] = self.position + self.speed * np.asarray(t) * 1e-6
        return s


@dataclass(frozen=True)
class MovingBar:
    contrast: float = 1.0
    position: float = 0.0
    width: float = 4.0
    speed: float = 100.0
    angle: float = 0.0
    kind = BAR

    def params(self):
        return [math.log1p(self.contrast), math.cos(self.angle), math.sin(self.angle),
                self.width / 2]

    def shift(self, t):
        s = np.zeros((len(t), 2))
        s[:, 0] = self.position + self.speed * np.asarray(t) * 1e-6
        return s


@dataclass(frozen=True, eq=False)
class TexturePan:
    """A positive texture image panned across the sensor with wrap-around.

    The texture moves with ``velocity`` (px/s) or, if ``route`` is given,
    its x offset follows ``route.position(t) * px_per_m``.
    """

    texture: np.ndarray
    velocity: tuple[float, float] = (100.0, 0.0)
    route: Route | None = None
    px_per_m: float = 10.0
    offset: tuple[float, float] = (0.0, 0.0)
    kind = TEXTURE

    def __post_init__(self):
        tex = np.asarray(self.texture, dtype=np.float64)
        if tex.ndim != 2 or np.any(tex <= 0):
            raise ValueError("texture must be a 2-D array of positive luminances")
        object.__setattr__(self, "texture", tex)

    def params(self):
        return [0.0, float(self.texture.shape[1]), float(self.texture.shape[0])]

    def shift(self, t):
        t = np.asarray(t, dtype=np.float64)
        s = np.empty((len(t), 2))
        if self.route is not None:
            s[:, 0] = self.offset[0] + self.route.position(t) * self.px_per_m
            s[:, 1] = self.offset[1]
        else:
            s[:, 0] = self.offset[0] + self.velocity[0] * t * 1e-6
            s[:, 1] = self.offset[1] + self.velocity[1] * t * 1e-6
        return s


@dataclass(frozen=True)
class Brightness:
    """Piecewise-constant global brightness: ``levels[i]`` holds from ``times[i]``."""

    times: tuple[int, ...] = (0,)
    levels: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if len(self.times) != len(self.levels) or not self.times or self.times[0] != 0:
            raise ValueError("brightness needs matching times/levels starting at t=0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("brightness step times must be strictly increasing")
        if any(v < 0 for v in self.levels):
            raise ValueError("brightness levels must be non-negative")

    @classmethod
    def constant(cls, level: float) -> "Brightness":
        return cls((0,), (float(level),))

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t)
        idx = np.searchsorted(np.asarray(self.times), t, side="right") - 1
        return np.asarray(self.levels, dtype=np.float64)[idx]


@dataclass(frozen=True, eq=False)
class Scene:
    width: int
    height: int
    duration: int
    layers: tuple = (Uniform(),)
    brightness: Brightness = field(default_factory=Brightness)
    route: Route | None = None
    lum_floor: float = 1e-4
    name: str = "scene"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.duration <= 0:
            raise ValueError("scene dimensions and duration must be positive")
        if not self.lum_floor > 0:
            raise ValueError("luminance floor must be positive")
        object.__setattr__(self, "layers", tuple(self.layers))

    def compile(self):
        """Static log-domain arrays consumed by the pixel kernel.

        Returns ``(kinds, params, gphase, tables, textures)``: grating profiles
        are tabulated over one period, ``gphase`` holds each pixel's static
        table position per grating and textures are stored as log luminance.
        """
        n = len(self.layers)
        kinds = np.array([layer.kind for layer in self.layers], dtype=np.int64)
        params = np.zeros((n, N_PARAMS))
        gratings = [layer for layer in self.layers if layer.kind == GRATING]
        tables = np.zeros((max(len(gratings), 1), TABLE_SIZE))
        textures = [layer.texture for layer in self.layers if layer.kind == TEXTURE]
        th = max((t.shape[0] for t in textures), default=1)
        tw = max((t.shape[1] for t in textures), default=1)
        tex = np.zeros((max(len(textures), 1), th, tw))
        gi = ti = 0
        for i, layer in enumerate(self.layers):
            p = layer.params()
            params[i, :len(p)] = p
            if layer.kind == GRATING:
                tables[gi] = layer.table()
                params[i, 0] = gi
                gi += 1
            elif layer.kind == TEXTURE:
                tex[ti, :layer.texture.shape[0], :layer.texture.shape[1]] = np.log(layer.texture)
                params[i, 0] = ti
                ti += 1
        ys, xs = np.mgrid[:self.height, :self.width]
        gphase = np.zeros((max(len(gratings), 1), self.height * self.width))
        for gi, g in enumerate(gratings):
            p = g.params()
            cycles = p[1] * (xs * p[2] + ys * p[3])
            gphase[gi] = ((cycles % 1.0) * TABLE_SIZE).ravel() % TABLE_SIZE
        return kinds, params, gphase, tables, tex

    def log_brightness(self, t) -> np.ndarray:
        b = self.brightness(t)
        with np.errstate(divide="ignore"):
            return np.where(b > 0, np.log(np.where(b > 0, b, 1.0)), -np.inf)

    def shifts(self, t) -> np.ndarray:
        """Per-time layer shifts, shape ``(len(t), n_layers, 2)``."""
        return np.stack([layer.shift(t) for layer in self.layers], axis=1)

    def log_luminance(self, t: int) -> np.ndarray:
        """Floored log luminance frame (height x width) at time ``t``."""
        from evbias.sim._kernel import log_luminance_frame

        kinds, params, gphase, tables, tex = self.compile()
        sh = self.shifts(np.array([t]))[0]
        return log_luminance_frame(self.width, self.height, kinds, params, sh, gphase, tables, tex,
                                   float(self.log_brightness(t)), math.log(self.lum_floor))

    def route_position(self, t):
        if self.route is None:
            return None
        return self.route.position(t)
