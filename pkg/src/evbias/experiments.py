"""Closed-loop runs and the experiment grids built from them.

Every run is a pure function of its arguments (scene settings, controller
kind, configuration and seed), so grid cells can be farmed out to worker
processes without changing any result.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from evbias.control import (
    ConstantController,
    Controller,
    DefaultController,
    FastOnlyController,
    FastSlowController,
    PxBwController,
    PxThController,
    RfPrController,
    SlowOnlyController,
)
from evbias.events import BiasChange, RateEstimate, RateEstimator
from evbias.io.config import ExperimentConfig
from evbias.scenes import preset, scene_from_preset
from evbias.sim import ClosedLoop, SimResult, simulate
from evbias.sim.scene import Scene
from evbias.vpr import FrameAccumulator, VprResult, evaluate, filter_frames

logger = logging.getLogger(__name__)

SLOW_BIASES = ("b_pr", "b_sf", "b_on", "b_off")
COMPARE_KINDS = ("fastslow", "constant", "fast-only", "slow-only", "default", "rfpr", "pxbw", "pxth")
COMPONENT_KINDS = ("constant", "fast-only", "slow-only", "fastslow")
N_SWEEP = (2, 5, 7, 10)
SETTLE_US = 2_000_000


def make_experiment_controller(kind: str, cfg: ExperimentConfig, shape: tuple[int, int]) -> Controller:
    """Controller of ``kind`` wired with the configuration's constants and initial biases."""
    c, b = cfg.controller, cfg.bias
    if kind == "fastslow":
        return FastSlowController(c, b)
    if kind == "fast-only":
        return FastOnlyController(c, b)
    if kind == "slow-only":
        return SlowOnlyController(c, b)
    if kind == "constant":
        return ConstantController(c, b)
    if kind == "default":
        return DefaultController(c)
    if kind == "rfpr":
        return RfPrController(c, b, factor=cfg.baselines.rfpr_factor)
    if kind == "pxbw":
        return PxBwController(c, b, shape=shape, settings=cfg.baselines.pxbw)
    if kind == "pxth":
        return PxThController(c, b)
    raise ValueError(f"unknown controller kind {kind!r}")


def scene_for(cfg: ExperimentConfig, scene: str | None = None, **overrides) -> Scene:
    name = scene or cfg.scene
    return scene_from_preset(name, **{**cfg.scene_overrides, **overrides}) if name != "grating" \
        else scene_from_preset(name)


class CountingSink:
    """Counts events per chunk and forwards them to further sinks."""

    def __init__(self, *sinks: Callable[[np.ndarray], None]):
        self.sinks = sinks
        self.count = 0

    def __call__(self, chunk: np.ndarray) -> None:
        self.count += chunk.size
        for s in self.sinks:
            s(chunk)


@dataclass
class Run:
    """Outcome of one closed-loop run; ``events`` is empty when a sink consumed them."""

    kind: str
    seed: int
    scene: Scene
    result: SimResult
    controller: Controller
    n_events: int
    wall: float

    @property
    def rates(self) -> list[RateEstimate]:
        return self.result.rates

    @property
    def bias_log(self) -> list[BiasChange]:
        return self.result.bias_log


def run_closed_loop(scene: Scene, kind: str, cfg: ExperimentConfig, seed: int,
                    sink: Callable[[np.ndarray], None] | None = None,
                    sensor_seed: int | None = None) -> Run:
    """Simulate ``scene`` with a ``kind`` controller in the loop."""
    controller = make_experiment_controller(kind, cfg, (scene.width, scene.height))
    sim = replace(cfg.sim, seed=seed,
                  sensor_seed=cfg.sim.sensor_seed if sensor_seed is None else sensor_seed)
    counter = CountingSink(sink) if sink is not None else None
    t0 = time.perf_counter()
    result = simulate(scene, ClosedLoop(controller.state.bias, controller, cfg.controller.tau),
                      sim, sink=counter)
    wall = time.perf_counter() - t0
    n = counter.count if counter is not None else result.events.size
    return Run(kind, seed, scene, result, controller, n, wall)


def segment_starts(scene: Scene) -> list[int]:
    return [t for t in scene.brightness.times if t < scene.duration] or [0]


def settled_mask(rates: Sequence[RateEstimate], starts: Sequence[int], settle: int = SETTLE_US) -> np.ndarray:
    """Ticks whose whole window lies at least ``settle`` us after the latest brightness change."""
    starts = np.asarray(sorted(starts))
    ends = np.array([r.window_end for r in rates], dtype=np.int64)
    begins = ends - np.array([r.window_len for r in rates], dtype=np.int64)
    seg = np.searchsorted(starts, ends - 1, side="right") - 1
    seg_start = starts[np.clip(seg, 0, None)]
    return (seg >= 0) & (begins >= seg_start + settle)


@dataclass
class RegulationStats:
    kind: str
    seed: int
    in_band: float
    n_ticks: int
    slow_changes: int
    bias_changes: int
    burst_events: int
    n_events: int
    wall: float
    rates: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


def regulation_trial(kind: str, seed: int, cfg: ExperimentConfig = ExperimentConfig(),
                     scene: str = "brightness-steps", settle: int = SETTLE_US) -> RegulationStats:
    """In-band fraction of settled rate ticks and the slow-change tally of one run.

    ``slow_changes`` counts ticks at which any bandwidth or threshold bias
    changed; ``bias_changes`` counts the individual bias entries.
    """
    if scene == "grating":
        sc = scene_for(cfg, scene)
    else:
        base = cfg.scene_overrides.get("texture_seed", preset(scene).texture_seed)
        sc = scene_for(cfg, scene, texture_seed=base + seed)
    run = run_closed_loop(sc, kind, cfg, seed, sink=lambda chunk: None)
    rates = run.rates
    mask = settled_mask(rates, segment_starts(sc), settle)
    r = np.array([e.rate for e in rates])
    inside = (r >= cfg.controller.bounds.r_lo) & (r <= cfg.controller.bounds.r_hi)
    slow = [c for c in run.bias_log if c.name in SLOW_BIASES]
    return RegulationStats(kind, seed, float(inside[mask].mean()) if mask.any() else float("nan"),
                           int(mask.sum()), len({c.t for c in slow}), len(slow),
                           run.result.burst_count, run.n_events, run.wall, r)


@dataclass
class Traverse:
    kind: str
    scene: str
    seed: int
    frames: list = field(repr=False)
    n_events: int = 0
    slow_changes: int = 0
    wall: float = 0.0


def record_traverse(kind: str, scene: str, seed: int, cfg: ExperimentConfig, sim_seed: int,
                    texture_seed: int, sensor_seed: int) -> Traverse:
    """One drive along the route, reduced to filtered VPR frames as it is simulated."""
    sc = scene_for(cfg, scene, texture_seed=texture_seed)
    acc = FrameAccumulator(sc.width, sc.height, cfg.vpr.window)
    run = run_closed_loop(sc, kind, cfg, sim_seed, sink=acc, sensor_seed=sensor_seed)
    frames = acc.frames(sc.duration, position=sc.route_position)
    frames = filter_frames(frames, cfg.vpr)
    slow = {c.t for c in run.bias_log if c.name in SLOW_BIASES}
    return Traverse(kind, scene, seed, frames, run.n_events, len(slow), run.wall)


@dataclass
class VprTrial:
    kind: str
    seed: int
    reference_scene: str
    query_scene: str
    recall_at_1: float
    result: VprResult = field(repr=False)
    reference: Traverse = field(repr=False)
    query: Traverse = field(repr=False)


def vpr_trial(kind: str, seed: int, cfg: ExperimentConfig = ExperimentConfig(),
              reference: str = "hi-bright-route", query: str = "lo-bright-route") -> VprTrial:
    """Reference and query traverses of one route under the same controller kind.

    Both drives share the route texture and the sensor (hot pixels), but not
    the noise draws.
    """
    tex = 100 + seed
    ref = record_traverse(kind, reference, seed, cfg, 2 * seed, tex, seed)
    qry = record_traverse(kind, query, seed, cfg, 2 * seed + 1, tex, seed)
    res = evaluate(ref.frames, qry.frames, cfg.vpr)
    return VprTrial(kind, seed, reference, query, res.recall_at_1, res, ref, qry)


def worker_count() -> int:
    env = os.environ.get("EVBIAS_THREADS")
    n = os.cpu_count() or 1
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            logger.warning("ignoring non-integer EVBIAS_THREADS=%r", env)
    return n


def run_cells(fn: Callable, cells: Sequence[tuple], workers: int | None = None) -> list:
    """``[fn(*cell) for cell in cells]``, spread over a process pool when allowed."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(cells) <= 1:
        return [fn(*cell) for cell in cells]
    with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
        futures = [pool.submit(fn, *cell) for cell in cells]
        return [f.result() for f in futures]


def _r1(kind, seed, cfg, reference, query):
    return vpr_trial(kind, seed, cfg, reference, query).recall_at_1


def compare(kinds: Sequence[str] = COMPARE_KINDS, seeds: Sequence[int] = range(5),
            cfg: ExperimentConfig = ExperimentConfig(), reference: str = "hi-bright-route",
            query: str = "lo-bright-route", workers: int | None = None) -> dict[str, list[float]]:
    """R@1 per controller kind and seed on one reference/query pairing."""
    cells = [(k, s, cfg, reference, query) for k in kinds for s in seeds]
    out = run_cells(_r1, cells, workers)
    table: dict[str, list[float]] = {k: [] for k in kinds}
    for (k, *_), r in zip(cells, out):
        table[k].append(r)
    return table


@dataclass
class AblationTable:
    """Mean R@1 per (row, column) cell plus the per-seed values behind it."""

    kind: str
    rows: list[str]
    columns: list[str]
    mean: np.ndarray
    values: dict = field(repr=False, default_factory=dict)


def _ablation_cell(kind, n, seed, cfg, reference, query):
    if n is not None:
        cfg = replace(cfg, controller=replace(cfg.controller, n_consecutive=n))
    return vpr_trial(kind, seed, cfg, reference, query).recall_at_1


def ablate(what: str, cfg: ExperimentConfig = ExperimentConfig(), seeds: Sequence[int] = range(3),
           reference: str = "hi-bright-route",
           queries: Sequence[str] = ("mid-bright-route", "lo-bright-route"),
           workers: int | None = None) -> AblationTable:
    """The N sweep (fast-and-slow with N in 2, 5, 7, 10) or the component grid."""
    if what == "n-sweep":
        columns = [f"N={n}" for n in N_SWEEP]
        specs = [("fastslow", n) for n in N_SWEEP]
    elif what == "components":
        columns = list(COMPONENT_KINDS)
        specs = [(k, None) for k in COMPONENT_KINDS]
    else:
        raise ValueError(f"unknown ablation {what!r}; expected 'n-sweep' or 'components'")
    cells = [(k, n, s, cfg, reference, q) for q in queries for (k, n) in specs for s in seeds]
    out = run_cells(_ablation_cell, cells, workers)
    values: dict = {}
    for (k, n, s, _, _, q), r in zip(cells, out):
        col = columns[[spec for spec in specs].index((k, n))]
        values.setdefault((q, col), []).append(r)
    mean = np.array([[float(np.mean(values[(q, c)])) for c in columns] for q in queries])
    return AblationTable(what, list(queries), columns, mean, values)


class StreamLoop:
    """Drives a controller from a live event stream (e.g. a UDP receiver).

    Received chunks feed a :class:`RateEstimator`; each time the stream
    passes a multiple of ``tau`` the controller ticks on the window that just
    closed. The biases it returns are logged, since there is no sensor to
    apply them to.
    """

    def __init__(self, controller: Controller, tau: int, t0: int | None = None):
        self.controller = controller
        self.tau = int(tau)
        self.estimator = RateEstimator(self.tau)
        self.next_t = None if t0 is None else int(t0) + self.tau
        self.rates: list[RateEstimate] = []
        self._recent: list[np.ndarray] = []

    def __call__(self, chunk: np.ndarray) -> None:
        if chunk.size == 0:
            return
        if self.next_t is None:
            self.next_t = (int(chunk["t"][0]) // self.tau + 1) * self.tau
        self.estimator.push(chunk["t"])
        self._recent.append(chunk)
        last = int(chunk["t"][-1])
        while last >= self.next_t:
            self._tick(self.next_t)
            self.next_t += self.tau

    def _tick(self, t: int) -> None:
        est = self.estimator.estimate(t)
        recent = np.concatenate(self._recent)
        ts = recent["t"]
        window = recent[(ts >= t - self.tau) & (ts < t)]
        self._recent = [recent[ts >= t]]
        self.rates.append(est)
        self.controller.tick(est, window)

    @property
    def bias_log(self) -> list[BiasChange]:
        return self.controller.state.change_log
