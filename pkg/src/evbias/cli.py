"""Command-line entry point: ``evbias {simulate,vpr-eval,compare,ablate,report,send}``.

Every command writes its effective configuration to ``experiment.ini`` in
the output directory, so a run can be repeated with ``--config`` on that
file alone.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from evbias.events import BIAS_NAMES
from evbias.experiments import (
    COMPARE_KINDS,
    StreamLoop,
    ablate,
    compare,
    make_experiment_controller,
    run_closed_loop,
    scene_for,
)
from evbias.io import (
    CONTROLLER_KINDS,
    ConfigError,
    EventFileError,
    EventWriter,
    ExperimentConfig,
    UdpReceiver,
    make_poses,
    parse_endpoint,
    read_config,
    read_events,
    read_poses,
    udp_send,
    write_config,
    write_events,
    write_poses,
)
from evbias.io.poses import pose_interpolator
from evbias.scenes import REDUCED_SHAPE, SCENE_PRESETS
from evbias.vpr import accumulate_frames, evaluate, filter_frames
from evbias.vpr.export import write_matches_csv, write_matrix_csv, write_pr_csv

logger = logging.getLogger("evbias")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_ABORT = 5

EVENTS_FILE = "events.evb"
POSES_FILE = "poses.csv"
SPEC_FILE = "experiment.ini"
SUMMARY_FILE = "vpr_summary.csv"


class SimulationAborted(RuntimeError):
    pass


def _seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def load_config(args) -> ExperimentConfig:
    cfg = read_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    changes = {}
    if getattr(args, "scene", None):
        changes["scene"] = args.scene
    if getattr(args, "controller", None):
        changes["controller_kind"] = args.controller
    if getattr(args, "seed", None):
        changes["seeds"] = args.seed
    try:
        return replace(cfg, **changes) if changes else cfg
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _prepare_out(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_bias_log(path, log) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us", "bias_name", "old_pA", "new_pA"])
        for c in log:
            w.writerow([c.t, c.name, repr(float(c.old)), repr(float(c.new))])


def write_rate_trace(path, rates, biases=None) -> None:
    """Rate per tick plus the bias values in force after that tick."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_us", "rate_hz", "count"] + ([*BIAS_NAMES] if biases is not None else []))
        for i, r in enumerate(rates):
            row = [r.window_end, repr(float(r.rate)), r.count]
            if biases is not None:
                b = biases[i].as_dict()
                row += [repr(float(b[n])) for n in BIAS_NAMES]
            w.writerow(row)


def _bias_after_ticks(initial, log, rates):
    """Bias configuration in force after each rate tick, rebuilt from the change log."""
    out, cur, j = [], initial.as_dict(), 0
    for r in rates:
        while j < len(log) and log[j].t <= r.window_end:
            cur[log[j].name] = log[j].new
            j += 1
        out.append(type(initial)(**cur))
    return out


def _simulate_one(cfg: ExperimentConfig, seed: int, out: Path) -> None:
    scene = scene_for(cfg)
    with EventWriter(out / EVENTS_FILE, scene.width, scene.height) as writer:
        run = run_closed_loop(scene, cfg.controller_kind, cfg, seed, sink=writer.write)
    write_bias_log(out / "bias_log.csv", run.bias_log)
    write_rate_trace(out / "rates.csv", run.rates,
                     _bias_after_ticks(run.controller.initial, run.bias_log, run.rates))
    if scene.route is not None:
        t = np.arange(0, scene.duration + 1, 10_000, dtype=np.int64)
        pos = scene.route_position(t)
        write_poses(out / POSES_FILE, make_poses(t, pos, np.zeros_like(pos), np.zeros_like(pos), pos))
    write_config(out / SPEC_FILE, replace(cfg, seeds=(seed,)))
    logger.info("%s seed %d: %d events, %d bias changes, %.1f s", cfg.controller_kind, seed,
                run.n_events, len(run.bias_log), run.wall)
    if run.result.aborted:
        raise SimulationAborted(f"controller failed: {run.result.error}")


def _listen(cfg: ExperimentConfig, endpoint: str, out: Path) -> None:
    host, port = parse_endpoint(endpoint)
    shape = REDUCED_SHAPE
    controller = make_experiment_controller(cfg.controller_kind, cfg, shape)
    loop = StreamLoop(controller, cfg.controller.tau)
    rx = UdpReceiver((host, port), estimator=None, on_events=loop)
    logger.info("listening on %s:%d", *rx.endpoint)
    stream = rx.run()
    width = max(shape[0], int(stream["x"].max()) + 1) if stream.size else shape[0]
    height = max(shape[1], int(stream["y"].max()) + 1) if stream.size else shape[1]
    write_events(out / EVENTS_FILE, stream, width, height)
    write_bias_log(out / "bias_log.csv", loop.bias_log)
    write_rate_trace(out / "rates.csv", loop.rates,
                     _bias_after_ticks(controller.initial, loop.bias_log, loop.rates))
    rep = rx.report
    with open(out / "gap_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["received", "malformed", "duplicates", "late", "end_seen", "missing"])
        w.writerow([rep.received, rep.malformed, rep.duplicates, rep.late, int(rep.end_seen),
                    " ".join(str(s) for s in rep.missing)])
    write_config(out / SPEC_FILE, cfg)
    logger.info("received %d events in %d packets, %d missing", stream.size, rep.received,
                len(rep.missing))


def cmd_simulate(args) -> int:
    cfg = load_config(args)
    out = _prepare_out(args.out)
    if args.udp_listen:
        _listen(cfg, args.udp_listen, out)
        return EXIT_OK
    if len(cfg.seeds) == 1:
        _simulate_one(cfg, cfg.seeds[0], out)
    else:
        for s in cfg.seeds:
            _simulate_one(cfg, s, _prepare_out(out / f"seed-{s}"))
    return EXIT_OK


def _load_traverse(path: Path, cfg: ExperimentConfig):
    stream, width, height = read_events(path / EVENTS_FILE)
    position = None
    if (path / POSES_FILE).exists():
        position = pose_interpolator(read_poses(path / POSES_FILE))
    else:
        logger.warning("no %s in %s; positional scoring disabled", POSES_FILE, path)
    t_end = int(stream["t"][-1]) + 1 if stream.size else 0
    if position is not None:
        poses = read_poses(path / POSES_FILE)
        t_end = max(t_end, int(poses["t"][-1]))
    frames = accumulate_frames(stream, width, height, cfg.vpr.window, t_end=t_end, position=position)
    return filter_frames(frames, cfg.vpr)


def _run_meta(path: Path) -> tuple[str, int]:
    spec = path / SPEC_FILE
    if spec.exists():
        c = read_config(spec)
        return c.controller_kind, c.seeds[0]
    return path.name, 0


def cmd_vpr_eval(args) -> int:
    cfg = load_config(args)
    out = _prepare_out(args.out)
    ref_dir, query_dir = Path(args.reference), Path(args.query)
    ref = _load_traverse(ref_dir, cfg)
    qry = _load_traverse(query_dir, cfg)
    res = evaluate(ref, qry, cfg.vpr)
    method, seed = _run_meta(query_dir)
    with open(out / SUMMARY_FILE, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "seed", "reference", "query", "recall_at_1", "n_reference", "n_query"])
        w.writerow([method, seed, str(ref_dir), str(query_dir),
                    "" if res.recall_at_1 is None else repr(res.recall_at_1),
                    res.n_reference, res.n_query])
    write_matches_csv(out / "matches.csv", res.matches,
                      [f.route_pos for f in qry], [f.route_pos for f in ref])
    write_matrix_csv(out / "distances.csv", res.distances)
    if res.pr is not None:
        write_pr_csv(out / "pr.csv", res.pr)
    write_config(out / SPEC_FILE, cfg)
    print("R@1 =", "n/a (no poses)" if res.recall_at_1 is None else f"{res.recall_at_1:.4f}")
    return EXIT_OK


def write_table(path, rows: list[str], columns: list[str], values: np.ndarray,
                row_label: str = "run", summary: bool = True) -> None:
    """Table with one row per run plus ``Average`` and ``Std. Dev.`` rows (population std)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([row_label] + list(columns))
        for name, row in zip(rows, values):
            w.writerow([name] + [repr(float(v)) for v in row])
        if summary:
            w.writerow(["Average"] + [repr(float(v)) for v in values.mean(axis=0)])
            w.writerow(["Std. Dev."] + [repr(float(v)) for v in values.std(axis=0)])


def cmd_compare(args) -> int:
    cfg = load_config(args)
    out = _prepare_out(args.out)
    kinds = tuple(args.kinds.split(",")) if args.kinds else COMPARE_KINDS
    bad = [k for k in kinds if k not in CONTROLLER_KINDS]
    if bad:
        raise ConfigError(f"unknown controller kinds: {bad}")
    table = compare(kinds, cfg.seeds, cfg, args.reference_scene, args.query_scene)
    values = np.array([table[k] for k in kinds]).T
    write_table(out / "recall_table.csv", [f"seed {s}" for s in cfg.seeds], list(kinds), values)
    write_config(out / SPEC_FILE, cfg)
    for k in kinds:
        print(f"{k:10s} mean R@1 {np.mean(table[k]):.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    if not getattr(args, "seed", None) and not args.config:
        cfg = replace(cfg, seeds=(0, 1, 2))
    out = _prepare_out(args.out)
    queries = tuple(args.queries.split(","))
    tab = ablate(args.kind, cfg, cfg.seeds, args.reference_scene, queries)
    write_table(out / f"ablation_{args.kind}.csv", tab.rows, tab.columns, tab.mean,
                row_label="query", summary=False)
    with open(out / f"ablation_{args.kind}_runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query", "variant", "seed", "recall_at_1"])
        for (q, c), vals in tab.values.items():
            for s, v in zip(cfg.seeds, vals):
                w.writerow([q, c, s, repr(float(v))])
    write_config(out / SPEC_FILE, cfg)
    print(f"{'query':18s}" + "".join(f"{c:>12s}" for c in tab.columns))
    for q, row in zip(tab.rows, tab.mean):
        print(f"{q:18s}" + "".join(f"{v:12.4f}" for v in row))
    return EXIT_OK


def _read_summary(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(args) -> int:
    if not args.runs:
        raise ConfigError("report needs at least one run directory")
    out = _prepare_out(args.out)
    cells: dict[tuple[int, str], float] = {}
    pr_rows, rate_rows = [], []
    for d in map(Path, args.runs):
        found = False
        if (d / SUMMARY_FILE).exists():
            found = True
            for row in _read_summary(d / SUMMARY_FILE):
                if row["recall_at_1"]:
                    cells[(int(row["seed"]), row["method"])] = float(row["recall_at_1"])
                if (d / "pr.csv").exists():
                    with open(d / "pr.csv", newline="") as fh:
                        for pr in csv.DictReader(fh):
                            pr_rows.append([row["method"], row["seed"], *pr.values()])
        if (d / "rates.csv").exists():
            found = True
            method, seed = _run_meta(d)
            with open(d / "rates.csv", newline="") as fh:
                for r in csv.DictReader(fh):
                    rate_rows.append([method, seed, r["t_us"], r["rate_hz"]])
        if not found:
            raise FileNotFoundError(f"{d} holds neither {SUMMARY_FILE} nor rates.csv")
    if cells:
        seeds = sorted({s for s, _ in cells})
        methods = sorted({m for _, m in cells}, key=lambda m: (COMPARE_KINDS + (m,)).index(m))
        missing = [(s, m) for s in seeds for m in methods if (s, m) not in cells]
        if missing:
            raise ConfigError(f"incomplete table, missing (seed, method) cells: {missing}")
        values = np.array([[cells[(s, m)] for m in methods] for s in seeds])
        write_table(out / "recall_table.csv", [f"seed {s}" for s in seeds], methods, values)
    if pr_rows:
        with open(out / "pr_curves.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "seed", "threshold", "precision", "recall"])
            w.writerows(pr_rows)
    if rate_rows:
        with open(out / "rate_traces.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "seed", "t_us", "rate_hz"])
            w.writerows(rate_rows)
    with open(out / "report_inputs.txt", "w") as fh:
        fh.write("\n".join(str(Path(d)) for d in args.runs) + "\n")
    return EXIT_OK


def cmd_send(args) -> int:
    stream, _, _ = read_events(args.events)
    host, port = parse_endpoint(args.to)
    udp_send(stream, (host, port), packets_per_second=args.rate)
    print(f"sent {stream.size} events to {host}:{port}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evbias", description="Closed-loop event camera bias control experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="experiment INI file")
        sp.add_argument("--seed", type=_seeds, help="seed or comma-separated seeds")
        sp.add_argument("--out", required=out_required, help="output directory")

    sp = sub.add_parser("simulate", parents=[verbose], help="closed-loop run: events, bias log and rate trace")
    common(sp)
    sp.add_argument("--scene", choices=SCENE_PRESETS)
    sp.add_argument("--controller", choices=CONTROLLER_KINDS)
    sp.add_argument("--udp-listen", metavar="ADDR:PORT",
                    help="drive the controller from events received over UDP instead of simulating")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("vpr-eval", parents=[verbose], help="match a query run against a reference run")
    common(sp)
    sp.add_argument("--reference", required=True, help="reference run directory")
    sp.add_argument("--query", required=True, help="query run directory")
    sp.set_defaults(func=cmd_vpr_eval)

    sp = sub.add_parser("compare", parents=[verbose], help="R@1 of several controllers on a brightness shift")
    common(sp)
    sp.add_argument("--kinds", help="comma-separated controller kinds (default: all)")
    sp.add_argument("--reference-scene", default="hi-bright-route", choices=SCENE_PRESETS)
    sp.add_argument("--query-scene", default="lo-bright-route", choices=SCENE_PRESETS)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("ablate", parents=[verbose], help="N sweep or component ablation of the fast-and-slow controller")
    sp.add_argument("kind", choices=("n-sweep", "components"))
    common(sp)
    sp.add_argument("--reference-scene", default="hi-bright-route", choices=SCENE_PRESETS)
    sp.add_argument("--queries", default="mid-bright-route,lo-bright-route",
                    help="comma-separated query scene presets")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("report", parents=[verbose], help="merge run directories into summary tables")
    sp.add_argument("runs", nargs="*", help="run directories")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("send", parents=[verbose], help="stream an event file over UDP")
    sp.add_argument("events", help="EVB1 event file")
    sp.add_argument("--to", required=True, metavar="ADDR:PORT")
    sp.add_argument("--rate", type=float, default=5_000, help="packets per second")
    sp.set_defaults(func=cmd_send)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, EventFileError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SimulationAborted as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
