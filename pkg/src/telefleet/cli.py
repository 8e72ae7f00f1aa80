"""Command-line entry points.

Five commands: `fleetd` (live coordination server), `teleop-client`
(scripted network client), `scenario` (simulated multi-user runs), `record`
(log inspection and replay), and `analyze` (demonstration metrics and
time-contrastive evaluation).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import yaml

from .analytics import (
    METRICS,
    TripletConfig,
    assign_experience_indices,
    experience_quartiles,
    load_demonstration,
    load_embeddings,
    metrics_rows,
    sample_triplets,
    tcn_loss,
    terminal_frame_indices,
)
from .protocol import NANOS_PER_SEC
from .recorder import read_log
from .scenario import ENV_SEED, ScenarioConfig, run_scenario


def _fail(msg: str) -> "int":
    print(f"error: {msg}", file=sys.stderr)
    return 2


# -- scenario -----------------------------------------------------------------


def scenario_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="scenario", description="Run scripted fleet scenarios.")
    sub = parser.add_subparsers(dest="cmd", required=True)
    run_p = sub.add_parser("run", help="run a scenario file")
    run_p.add_argument("file", type=Path)
    run_p.add_argument("--mode", choices=["simulated", "wall_clock"], default="simulated")
    run_p.add_argument("--out", type=Path, default=None)
    run_p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    run_p.add_argument("--traces", action="store_true", help="keep per-tick filter traces")
    args = parser.parse_args(argv)

    try:
        cfg = ScenarioConfig.from_yaml(args.file)
    except (OSError, KeyError, TypeError, ValueError, yaml.YAMLError) as e:
        return _fail(f"bad scenario file: {e}")

    if args.mode == "wall_clock":
        from .server import run_wall_clock_scenario

        report = run_wall_clock_scenario(cfg, out_dir=args.out)
    else:
        report = run_scenario(cfg, out_dir=args.out, keep_traces=args.traces)
    if args.out is not None and args.figures:
        from .figures import scenario_figures

        scenario_figures(report, args.out)
    print(report.to_json())
    return 0 if report.ok else 1


# -- record -------------------------------------------------------------------


def record_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="record", description="Inspect session logs.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_inspect = sub.add_parser("inspect", help="print header and per-topic counts")
    p_inspect.add_argument("file", type=Path)

    p_replay = sub.add_parser("replay", help="print records in merged time order")
    p_replay.add_argument("file", type=Path)
    p_replay.add_argument("--speed", type=float, default=0.0,
                          help="realtime multiplier; 0 replays without sleeping")

    p_align = sub.add_parser("align", help="latest record per topic at a query time")
    p_align.add_argument("file", type=Path)
    p_align.add_argument("--t", type=int, required=True, help="query time, ns since session start")
    p_align.add_argument("--topics", required=True, help="comma-separated topic names")

    args = parser.parse_args(argv)
    try:
        log = read_log(args.file)
    except Exception as e:
        return _fail(str(e))

    if args.cmd == "inspect":
        counts: dict[str, int] = {}
        spans: dict[str, tuple[int, int]] = {}
        for rec in log.read_merged():
            name = log.topics[rec.topic_id].name
            counts[name] = counts.get(name, 0) + 1
            lo, hi = spans.get(name, (rec.t, rec.t))
            spans[name] = (min(lo, rec.t), max(hi, rec.t))
        print(f"session_id: {log.session_id}")
        print(f"records: {log.record_count}  truncated_tail: {log.truncated}")
        for t in sorted(log.topics.values(), key=lambda d: d.topic_id):
            span = spans.get(t.name)
            span_s = f"{span[0] / NANOS_PER_SEC:.3f}..{span[1] / NANOS_PER_SEC:.3f} s" if span else "-"
            print(f"  [{t.topic_id}] {t.name:<12} kind={t.kind.name:<11} "
                  f"rate={t.declared_rate_hz:g} Hz  n={counts.get(t.name, 0):<6} span={span_s}")
        return 0

    if args.cmd == "replay":
        prev_t = None
        for rec in log.read_merged():
            if args.speed > 0 and prev_t is not None:
                time.sleep((rec.t - prev_t) / NANOS_PER_SEC / args.speed)
            prev_t = rec.t
            name = log.topics[rec.topic_id].name
            print(f"{rec.t:>15d} {name:<12} seq={rec.seq:<6} len={len(rec.payload)}")
        return 0

    # align
    try:
        ids = [log.topic_id_by_name(n) for n in args.topics.split(",")]
    except ValueError as e:
        return _fail(str(e))
    result = log.align(args.t, ids)
    for tid in ids:
        entry = result[tid]
        name = log.topics[tid].name
        if entry.record is None:
            print(f"{name:<12} absent")
        else:
            print(f"{name:<12} seq={entry.record.seq:<6} t={entry.record.t} "
                  f"staleness_ns={entry.staleness}")
    return 0


# -- analyze -------------------------------------------------------------------


def _load_demos(paths: list[Path]):
    demos = []
    for p in paths:
        demos.append(load_demonstration(p))
    assign_experience_indices(demos)
    return demos


def analyze_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="analyze", description="Demonstration analytics.")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_metrics = sub.add_parser("metrics", help="per-demo metric table (CSV)")
    p_metrics.add_argument("logs", nargs="+", type=Path)
    p_metrics.add_argument("--out", type=Path, default=None)

    p_curve = sub.add_parser("curve", help="experience quartile curve (CSV + figure)")
    p_curve.add_argument("logs", nargs="+", type=Path)
    p_curve.add_argument("--metric", choices=sorted(METRICS), default="effort")
    p_curve.add_argument("--out", type=Path, default=None,
                         help="directory for curve.csv and curve.png")

    p_tcn = sub.add_parser("tcn", help="triplet sampling and loss over an embedding file")
    p_tcn.add_argument("--embeddings", type=Path, required=True)
    p_tcn.add_argument("--config", type=Path, default=None)
    p_tcn.add_argument("--seed", type=int, default=0)
    p_tcn.add_argument("--count", type=int, default=128, help="triplets per kind")

    args = parser.parse_args(argv)

    if args.cmd == "metrics":
        try:
            rows = metrics_rows(_load_demos(args.logs))
        except Exception as e:
            return _fail(str(e))
        fields = ["session_id", "user_id", "task", "outcome",
                  "duration_s", "effort_m2", "mean_orient_rad"]
        writer = csv.DictWriter(sys.stdout, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
        if args.out:
            with open(args.out, "w", newline="") as f:
                w = csv.DictWriter(f, fieldnames=fields)
                w.writeheader()
                w.writerows(rows)
        return 0

    if args.cmd == "curve":
        try:
            demos = _load_demos(args.logs)
        except Exception as e:
            return _fail(str(e))
        series = experience_quartiles(demos, args.metric)
        fields = ["experience_index", "q1", "median", "q3", "n"]
        writer = csv.writer(sys.stdout)
        writer.writerow(fields)
        for pt in series.points:
            writer.writerow([pt.experience_index, pt.q1, pt.median, pt.q3, pt.n])
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            with open(args.out / "curve.csv", "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(fields)
                for pt in series.points:
                    w.writerow([pt.experience_index, pt.q1, pt.median, pt.q3, pt.n])
            from .figures import experience_curve_figure

            experience_curve_figure(series, args.out / "curve.png")
        return 0

    # tcn
    try:
        embeddings = load_embeddings(args.embeddings)
    except Exception as e:
        return _fail(str(e))
    if args.config is not None:
        with open(args.config) as f:
            cfg = TripletConfig.from_dict(yaml.safe_load(f) or {})
    else:
        cfg = TripletConfig()
    seed = int(os.environ.get(ENV_SEED, args.seed))
    frames = embeddings.shape[0]
    try:
        triplets = sample_triplets(frames, cfg, args.count, seed)
        loss = tcn_loss(embeddings, triplets, cfg, terminal_frame_indices(frames, cfg))
    except ValueError as e:
        return _fail(str(e))
    out = {
        "frames": frames,
        "dim": int(embeddings.shape[1]),
        "intra_triplets": sum(1 for t in triplets if t.kind == "intra_chunk"),
        "inter_triplets": sum(1 for t in triplets if t.kind == "inter_chunk"),
        "loss": loss,
        "seed": seed,
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


# -- live service ----------------------------------------------------------------


def fleetd_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fleetd", description="Live coordination server.")
    parser.add_argument("--robots", type=Path, required=True, help="fleet config file")
    parser.add_argument("--port", type=int, default=8765)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--time-limit-secs", type=float, default=None)
    parser.add_argument("--log-dir", type=Path, default=Path("logs"))
    parser.add_argument("--serve-ui", type=Path, default=None,
                        help="serve this directory (plus /ws and /fleet.json) over HTTP")
    parser.add_argument("--ui-port", type=int, default=None, help="default: port+1")
    parser.add_argument("--inject-delay-ms", type=float, default=0.0,
                        help="artificial delay added to outgoing state messages")
    args = parser.parse_args(argv)

    from .server import FleetServer, ServerConfig

    try:
        cfg = ServerConfig.from_yaml(args.robots)
        if args.time_limit_secs is not None:
            cfg.time_limit_s = args.time_limit_secs
        server = FleetServer(
            cfg,
            log_dir=args.log_dir,
            inject_delay_ms=args.inject_delay_ms,
            ui_dir=args.serve_ui,
        )
    except Exception as e:
        return _fail(f"bad fleet config: {e}")
    import asyncio

    try:
        asyncio.run(server.serve(args.host, args.port,
                                 ui_port=args.ui_port or args.port + 1))
    except KeyboardInterrupt:
        pass
    except Exception as e:
        return _fail(str(e))
    return 0


def teleop_client_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="teleop-client", description="Scripted network client.")
    parser.add_argument("--script", type=Path, required=True, help="scripted-user config file")
    parser.add_argument("--server", default="127.0.0.1:8765", help="host:port")
    parser.add_argument("--rate-hz", type=float, default=50.0)
    parser.add_argument("--timeout-s", type=float, default=120.0)
    args = parser.parse_args(argv)

    from .scenario import ScriptedUser
    from .server import run_scripted_client

    with open(args.script) as f:
        spec = ScriptedUser.from_dict(yaml.safe_load(f))
    host, _, port = args.server.partition(":")
    import asyncio

    try:
        summary = asyncio.run(run_scripted_client(
            host, int(port or 8765), spec, rate_hz=args.rate_hz, timeout_s=args.timeout_s
        ))
    except (OSError, asyncio.TimeoutError) as e:
        return _fail(f"client failed: {e}")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if summary.get("end_reason") else 1
