"""Command-line entry point.

Subcommands: simulate, annotate, eval, latency, serve-mock, interactive,
gen-scenario.  Exit codes: 0 success, 1 validation or configuration
error, 2 I/O or protocol error.  Diagnostics go to stderr; machine output
goes to files or stdout only.  The SEED can be overridden with the
DUPLEXSIM_SEED environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .annotate import (
    DEFAULT_EPSILON_S,
    GapDistribution,
    annotate_timeline,
    save_labels,
    load_labels,
)
from .core import (
    ChunkGrid,
    ConfigurationError,
    DuplexError,
    EncodingError,
    LatencyProfile,
    ProtocolOrderError,
    RatioPolicy,
    StageTimeoutError,
    UndefinedMetricError,
    ValidationError,
    load_timeline,
    read_trace,
    write_trace,
)
from .metrics import (
    evaluate_trace,
    format_decomposition,
    format_eval_table,
    latency_decomposition_report,
)
from .scenarios import generate_scenario
from .stagebus.engine import (
    Endpoint,
    Scenario,
    default_stages,
    load_scenario,
    run_simulation,
    save_scenario,
)
from .stagebus.stages import (
    ALL_ROLES,
    MockStageResponder,
    serve_stdio,
    serve_tcp,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


def _seed_override(seed: int | None) -> int | None:
    env = os.environ.get("DUPLEXSIM_SEED")
    if env is not None:
        return int(env)
    return seed


def _print_config(obj: dict) -> int:
    print(json.dumps(obj, indent=2, sort_keys=True))
    return EXIT_OK


def _parse_policy(text: str) -> RatioPolicy:
    try:
        n_sem, n_sp = (int(x) for x in text.split(":"))
    except ValueError as exc:
        raise ValidationError(f"policy must look like 5:15, got {text!r}") from exc
    return RatioPolicy(n_semantic=n_sem, n_speech=n_sp)


def _load_profile(path: str | None) -> LatencyProfile:
    if path is None:
        return LatencyProfile()
    with open(path, "r", encoding="utf-8") as fh:
        return LatencyProfile.from_dict(json.load(fh))


def _stages_for(args, scenario: Scenario):
    if getattr(args, "stage_cmd", None):
        endpoint = Endpoint.of_command(args.stage_cmd.split() if isinstance(args.stage_cmd, str) else args.stage_cmd)
    elif getattr(args, "stage_tcp", None):
        host, _, port = args.stage_tcp.rpartition(":")
        endpoint = Endpoint.of_tcp(host, int(port))
    else:
        return default_stages(scenario.profile, jitter_ms=getattr(args, "jitter", 0.0))
    return default_stages(
        scenario.profile, jitter_ms=getattr(args, "jitter", 0.0), endpoint=endpoint
    )


# ---------------------------------------------------------------------------
# Subcommands

def cmd_simulate(args) -> int:
    if args.batch:
        return _simulate_batch(args)
    if not args.scenario:
        raise ValidationError("simulate needs --scenario or --batch")
    scenario = load_scenario(args.scenario)
    seed = _seed_override(args.seed)
    if seed is not None:
        scenario = Scenario.from_dict({**scenario.to_dict(), "seed": seed})
    if args.print_config:
        return _print_config(scenario.to_dict())

    stages = _stages_for(args, scenario)
    trace = run_simulation(scenario, stages, deadline_ms=args.stage_deadline_ms)

    if args.realtime:
        t0 = time.monotonic()
        for ev in trace:
            wait = ev.t_ms / 1000.0 - (time.monotonic() - t0)
            if wait > 0:
                time.sleep(wait)
            print(ev.to_line())
    elif args.out is None:
        for ev in trace:
            print(ev.to_line())

    if args.out is not None:
        write_trace(trace, args.out)

    if args.figures:
        from .viz import save_trace_figure

        outdir = Path(args.figures)
        outdir.mkdir(parents=True, exist_ok=True)
        save_trace_figure(trace, outdir / "trace_timeline.png")
    return EXIT_OK


def _run_one_scenario(paths: tuple[str, str]) -> str:
    scenario_path, out_path = paths
    scenario = load_scenario(scenario_path)
    write_trace(run_simulation(scenario), out_path)
    return out_path


def _simulate_batch(args) -> int:
    indir = Path(args.batch)
    scenarios = sorted(indir.glob("*.json"))
    if not scenarios:
        raise ValidationError(f"no scenario files in {indir}")
    outdir = Path(args.out) if args.out else indir
    outdir.mkdir(parents=True, exist_ok=True)
    jobs = [(str(p), str(outdir / (p.stem + ".trace.jsonl"))) for p in scenarios]
    if args.workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            for done in pool.map(_run_one_scenario, jobs):
                print(done, file=sys.stderr)
    else:
        for job in jobs:
            print(_run_one_scenario(job), file=sys.stderr)
    return EXIT_OK


def cmd_annotate(args) -> int:
    gaps = GapDistribution(
        mean_s=args.gap_mean, std_s=args.gap_std, clamp_min_s=args.gap_clamp_min
    )
    seed = _seed_override(args.seed) or 0
    config = {
        "timeline": args.timeline,
        "seed": seed,
        "gap_mean_s": gaps.mean_s,
        "gap_std_s": gaps.std_s,
        "gap_clamp_min_s": gaps.clamp_min_s,
        "epsilon_s": args.epsilon,
        "out": args.out,
    }
    if args.print_config:
        return _print_config(config)
    timeline = load_timeline(args.timeline)
    labels = annotate_timeline(timeline, gaps, seed=seed, epsilon_s=args.epsilon)
    if args.out:
        save_labels(labels, args.out)
    else:
        from .annotate import labels_to_dict

        print(json.dumps(labels_to_dict(labels), separators=(",", ":")))
    return EXIT_OK


def cmd_eval(args) -> int:
    ks = [int(k) for k in args.k.split(",") if k.strip() != ""]
    grid = ChunkGrid(chunk_ms=args.grid_ms)
    config = {
        "trace": args.trace,
        "labels": args.labels,
        "k": ks,
        "grid_ms": grid.chunk_ms,
        "window": args.window,
        "out": args.out,
    }
    if args.print_config:
        return _print_config(config)
    trace = read_trace(args.trace)
    labels = load_labels(args.labels)
    report = evaluate_trace(trace, labels, ks, grid=grid, window=args.window)
    payload = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)
    if args.table:
        print(format_eval_table(report), file=sys.stderr)
    if args.figures:
        from .viz import save_f1_figure, save_trace_figure

        outdir = Path(args.figures)
        outdir.mkdir(parents=True, exist_ok=True)
        save_f1_figure(report, outdir / "f1_at_k.png")
        save_trace_figure(trace, outdir / "trace_timeline.png", labels=labels)
    return EXIT_OK


def cmd_latency(args) -> int:
    profile = _load_profile(args.profile)
    policy = _parse_policy(args.policy)
    if args.print_config:
        return _print_config({"profile": profile.to_dict(), "policy": args.policy})
    report = latency_decomposition_report(profile, policy)
    print(format_decomposition(report, policy))
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    if args.figures:
        from .viz import save_decomposition_figure

        outdir = Path(args.figures)
        outdir.mkdir(parents=True, exist_ok=True)
        save_decomposition_figure(report, outdir / "latency_decomposition.png")
    return EXIT_OK


def cmd_serve_mock(args) -> int:
    roles = tuple(args.roles.split(",")) if args.roles != "all" else ALL_ROLES
    for role in roles:
        if role not in ALL_ROLES:
            raise ConfigurationError(f"unknown role {role!r}")
    seed = _seed_override(args.seed) or 0
    if args.print_config:
        return _print_config({"roles": list(roles), "seed": seed, "listen": args.listen})
    if args.listen:
        host, _, port = args.listen.rpartition(":")
        serve_tcp(lambda: MockStageResponder(roles=roles, seed=seed), host or "127.0.0.1",
                  int(port), once=args.once)
    else:
        serve_stdio(MockStageResponder(roles=roles, seed=seed))
    return EXIT_OK


def cmd_gen_scenario(args) -> int:
    seed = _seed_override(args.seed) or 0
    scenario = generate_scenario(
        seed,
        turns=args.turns,
        predictor=args.predictor,
        profile=_load_profile(args.profile),
    )
    if args.print_config:
        return _print_config(scenario.to_dict())
    if args.out:
        save_scenario(scenario, args.out)
    else:
        print(json.dumps(scenario.to_dict(), indent=2))
    return EXIT_OK


def cmd_interactive(args) -> int:
    from .interactive import run_interactive

    profile = _load_profile(args.profile)
    policy = _parse_policy(args.policy)
    grid = ChunkGrid(chunk_ms=args.grid_ms)
    if args.print_config:
        return _print_config(
            {
                "profile": profile.to_dict(),
                "policy": args.policy,
                "grid_ms": grid.chunk_ms,
            }
        )
    run_interactive(profile, policy, grid)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duplexsim",
        description="Full-duplex voice interaction engine: simulate, annotate, evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario on the virtual clock")
    p.add_argument("--scenario", default=None, help="scenario JSON path")
    p.add_argument("--batch", default=None, help="run every scenario JSON in a directory")
    p.add_argument("--workers", type=int, default=1, help="parallel workers for --batch")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out", default=None,
                   help="trace JSONL path (or output directory for --batch)")
    p.add_argument("--stage-cmd", default=None, help="serve stages via this command over stdio")
    p.add_argument("--stage-tcp", default=None, help="serve stages via host:port")
    p.add_argument("--stage-deadline-ms", type=int, default=5000,
                   help="per-message external stage deadline")
    p.add_argument("--jitter", type=float, default=0.0, help="uniform per-stage jitter bound, ms")
    p.add_argument("--realtime", action="store_true", help="replay events on the wall clock")
    p.add_argument("--figures", default=None, help="directory for rendered figures")
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("annotate", help="derive duplex labels from a timeline")
    p.add_argument("--timeline", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gap-mean", type=float, default=0.6)
    p.add_argument("--gap-std", type=float, default=0.4)
    p.add_argument("--gap-clamp-min", type=float, default=0.0)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON_S,
                   help="required continued-speech margin for back-channels, s")
    p.add_argument("--out", default=None, help="labels JSON output path")
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("eval", help="score a trace against labels")
    p.add_argument("--trace", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--k", default="1,5,10", help="comma-separated offset windows")
    p.add_argument("--grid-ms", type=int, default=100)
    p.add_argument("--window", choices=("after", "symmetric"), default="after")
    p.add_argument("--out", default=None, help="report JSON output path")
    p.add_argument("--table", action="store_true", help="print an aligned table to stderr")
    p.add_argument("--figures", default=None)
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("latency", help="print the first-audio latency decomposition")
    p.add_argument("--profile", default=None, help="profile JSON path (defaults built in)")
    p.add_argument("--policy", default="5:15")
    p.add_argument("--json", action="store_true", help="also print the report as JSON")
    p.add_argument("--figures", default=None)
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser("serve-mock", help="serve the built-in mock stages over the wire")
    p.add_argument("--listen", default=None, help="host:port; default stdio")
    p.add_argument("--roles", default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--once", action="store_true", help="exit after one TCP client")
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_serve_mock)

    p = sub.add_parser("gen-scenario", help="generate a seeded benchmark scenario")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--turns", type=int, default=4)
    p.add_argument("--predictor", choices=("scripted", "threshold"), default="scripted")
    p.add_argument("--profile", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_gen_scenario)

    p = sub.add_parser("interactive", help="drive a live session from the terminal")
    p.add_argument("--profile", default=None)
    p.add_argument("--policy", default="5:15")
    p.add_argument("--grid-ms", type=int, default=100)
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_interactive)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ValidationError, ConfigurationError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, EncodingError, ProtocolOrderError, StageTimeoutError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DuplexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KeyboardInterrupt:
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
