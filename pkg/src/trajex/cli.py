"""Command-line entry points.

Subcommands: `gen` (emit a scenario suite), `bench` (run a suite to JSONL +
summary + figures input), `render` (debug PGM dumps for one agent/frame),
`dict` (export the shared trajectory dictionary blob), `report` (figures and
CSV from bench outputs).  A JSON config file, when given, overrides flags.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

from .bench import SuiteConfig, run_suite, save_summary
from .errors import (ConfigError, DecodeError, GenerationError, HorizonError,
                     ProtocolError, ShapeError, TrajexError)
from .grid import dump_pgm
from .report import render_report
from .sim import load_scenario, render_lidar, sample_scenario, save_scenario
from .trajectory import encode_dictionary

EXIT_CODES = {
    ConfigError: 2,
    GenerationError: 3,
    DecodeError: 4,
    ProtocolError: 5,
    HorizonError: 6,
    ShapeError: 7,
}


def _suite_flags(parser: argparse.ArgumentParser) -> None:
    defaults = SuiteConfig()
    parser.add_argument("--config", type=Path, help="JSON config file; overrides flags")
    parser.add_argument("--template", default=defaults.template,
                        choices=("crisscross", "blindcorner"))
    parser.add_argument("--agents", type=int, default=defaults.n_agents)
    parser.add_argument("--com", type=int, nargs="+", default=list(defaults.n_com),
                        help="communicating-agent counts to sweep")
    parser.add_argument("--scenarios", type=int, default=defaults.n_scenarios)
    parser.add_argument("--seed", type=int, default=defaults.seed0)
    parser.add_argument("--k", type=int, nargs="+", default=list(defaults.k_values))
    parser.add_argument("--fusion-mode", default=defaults.fusion_mode,
                        choices=("weighted_mean", "verbatim_sum"))
    parser.add_argument("--forecaster", default=defaults.forecaster,
                        choices=("cv_baseline", "oracle"))
    parser.add_argument("--decision-frame", type=int, default=defaults.decision_frame)
    parser.add_argument("--comm-range", type=float, default=defaults.comm_range)


def _suite_config(args: argparse.Namespace) -> SuiteConfig:
    cfg = {
        "template": args.template,
        "n_agents": args.agents,
        "n_com": tuple(args.com),
        "n_scenarios": args.scenarios,
        "seed0": args.seed,
        "k_values": tuple(args.k),
        "fusion_mode": args.fusion_mode,
        "forecaster": args.forecaster,
        "decision_frame": args.decision_frame,
        "comm_range": args.comm_range,
    }
    if args.config:
        file_cfg = json.loads(args.config.read_text())
        known = {f.name for f in fields(SuiteConfig)}
        unknown = set(file_cfg) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    return SuiteConfig(**{k: v for k, v in cfg.items()})


def cmd_gen(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_com = args.com[0] if args.com else 1
    for i in range(args.scenarios):
        seed = args.seed + i
        scenario = sample_scenario(args.template, args.agents, n_com, seed)
        save_scenario(out / f"{args.template}_{seed:06d}.json", scenario)
    print(f"wrote {args.scenarios} scenarios to {out}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _suite_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()

    def progress(done, total):
        if args.quiet:
            return
        print(f"\r[{done}/{total}] {time.time() - started:.0f}s", end="",
              file=sys.stderr, flush=True)

    records, summary = run_suite(cfg, jsonl_path=out / "records.jsonl",
                                 ledger_path=out / "bandwidth.json",
                                 progress=progress)
    if not args.quiet:
        print(file=sys.stderr)
    save_summary(out / "summary.json", summary)
    for n_com, entry in sorted(summary["per_n_com"].items(), key=lambda kv: int(kv[0])):
        tops = ", ".join(f"top-{k}={v:.3f}" for k, v in entry["topk"].items())
        print(f"n_com={n_com}: {tops}, random={entry['random_rate']:.3f}")
    print(f"{len(records)} records -> {out}")
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frame = render_lidar(scenario, args.agent, args.frame)
    stem = f"agent{args.agent:03d}_frame{args.frame:04d}"
    dump_pgm(out / f"{stem}_seg.pgm", frame.seg.astype(float))
    dump_pgm(out / f"{stem}_hits.pgm", frame.raster.occ[0].astype(float))
    dump_pgm(out / f"{stem}_visible.pgm", frame.visible.astype(float))
    pose = frame.pose
    (out / f"{stem}_pose.txt").write_text(
        f"x {pose.x!r}\ny {pose.y!r}\ntheta {pose.theta!r}\n")
    print(f"wrote rasters for agent {args.agent} frame {args.frame} to {out}")
    return 0


def cmd_dict(args: argparse.Namespace) -> int:
    cfg = SuiteConfig()
    blob = encode_dictionary(cfg.dictionary())
    Path(args.out).write_bytes(blob)
    print(f"wrote {len(blob)} bytes to {args.out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    summary = json.loads(Path(args.summary).read_text())
    created = render_report(summary, args.out)
    for path in created:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajex")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="emit a randomized scenario suite")
    gen.add_argument("--template", default="crisscross",
                     choices=("crisscross", "blindcorner"))
    gen.add_argument("--agents", type=int, default=20)
    gen.add_argument("--com", type=int, nargs="+", default=[1])
    gen.add_argument("--scenarios", type=int, default=10)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen)

    bench = sub.add_parser("bench", help="run a suite and emit JSONL + summary")
    _suite_flags(bench)
    bench.add_argument("--out", required=True)
    bench.add_argument("--quiet", action="store_true")
    bench.set_defaults(func=cmd_bench)

    render = sub.add_parser("render", help="debug PGM dumps for one agent/frame")
    render.add_argument("--scenario", required=True)
    render.add_argument("--agent", type=int, required=True)
    render.add_argument("--frame", type=int, required=True)
    render.add_argument("--out", required=True)
    render.set_defaults(func=cmd_render)

    dict_cmd = sub.add_parser("dict", help="export the shared trajectory dictionary")
    dict_cmd.add_argument("--out", required=True)
    dict_cmd.set_defaults(func=cmd_dict)

    report = sub.add_parser("report", help="render figures + CSV from bench outputs")
    report.add_argument("--summary", required=True)
    report.add_argument("--out", required=True)
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrajexError as err:
        print(f"error: {err}", file=sys.stderr)
        for cls, code in EXIT_CODES.items():
            if isinstance(err, cls):
                return code
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
