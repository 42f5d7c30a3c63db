"""Command-line front end over the pipeline stages.

Each subcommand runs exactly one stage against the work directory derived
from the config hash; prerequisites must have run first (the error message
names the missing stage). ``eval`` additionally assembles report.txt.
"""

from __future__ import annotations

import argparse
import sys

from .config import RunConfig
from .exceptions import ConfigError, PipelineError
from .gradcheck import student_gradient_check, teacher_gradient_check
from . import pipeline

STAGE_COMMANDS = ("synth-data", "train-teacher", "build-graph",
                  "train-student", "encode", "eval", "ablate")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.work_dir:
        cfg.work_dir = args.work_dir
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dkph",
        description="dual-stream knowledge-preserving hashing pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGE_COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file (defaults apply otherwise)")
        p.add_argument("--work-dir", help="override the configured work directory")
    g = sub.add_parser("gradcheck")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--step", type=float, default=1e-5)
    g.add_argument("--tolerance", type=float, default=1e-4)

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, PipelineError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "gradcheck":
        failed = False
        for name, fn in (("teacher", teacher_gradient_check),
                         ("student", student_gradient_check)):
            report = fn(seed=args.seed, step=args.step)
            ok = report.max_rel_error < args.tolerance
            failed |= not ok
            print(f"{name}: max_rel_error={report.max_rel_error:.3e} "
                  f"over {report.param_count} parameters "
                  f"[{'PASS' if ok else 'FAIL'} at {args.tolerance:g}] "
                  f"(sign layer excluded: checked on the tanh relaxation)")
        return 1 if failed else 0

    cfg = _load_config(args)
    run_dir = pipeline.run_layout(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    print(f"work dir: {run_dir}")

    if args.command == "synth-data":
        pipeline.stage_data(cfg, run_dir)
    elif args.command == "train-teacher":
        pipeline.stage_teacher(cfg, run_dir)
    elif args.command == "build-graph":
        pipeline.stage_graph(cfg, run_dir)
    elif args.command == "train-student":
        for bits in cfg.code_bits:
            pipeline.stage_student(cfg, run_dir, bits)
    elif args.command == "encode":
        for bits in cfg.code_bits:
            pipeline.stage_encode(cfg, run_dir, bits)
    elif args.command == "eval":
        for bits in cfg.code_bits:
            pipeline.stage_eval(cfg, run_dir, bits)
        report = pipeline.build_report(cfg, run_dir)
        print(report.text, end="")
    elif args.command == "ablate":
        pipeline.ablation_suite(cfg)
        print((run_dir / "ablation.txt").read_text(), end="")
    print(f"{args.command}: done")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
