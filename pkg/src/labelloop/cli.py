"""Command-line entry points: run, plan, report, serve."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .core import LoopError
from .orchestrator import Engine, load_config, plan_summary


def render_report(report: dict) -> str:
    lines = []
    budget = report["config"]["budget"]
    lines.append(
        f"pool {report['pool_size']}  labels {','.join(report['labels'])}  "
        f"budget {budget['total']} = {budget['human']} human + {budget['llm']} llm  "
        f"strategy {report['config']['strategy']}"
    )
    lines.append("round  human        llm          k    cum_spent  accuracy")
    for row in report["rounds"]:
        metrics = row.get("test_metrics") or {}
        acc = f"{metrics['accuracy']:.4f}" if "accuracy" in metrics else "-"
        lines.append(
            f"{row['round']:>5}  {row['human_done']:>4}/{row['human_alloc']:<6} "
            f"{row['llm_done']:>4}/{row['llm_alloc']:<6} {row['k_clusters']:>4}  "
            f"{row['cum_spent']:>9}  {acc}"
        )
    counts = report["annotations"]
    lines.append(
        f"annotations: {counts['total']} total "
        f"({counts['warmstart']} warmstart, {counts['human']} human, {counts['llm']} llm)"
    )
    lines.append(f"terminated: {report['termination']}")
    final = report.get("test_metrics")
    if final:
        rendered = "  ".join(f"{k}={v:.4f}" for k, v in sorted(final.items()))
        lines.append(f"test metrics: {rendered}")
    return "\n".join(lines)


def _cmd_run(args: argparse.Namespace) -> int:
    if args.resume:
        engine = Engine.resume(args.resume)
    else:
        config = load_config(args.config)
        if args.seed is not None:
            config = dataclasses.replace(config, seed=args.seed)
        engine = Engine(config)
    report = engine.run()
    print(render_report(report))
    if engine.run_dir is not None:
        print(f"artifacts: {engine.run_dir}")
    return 0


def _cmd_plan(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    plan = plan_summary(config)
    print(f"strategy {plan['strategy']}  warmstart {plan['warmstart']}")
    print("round  human  llm  k_clusters")
    for row in plan["rounds"]:
        print(f"{row['round']:>5}  {row['human']:>5}  {row['llm']:>3}  {row['k_clusters']:>10}")
    print(f"cumulative: {plan['cumulative']}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.run_dir) / "report"
    if not path.exists():
        print(f"no report at {path}", file=sys.stderr)
        return 1
    print(render_report(json.loads(path.read_text(encoding="utf-8"))))
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    listen = args.listen
    if args.config:
        listen = listen or load_config(args.config).listen_addr
    serve(listen or "127.0.0.1:8642", console_dir=args.serve_console)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="labelloop", description="multi-fidelity annotation loop")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a run")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--resume", default=None, metavar="CHECKPOINT")
    p_run.set_defaults(func=_cmd_run)

    p_plan = sub.add_parser("plan", help="print schedules without executing")
    p_plan.add_argument("--config", required=True)
    p_plan.set_defaults(func=_cmd_plan)

    p_report = sub.add_parser("report", help="render a finished run's report")
    p_report.add_argument("run_dir")
    p_report.set_defaults(func=_cmd_report)

    p_serve = sub.add_parser("serve", help="start the annotation service")
    p_serve.add_argument("--config", default=None)
    p_serve.add_argument("--listen", default=None, metavar="HOST:PORT")
    p_serve.add_argument("--serve-console", default=None, metavar="DIR")
    p_serve.set_defaults(func=_cmd_serve)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LoopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
