"""Command-line interface: run / evaluate / report / serve."""
from __future__ import annotations

import argparse
import json
import sys

from .llm import HttpChatBackend, LLMGateway, load_backend_config
from .orchestrator import (MatrixPlan, aggregate_store, render_report,
                           run_matrix, serve_sessions)
from .tasks import RunStore, load_benchmark


def _split(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def _http_backend_factory(backends_path=None):
    def factory(model_id: str, architecture: str, task):
        config = load_backend_config(model_id, path=backends_path)
        return LLMGateway(config, HttpChatBackend())

    return factory


def cmd_run(args) -> int:
    tasks = load_benchmark(args.benchmark)
    task_ids = _split(args.tasks) if args.tasks else [t.id for t in tasks]
    plan = MatrixPlan(models=_split(args.models), architectures=_split(args.arch),
                      task_ids=task_ids, timeout_s=args.timeout,
                      max_rounds=args.rounds, parallelism=args.parallelism)
    store = RunStore(args.store)
    if not args.resume and store.keys():
        print("store already holds records; pass --resume to continue or "
              "use a fresh --store", file=sys.stderr)
        return 2
    records = run_matrix(plan, args.benchmark, store,
                         _http_backend_factory(args.backends), force=args.force)
    print(f"executed {len(records)} cells "
          f"({sum(r.success for r in records)} succeeded)")
    return 0


def cmd_evaluate(args) -> int:
    from . import agents
    from .orchestrator import evaluate_run
    from .tasks import load_benchmark as load

    store = RunStore(args.store)
    tasks = {t.id: t for t in load(args.benchmark)}
    count = 0
    for record in store.load():
        task = tasks.get(record.task_id)
        tpath = store.root / record.transcript_ref
        if task is None or not tpath.is_file():
            continue
        raw = json.loads(tpath.read_text())
        if "rounds" not in raw:
            continue
        transcript = agents.AgentTranscript.from_dict(raw)
        report = evaluate_run(task, transcript, record.model_id,
                              record.architecture, record.success)
        store.metrics_path(record.key).write_text(json.dumps(report.to_dict(), indent=1))
        count += 1
    print(f"re-scored {count} runs")
    return 0


def cmd_report(args) -> int:
    store = RunStore(args.store)
    print(render_report(aggregate_store(store)), end="")
    return 0


def cmd_serve(args) -> int:
    serve_sessions(host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geoagent")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the experiment matrix")
    p_run.add_argument("--benchmark", required=True)
    p_run.add_argument("--models", required=True, help="comma-separated backend ids")
    p_run.add_argument("--arch", default="single,dual")
    p_run.add_argument("--tasks", default="", help="comma-separated task ids (default: all)")
    p_run.add_argument("--store", required=True)
    p_run.add_argument("--resume", action="store_true")
    p_run.add_argument("--force", action="store_true", help="re-run completed cells")
    p_run.add_argument("--timeout", type=float, default=600.0)
    p_run.add_argument("--rounds", type=int, default=50)
    p_run.add_argument("--parallelism", type=int, default=4)
    p_run.add_argument("--backends", default=None,
                       help="backend config file (default: bundled table)")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("evaluate", help="re-score stored runs")
    p_eval.add_argument("--store", required=True)
    p_eval.add_argument("--benchmark", required=True)
    p_eval.set_defaults(func=cmd_evaluate)

    p_report = sub.add_parser("report", help="render the aggregate score table")
    p_report.add_argument("--store", required=True)
    p_report.set_defaults(func=cmd_report)

    p_serve = sub.add_parser("serve", help="run the interactive session service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8800)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
