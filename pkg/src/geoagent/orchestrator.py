"""Composite scoring, the resumable experiment matrix, and reporting.

The composite weighs task success most heavily, then output accuracy
(averaged only over successful tasks so failures are not double-counted),
then the API-operation F1 and process-embedding components equally:

    s_comp = 0.4*r_succ + 0.3*q_out + 0.15*f_api + 0.15*c_emb
"""
from __future__ import annotations

import json
import shutil
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import agents, sandbox
from .metrics import MetricReport, score_code, task_output_score
from .tasks import RunRecord, RunStore, TaskSpec, flatten_data_layout, load_benchmark

COMPOSITE_WEIGHTS = {"r_succ": 0.4, "q_out": 0.3, "f_api": 0.15, "c_emb": 0.15}


class OutOfRangeInput(ValueError):
    pass


class EmptyRunSet(ValueError):
    pass


def composite(r_succ: float, q_out: float, f_api: float, c_emb: float) -> float:
    """Weighted sum of the four published aggregates."""
    for name, value in (("r_succ", r_succ), ("q_out", q_out),
                        ("f_api", f_api), ("c_emb", c_emb)):
        if not (0.0 <= value <= 1.0):
            raise OutOfRangeInput(f"{name}={value} outside [0, 1]")
    w = COMPOSITE_WEIGHTS
    return (w["r_succ"] * r_succ + w["q_out"] * q_out
            + w["f_api"] * f_api + w["c_emb"] * c_emb)


@dataclass
class CompositeScore:
    model_id: str
    architecture: str
    r_succ: float
    q_out: float
    f_api: float
    c_emb: float
    s_comp: float
    cost: float = 0.0
    n_tasks: int = 0

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def aggregate_model(records: list[RunRecord], reports: list[MetricReport],
                    model_id: str, architecture: str) -> CompositeScore:
    """Fold one model+architecture's per-task results into a CompositeScore.

    q_out averages only over successful tasks; f_api and c_emb average over
    every evaluated task.
    """
    cell_records = [r for r in records
                    if r.model_id == model_id and r.architecture == architecture]
    if not cell_records:
        raise EmptyRunSet(f"no runs for {model_id}/{architecture}")
    by_task = {rep.task_id: rep for rep in reports
               if rep.model_id == model_id and rep.architecture == architecture}

    r_succ = sum(r.success for r in cell_records) / len(cell_records)
    q_values = [by_task[r.task_id].q_out for r in cell_records
                if r.success and r.task_id in by_task
                and by_task[r.task_id].q_out is not None]
    q_out = sum(q_values) / len(q_values) if q_values else 0.0
    f_values = [rep.l1.api_f1 for rep in by_task.values() if rep.l1 is not None]
    f_api = sum(f_values) / len(f_values) if f_values else 0.0
    c_values = [rep.l2.c_emb for rep in by_task.values()
                if rep.l2 is not None and rep.l2.c_emb is not None]
    c_emb = sum(c_values) / len(c_values) if c_values else 0.0
    cost = sum(r.cost for r in cell_records)
    return CompositeScore(model_id, architecture, r_succ, q_out, f_api,
                          max(min(c_emb, 1.0), 0.0),
                          composite(r_succ, q_out, f_api, max(min(c_emb, 1.0), 0.0)),
                          cost, len(cell_records))


# ---------------------------------------------------------------------------
# experiment matrix

@dataclass
class MatrixPlan:
    models: list[str]
    architectures: list[str]
    task_ids: list[str]
    timeout_s: float = 600.0
    max_rounds: int = 50
    parallelism: int = 4

    def __post_init__(self):
        if self.timeout_s <= 0 or self.max_rounds <= 0:
            raise ValueError("limits must be positive")
        cells = self.cells()
        if len(cells) != len(set(cells)):
            raise ValueError("matrix cells must be unique")

    def cells(self) -> list[tuple[str, str, str]]:
        return [(t, m, a) for m in self.models for a in self.architectures
                for t in self.task_ids]


def evaluate_run(task: TaskSpec, transcript: agents.AgentTranscript, model_id: str,
                 architecture: str, success: bool, embedder=None,
                 vision_judge=None) -> MetricReport:
    """Immediate post-run scoring: L1 against the gold code, L3 against the
    gold outputs; L2 embedding only when a provider is configured."""
    report = MetricReport(task_id=task.id, model_id=model_id,
                          architecture=architecture, success=success)
    report.l1 = score_code(transcript.consolidated_script, task.gold_code)
    preds = agents.produced_files(transcript, task)
    q_out, per_file = task_output_score(preds, task.gold_outputs, task=task,
                                        vision_judge=vision_judge)
    report.q_out = q_out
    report.output_scores = per_file
    if embedder is not None:
        from .metrics import ProcessMetric, clean_log, cosine, embed

        log_text = clean_log(transcript)
        e_agent = embed(log_text or "(empty run)", embedder)
        e_gold = embed(task.gold_code, embedder)
        report.l2 = ProcessMetric(c_emb=cosine(e_agent, e_gold))
    return report


def _run_cell(task: TaskSpec, model_id: str, architecture: str, store: RunStore,
              backend_factory, policy_factory, limits: agents.AgentLimits,
              workdir: Path, embedder=None, vision_judge=None, force: bool = False):
    key = (task.id, model_id, architecture)
    started = time.monotonic()
    workspace = workdir / f"{task.id}__{model_id}__{architecture}".replace("/", "_")
    if workspace.exists():
        shutil.rmtree(workspace)
    flatten_data_layout(task.task_dir, workspace)
    gateway = backend_factory(model_id, architecture, task)
    policy = policy_factory(task) if policy_factory else sandbox.SandboxPolicy(
        task_budget_s=limits.task_budget_s)
    session = sandbox.start_session(workspace, policy)
    try:
        transcript = agents.run_agent(architecture, task, gateway, session, limits)
    finally:
        sandbox.shutdown(session)
    success = agents.determine_success(transcript, task)
    record = RunRecord(
        task_id=task.id, model_id=model_id, architecture=architecture,
        produced_files=agents.produced_files(transcript, task),
        success=success, wall_time_s=time.monotonic() - started,
        cost=transcript.usage.get("cost", 0.0))
    tpath = store.transcript_path(key)
    tpath.write_text(json.dumps(transcript.to_dict(), indent=1))
    record.transcript_ref = str(tpath.relative_to(store.root))
    report = evaluate_run(task, transcript, model_id, architecture, success,
                          embedder=embedder, vision_judge=vision_judge)
    store.metrics_path(key).write_text(json.dumps(report.to_dict(), indent=1))
    store.persist_run(record, force=force)
    return record


def run_matrix(plan: MatrixPlan, benchmark_root, store: RunStore, backend_factory,
               policy_factory=None, embedder=None, vision_judge=None,
               max_cells: int | None = None, force: bool = False) -> list[RunRecord]:
    """Execute every pending matrix cell; completed cells are skipped, so an
    interrupted sweep resumes where it stopped.

    backend_factory(model_id, architecture, task) must return a fresh gateway
    per cell.  Per-cell errors become failed records and never abort the
    matrix.  `max_cells` bounds how many pending cells run (used to simulate
    interruption in tests).
    """
    tasks = {t.id: t for t in load_benchmark(benchmark_root)}
    unknown = [t for t in plan.task_ids if t not in tasks]
    if unknown:
        raise KeyError(f"plan references unknown tasks: {unknown}")
    limits = agents.AgentLimits(max_rounds=plan.max_rounds, task_budget_s=plan.timeout_s)
    done_keys = store.keys() if not force else set()
    pending = [c for c in plan.cells() if c not in done_keys]
    if max_cells is not None:
        pending = pending[:max_cells]

    workdir = store.root / "workspaces"
    workdir.mkdir(parents=True, exist_ok=True)
    records: list[RunRecord] = []

    def run_one(cell):
        task_id, model_id, architecture = cell
        try:
            return _run_cell(tasks[task_id], model_id, architecture, store,
                             backend_factory, policy_factory, limits, workdir,
                             embedder=embedder, vision_judge=vision_judge, force=force)
        except Exception:
            record = RunRecord(task_id=task_id, model_id=model_id,
                               architecture=architecture, success=False)
            tpath = store.transcript_path(cell)
            tpath.write_text(json.dumps(
                {"error": traceback.format_exc(), "task_id": task_id}, indent=1))
            record.transcript_ref = str(tpath.relative_to(store.root))
            store.persist_run(record, force=force)
            return record

    if plan.parallelism <= 1 or len(pending) <= 1:
        for cell in pending:
            records.append(run_one(cell))
    else:
        with ThreadPoolExecutor(max_workers=plan.parallelism) as pool:
            records = list(pool.map(run_one, pending))
    return records


def load_reports(store: RunStore) -> list[MetricReport]:
    reports = []
    if not store.metrics_dir.is_dir():
        return reports
    for path in sorted(store.metrics_dir.glob("*.json")):
        raw = json.loads(path.read_text())
        report = MetricReport(task_id=raw["task_id"], model_id=raw["model_id"],
                              architecture=raw["architecture"],
                              success=raw.get("success", False))
        report.q_out = raw.get("q_out")
        l1 = raw.get("l1")
        if l1:
            report.l1 = _l1_from_dict(l1)
        l2 = raw.get("l2")
        if l2:
            from .metrics import ProcessMetric

            report.l2 = ProcessMetric(c_emb=l2.get("c_emb"))
        reports.append(report)
    return reports


def _l1_from_dict(d: dict):
    from .metrics.structure import (BleuBreakdown, CodeBleuBreakdown,
                                    CodeMetricBreakdown, RougeBreakdown)

    return CodeMetricBreakdown(
        bleu4=BleuBreakdown(d["bleu4"]["p"], d["bleu4"]["bp"], d["bleu4"]["score"]),
        rouge=RougeBreakdown(d["rouge"]["r_lcs"], d["rouge"]["p_lcs"], d["rouge"]["f_lcs"]),
        d_lev=d["edit"]["d_lev"], edit_sim=d["edit"]["score"],
        codebleu=CodeBleuBreakdown(
            d["codebleu"]["alpha_ngram"], d["codebleu"]["alpha_wt"],
            d["codebleu"]["alpha_syn"], d["codebleu"]["alpha_df"],
            d["codebleu"]["total"]),
        api_precision=d["api"]["precision"], api_recall=d["api"]["recall"],
        api_f1=d["api"]["f1"],
        pred_ops=set(d["api"]["pred_ops"]), gold_ops=set(d["api"]["gold_ops"]))


def aggregate_store(store: RunStore) -> list[CompositeScore]:
    records = store.load()
    if not records:
        raise EmptyRunSet("store holds no run records")
    reports = load_reports(store)
    cells = sorted({(r.model_id, r.architecture) for r in records})
    return [aggregate_model(records, reports, m, a) for m, a in cells]


# ---------------------------------------------------------------------------
# reporting

REPORT_COLUMNS = ("r_succ", "q_out", "f_api", "c_emb", "s_comp")


def render_report(scores: list[CompositeScore]) -> str:
    """Plain-text table per architecture; every per-column maximum is starred
    (ties all flagged)."""
    lines = []
    header = (f"{'model':<18} {'R_s':>7} {'Q_out':>7} {'F_api':>7} "
              f"{'C_emb':>7} {'S_comp':>8} {'Cost':>8}")
    for arch in sorted({s.architecture for s in scores}):
        rows = [s for s in scores if s.architecture == arch]
        lines.append(f"== {arch} agent ==")
        lines.append(header)
        best = {col: max(getattr(s, col) for s in rows) for col in REPORT_COLUMNS}
        for s in sorted(rows, key=lambda x: -x.s_comp):
            cells = []
            for col in REPORT_COLUMNS:
                value = getattr(s, col)
                flag = "*" if value == best[col] else " "
                width = 8 if col == "s_comp" else 7
                cells.append(f"{value:.3f}{flag}".rjust(width))
            lines.append(f"{s.model_id:<18} " + " ".join(cells) + f" {s.cost:>7.2f}")
        lines.append("")
    if not scores:
        lines = [header, ""]
    return "\n".join(lines).rstrip() + "\n"


def reference_rows() -> dict:
    """Bundled published aggregates used as arithmetic consistency fixtures."""
    raw = resources.files("geoagent.assets").joinpath("reference_scores.json").read_text()
    return json.loads(raw)


def serve_sessions(host: str = "127.0.0.1", port: int = 8800):
    """Run the interactive session service (blocking)."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)
