"""Agent architectures over one shared sandbox session.

`run_single` drives the iterative thought / code-cell / observation loop
with failure memory and a consecutive-duplicate guard.  `run_dual` drives
the plan -> execute -> replan pipeline: a planner decomposes the task into
3-7 ordered steps, a worker executes each step with up to 10 self-correction
rounds, and on step failure the planner is re-invoked with failure context
(at most 2 revisions).  Both produce the same transcript schema.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import sandbox
from .llm import GatewayError, LLMGateway
from .metrics.structure import tokenize_code
from .prompts import (PromptConfig, build_system_prompt, default_prompt_config,
                      inject_domain_knowledge, render_error_memory)
from .tasks import TaskSpec

FINISH_TOKEN = "FINISH"
STEP_DONE_TOKEN = "STEP COMPLETE"
DEDUP_ALERT = ("Duplicate code alert: you already ran this exact code and it did not "
               "advance the task. The cell was NOT executed. Change approach.")
NO_CODE_NUDGE = ("Your reply contained no code cell. Reply with a short thought and "
                 "exactly one ```python code block, or the finish line if done.")

PLAN_STEPS_MIN = 3
PLAN_STEPS_MAX = 7


class AgentError(Exception):
    pass


class PlanUnparsable(AgentError):
    pass


class PlanOutOfBounds(AgentError):
    def __init__(self, count: int):
        super().__init__(f"plan has {count} steps, needs {PLAN_STEPS_MIN}-{PLAN_STEPS_MAX}")
        self.count = count


class ReplanBudgetExhausted(AgentError):
    pass


@dataclass
class AgentLimits:
    max_rounds: int = 50
    task_budget_s: float = 600.0
    step_rounds: int = 10
    max_plan_revisions: int = 2


@dataclass
class ErrorEntry:
    signature: str
    round_index: int
    cell_hash: str


@dataclass
class ErrorMemory:
    entries: list[ErrorEntry] = field(default_factory=list)

    def to_list(self) -> list[dict]:
        return [{"signature": e.signature, "round_index": e.round_index,
                 "cell_hash": e.cell_hash} for e in self.entries]


@dataclass
class Round:
    thought: str
    action_cell: str
    observation: sandbox.Observation | None
    executed: bool = False

    def to_dict(self) -> dict:
        return {"thought": self.thought, "action_cell": self.action_cell,
                "observation": self.observation.to_dict() if self.observation else None,
                "executed": self.executed}


@dataclass
class PlanStep:
    description: str
    status: str = "pending"  # pending | running | done | failed


@dataclass
class Plan:
    steps: list[PlanStep]
    revision: int = 0

    def to_dict(self) -> dict:
        return {"revision": self.revision,
                "steps": [{"description": s.description, "status": s.status}
                          for s in self.steps]}


@dataclass
class StepResult:
    status: str            # done | failed
    rounds_used: int
    failure_context: dict | None = None


@dataclass
class AgentHooks:
    """Optional observers: round/plan streaming and the step approval gate."""

    on_round: object = None            # f(round_index, Round)
    on_plan: object = None             # f(Plan)
    gate_step: object = None           # f(step_index, description) -> description


@dataclass
class AgentTranscript:
    task_id: str
    architecture: str
    workspace_dir: str = ""
    rounds: list[Round] = field(default_factory=list)
    error_memory: ErrorMemory = field(default_factory=ErrorMemory)
    dedup_events: list[tuple[int, str]] = field(default_factory=list)
    plan_history: list[Plan] = field(default_factory=list)
    consolidated_script: str = ""
    outcome: str = "failure"  # success | failure | timeout | round_limit
    finished: bool = False
    usage: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "architecture": self.architecture,
            "workspace_dir": self.workspace_dir,
            "rounds": [r.to_dict() for r in self.rounds],
            "error_memory": self.error_memory.to_list(),
            "dedup_events": [list(e) for e in self.dedup_events],
            "plan_history": [p.to_dict() for p in self.plan_history],
            "consolidated_script": self.consolidated_script,
            "outcome": self.outcome,
            "finished": self.finished,
            "usage": self.usage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentTranscript":
        t = cls(task_id=d["task_id"], architecture=d["architecture"],
                workspace_dir=d.get("workspace_dir", ""))
        for r in d.get("rounds", []):
            obs = sandbox.Observation.from_dict(r["observation"]) if r.get("observation") else None
            t.rounds.append(Round(r["thought"], r["action_cell"], obs, r.get("executed", False)))
        for e in d.get("error_memory", []):
            t.error_memory.entries.append(
                ErrorEntry(e["signature"], e["round_index"], e["cell_hash"]))
        t.dedup_events = [tuple(e) for e in d.get("dedup_events", [])]
        for p in d.get("plan_history", []):
            t.plan_history.append(Plan(
                steps=[PlanStep(s["description"], s["status"]) for s in p["steps"]],
                revision=p["revision"]))
        t.consolidated_script = d.get("consolidated_script", "")
        t.outcome = d.get("outcome", "failure")
        t.finished = d.get("finished", False)
        t.usage = d.get("usage", {})
        return t


# ---------------------------------------------------------------------------
# small shared pieces

def normalized_cell_hash(cell: str) -> str:
    """Hash of the cell's token stream: comments, blank lines, and whitespace
    never change the hash."""
    return hashlib.sha256(" ".join(tokenize_code(cell)).encode()).hexdigest()


def has_token_line(text: str, token: str) -> bool:
    return any(line.strip() == token for line in text.splitlines())


def check_duplicate(history: list[Round], cell: str) -> str:
    """'duplicate_alert' when the cell repeats the immediately preceding
    EXECUTED cell (normalized); a retry straight after a cell-level timeout
    is exempt, since that is a legitimate slow-operation retry."""
    prev = next((r for r in reversed(history) if r.executed), None)
    if prev is None or not prev.action_cell:
        return "fresh"
    if normalized_cell_hash(prev.action_cell) != normalized_cell_hash(cell):
        return "fresh"
    obs = prev.observation
    if obs is not None and sandbox.CELL_TIMEOUT_MARKER in obs.stderr:
        return "fresh"
    return "duplicate_alert"


_NUMBER_RE = re.compile(r"\d+")
_PATH_RE = re.compile(r"(/[\w.\-]+)+|[A-Za-z]:\\[\w.\\\-]+")
_DIAG_RE = re.compile(r"^([A-Za-z_][\w.]*(?:Error|Exception|Warning|Interrupt))\b:?\s*(.*)$")


def error_signature(stderr: str) -> str:
    """Diagnostic class + normalized message head, numbers and paths masked."""
    diag_line, message = "", ""
    for line in reversed(stderr.splitlines()):
        line = line.strip()
        if not line:
            continue
        m = _DIAG_RE.match(line)
        if m:
            diag_line, message = m.group(1), m.group(2)
            break
        if not diag_line:
            diag_line = line  # fall back to the last non-empty line
    masked = _PATH_RE.sub("<path>", message)
    masked = _NUMBER_RE.sub("#", masked)
    return f"{diag_line}: {masked[:80]}".rstrip(": ") if diag_line else "UnknownError"


def record_error(memory: ErrorMemory, observation: sandbox.Observation, cell: str,
                 round_index: int) -> ErrorMemory:
    """Append a failure signature; no-op on an ok observation."""
    if observation.ok:
        return memory
    memory.entries.append(ErrorEntry(
        signature=error_signature(observation.stderr),
        round_index=round_index,
        cell_hash=normalized_cell_hash(cell)))
    return memory


def render_observation(obs: sandbox.Observation) -> str:
    parts = [f"OBSERVATION ok={obs.ok} duration_ms={obs.duration_ms}"]
    if obs.stdout:
        parts.append("STDOUT:\n" + obs.stdout)
    if obs.stderr:
        parts.append("STDERR:\n" + obs.stderr)
    if obs.new_vars:
        parts.append("NEW VARS: " + ", ".join(obs.new_vars))
    return "\n".join(parts)


def _synthetic_observation(text: str, ok: bool = False) -> sandbox.Observation:
    return sandbox.Observation(stdout=text, stderr="", new_vars=[], ok=ok, duration_ms=0)


def assemble_script(transcript: AgentTranscript) -> str:
    """Concatenate successfully executed cells, in order, under a task header."""
    lines = [f"# consolidated script for task {transcript.task_id}"]
    for rnd in transcript.rounds:
        if rnd.executed and rnd.observation is not None and rnd.observation.ok and rnd.action_cell:
            lines.append(rnd.action_cell)
    return "\n".join(lines) + "\n"


def _outputs_exist(transcript: AgentTranscript, task: TaskSpec) -> bool:
    out_dir = Path(transcript.workspace_dir) / task.output_dir_name
    if not out_dir.is_dir():
        return False
    return any(p.is_file() for p in out_dir.rglob("*"))


def determine_success(transcript: AgentTranscript, task: TaskSpec) -> bool:
    """Finish signaled, at least one produced output file, and no budget or
    round-limit termination."""
    if not transcript.finished:
        return False
    if transcript.outcome in ("timeout", "round_limit"):
        return False
    return _outputs_exist(transcript, task)


def produced_files(transcript: AgentTranscript, task: TaskSpec) -> list[str]:
    out_dir = Path(transcript.workspace_dir) / task.output_dir_name
    if not out_dir.is_dir():
        return []
    return sorted(str(p) for p in out_dir.rglob("*") if p.is_file())


def _add_round(transcript: AgentTranscript, rnd: Round, hooks: AgentHooks | None):
    transcript.rounds.append(rnd)
    if hooks and hooks.on_round:
        hooks.on_round(len(transcript.rounds), rnd)


# ---------------------------------------------------------------------------
# single agent

def run_single(task: TaskSpec, gateway: LLMGateway, session: sandbox.SessionHandle,
               limits: AgentLimits | None = None, prompt_config: PromptConfig | None = None,
               hooks: AgentHooks | None = None) -> AgentTranscript:
    """Iterative loop: complete -> normalize -> dedup-check -> execute ->
    observe, with failure signatures fed back into the next context."""
    limits = limits or AgentLimits()
    config = prompt_config or default_prompt_config(
        "single", output_dir_name=task.output_dir_name, max_rounds=limits.max_rounds)
    system = inject_domain_knowledge(build_system_prompt(config), task.domain_knowledge)
    transcript = AgentTranscript(task_id=task.id, architecture="single",
                                 workspace_dir=session.workspace_dir)
    messages = [
        {"role": "system", "content": system},
        {"role": "user", "content": (f"TASK:\n{task.instruction}\n\n"
                                     "The data files are already in your working directory.")},
    ]
    before = gateway.ledger.snapshot()
    end_reason = "round_limit"

    while len(transcript.rounds) < limits.max_rounds:
        try:
            turn = gateway.complete(messages)
        except GatewayError as exc:
            _add_round(transcript, Round(f"[backend failure: {exc}]", "", None), hooks)
            end_reason = "backend_failure"
            break
        messages.append({"role": "assistant", "content": turn.raw_text})
        finish = has_token_line(turn.raw_text, FINISH_TOKEN)
        cell = "\n".join(turn.code_cells).strip()

        if not cell:
            if finish:
                end_reason = "finished"
                break
            obs = _synthetic_observation(NO_CODE_NUDGE)
            _add_round(transcript, Round(turn.prose, "", obs), hooks)
            messages.append({"role": "user", "content": render_observation(obs)})
            continue

        if check_duplicate(transcript.rounds, cell) == "duplicate_alert":
            obs = _synthetic_observation(DEDUP_ALERT)
            _add_round(transcript, Round(turn.prose, cell, obs, executed=False), hooks)
            transcript.dedup_events.append(
                (len(transcript.rounds), normalized_cell_hash(cell)))
        else:
            try:
                obs = sandbox.execute(session, cell)
            except sandbox.TaskBudgetExhausted:
                end_reason = "timeout"
                break
            except sandbox.SessionDead as exc:
                _add_round(transcript, Round(turn.prose, cell,
                                             _synthetic_observation(f"[session died: {exc}]")),
                           hooks)
                end_reason = "backend_failure"
                break
            _add_round(transcript, Round(turn.prose, cell, obs, executed=True), hooks)
            if not obs.ok:
                record_error(transcript.error_memory, obs, cell, len(transcript.rounds))

        context = render_observation(transcript.rounds[-1].observation)
        memory_block = render_error_memory(transcript.error_memory)
        if memory_block:
            context += "\n\n" + memory_block
        messages.append({"role": "user", "content": context})
        if finish:
            end_reason = "finished"
            break

    _finalize(transcript, task, gateway, before, end_reason)
    return transcript


def _finalize(transcript: AgentTranscript, task: TaskSpec, gateway: LLMGateway,
              ledger_before: dict, end_reason: str):
    transcript.finished = end_reason == "finished"
    if end_reason == "finished":
        transcript.outcome = "success" if _outputs_exist(transcript, task) else "failure"
    elif end_reason == "timeout":
        transcript.outcome = "timeout"
    elif end_reason == "round_limit":
        transcript.outcome = "round_limit"
    else:
        transcript.outcome = "failure"
    transcript.consolidated_script = assemble_script(transcript)
    after = gateway.ledger.snapshot()
    transcript.usage = {k: after[k] - ledger_before[k]
                        for k in ("tokens_in", "tokens_out", "cost", "turns")}


# ---------------------------------------------------------------------------
# dual agent

_STEP_LINE_RE = re.compile(r"^\s*(\d+)[.)]\s+(.+?)\s*$")


def _parse_plan_lines(text: str) -> list[str]:
    steps = []
    for line in text.splitlines():
        m = _STEP_LINE_RE.match(line)
        if m:
            steps.append(m.group(2))
    return steps


def _plan_once(gateway: LLMGateway, messages: list[dict]) -> list[str]:
    turn = gateway.complete(messages)
    messages.append({"role": "assistant", "content": turn.raw_text})
    return _parse_plan_lines(turn.raw_text)


def _plan_with_retry(gateway: LLMGateway, messages: list[dict]) -> list[str]:
    steps = _plan_once(gateway, messages)
    if PLAN_STEPS_MIN <= len(steps) <= PLAN_STEPS_MAX:
        return steps
    messages.append({"role": "user", "content": (
        f"That plan is not acceptable (got {len(steps)} steps). Reply again with a "
        f"numbered plan of {PLAN_STEPS_MIN} to {PLAN_STEPS_MAX} steps, one per line.")})
    steps = _plan_once(gateway, messages)
    if not steps:
        raise PlanUnparsable("no numbered steps found after corrective re-prompt")
    if not (PLAN_STEPS_MIN <= len(steps) <= PLAN_STEPS_MAX):
        raise PlanOutOfBounds(len(steps))
    return steps


def plan(task: TaskSpec, dk: str | None, schema_summary: str,
         gateway: LLMGateway) -> Plan:
    """Decompose the task into 3-7 ordered steps via the planner role."""
    config = default_prompt_config("planner", output_dir_name=task.output_dir_name)
    system = inject_domain_knowledge(build_system_prompt(config), dk)
    messages = [
        {"role": "system", "content": system},
        {"role": "user", "content": (f"TASK:\n{task.instruction}\n\n"
                                     f"DATA SCHEMA (from inspection):\n{schema_summary}")},
    ]
    steps = _plan_with_retry(gateway, messages)
    return Plan(steps=[PlanStep(s) for s in steps], revision=0)


def replan(old_plan: Plan, failure_context: dict, gateway: LLMGateway,
           task: TaskSpec | None = None) -> Plan:
    """Revise the plan after a step failure, carrying completed steps forward."""
    if old_plan.revision >= 2:
        raise ReplanBudgetExhausted(
            f"revision budget spent (revision={old_plan.revision})")
    config = default_prompt_config(
        "replanner", output_dir_name=task.output_dir_name if task else "pred_results")
    done = [s for s in old_plan.steps if s.status == "done"]
    done_text = "\n".join(f"{i}. {s.description}" for i, s in enumerate(done, 1)) or "(none)"
    messages = [
        {"role": "system", "content": build_system_prompt(config)},
        {"role": "user", "content": (
            "The current plan failed.\n\n"
            f"COMPLETED STEPS (keep these first, unchanged):\n{done_text}\n\n"
            f"FAILURE CONTEXT:\n{_format_failure(failure_context)}\n\n"
            "Provide the revised full plan. Avoid the operations that failed.")},
    ]
    steps = _plan_with_retry(gateway, messages)
    new_steps = []
    for i, desc in enumerate(steps):
        status = "done" if i < len(done) else "pending"
        new_steps.append(PlanStep(desc, status))
    return Plan(steps=new_steps, revision=old_plan.revision + 1)


def _format_failure(ctx: dict) -> str:
    lines = [f"failed step {ctx.get('step_index')}: {ctx.get('description', '')}"]
    if ctx.get("last_error"):
        lines.append(f"last error: {ctx['last_error']}")
    for head in ctx.get("attempted", []):
        lines.append(f"attempted: {head}")
    return "\n".join(lines)


def execute_step(current_plan: Plan, step_index: int, gateway: LLMGateway,
                 session: sandbox.SessionHandle, task: TaskSpec,
                 transcript: AgentTranscript, limits: AgentLimits,
                 hooks: AgentHooks | None = None) -> StepResult:
    """Run the worker loop for one plan step (at most `limits.step_rounds`
    self-correction rounds); on exhaustion the step is marked failed and the
    failure context is returned for the replanner."""
    step = current_plan.steps[step_index]
    step.status = "running"
    config = default_prompt_config(
        "worker", output_dir_name=task.output_dir_name, max_rounds=limits.step_rounds,
        step_number=step_index + 1, step_description=step.description)
    system = inject_domain_knowledge(build_system_prompt(config), task.domain_knowledge)
    messages = [
        {"role": "system", "content": system},
        {"role": "user", "content": (
            f"TASK:\n{task.instruction}\n\n"
            f"CURRENT STEP ({step_index + 1}): {step.description}\n"
            "The sandbox namespace persists: variables from previous steps are available.")},
    ]
    rounds_used = 0
    attempted: list[str] = []
    last_error = ""
    while rounds_used < limits.step_rounds and len(transcript.rounds) < limits.max_rounds:
        try:
            turn = gateway.complete(messages)
        except GatewayError as exc:
            last_error = f"backend failure: {exc}"
            break
        messages.append({"role": "assistant", "content": turn.raw_text})
        done = has_token_line(turn.raw_text, STEP_DONE_TOKEN)
        cell = "\n".join(turn.code_cells).strip()

        if cell:
            rounds_used += 1
            attempted.append(cell.splitlines()[0][:80])
            if check_duplicate(transcript.rounds, cell) == "duplicate_alert":
                obs = _synthetic_observation(DEDUP_ALERT)
                _add_round(transcript, Round(turn.prose, cell, obs, executed=False), hooks)
                transcript.dedup_events.append(
                    (len(transcript.rounds), normalized_cell_hash(cell)))
            else:
                obs = sandbox.execute(session, cell)  # budget errors propagate
                _add_round(transcript, Round(turn.prose, cell, obs, executed=True), hooks)
                if not obs.ok:
                    record_error(transcript.error_memory, obs, cell, len(transcript.rounds))
                    last_error = error_signature(obs.stderr)
            context = render_observation(transcript.rounds[-1].observation)
            memory_block = render_error_memory(transcript.error_memory)
            if memory_block:
                context += "\n\n" + memory_block
            messages.append({"role": "user", "content": context})
        elif not done:
            obs = _synthetic_observation(NO_CODE_NUDGE)
            _add_round(transcript, Round(turn.prose, "", obs), hooks)
            messages.append({"role": "user", "content": render_observation(obs)})
            rounds_used += 1

        if done:
            step.status = "done"
            return StepResult("done", rounds_used)

    step.status = "failed"
    return StepResult("failed", rounds_used, failure_context={
        "step_index": step_index + 1,
        "description": step.description,
        "last_error": last_error,
        "attempted": attempted[-3:],
    })


def run_dual(task: TaskSpec, gateway: LLMGateway, session: sandbox.SessionHandle,
             limits: AgentLimits | None = None, hooks: AgentHooks | None = None) -> AgentTranscript:
    """Plan-execute-replan pipeline sharing the single sandbox namespace."""
    limits = limits or AgentLimits()
    transcript = AgentTranscript(task_id=task.id, architecture="dual",
                                 workspace_dir=session.workspace_dir)
    before = gateway.ledger.snapshot()
    end_reason = "failure"
    try:
        # mandated inspection round grounds the planner in the real schema
        inspect_cell = "files = list_files()"
        obs = sandbox.execute(session, inspect_cell)
        _add_round(transcript, Round("schema inspection", inspect_cell, obs, executed=True),
                   hooks)
        schema_summary = obs.stdout.strip()

        current = plan(task, task.domain_knowledge, schema_summary, gateway)
        transcript.plan_history.append(current)
        if hooks and hooks.on_plan:
            hooks.on_plan(current)

        while True:
            pending = [i for i, s in enumerate(current.steps) if s.status == "pending"]
            if not pending:
                end_reason = "finished"
                break
            if len(transcript.rounds) >= limits.max_rounds:
                end_reason = "round_limit"
                break
            idx = pending[0]
            if hooks and hooks.gate_step:
                new_desc = hooks.gate_step(idx, current.steps[idx].description)
                if new_desc:
                    current.steps[idx].description = new_desc
            result = execute_step(current, idx, gateway, session, task,
                                  transcript, limits, hooks)
            if result.status == "done":
                continue
            if len(transcript.rounds) >= limits.max_rounds:
                end_reason = "round_limit"
                break
            try:
                current = replan(current, result.failure_context or {}, gateway, task)
            except ReplanBudgetExhausted:
                end_reason = "failure"
                break
            transcript.plan_history.append(current)
            if hooks and hooks.on_plan:
                hooks.on_plan(current)
    except sandbox.TaskBudgetExhausted:
        end_reason = "timeout"
    except (sandbox.SessionDead, GatewayError, PlanUnparsable, PlanOutOfBounds) as exc:
        _add_round(transcript, Round(f"[pipeline failure: {exc}]", "", None), hooks)
        end_reason = "backend_failure"

    _finalize(transcript, task, gateway, before, end_reason)
    return transcript


def run_agent(architecture: str, task: TaskSpec, gateway: LLMGateway,
              session: sandbox.SessionHandle, limits: AgentLimits | None = None,
              hooks: AgentHooks | None = None) -> AgentTranscript:
    if architecture == "single":
        return run_single(task, gateway, session, limits, hooks=hooks)
    if architecture == "dual":
        return run_dual(task, gateway, session, limits, hooks=hooks)
    raise ValueError(f"unknown architecture {architecture!r}")
