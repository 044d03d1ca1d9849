"""Dual-agent pipeline: plan, execute step by step, replan on failure.

The scripted worker fails step 2 repeatedly, the planner is re-invoked with
the failure context and produces a simplified plan that carries the completed
step forward, and the run recovers. Both plan revisions are kept in the
transcript.
"""
import tempfile
from pathlib import Path

from geoagent import agents, sandbox
from geoagent.llm import scripted_gateway
from geoagent.tasks import flatten_data_layout, load_task

from common import SOLVE_CELL, build_toy_task

root = Path(tempfile.mkdtemp(prefix="dual-demo-"))
task = load_task(build_toy_task(root))
workspace = root / "workspace"
flatten_data_layout(task.task_dir, workspace)

step_budget = 2
replies = [
    "1. Inspect the inputs\n2. Fit a kriging surface\n3. Save the outputs",
    # step 1 succeeds
    "```python\ninspected = files\n```\nSTEP COMPLETE",
    # step 2 burns its whole budget on a library that is not available
    "```python\nimport pykrige\n```",
    "```python\nfrom pykrige.ok import OrdinaryKriging\n```",
    # the replanner answers with a simplified route, keeping step 1
    "1. Inspect the inputs\n2. Summarize values directly\n3. Save the outputs",
    "```python\nimport csv\nrows = list(csv.reader(open('points.csv')))\n```\nSTEP COMPLETE",
    f"```python\n{SOLVE_CELL}```\nSTEP COMPLETE",
]

policy = sandbox.SandboxPolicy(preload=[], task_budget_s=120.0)
session = sandbox.start_session(workspace, policy)
try:
    transcript = agents.run_dual(task, scripted_gateway(replies), session,
                                 limits=agents.AgentLimits(step_rounds=step_budget))
finally:
    sandbox.shutdown(session)

for plan in transcript.plan_history:
    print(f"plan revision {plan.revision}:")
    for i, step in enumerate(plan.steps, 1):
        print(f"  {i}. [{step.status:7}] {step.description}")

print(f"\nrounds used: {len(transcript.rounds)} "
      f"(1 inspection + workers across steps)")
print(f"outcome: {transcript.outcome}")
print("error memory after the sandbox blocked the forbidden library:")
for entry in transcript.error_memory.entries:
    print(f"  {entry.signature}")
print(f"produced files: {[Path(p).name for p in agents.produced_files(transcript, task)]}")
