"""Single-agent loop end to end on a toy task, driven by scripted replies.

The run shows the full round structure (thought / code cell / observation),
the duplicate-code guard firing on a repeated cell, a failure signature
entering the error memory, and the consolidated script that only keeps the
cells that actually executed cleanly.
"""
import tempfile
from pathlib import Path

from geoagent import agents, sandbox
from geoagent.llm import scripted_gateway
from geoagent.tasks import flatten_data_layout, load_task

from common import SOLVE_CELL, build_toy_task

root = Path(tempfile.mkdtemp(prefix="agent-demo-"))
task = load_task(build_toy_task(root))
workspace = root / "workspace"
flatten_data_layout(task.task_dir, workspace)

replies = [
    "Listing files first.\n```python\nfiles = list_files()\n```",
    "Oops, a bad expression.\n```python\nsummary = points_table.describe()\n```",
    # the model stubbornly repeats itself once: the dedup guard fires
    "Trying again.\n```python\nsummary = points_table.describe()\n```",
    "Right, load it properly.\n```python\nimport csv\nrows = list(csv.reader(open('points.csv')))\n```",
    f"Save and finish.\n```python\n{SOLVE_CELL}```\nFINISH",
]

policy = sandbox.SandboxPolicy(preload=[], task_budget_s=120.0)
session = sandbox.start_session(workspace, policy)
try:
    transcript = agents.run_single(task, scripted_gateway(replies), session)
finally:
    sandbox.shutdown(session)

for i, rnd in enumerate(transcript.rounds, 1):
    status = "ok" if (rnd.observation and rnd.observation.ok) else (
        "DUPLICATE-ALERT" if not rnd.executed else "error")
    first_line = rnd.action_cell.splitlines()[0] if rnd.action_cell else "(no cell)"
    print(f"round {i}: [{status:15}] {first_line}")

print(f"\noutcome: {transcript.outcome}")
print(f"dedup events: {[(r, h[:10]) for r, h in transcript.dedup_events]}")
print("error memory:")
for entry in transcript.error_memory.entries:
    print(f"  round {entry.round_index}: {entry.signature}")
print(f"success predicate: {agents.determine_success(transcript, task)}")
print(f"produced files: {[Path(p).name for p in agents.produced_files(transcript, task)]}")
print("\nconsolidated script (ok cells only):")
print(transcript.consolidated_script)
