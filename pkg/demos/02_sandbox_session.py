"""A tour of the persistent execution sandbox.

One kernel process per session: bindings persist across cells, output streams
are truncated asymmetrically (stdout keeps its freshest tail, stderr keeps the
original diagnostic head), forbidden imports fail with a guiding message, and
the file-listing tool reports exact, case-sensitive names.
"""
import tempfile
from pathlib import Path

from geoagent import sandbox

workspace = Path(tempfile.mkdtemp(prefix="sandbox-demo-"))
(workspace / "block.geojson").write_text('{"type": "FeatureCollection", "features": []}')
(workspace / "Air_Quality.csv").write_text("station,pm25\nA,12\nB,31\n")

policy = sandbox.SandboxPolicy(preload=[], stdout_limit=160, stderr_limit=600,
                               task_budget_s=120.0, cell_timeout_s=5.0)
session = sandbox.start_session(workspace, policy)
print(f"session {session.session_id} on {workspace}")

print("\n-- persistence: a binding from cell 1 is visible in cell 2")
sandbox.execute(session, "pm_threshold = 25")
obs = sandbox.execute(session, "print('threshold is', pm_threshold)")
print("  cell 2 stdout:", obs.stdout.strip())

print("\n-- exact file names (never guessed, never normalized)")
for item in sandbox.list_files(session):
    print(f"  {item['name']}  ({item['kind']}, {item['size']} bytes)")

print("\n-- asymmetric truncation")
obs = sandbox.execute(session, "print('x' * 1000)")
print("  stdout truncated:", obs.truncated_stdout)
print("  kept tail, marker first line:", obs.stdout.splitlines()[0])
obs = sandbox.execute(session, "import sys\nsys.stderr.write('E' * 1000)")
print("  stderr truncated:", obs.truncated_stderr)
print("  kept head, marker last line:", obs.stderr.splitlines()[-1])

print("\n-- forbidden import is blocked at execution time, with an alternative")
obs = sandbox.execute(session, "import arcpy")
print("  ok:", obs.ok)
print("  message:", obs.stderr.strip().splitlines()[-1])
print("  namespace effect:", obs.new_vars)

print("\n-- a runaway cell is interrupted at the per-cell cap; the kernel survives")
obs = sandbox.execute(session, "import time\ntime.sleep(60)")
print("  ok:", obs.ok, "| marker present:", sandbox.CELL_TIMEOUT_MARKER in obs.stderr)
obs = sandbox.execute(session, "print('kernel still responsive')")
print("  follow-up:", obs.stdout.strip())

print("\n-- offline documentation search")
index = sandbox.DocIndex.load()
for hit in sandbox.search_docs("buffer crs", index, k=2):
    print(f"  [{hit.id}] {hit.title}")

stats = sandbox.shutdown(session)
print(f"\nshutdown: {stats.rounds} rounds, {stats.wall_time_s:.2f}s wall time")
