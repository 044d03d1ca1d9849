"""Shared scaffolding for the demo scripts: a tiny self-contained benchmark
task (point table in, stats table + text-format raster out) plus the scripted
model replies that solve it."""
import json
import textwrap
from pathlib import Path

SOLVE_CELL = textwrap.dedent("""\
    with open("pred_results/stats.csv", "w") as fh:
        fh.write("id,v\\n1,1.5\\n2,2.5\\n3,4.5\\n")
    with open("pred_results/surface.grid", "w") as fh:
        fh.write("2 2 -9999 EPSG:32633\\n1 2\\n3 4\\n")
    """)


def build_toy_task(root: Path, task_id: str = "T01") -> Path:
    tdir = root / task_id
    (tdir / "data").mkdir(parents=True)
    (tdir / "gold").mkdir()
    (tdir / "data" / "points.csv").write_text(
        "id,x,y,value\n1,0,0,1.5\n2,1,1,2.5\n3,2,2,4.5\n")
    (tdir / "gold" / "solution.py").write_text(textwrap.dedent("""\
        import pandas as pd

        df = pd.read_csv("points.csv")
        result = df[["id", "value"]].rename(columns={"value": "v"})
        result.to_csv("pred_results/stats.csv", index=False)
        with open("pred_results/surface.grid", "w") as fh:
            fh.write("2 2 -9999 EPSG:32633\\n1 2\\n3 4\\n")
        """))
    (tdir / "gold" / "stats.csv").write_text("id,v\n1,1.5\n2,2.5\n3,4.5\n")
    (tdir / "gold" / "surface.grid").write_text("2 2 -9999 EPSG:32633\n1 2\n3 4\n")
    (tdir / "manifest.json").write_text(json.dumps({
        "id": task_id,
        "instruction": "Summarize the point layer into an id/value table and a small surface grid.",
        "category": "understanding_spatial_distributions",
        "data": [{"logical_name": "points", "path": "data/points.csv", "kind": "tabular"}],
        "domain_knowledge": "Step 1: inspect the data. Step 2: export id/value stats.",
        "gold_code": "gold/solution.py",
        "gold_outputs": [
            {"kind": "tabular", "path": "gold/stats.csv"},
            {"kind": "raster", "path": "gold/surface.grid"},
        ],
    }, indent=1))
    return tdir


def single_agent_replies():
    return [
        "Listing the files first.\n```python\nfiles = list_files()\n```",
        "Loading the table.\n```python\nimport csv\nrows = list(csv.reader(open('points.csv')))\n```",
        f"Saving outputs.\n```python\n{SOLVE_CELL}```\nFINISH",
    ]


def dual_agent_replies():
    return [
        "1. Inspect the data files\n2. Load the point table\n3. Save the outputs",
        "Checking files.\n```python\nnames = files\n```\nSTEP COMPLETE",
        "Loading.\n```python\nimport csv\nrows = list(csv.reader(open('points.csv')))\n```\nSTEP COMPLETE",
        f"Writing results.\n```python\nassert len(rows) == 4\n{SOLVE_CELL}```\nSTEP COMPLETE",
    ]
