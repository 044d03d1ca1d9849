"""All three evaluation layers applied to one finished run.

L1 scores the consolidated script against the reference code, L2 embeds the
cleaned execution log (offline mock embedder here) and asks a rubric judge
for the five process dimensions, L3 compares the produced files against the
gold outputs, and the per-task numbers feed the composite.
"""
import tempfile
from pathlib import Path

from geoagent import agents, orchestrator as orc, sandbox
from geoagent.llm import scripted_gateway
from geoagent.metrics import (MockEmbeddingProvider, clean_log, cosine, embed,
                              judge_reasoning, score_code, task_output_score)
from geoagent.tasks import flatten_data_layout, load_task

from common import build_toy_task, single_agent_replies

root = Path(tempfile.mkdtemp(prefix="eval-demo-"))
task = load_task(build_toy_task(root))
workspace = root / "workspace"
flatten_data_layout(task.task_dir, workspace)

session = sandbox.start_session(workspace, sandbox.SandboxPolicy(preload=[]))
try:
    transcript = agents.run_single(task, scripted_gateway(single_agent_replies()),
                                   session)
finally:
    sandbox.shutdown(session)
success = agents.determine_success(transcript, task)
print(f"run finished: outcome={transcript.outcome}, success={success}")

print("\nL1 - code structure vs the reference solution")
l1 = score_code(transcript.consolidated_script, task.gold_code)
print(f"  BLEU-4 {l1.bleu4.score:.3f} | ROUGE-L {l1.rouge.f_lcs:.3f} | "
      f"edit {l1.edit_sim:.3f} | CodeBLEU {l1.codebleu.total:.3f} | "
      f"API-F1 {l1.api_f1:.3f}")

print("\nL2 - reasoning process")
log_text = clean_log(transcript)
print(f"  cleaned log: {len(log_text)} chars, "
      f"{log_text.count('[ROUND')} round blocks")
embedder = MockEmbeddingProvider(dim=64)
c_emb = cosine(embed(log_text, embedder), embed(task.gold_code, embedder))
print(f"  embedding cosine (mock provider): {c_emb:.3f}")
judge = scripted_gateway(["\n".join([
    "task_understanding: 4.5",
    "justification_task_understanding: read the instruction correctly",
    "data_handling: 4.0",
    "justification_data_handling: inspected files before analysis",
    "methodology: 3.5",
    "justification_methodology: direct but adequate",
    "self_correction: 4.0",
    "justification_self_correction: no wasted rounds",
    "result_completeness: 5.0",
    "justification_result_completeness: both outputs delivered",
])])
verdict = judge_reasoning(task, task.gold_code, log_text, judge)
for dim, value in verdict.scores.items():
    print(f"  {dim:22} {value:.1f}  - {verdict.justifications[dim]}")
print(f"  judge average: {verdict.average:.2f} (diagnostic only, not in the composite)")

print("\nL3 - output accuracy")
preds = agents.produced_files(transcript, task)
q_out, per_file = task_output_score(preds, task.gold_outputs)
for ref, item in zip(task.gold_outputs, per_file):
    print(f"  {ref.kind:8} {Path(ref.path).name:14} -> {item.score:.3f}")
print(f"  Q_out = {q_out:.3f}")

print("\ncomposite for this one-task 'model'")
s = orc.composite(float(success), q_out, l1.api_f1, max(c_emb, 0.0))
print(f"  0.4*{float(success):.2f} + 0.3*{q_out:.2f} + 0.15*{l1.api_f1:.2f} "
      f"+ 0.15*{max(c_emb, 0.0):.2f} = {s:.3f}")
