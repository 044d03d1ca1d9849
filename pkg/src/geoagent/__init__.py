"""geoagent: LLM agent runtime for multi-step geospatial analysis plus a
three-layer evaluation harness (code structure, reasoning process, output
correctness) with composite scoring."""

__version__ = "0.1.0"

from . import agents, llm, metrics, orchestrator, prompts, sandbox, tasks  # noqa: F401
