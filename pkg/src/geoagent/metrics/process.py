"""Reasoning-process metrics: log cleaning, embedding cosine, judge rubric.

The embedding and judge calls go through small provider interfaces so tests
and offline runs can swap in deterministic fakes.
"""
from __future__ import annotations

import hashlib
import re
import time
from dataclasses import dataclass, field
from importlib import resources

import httpx
import numpy as np

LOG_CAP_CHARS = 30_000  # set to None to ship the full log to providers

JUDGE_DIMENSIONS = (
    "task_understanding",
    "data_handling",
    "methodology",
    "self_correction",
    "result_completeness",
)

_ANSI_RE = re.compile(r"\x1b\[[0-9;?]*[A-Za-z]|\x1b\][^\x07]*\x07")
_CTRL_RE = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f\x7f]")
_BLOB_RE = re.compile(r"[A-Za-z0-9+/=]{240,}")


class ProviderError(Exception):
    pass


class ZeroVector(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class JudgeUnparsable(Exception):
    pass


class JudgeBackendError(Exception):
    pass


def clean_log(transcript, cap: int | None = LOG_CAP_CHARS) -> str:
    """Flatten a transcript into THOUGHT/ACTION/OBSERVATION text.

    Terminal escape codes are stripped, long base64-looking runs are replaced
    by a placeholder, and when the result exceeds `cap` every round keeps a
    proportional excerpt so no round disappears entirely.
    """
    blocks = []
    for i, rnd in enumerate(transcript.rounds, 1):
        obs = rnd.observation
        obs_text = ""
        if obs is not None:
            obs_text = f"{obs.stdout}\n{obs.stderr}".strip()
        block = (
            f"[ROUND {i}]\n"
            f"THOUGHT: {rnd.thought.strip()}\n"
            f"ACTION:\n{rnd.action_cell.strip()}\n"
            f"OBSERVATION:\n{obs_text}"
        )
        blocks.append(_scrub(block))
    if not blocks:
        return ""
    text = "\n\n".join(blocks)
    if cap is None or len(text) <= cap:
        return text
    per_round = max(80, cap // len(blocks))
    excerpts = [_excerpt(b, per_round) for b in blocks]
    return "\n\n".join(excerpts)[:cap]


def _scrub(text: str) -> str:
    text = _ANSI_RE.sub("", text)
    text = _CTRL_RE.sub("", text)
    return _BLOB_RE.sub("[binary omitted]", text)


def _excerpt(block: str, budget: int) -> str:
    if len(block) <= budget:
        return block
    head = budget * 2 // 3
    tail = budget - head
    return block[:head] + "\n[...]\n" + block[-tail:]


# ---------------------------------------------------------------------------
# embeddings

@dataclass
class EmbeddingConfig:
    model_id: str = "text-embedding-3-large"
    endpoint: str = ""
    auth_env: str = "OPENAI_API_KEY"
    dim: int = 3072
    request_timeout_s: float = 60.0
    retries: int = 3


class MockEmbeddingProvider:
    """Deterministic offline embedder.

    With an explicit mapping, each known text becomes that unit basis vector;
    unknown texts hash to a stable basis index.
    """

    def __init__(self, dim: int = 8, mapping: dict[str, int] | None = None):
        self.dim = dim
        self.mapping = mapping or {}

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        if text in self.mapping:
            vec[self.mapping[text] % self.dim] = 1.0
            return vec
        for token in text.split() or [""]:
            h = int(hashlib.sha256(token.encode()).hexdigest()[:8], 16)
            vec[h % self.dim] += 1.0
        if not vec.any():
            vec[0] = 1.0
        return vec


class HttpEmbeddingProvider:
    """OpenAI-style /embeddings endpoint client with simple retries."""

    def __init__(self, config: EmbeddingConfig, sleep=time.sleep):
        self.config = config
        self._sleep = sleep

    def embed(self, text: str) -> np.ndarray:
        import os

        headers = {}
        key = os.environ.get(self.config.auth_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {"model": self.config.model_id, "input": text}
        last = None
        for attempt in range(self.config.retries):
            try:
                resp = httpx.post(self.config.endpoint, json=payload, headers=headers,
                                  timeout=self.config.request_timeout_s)
                resp.raise_for_status()
                return np.asarray(resp.json()["data"][0]["embedding"], dtype=float)
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last = exc
                self._sleep(2 ** attempt)
        raise ProviderError(f"embedding provider failed after retries: {last}")


def embed(text: str, provider) -> np.ndarray:
    return np.asarray(provider.embed(text), dtype=float)


def cosine(a, b) -> float:
    """Plain cosine similarity; rejects mismatched dims and zero vectors.

    Inputs are rescaled by their max magnitude first, so tiny or huge vectors
    do not under/overflow the norm computation.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    ma, mb = np.max(np.abs(a)), np.max(np.abs(b))
    if ma == 0 or mb == 0:
        raise ZeroVector("cosine undefined for zero vectors")
    a = a / ma
    b = b / mb
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


# ---------------------------------------------------------------------------
# LLM-as-judge

def _load_rubric() -> str:
    return resources.files("geoagent.assets").joinpath("judge_rubric.txt").read_text()


_SCORE_RE = {dim: re.compile(rf"^{dim}\s*:\s*([0-9.]+)\s*$", re.MULTILINE | re.IGNORECASE)
             for dim in JUDGE_DIMENSIONS}
_JUST_RE = {dim: re.compile(rf"^justification_{dim}\s*:\s*(.*)$", re.MULTILINE | re.IGNORECASE)
            for dim in JUDGE_DIMENSIONS}


@dataclass
class JudgeScores:
    scores: dict[str, float]
    justifications: dict[str, str]
    average: float


@dataclass
class ProcessMetric:
    """Full L2 report for one run."""

    c_emb: float | None = None
    judge: JudgeScores | None = None
    embedding_agent: list[float] = field(default_factory=list)
    embedding_gold: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        out: dict = {"c_emb": self.c_emb}
        if self.judge is not None:
            out["judge"] = {"scores": self.judge.scores,
                            "justifications": self.judge.justifications,
                            "average": self.judge.average}
        return out


def parse_judge_reply(text: str) -> JudgeScores:
    """Parse the fixed key:value rubric layout; out-of-range scores are rejected."""
    scores: dict[str, float] = {}
    justs: dict[str, str] = {}
    for dim in JUDGE_DIMENSIONS:
        m = _SCORE_RE[dim].search(text)
        if m is None:
            raise JudgeUnparsable(f"missing score line for {dim}")
        value = float(m.group(1))
        if not (1.0 <= value <= 5.0):
            raise JudgeUnparsable(f"{dim} score {value} outside 1-5")
        scores[dim] = value
        jm = _JUST_RE[dim].search(text)
        justs[dim] = jm.group(1).strip() if jm else ""
    average = sum(scores.values()) / len(JUDGE_DIMENSIONS)
    return JudgeScores(scores, justs, average)


def judge_reasoning(task, gold_code: str, log: str, judge_gateway) -> JudgeScores:
    """Score an execution log on the five rubric dimensions via an LLM judge.

    One retry with a stricter format reminder; a second unparsable reply or a
    backend failure raises.
    """
    rubric = _load_rubric()
    user = (
        f"TASK INSTRUCTION:\n{task.instruction}\n\n"
        f"REFERENCE SOLUTION CODE:\n{gold_code}\n\n"
        f"EXECUTION LOG:\n{log}\n"
    )
    messages = [{"role": "system", "content": rubric},
                {"role": "user", "content": user}]
    try:
        turn = judge_gateway.complete(messages)
    except Exception as exc:
        raise JudgeBackendError(str(exc)) from exc
    try:
        return parse_judge_reply(turn.raw_text)
    except JudgeUnparsable:
        pass
    retry = messages + [
        {"role": "assistant", "content": turn.raw_text},
        {"role": "user", "content": "Reply again using ONLY the required key: value lines."},
    ]
    try:
        turn2 = judge_gateway.complete(retry)
    except Exception as exc:
        raise JudgeBackendError(str(exc)) from exc
    return parse_judge_reply(turn2.raw_text)
