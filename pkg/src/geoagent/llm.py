"""Unified model-backend gateway.

One `LLMGateway` wraps any transport that maps a message list to raw text:
an HTTP chat-completions endpoint, or the deterministic `ScriptedBackend`
used by tests and demos.  The gateway normalizes raw output into prose +
code cells, estimates context usage before any network call, retries
transient transport failures, and keeps a monotone token/cost ledger.
"""
from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources

import httpx


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    """Transient transport failure (after retries are exhausted)."""


class ContextOverflow(GatewayError):
    def __init__(self, estimated: int, limit: int):
        super().__init__(f"history estimate {estimated} tokens exceeds context limit {limit}")
        self.estimated = estimated
        self.limit = limit


class ProviderRefusal(GatewayError):
    """The provider returned a well-formed refusal; never retried."""


class ScriptExhausted(GatewayError):
    """The scripted backend ran out of canned replies."""


@dataclass(frozen=True)
class BackendConfig:
    model_id: str
    endpoint: str = ""
    auth_env: str = ""
    price_in: float = 0.0   # currency per 1e6 input tokens
    price_out: float = 0.0  # currency per 1e6 output tokens
    context_limit: int = 128_000
    max_output_tokens: int = 4096
    request_timeout_s: float = 120.0

    def __post_init__(self):
        if self.price_in < 0 or self.price_out < 0:
            raise ValueError("prices must be >= 0")
        if self.context_limit <= 0:
            raise ValueError("context_limit must be > 0")


def load_backend_config(model_id: str, path=None) -> BackendConfig:
    """Load one model's row from the bundled (or given) backends file."""
    if path is None:
        raw = resources.files("geoagent.assets").joinpath("backends.json").read_text()
    else:
        raw = open(path).read()
    table = json.loads(raw)["backends"]
    if model_id not in table:
        raise KeyError(f"unknown backend {model_id!r}; known: {sorted(table)}")
    return BackendConfig(model_id=model_id, **table[model_id])


@dataclass
class ModelTurn:
    raw_text: str
    prose: str
    code_cells: list[str]
    tokens_in: int
    tokens_out: int
    cost: float


def estimate_tokens(text: str) -> int:
    """Documented character-based estimator: ~4 characters per token."""
    return (len(text) + 3) // 4


def estimate_cost(tokens_in: int, tokens_out: int, config: BackendConfig) -> float:
    if tokens_in < 0 or tokens_out < 0:
        raise ValueError("token counts must be >= 0")
    return tokens_in * config.price_in / 1e6 + tokens_out * config.price_out / 1e6


_FENCE_RE = re.compile(r"```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\n(.*?)```", re.DOTALL)


def _line_is_statement(line: str) -> bool:
    line = line.strip()
    if not line:
        return False
    # a lone word is prose-ish (FINISH, Done, ...), not a code cell
    if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", line):
        return False
    try:
        compile(line, "<turn>", "exec")
        return True
    except SyntaxError:
        # an opening compound statement still counts ("for x in y:", "def f():")
        try:
            compile(line + "\n    pass", "<turn>", "exec")
            return True
        except SyntaxError:
            return False


def normalize_output(raw: str) -> tuple[str, list[str]]:
    """Split a raw model turn into (prose, code_cells).

    Fenced blocks are extracted in document order.  When there is no fence
    and the first non-blank line parses as a statement, the whole turn is
    treated as one raw code cell (some models emit unfenced code).
    Idempotent: prose re-normalizes to itself, a cell re-normalizes to
    exactly that cell.
    """
    cells = []
    for m in _FENCE_RE.finditer(raw):
        body = m.group(2)
        if body.endswith("\n"):
            body = body[:-1]
        cells.append(body)
    if cells:
        prose = _FENCE_RE.sub("", raw)
        return prose.strip(), cells
    first_line = next((ln for ln in raw.splitlines() if ln.strip()), "")
    if _line_is_statement(first_line):
        return "", [raw.strip("\n")]
    return raw.strip(), []


class UsageLedger:
    """Session-wide token/cost accounting; totals never decrease."""

    def __init__(self):
        self._lock = threading.Lock()
        self.tokens_in = 0
        self.tokens_out = 0
        self.cost = 0.0
        self.turns = 0

    def add(self, tokens_in: int, tokens_out: int, cost: float):
        with self._lock:
            self.tokens_in += tokens_in
            self.tokens_out += tokens_out
            self.cost += cost
            self.turns += 1

    def snapshot(self) -> dict:
        with self._lock:
            return {"tokens_in": self.tokens_in, "tokens_out": self.tokens_out,
                    "cost": self.cost, "turns": self.turns}


class ScriptedBackend:
    """Replays an ordered list of canned replies; raises when exhausted."""

    def __init__(self, replies):
        self.replies = list(replies)
        self._cursor = 0

    def send(self, messages, config) -> tuple[str, int | None, int | None]:
        if self._cursor >= len(self.replies):
            raise ScriptExhausted(f"scripted backend exhausted after {self._cursor} replies")
        text = self.replies[self._cursor]
        self._cursor += 1
        return text, None, None


class HttpChatBackend:
    """Chat-completions-style HTTP transport (message list in, one message out)."""

    def __init__(self, client: httpx.Client | None = None):
        self._client = client

    def send(self, messages, config: BackendConfig) -> tuple[str, int | None, int | None]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.auth_env, "") if config.auth_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": config.model_id,
            "messages": list(messages),
            "max_tokens": config.max_output_tokens,
        }
        client = self._client or httpx
        try:
            resp = client.post(config.endpoint, json=payload, headers=headers,
                               timeout=config.request_timeout_s)
        except httpx.HTTPError as exc:
            raise TransportError(f"transport failure: {exc}") from exc
        if resp.status_code in (429,) or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code != 200:
            raise ProviderRefusal(f"HTTP {resp.status_code}: {resp.text[:200]}")
        body = resp.json()
        choice = body["choices"][0]
        if choice.get("finish_reason") == "content_filter" or choice["message"].get("refusal"):
            raise ProviderRefusal(str(choice))
        text = choice["message"].get("content") or ""
        usage = body.get("usage") or {}
        return text, usage.get("prompt_tokens"), usage.get("completion_tokens")


class LLMGateway:
    """Provider-agnostic completion interface with retries and accounting."""

    def __init__(self, config: BackendConfig, transport, retries: int = 3,
                 backoff_s: float = 1.0, sleep=time.sleep):
        self.config = config
        self.transport = transport
        self.retries = retries
        self.backoff_s = backoff_s
        self._sleep = sleep
        self.ledger = UsageLedger()

    def complete(self, history) -> ModelTurn:
        """Run one completion over the message history.

        The context estimate is checked before any network call; transient
        transport errors are retried with exponential backoff, refusals are
        not.
        """
        if not history:
            raise ValueError("history must be non-empty")
        estimated_in = sum(estimate_tokens(m.get("content", "")) for m in history)
        if estimated_in > self.config.context_limit:
            raise ContextOverflow(estimated_in, self.config.context_limit)

        last_exc = None
        for attempt in range(self.retries):
            try:
                text, usage_in, usage_out = self.transport.send(history, self.config)
                break
            except TransportError as exc:
                last_exc = exc
                if attempt + 1 < self.retries:
                    self._sleep(self.backoff_s * (2 ** attempt))
        else:
            raise TransportError(f"gave up after {self.retries} attempts: {last_exc}")

        tokens_in = usage_in if usage_in is not None else estimated_in
        tokens_out = usage_out if usage_out is not None else estimate_tokens(text)
        cost = estimate_cost(tokens_in, tokens_out, self.config)
        self.ledger.add(tokens_in, tokens_out, cost)
        prose, cells = normalize_output(text)
        return ModelTurn(raw_text=text, prose=prose, code_cells=cells,
                         tokens_in=tokens_in, tokens_out=tokens_out, cost=cost)


def scripted_gateway(replies, model_id: str = "scripted", price_in: float = 0.0,
                     price_out: float = 0.0, context_limit: int = 1_000_000) -> LLMGateway:
    """Convenience constructor used all over the tests and demos."""
    config = BackendConfig(model_id=model_id, price_in=price_in, price_out=price_out,
                           context_limit=context_limit)
    return LLMGateway(config, ScriptedBackend(replies))
