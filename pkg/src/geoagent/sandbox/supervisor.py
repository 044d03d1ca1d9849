"""Sandbox supervisor: kernel process lifecycle, wire protocol, limits.

The supervisor owns exactly one kernel subprocess per session, enforces the
task wall-clock budget and per-cell timeout, applies the asymmetric stream
truncation policy (stdout keeps its tail, stderr keeps its head), and
exposes the file-listing and doc-search tool endpoints.
"""
from __future__ import annotations

import json
import os
import queue
import subprocess
import sys
import threading
import time
import uuid
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path

KERNEL_PATH = str(Path(__file__).with_name("kernel.py"))

STDOUT_MARKER = "[...truncated: first {n} bytes dropped]"
STDERR_MARKER = "[...truncated: last {n} bytes dropped]"
CELL_TIMEOUT_MARKER = "CellTimeoutError"

DEFAULT_PRELOAD = [
    "geopandas", "rasterio", "shapely", "numpy", "pandas", "scipy",
    "matplotlib", "sklearn", "xarray",
]
DEFAULT_FORBIDDEN = {
    "pykrige": "scipy.interpolate",
    "arcpy": "geopandas / rasterio / shapely (open-source stack)",
}


class SandboxError(Exception):
    pass


class KernelLaunchFailure(SandboxError):
    pass


class HandshakeTimeout(SandboxError):
    pass


class SessionDead(SandboxError):
    pass


class TaskBudgetExhausted(SandboxError):
    pass


class IndexMissing(SandboxError):
    pass


@dataclass
class SandboxPolicy:
    forbidden_imports: dict = field(default_factory=lambda: dict(DEFAULT_FORBIDDEN))
    preload: list = field(default_factory=list)
    stdout_limit: int = 8192      # bytes kept per observation, tail
    stderr_limit: int = 4096      # bytes kept per observation, head
    raw_stdout_cap: int = 1_000_000  # kernel-side caps before shipping
    raw_stderr_cap: int = 1_000_000
    cell_timeout_s: float = 120.0
    task_budget_s: float = 600.0
    handshake_timeout_s: float = 10.0
    grace_s: float = 2.0
    output_dir_name: str = "pred_results"
    doc_index_path: str | None = None
    kernel_path: str = KERNEL_PATH
    python_executable: str = sys.executable

    def kernel_policy(self) -> dict:
        index = self.doc_index_path or _bundled_doc_index_path()
        return {
            "forbidden_imports": self.forbidden_imports,
            "preload": self.preload,
            "doc_index_path": index,
            "raw_stdout_cap": self.raw_stdout_cap,
            "raw_stderr_cap": self.raw_stderr_cap,
        }


def default_policy(**overrides) -> SandboxPolicy:
    """Full GIS-stack policy; libraries missing on the host only warn."""
    policy = SandboxPolicy(preload=list(DEFAULT_PRELOAD))
    for key, value in overrides.items():
        setattr(policy, key, value)
    return policy


def _bundled_doc_index_path() -> str:
    return str(resources.files("geoagent.assets").joinpath("doc_snippets.json"))


@dataclass
class Observation:
    stdout: str
    stderr: str
    new_vars: list[str]
    ok: bool
    duration_ms: int
    truncated_stdout: bool = False
    truncated_stderr: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        return cls(**d)


def truncate_stream(text: str, limit: int, channel: str) -> tuple[str, bool]:
    """Byte-exact asymmetric truncation.

    stdout keeps the LAST `limit` bytes (latest results win), stderr keeps
    the FIRST `limit` bytes (original diagnostic wins).  The single-line
    marker does not count against the limit.
    """
    if limit <= 0:
        raise ValueError("limit must be > 0")
    raw = text.encode("utf-8")
    if len(raw) <= limit:
        return text, False
    dropped = len(raw) - limit
    if channel == "stdout":
        body = raw[-limit:].decode("utf-8", "replace")
        return STDOUT_MARKER.format(n=dropped) + "\n" + body, True
    if channel == "stderr":
        body = raw[:limit].decode("utf-8", "replace")
        return body + "\n" + STDERR_MARKER.format(n=dropped), True
    raise ValueError(f"unknown channel {channel!r}")


@dataclass
class SessionStats:
    rounds: int
    wall_time_s: float


class SessionHandle:
    """One kernel process bound to one prepared workspace."""

    def __init__(self, workspace_dir: str, policy: SandboxPolicy, process,
                 reader: "_LineReader", handshake: dict):
        self.session_id = uuid.uuid4().hex[:12]
        self.workspace_dir = str(workspace_dir)
        self.policy = policy
        self.kernel_process = process
        self.started_at = time.monotonic()
        self.round_counter = 0
        self.handshake = handshake
        self._reader = reader
        self._io_lock = threading.Lock()  # one in-flight request per session
        self._next_id = 1
        self._alive = True
        self._final_stats: SessionStats | None = None

    # -- plumbing ----------------------------------------------------------

    @property
    def alive(self) -> bool:
        return self._alive and self.kernel_process.poll() is None

    def remaining_budget_s(self) -> float:
        return self.policy.task_budget_s - (time.monotonic() - self.started_at)

    def _request(self, payload: dict, timeout: float) -> dict:
        with self._io_lock:
            payload["id"] = self._next_id
            self._next_id += 1
            try:
                self.kernel_process.stdin.write(json.dumps(payload) + "\n")
                self.kernel_process.stdin.flush()
            except (BrokenPipeError, OSError, ValueError) as exc:
                self._alive = False
                raise SessionDead(f"kernel pipe closed: {exc}") from exc
            line = self._reader.get(timeout)
            if line is None:
                self._kill()
                raise SessionDead("kernel did not respond in time")
            response = json.loads(line)
            if response.get("id") != payload["id"]:
                self._kill()
                raise SessionDead(
                    f"protocol desync: sent id {payload['id']}, got {response.get('id')}")
            return response

    def _kill(self):
        self._alive = False
        try:
            self.kernel_process.kill()
        except OSError:
            pass


class _LineReader:
    """Background thread pumping kernel stdout lines into a queue."""

    def __init__(self, stream):
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._pump, args=(stream,), daemon=True)
        self._thread.start()

    def _pump(self, stream):
        for line in stream:
            self._queue.put(line)
        self._queue.put(None)  # EOF sentinel

    def get(self, timeout: float) -> str | None:
        try:
            line = self._queue.get(timeout=timeout)
        except queue.Empty:
            return None
        return line


def start_session(workspace, policy: SandboxPolicy | None = None) -> SessionHandle:
    """Launch a kernel on a prepared workspace and exchange the handshake."""
    policy = policy or SandboxPolicy()
    workspace = Path(workspace)
    if not workspace.is_dir():
        raise KernelLaunchFailure(f"workspace does not exist: {workspace}")
    (workspace / policy.output_dir_name).mkdir(exist_ok=True)

    cmd = [policy.python_executable, "-u", policy.kernel_path,
           str(workspace), json.dumps(policy.kernel_policy())]
    env = dict(os.environ, MPLBACKEND="Agg")
    try:
        process = subprocess.Popen(
            cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL, text=True, env=env)
    except OSError as exc:
        raise KernelLaunchFailure(f"cannot launch kernel: {exc}") from exc

    reader = _LineReader(process.stdout)
    line = reader.get(policy.handshake_timeout_s)
    if line is None:
        process.kill()
        raise HandshakeTimeout(
            f"kernel did not answer handshake within {policy.handshake_timeout_s:g} s")
    try:
        handshake = json.loads(line)
    except ValueError as exc:
        process.kill()
        raise KernelLaunchFailure(f"bad handshake line: {line!r}") from exc
    if not handshake.get("hello"):
        process.kill()
        raise KernelLaunchFailure(f"unexpected handshake: {handshake}")
    return SessionHandle(str(workspace), policy, process, reader, handshake)


def execute(handle: SessionHandle, cell: str) -> Observation:
    """Run one cell in the persistent namespace.

    The cell gets min(per-cell cap, remaining task budget) of wall clock; the
    kernel interrupts it at the deadline, and a kernel that stops responding
    altogether is killed `grace_s` later.
    """
    if not handle.alive:
        raise SessionDead("session already terminated")
    remaining = handle.remaining_budget_s()
    if remaining <= 0:
        raise TaskBudgetExhausted(
            f"task budget of {handle.policy.task_budget_s:g} s exhausted")
    cell_timeout = min(handle.policy.cell_timeout_s, remaining)
    response = handle._request(
        {"op": "exec", "code": cell, "cell_timeout_s": cell_timeout},
        timeout=cell_timeout + handle.policy.grace_s)
    handle.round_counter += 1
    stdout, trunc_out = truncate_stream(response["stdout"], handle.policy.stdout_limit, "stdout")
    stderr, trunc_err = truncate_stream(response["stderr"], handle.policy.stderr_limit, "stderr")
    return Observation(
        stdout=stdout, stderr=stderr,
        new_vars=sorted(set(response.get("new_vars", []))),
        ok=bool(response["ok"]), duration_ms=int(response.get("duration_ms", 0)),
        truncated_stdout=trunc_out, truncated_stderr=trunc_err)


def list_files(handle: SessionHandle) -> list[dict]:
    """Exact, case-sensitive workspace inventory: name, size, kind."""
    if not handle.alive:
        raise SessionDead("session already terminated")
    response = handle._request({"op": "list_files"}, timeout=handle.policy.grace_s + 5.0)
    inventory = json.loads(response["stdout"])
    for item in inventory:
        item["kind"] = _classify_name(item["name"])
    return inventory


def _classify_name(name: str) -> str:
    from ..tasks import classify_data_file

    return classify_data_file(name)


def reset(handle: SessionHandle) -> bool:
    if not handle.alive:
        raise SessionDead("session already terminated")
    response = handle._request({"op": "reset"}, timeout=handle.policy.grace_s + 5.0)
    return bool(response["ok"])


def shutdown(handle: SessionHandle) -> SessionStats:
    """Terminate the kernel (graceful, then forced after 5 s). Idempotent."""
    if handle._final_stats is not None:
        return handle._final_stats
    stats = SessionStats(rounds=handle.round_counter,
                         wall_time_s=time.monotonic() - handle.started_at)
    if handle.alive:
        try:
            handle._request({"op": "shutdown"}, timeout=2.0)
        except (SessionDead, ValueError):
            pass
        try:
            handle.kernel_process.wait(timeout=5.0)
        except subprocess.TimeoutExpired:
            handle.kernel_process.kill()
    handle._alive = False
    handle._final_stats = stats
    return stats


# ---------------------------------------------------------------------------
# documentation search

@dataclass
class DocSnippet:
    id: str
    title: str
    text: str
    score: int = 0


class DocIndex:
    """Inverted keyword index over a bundled snippet corpus."""

    def __init__(self, snippets: list[dict]):
        self.snippets = snippets

    @classmethod
    def load(cls, path=None) -> "DocIndex":
        path = Path(path) if path else Path(_bundled_doc_index_path())
        if not path.is_file():
            raise IndexMissing(f"doc index not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except ValueError as exc:
            raise IndexMissing(f"doc index unreadable: {exc}") from exc
        return cls(doc.get("snippets", []))


def search_docs(query: str, index: DocIndex, k: int = 3) -> list[DocSnippet]:
    """Keyword-ranked snippets; deterministic (score desc, then id asc)."""
    if index is None:
        raise IndexMissing("no doc index loaded")
    terms = [t for t in query.lower().split() if t]
    scored = []
    for snip in index.snippets:
        text = (snip.get("title", "") + " " + snip.get("text", "")).lower()
        score = sum(text.count(t) for t in terms)
        if score > 0:
            scored.append(DocSnippet(snip.get("id", ""), snip.get("title", ""),
                                     snip.get("text", ""), score))
    scored.sort(key=lambda s: (-s.score, s.id))
    return scored[:k]
