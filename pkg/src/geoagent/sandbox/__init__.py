from .supervisor import (  # noqa: F401
    SandboxPolicy, SessionHandle, Observation, SessionStats,
    DocIndex, DocSnippet,
    start_session, execute, list_files, reset, shutdown, search_docs,
    truncate_stream, default_policy,
    KernelLaunchFailure, HandshakeTimeout, SessionDead, TaskBudgetExhausted,
    IndexMissing, CELL_TIMEOUT_MARKER, STDOUT_MARKER, STDERR_MARKER,
)
