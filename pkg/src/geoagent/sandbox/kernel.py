"""Persistent code-execution kernel.

A standalone process (stdlib only, no package imports) that runs Python
cells in one persistent namespace and talks newline-delimited JSON over
stdin/stdout:

    request:  {"id": int, "op": "exec"|"list_files"|"reset"|"shutdown",
               "code": str?, "cell_timeout_s": float?}
    response: {"id": int, "ok": bool, "stdout": str, "stderr": str,
               "new_vars": [str], "duration_ms": int}

On startup the kernel prints one handshake line:
    {"hello": true, "preloaded": [...], "warnings": [...]}

Launch: python kernel.py <workspace_dir> [<policy_json_or_path>]

Policy fields: forbidden_imports (name -> suggested alternative),
preload (module names imported at startup; absence is a warning, not a
failure), raw_stdout_cap / raw_stderr_cap (byte caps applied before a
response ships, aligned with the supervisor's asymmetric truncation).
"""
import io
import importlib.abc
import json
import os
import signal
import sys
import time
import traceback

DEFAULT_RAW_CAP = 1_000_000


class CellTimeoutError(Exception):
    """Raised inside a cell when its wall-clock allowance expires."""


class ForbiddenImportError(ImportError):
    pass


class _ForbiddenFinder(importlib.abc.MetaPathFinder):
    """Blocks configured imports at execution time with a guiding message."""

    def __init__(self, forbidden):
        self.forbidden = dict(forbidden)

    def find_spec(self, fullname, path=None, target=None):
        root = fullname.split(".")[0]
        if root in self.forbidden:
            raise ForbiddenImportError(
                f"module '{root}' is not available in this sandbox "
                f"(do not import it); use {self.forbidden[root]} instead")
        return None


def _classify(name):
    suffix = os.path.splitext(name)[1].lower()
    if suffix in (".shp", ".shx", ".dbf", ".prj", ".cpg", ".geojson", ".gpkg", ".kml"):
        return "vector"
    if suffix in (".tif", ".tiff", ".img", ".asc", ".grid", ".vrt", ".nc"):
        return "raster"
    if suffix in (".csv", ".tsv", ".xlsx", ".parquet"):
        return "tabular"
    return "other"


class Kernel:
    def __init__(self, workspace, policy):
        self.workspace = os.path.abspath(workspace)
        self.policy = policy
        self.raw_stdout_cap = int(policy.get("raw_stdout_cap", DEFAULT_RAW_CAP))
        self.raw_stderr_cap = int(policy.get("raw_stderr_cap", DEFAULT_RAW_CAP))
        self.warnings = []
        self.preloaded = []
        self.namespace = {"__name__": "__main__", "__builtins__": __builtins__}
        self._proto_out = sys.stdout

        forbidden = policy.get("forbidden_imports", {})
        preload = policy.get("preload", [])
        overlap = set(forbidden) & set(preload)
        if overlap:
            raise SystemExit(f"policy error: forbidden and preload overlap: {sorted(overlap)}")
        for name in forbidden:
            sys.modules.pop(name, None)
        sys.meta_path.insert(0, _ForbiddenFinder(forbidden))

        os.chdir(self.workspace)
        self._install_helpers()
        for name in preload:
            try:
                self.namespace[name.split(".")[0]] = __import__(name)
                self.preloaded.append(name)
            except Exception as exc:
                self.warnings.append(f"preload {name!r} unavailable: {exc}")
        self._baseline = dict(self.namespace)

    # -- helpers injected into the user namespace -------------------------

    def _install_helpers(self):
        workspace = self.workspace
        doc_index = None
        index_path = self.policy.get("doc_index_path")
        if index_path and os.path.isfile(index_path):
            try:
                with open(index_path) as fh:
                    doc_index = json.load(fh).get("snippets", [])
            except Exception:
                doc_index = None

        def list_files():
            """Exact, case-sensitive file names in the working directory."""
            names = sorted(n for n in os.listdir(workspace)
                           if os.path.isfile(os.path.join(workspace, n)))
            print("\n".join(names) if names else "(no files)")
            return names

        def search_docs(query, k=3):
            """Keyword search over the bundled library-usage notes."""
            if not doc_index:
                print("(no documentation index available)")
                return []
            terms = [t for t in str(query).lower().split() if t]
            scored = []
            for snip in doc_index:
                text = (snip.get("title", "") + " " + snip.get("text", "")).lower()
                score = sum(text.count(t) for t in terms)
                if score > 0:
                    scored.append((-score, snip.get("id", ""), snip))
            scored.sort()
            hits = [s[2] for s in scored[:k]]
            for snip in hits:
                print(f"[{snip.get('id')}] {snip.get('title')}\n{snip.get('text')}\n")
            if not hits:
                print("(no matching documentation)")
            return hits

        self.namespace["list_files"] = list_files
        self.namespace["search_docs"] = search_docs

    # -- cell execution ----------------------------------------------------

    def eval_cell(self, code, timeout_s=None):
        before = set(self.namespace)
        out_buf, err_buf = io.StringIO(), io.StringIO()
        ok = True
        old = (sys.stdout, sys.stderr, sys.stdin)
        sys.stdout, sys.stderr, sys.stdin = out_buf, err_buf, io.StringIO()

        def _alarm(signum, frame):
            raise CellTimeoutError(f"cell execution exceeded {timeout_s:g} s limit")

        old_handler = None
        timed_out = False
        if timeout_s and timeout_s > 0:
            old_handler = signal.signal(signal.SIGALRM, _alarm)
            signal.setitimer(signal.ITIMER_REAL, timeout_s)
        started = time.monotonic()
        try:
            compiled = compile(code, "<cell>", "exec")
            exec(compiled, self.namespace)
        except CellTimeoutError:
            ok = False
            timed_out = True
            traceback.print_exc(file=err_buf)
        except BaseException:
            ok = False
            traceback.print_exc(file=err_buf)
        finally:
            if old_handler is not None:
                signal.setitimer(signal.ITIMER_REAL, 0)
                signal.signal(signal.SIGALRM, old_handler)
            sys.stdout, sys.stderr, sys.stdin = old
        duration_ms = int((time.monotonic() - started) * 1000)

        new_vars = sorted(n for n in set(self.namespace) - before if not n.startswith("_"))
        stdout = out_buf.getvalue()
        stderr = err_buf.getvalue()
        if timed_out:
            # lead with the diagnostic: stderr is head-truncated downstream,
            # and the retry-exemption logic must always see this marker
            stderr = (f"CellTimeoutError: cell execution exceeded "
                      f"{timeout_s:g} s limit\n") + stderr
        if len(stdout.encode()) > self.raw_stdout_cap:  # keep the tail
            stdout = stdout.encode()[-self.raw_stdout_cap:].decode("utf-8", "replace")
        if len(stderr.encode()) > self.raw_stderr_cap:  # keep the head
            stderr = stderr.encode()[:self.raw_stderr_cap].decode("utf-8", "replace")
        return {"ok": ok, "stdout": stdout, "stderr": stderr,
                "new_vars": new_vars, "duration_ms": duration_ms}

    def reset(self):
        self.namespace.clear()
        self.namespace.update(self._baseline)

    def handle(self, request):
        req_id = request.get("id", -1)
        op = request.get("op")
        base = {"id": req_id, "ok": True, "stdout": "", "stderr": "",
                "new_vars": [], "duration_ms": 0}
        if op == "exec":
            result = self.eval_cell(request.get("code", ""),
                                    request.get("cell_timeout_s"))
            base.update(result)
            return base, True
        if op == "list_files":
            inventory = sorted(
                ({"name": n, "size": os.path.getsize(os.path.join(self.workspace, n))}
                 for n in os.listdir(self.workspace)
                 if os.path.isfile(os.path.join(self.workspace, n))),
                key=lambda item: item["name"])
            base["stdout"] = json.dumps(inventory)
            return base, True
        if op == "reset":
            self.reset()
            return base, True
        if op == "shutdown":
            return base, False
        base["ok"] = False
        base["stderr"] = f"unknown op: {op!r}"
        return base, True

    def _respond(self, payload):
        self._proto_out.write(json.dumps(payload) + "\n")
        self._proto_out.flush()

    def serve(self):
        self._respond({"hello": True, "preloaded": self.preloaded,
                       "warnings": self.warnings})
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            try:
                request = json.loads(line)
            except ValueError:
                self._respond({"id": -1, "ok": False, "stdout": "",
                               "stderr": "malformed request line",
                               "new_vars": [], "duration_ms": 0})
                continue
            response, keep_going = self.handle(request)
            self._respond(response)
            if not keep_going:
                break


def main(argv):
    if len(argv) < 2:
        raise SystemExit("usage: kernel.py <workspace_dir> [<policy_json_or_path>]")
    workspace = argv[1]
    policy = {}
    if len(argv) > 2:
        raw = argv[2]
        if os.path.isfile(raw):
            with open(raw) as fh:
                policy = json.load(fh)
        else:
            policy = json.loads(raw)
    Kernel(workspace, policy).serve()


if __name__ == "__main__":
    main(sys.argv)
