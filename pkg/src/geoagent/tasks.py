"""Benchmark task model: manifests, data-layout flattening, run persistence.

On-disk benchmark layout::

    <root>/<task_id>/manifest.json
    <root>/<task_id>/data/...      input files referenced by the manifest
    <root>/<task_id>/gold/...      reference code and expected outputs

All paths are treated case-sensitively.  The results store is an
append-oriented JSONL file plus a transcripts/ directory, keyed by the
(task_id, model_id, architecture) triple; writes are serialized behind a
lock (single-writer contract).
"""
from __future__ import annotations

import hashlib
import json
import shutil
import threading
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path

MANIFEST_NAME = "manifest.json"

VECTOR_SUFFIXES = {".shp", ".shx", ".dbf", ".prj", ".cpg", ".geojson", ".gpkg", ".kml"}
RASTER_SUFFIXES = {".tif", ".tiff", ".img", ".asc", ".grid", ".vrt", ".nc"}
TABULAR_SUFFIXES = {".csv", ".tsv", ".xlsx", ".parquet"}


class BenchmarkError(Exception):
    pass


class MissingManifest(BenchmarkError):
    def __init__(self, task_dir):
        super().__init__(f"no {MANIFEST_NAME} in task directory {task_dir}")
        self.task_dir = task_dir


class MalformedManifest(BenchmarkError):
    def __init__(self, task_dir, fld: str, detail: str = ""):
        super().__init__(f"manifest {task_dir}: bad field {fld!r} {detail}".rstrip())
        self.field = fld


class DanglingDataPath(BenchmarkError):
    def __init__(self, path):
        super().__init__(f"manifest references a missing file: {path}")
        self.path = str(path)


class NameCollisionUnresolvable(BenchmarkError):
    pass


class StoreUnwritable(BenchmarkError):
    pass


class DuplicateKeyWithoutForce(BenchmarkError):
    def __init__(self, key):
        super().__init__(f"record for {key} already stored; pass force=True to overwrite")
        self.key = key


class TaskCategory(str, Enum):
    UNDERSTANDING_SPATIAL_DISTRIBUTIONS = "understanding_spatial_distributions"
    MAKING_PREDICTIONS = "making_predictions"
    DETECTING_PATTERNS = "detecting_patterns"
    MEASURING_SHAPE_AND_DISTRIBUTION = "measuring_shape_and_distribution"
    DETERMINING_SPATIAL_RELATIONSHIPS = "determining_spatial_relationships"
    OPTIMAL_LOCATIONS_AND_PATHS = "optimal_locations_and_paths"


def classify_data_file(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in VECTOR_SUFFIXES:
        return "vector"
    if suffix in RASTER_SUFFIXES:
        return "raster"
    if suffix in TABULAR_SUFFIXES:
        return "tabular"
    return "other"


@dataclass(frozen=True)
class DataFileRef:
    logical_name: str
    path: str  # relative to the task dir (or flat workspace after flattening)
    kind: str = "other"


@dataclass(frozen=True)
class GoldOutputRef:
    kind: str  # visualization | raster | tabular | vector
    path: str


@dataclass(frozen=True)
class TaskSpec:
    id: str
    instruction: str
    category: TaskCategory
    data_manifest: tuple[DataFileRef, ...]
    gold_code: str
    gold_outputs: tuple[GoldOutputRef, ...]
    domain_knowledge: str | None = None
    output_dir_name: str = "pred_results"
    task_dir: str = ""


def _require(manifest: dict, fld: str, task_dir):
    if fld not in manifest:
        raise MalformedManifest(task_dir, fld, "(missing)")
    return manifest[fld]


def load_task(task_dir) -> TaskSpec:
    task_dir = Path(task_dir)
    manifest_path = task_dir / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingManifest(task_dir)
    try:
        manifest = json.loads(manifest_path.read_text())
    except ValueError as exc:
        raise MalformedManifest(task_dir, "<json>", str(exc)) from exc

    task_id = _require(manifest, "id", task_dir)
    instruction = _require(manifest, "instruction", task_dir)
    raw_category = _require(manifest, "category", task_dir)
    try:
        category = TaskCategory(raw_category)
    except ValueError as exc:
        raise MalformedManifest(task_dir, "category", f"unknown {raw_category!r}") from exc

    refs = []
    for entry in _require(manifest, "data", task_dir):
        try:
            rel = entry["path"]
        except (TypeError, KeyError) as exc:
            raise MalformedManifest(task_dir, "data", "entry missing 'path'") from exc
        full = task_dir / rel
        if not full.is_file():
            raise DanglingDataPath(full)
        refs.append(DataFileRef(
            logical_name=entry.get("logical_name", Path(rel).name),
            path=rel,
            kind=entry.get("kind", classify_data_file(rel)),
        ))

    gold_code_rel = _require(manifest, "gold_code", task_dir)
    gold_code_path = task_dir / gold_code_rel
    if not gold_code_path.is_file():
        raise DanglingDataPath(gold_code_path)
    gold_code = gold_code_path.read_text()

    gold_outputs = []
    for entry in _require(manifest, "gold_outputs", task_dir):
        try:
            kind, rel = entry["kind"], entry["path"]
        except (TypeError, KeyError) as exc:
            raise MalformedManifest(task_dir, "gold_outputs", "entry needs kind+path") from exc
        full = task_dir / rel
        if not full.is_file():
            raise DanglingDataPath(full)
        gold_outputs.append(GoldOutputRef(kind=kind, path=str(full)))

    return TaskSpec(
        id=task_id,
        instruction=instruction,
        category=category,
        data_manifest=tuple(refs),
        gold_code=gold_code,
        gold_outputs=tuple(gold_outputs),
        domain_knowledge=manifest.get("domain_knowledge"),
        output_dir_name=manifest.get("output_dir_name", "pred_results"),
        task_dir=str(task_dir),
    )


def load_benchmark(root) -> list[TaskSpec]:
    """Load every task directory under `root`, sorted by task id."""
    root = Path(root)
    tasks = []
    seen = set()
    for entry in sorted(root.iterdir()):
        if not entry.is_dir() or entry.name.startswith("."):
            continue
        task = load_task(entry)
        if task.id in seen:
            raise MalformedManifest(entry, "id", f"duplicate task id {task.id!r}")
        seen.add(task.id)
        tasks.append(task)
    return sorted(tasks, key=lambda t: t.id)


def _file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def flatten_data_layout(task_dir, workspace) -> list[DataFileRef]:
    """Copy every data file into a single flat workspace directory.

    Nested layouts are flattened to base names; same-name files with
    identical content are silently deduplicated, differing content gets a
    numeric suffix in sorted-walk discovery order (x.csv, x_2.csv, ...).
    """
    task_dir = Path(task_dir)
    workspace = Path(workspace)
    workspace.mkdir(parents=True, exist_ok=True)
    data_root = task_dir / "data" if (task_dir / "data").is_dir() else task_dir
    refs: list[DataFileRef] = []
    placed: dict[str, str] = {}  # flat name -> content hash
    for src in sorted(data_root.rglob("*")):
        if not src.is_file():
            continue
        if data_root == task_dir:
            # ad-hoc directory: skip manifest/gold bookkeeping files
            if src.name == MANIFEST_NAME or "gold" in src.relative_to(task_dir).parts[:-1]:
                continue
        digest = _file_sha256(src)
        flat_name = src.name
        if flat_name in placed:
            if placed[flat_name] == digest:
                continue  # identical duplicate
            stem, suffix = src.stem, src.suffix
            counter = 2
            while f"{stem}_{counter}{suffix}" in placed:
                if placed[f"{stem}_{counter}{suffix}"] == digest:
                    flat_name = None
                    break
                counter += 1
            if flat_name is None:
                continue
            flat_name = f"{stem}_{counter}{suffix}"
        dest = workspace / flat_name
        shutil.copy2(src, dest)
        placed[flat_name] = digest
        refs.append(DataFileRef(logical_name=src.name, path=flat_name,
                                kind=classify_data_file(src)))
    return refs


# ---------------------------------------------------------------------------
# run records

@dataclass
class RunRecord:
    task_id: str
    model_id: str
    architecture: str  # "single" | "dual"
    transcript_ref: str = ""
    produced_files: list[str] = field(default_factory=list)
    success: bool = False
    wall_time_s: float = 0.0
    cost: float = 0.0

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.task_id, self.model_id, self.architecture)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)


class RunStore:
    """Append-oriented results store: one JSON record per line.

    Re-persisting an existing (task_id, model_id, architecture) key requires
    force=True, which rewrites the file so a single row remains per key.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.records_path = self.root / "records.jsonl"
        self.transcripts_dir = self.root / "transcripts"
        self.metrics_dir = self.root / "metrics"
        self._lock = threading.Lock()

    def _read_all(self) -> list[RunRecord]:
        if not self.records_path.exists():
            return []
        records = []
        for line in self.records_path.read_text().splitlines():
            if line.strip():
                records.append(RunRecord.from_dict(json.loads(line)))
        return records

    def load(self) -> list[RunRecord]:
        with self._lock:
            return self._read_all()

    def get(self, key) -> RunRecord | None:
        for rec in self.load():
            if rec.key == tuple(key):
                return rec
        return None

    def keys(self) -> set[tuple[str, str, str]]:
        return {rec.key for rec in self.load()}

    def persist_run(self, record: RunRecord, force: bool = False) -> tuple[str, str, str]:
        with self._lock:
            existing = self._read_all()
            dup = [r for r in existing if r.key == record.key]
            line = json.dumps(record.to_dict(), sort_keys=True)
            try:
                if dup and not force:
                    raise DuplicateKeyWithoutForce(record.key)
                if dup:
                    kept = [r for r in existing if r.key != record.key]
                    body = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in kept)
                    self.records_path.write_text(body + line + "\n")
                else:
                    with open(self.records_path, "a") as fh:
                        fh.write(line + "\n")
            except OSError as exc:
                raise StoreUnwritable(str(exc)) from exc
        return record.key

    def transcript_path(self, key) -> Path:
        self.transcripts_dir.mkdir(parents=True, exist_ok=True)
        task_id, model_id, arch = key
        safe = f"{task_id}__{model_id}__{arch}".replace("/", "_")
        return self.transcripts_dir / f"{safe}.json"

    def metrics_path(self, key) -> Path:
        self.metrics_dir.mkdir(parents=True, exist_ok=True)
        task_id, model_id, arch = key
        safe = f"{task_id}__{model_id}__{arch}".replace("/", "_")
        return self.metrics_dir / f"{safe}.json"


def persist_run(record: RunRecord, store: RunStore, force: bool = False):
    """Module-level convenience wrapper over RunStore.persist_run."""
    return store.persist_run(record, force=force)
