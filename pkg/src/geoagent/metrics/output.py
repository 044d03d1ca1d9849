"""Type-specific output comparators (L3) and per-task output accuracy.

Raster, tabular, and vector predictions are scored programmatically; PNG
visualizations go through a vision-capable judge.  A plain-text raster
fixture format ships with the package so the whole comparator suite runs
without any geospatial I/O dependency:

    line 1: ``width height nodata crs_id``
    then:   height rows of width reals, row-major; values equal to nodata
            are masked out.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from .process import JudgeUnparsable
from .structure import edit_similarity

RASTER_WEIGHTS = {"shape": 0.2, "crs": 0.2, "rho": 0.3, "mre": 0.3}

# Piecewise maps from correlation / relative error to [0,1]; thresholds are
# deliberately exposed so deployments can re-calibrate them.
RHO_THRESHOLDS = [(0.99, 1.0), (0.90, 0.8), (0.70, 0.5), (0.50, 0.2)]
MRE_THRESHOLDS = [(0.01, 1.0), (0.05, 0.8), (0.10, 0.5), (0.25, 0.2)]

VISION_DIMENSIONS = (
    "task_completion",
    "spatial_accuracy",
    "visual_readability",
    "cartographic_quality",
    "data_integrity",
)


class UnreadablePrediction(Exception):
    pass


class UnreadableImage(Exception):
    pass


def f_rho(rho: float) -> float:
    """Non-decreasing map from Pearson correlation to [0,1]; f(rho<=0)=0."""
    for threshold, value in RHO_THRESHOLDS:
        if rho >= threshold:
            return value
    return 0.0


def g_mre(mre: float) -> float:
    """Non-increasing map from mean relative error to [0,1]; g(0)=1."""
    for threshold, value in MRE_THRESHOLDS:
        if mre <= threshold:
            return value
    return 0.0


@dataclass
class RasterGrid:
    width: int
    height: int
    bands: int
    values: np.ndarray          # (bands, height, width)
    mask: np.ndarray            # True where valid
    crs: str
    geotransform: tuple = (0.0, 1.0, 0.0, 0.0, 0.0, -1.0)

    def __post_init__(self):
        if self.mask.shape != self.values.shape:
            raise ValueError("mask dimensions must equal pixel dimensions")


def read_text_grid(path) -> RasterGrid:
    """Read the bundled plain-text raster fixture format."""
    lines = Path(path).read_text().strip().splitlines()
    if not lines:
        raise UnreadablePrediction(f"empty grid file: {path}")
    header = lines[0].split()
    if len(header) != 4:
        raise UnreadablePrediction(f"bad grid header in {path}: {lines[0]!r}")
    width, height = int(header[0]), int(header[1])
    nodata = float(header[2])
    crs = header[3]
    flat = []
    for line in lines[1:]:
        flat.extend(float(v) for v in line.split())
    if len(flat) != width * height:
        raise UnreadablePrediction(
            f"grid {path} has {len(flat)} values, expected {width * height}")
    values = np.asarray(flat).reshape(1, height, width)
    mask = ~np.isclose(values, nodata) if not math.isnan(nodata) else ~np.isnan(values)
    return RasterGrid(width, height, 1, values, mask, crs)


def write_text_grid(path, grid: RasterGrid, nodata: float = -9999.0):
    rows = [f"{grid.width} {grid.height} {nodata:g} {grid.crs}"]
    band = np.where(grid.mask[0], grid.values[0], nodata)
    for r in range(grid.height):
        rows.append(" ".join(f"{v:.10g}" for v in band[r]))
    Path(path).write_text("\n".join(rows) + "\n")


@dataclass
class OutputScore:
    kind: str
    score: float
    details: dict = field(default_factory=dict)
    diagnostic: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "score": self.score,
                "details": self.details, "diagnostic": self.diagnostic}


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    if a.size < 2:
        return 1.0 if a.size and np.allclose(a, b) else 0.0
    sa, sb = a.std(), b.std()
    if sa == 0 or sb == 0:
        return 1.0 if np.array_equal(a, b) else 0.0
    return float(np.corrcoef(a, b)[0, 1])


def compare_raster(pred: RasterGrid, gold: RasterGrid) -> OutputScore:
    """Weighted raster score: shape and CRS indicators plus rho / MRE terms.

    When shapes differ the correlation and error terms contribute zero rather
    than resampling, which would forgive wrong grid construction.
    """
    shape_match = (pred.width, pred.height, pred.bands) == (gold.width, gold.height, gold.bands)
    crs_match = pred.crs == gold.crs
    rho, mre = 0.0, math.inf
    frho, gmre = 0.0, 0.0
    if shape_match:
        bands = pred.bands if pred.bands == gold.bands else 1
        rhos, mres = [], []
        for b in range(bands):
            joint = pred.mask[b] & gold.mask[b]
            pv, gv = pred.values[b][joint], gold.values[b][joint]
            rhos.append(_pearson(pv, gv))
            nz = gv != 0
            if nz.any():
                mres.append(float(np.mean(np.abs(pv[nz] - gv[nz]) / np.abs(gv[nz]))))
            elif pv.size and np.allclose(pv, gv):
                mres.append(0.0)
            else:
                mres.append(math.inf)
        rho = float(np.mean(rhos))
        mre = float(np.mean(mres))
        frho, gmre = f_rho(rho), g_mre(mre)
    score = (RASTER_WEIGHTS["shape"] * shape_match
             + RASTER_WEIGHTS["crs"] * crs_match
             + RASTER_WEIGHTS["rho"] * frho
             + RASTER_WEIGHTS["mre"] * gmre)
    return OutputScore("raster", score, {
        "shape_match": int(shape_match), "crs_match": int(crs_match),
        "rho": rho, "mre": mre, "f_rho": frho, "g_mre": gmre,
    })


def compare_table(pred: pd.DataFrame, gold: pd.DataFrame) -> OutputScore:
    """Mean of column overlap, row-count ratio, and average Pearson correlation
    over shared numeric columns (correlation clamped to [0,1])."""
    gold_cols = {c.lower(): c for c in gold.columns}
    pred_cols = {c.lower(): c for c in pred.columns}
    shared = sorted(set(gold_cols) & set(pred_cols))
    column_overlap = len(shared) / len(gold_cols) if gold_cols else 1.0
    rows_p, rows_g = len(pred), len(gold)
    if rows_p == rows_g:
        row_match = 1.0
    elif max(rows_p, rows_g) == 0:
        row_match = 1.0
    else:
        row_match = min(rows_p, rows_g) / max(rows_p, rows_g)
    corrs = []
    n = min(rows_p, rows_g)
    for key in shared:
        gs = pd.to_numeric(gold[gold_cols[key]], errors="coerce").iloc[:n]
        ps = pd.to_numeric(pred[pred_cols[key]], errors="coerce").iloc[:n]
        valid = gs.notna() & ps.notna()
        gv, pv = gs[valid].to_numpy(), ps[valid].to_numpy()
        if gv.size < 2:
            continue
        if gs.isna().all() or ps.isna().all():
            continue
        if gv.std() == 0 or pv.std() == 0:
            if np.array_equal(gv, pv):
                corrs.append(1.0)
            continue
        corrs.append(_pearson(pv, gv))
    avg_corr = float(np.mean(corrs)) if corrs else 0.0
    score = (column_overlap + row_match + min(max(avg_corr, 0.0), 1.0)) / 3.0
    return OutputScore("tabular", score, {
        "column_overlap": column_overlap, "row_match": row_match, "avg_corr": avg_corr,
    })


@dataclass
class VectorLayer:
    feature_count: int
    crs: str
    columns: list[str]


def read_geojson_layer(path) -> VectorLayer:
    """Minimal GeoJSON reader: feature count, CRS name, property columns."""
    import json

    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UnreadablePrediction(f"cannot read vector layer {path}: {exc}") from exc
    features = doc.get("features", [])
    crs = "EPSG:4326"
    crs_member = doc.get("crs")
    if isinstance(crs_member, dict):
        crs = crs_member.get("properties", {}).get("name", crs)
    columns: list[str] = []
    for feat in features:
        for key in (feat.get("properties") or {}):
            if key not in columns:
                columns.append(key)
    return VectorLayer(len(features), crs, columns)


def compare_vector(pred: VectorLayer, gold: VectorLayer) -> OutputScore:
    """Mean of feature-count ratio, CRS indicator, and column overlap."""
    if pred.feature_count == gold.feature_count:
        count_ratio = 1.0
    elif max(pred.feature_count, gold.feature_count) == 0:
        count_ratio = 1.0
    else:
        count_ratio = (min(pred.feature_count, gold.feature_count)
                       / max(pred.feature_count, gold.feature_count))
    crs_match = pred.crs == gold.crs
    gold_cols = {c.lower() for c in gold.columns}
    pred_cols = {c.lower() for c in pred.columns}
    column_overlap = len(gold_cols & pred_cols) / len(gold_cols) if gold_cols else 1.0
    score = (count_ratio + crs_match + column_overlap) / 3.0
    return OutputScore("vector", score, {
        "feature_count_ratio": count_ratio, "crs_match": int(crs_match),
        "column_overlap": column_overlap,
    })


# ---------------------------------------------------------------------------
# visualization judging

def _load_vision_rubric() -> str:
    return resources.files("geoagent.assets").joinpath("vision_rubric.txt").read_text()


_VISION_SCORE_RE = {dim: re.compile(rf"^{dim}\s*:\s*([0-9.]+)\s*$", re.MULTILINE | re.IGNORECASE)
                    for dim in VISION_DIMENSIONS}


class ScriptedVisionJudge:
    """Replays canned rubric replies; enough to test the parsing contract."""

    def __init__(self, replies: list[str]):
        self.replies = list(replies)

    def judge_images(self, prompt: str, image_paths: list[str]) -> str:
        if not self.replies:
            raise RuntimeError("scripted vision judge exhausted")
        return self.replies.pop(0)


def judge_visualization(pred_image, gold_image, task, vision_judge) -> OutputScore:
    """Five-dimension cartographic rubric, normalized by the 5-point scale."""
    pred_path = Path(pred_image) if pred_image else None
    if pred_path is None or not pred_path.exists():
        return OutputScore("visualization", 0.0,
                           diagnostic=f"missing prediction image: {pred_image}")
    rubric = _load_vision_rubric()
    prompt = rubric + f"\n\nTASK INSTRUCTION:\n{task.instruction}\n"
    reply = vision_judge.judge_images(prompt, [str(gold_image), str(pred_path)])
    dims: dict[str, float] = {}
    for dim in VISION_DIMENSIONS:
        m = _VISION_SCORE_RE[dim].search(reply)
        if m is None:
            raise JudgeUnparsable(f"missing vision score for {dim}")
        value = float(m.group(1))
        if not (1.0 <= value <= 5.0):
            raise JudgeUnparsable(f"{dim} score {value} outside 1-5")
        dims[dim] = value
    normalized = sum(dims.values()) / len(dims) / 5.0
    return OutputScore("visualization", normalized, {"dimensions": dims})


# ---------------------------------------------------------------------------
# per-task scoring

TABULAR_SUFFIXES = {".csv", ".tsv"}
RASTER_SUFFIXES = {".grid", ".asc", ".tif", ".tiff"}
VECTOR_SUFFIXES = {".geojson", ".gpkg", ".shp"}
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".svg"}


def classify_output(path) -> str:
    suffix = Path(path).suffix.lower()
    if suffix in RASTER_SUFFIXES:
        return "raster"
    if suffix in TABULAR_SUFFIXES:
        return "tabular"
    if suffix in VECTOR_SUFFIXES:
        return "vector"
    if suffix in IMAGE_SUFFIXES:
        return "visualization"
    return "other"


def _read_table(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except Exception as exc:
        raise UnreadablePrediction(f"cannot read table {path}: {exc}") from exc


def _read_raster(path) -> RasterGrid:
    try:
        return read_text_grid(path)
    except UnreadablePrediction:
        raise
    except Exception as exc:
        raise UnreadablePrediction(f"cannot read raster {path}: {exc}") from exc


def default_comparators(vision_judge=None) -> dict:
    comparators = {
        "raster": lambda p, g: compare_raster(_read_raster(p), _read_raster(g)),
        "tabular": lambda p, g: compare_table(_read_table(p), _read_table(g)),
        "vector": lambda p, g: compare_vector(read_geojson_layer(p), read_geojson_layer(g)),
    }
    if vision_judge is not None:
        comparators["visualization"] = None  # handled specially, needs the task
    return comparators


def task_output_score(pred_files, gold_refs, comparators=None, task=None,
                      vision_judge=None) -> tuple[float | None, list[OutputScore]]:
    """Average normalized comparator scores over the expected outputs.

    Each gold reference is matched to the same-kind prediction with the most
    similar file name (ties broken lexically).  Expected-but-missing outputs
    contribute 0.  With no expected outputs the task has no defined output
    accuracy and (None, []) is returned so callers can exclude it.
    """
    if not gold_refs:
        return None, []
    comparators = comparators or default_comparators(vision_judge)
    pred_files = [Path(p) for p in pred_files]
    per_file: list[OutputScore] = []
    for ref in gold_refs:
        kind = ref.kind
        candidates = sorted((p for p in pred_files if classify_output(p) == kind),
                            key=lambda p: p.name)
        if not candidates:
            per_file.append(OutputScore(kind, 0.0, diagnostic="expected output missing"))
            continue
        # candidates are pre-sorted lexically, and max() keeps the first
        # maximum, so name-similarity ties resolve to the lexically smaller.
        target_name = Path(ref.path).name
        best = max(candidates, key=lambda p: edit_similarity(p.name, target_name)[1])
        try:
            if kind == "visualization":
                if vision_judge is None or task is None:
                    per_file.append(OutputScore(kind, 0.0,
                                                diagnostic="no vision judge configured"))
                    continue
                per_file.append(judge_visualization(best, ref.path, task, vision_judge))
            elif kind in comparators and comparators[kind] is not None:
                per_file.append(comparators[kind](best, ref.path))
            else:
                per_file.append(OutputScore(kind, 0.0,
                                            diagnostic=f"no comparator for kind {kind!r}"))
        except UnreadablePrediction as exc:
            per_file.append(OutputScore(kind, 0.0, diagnostic=str(exc)))
    score = sum(s.score for s in per_file) / len(per_file)
    return score, per_file
