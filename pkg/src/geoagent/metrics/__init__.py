"""Three-layer evaluation: L1 code structure, L2 reasoning process, L3 outputs."""
from dataclasses import dataclass, field

from .structure import (  # noqa: F401
    tokenize_code, bleu4, rouge_l, edit_similarity, weighted_ngram,
    ast_subtree_f1, dataflow_f1, codebleu, extract_api_ops, api_operation_f1,
    score_code, OperationCatalog, CodeMetricBreakdown, ParseFailure,
)
from .process import (  # noqa: F401
    clean_log, embed, cosine, judge_reasoning, parse_judge_reply,
    MockEmbeddingProvider, HttpEmbeddingProvider, EmbeddingConfig,
    ProcessMetric, JudgeScores, JUDGE_DIMENSIONS,
    ProviderError, ZeroVector, DimensionMismatch, JudgeUnparsable, JudgeBackendError,
)
from .output import (  # noqa: F401
    compare_raster, compare_table, compare_vector, judge_visualization,
    task_output_score, RasterGrid, VectorLayer, OutputScore,
    read_text_grid, write_text_grid, read_geojson_layer,
    f_rho, g_mre, classify_output, ScriptedVisionJudge,
    UnreadablePrediction, UnreadableImage, RASTER_WEIGHTS, VISION_DIMENSIONS,
)


@dataclass
class MetricReport:
    """Per-task evaluation bundle consumed by aggregation and reports."""

    task_id: str
    model_id: str
    architecture: str
    success: bool = False
    l1: CodeMetricBreakdown | None = None
    l2: ProcessMetric | None = None
    q_out: float | None = None
    output_scores: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "model_id": self.model_id,
            "architecture": self.architecture,
            "success": self.success,
            "l1": self.l1.to_dict() if self.l1 else None,
            "l2": self.l2.to_dict() if self.l2 else None,
            "q_out": self.q_out,
            "output_scores": [s.to_dict() for s in self.output_scores],
        }
