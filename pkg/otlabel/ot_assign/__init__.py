"""
Optimal-transport label assignment for semi-supervised segmentation
Transport solver, pixel and query supervision, data-quality metrics
"""

__version__ = "1.0.0"

from .errors import (
    ConfigError,
    EvaluationError,
    ExitCode,
    FormatError,
    MatchingError,
    OracleSizeError,
    OTLabelError,
    ShapeError,
    SimplexError,
    SolveStatus,
    ZeroMassError,
)
from .transport import (
    CostMatrix,
    LayoutDescriptor,
    MarginalPrior,
    SinkhornSettings,
    TransportPlan,
    build_cost_matrix,
    flatten_predictions,
    plan_entropy,
    plan_row_normalize,
    sinkhorn_solve,
    transport_cost,
)
from .oracle import lp_oracle_solve
from .pixel_loss import (
    GateMask,
    LabelGrid,
    PseudoLabelGrid,
    argmax_pseudo_labels,
    confidence_gate,
    make_pseudo_labels,
    real_pixel_loss,
    synthetic_pixel_loss,
    total_pixel_loss,
)
from .queries import (
    QuerySet,
    aggregate_semantics,
    derive_pseudo_pairs,
    label_map_to_pairs,
    normalize_semantics,
    pseudo_pair_confidence,
)
from .matching import REAL_WEIGHTS, SYNTHETIC_WEIGHTS, MaskLossWeights, MatchResult, hungarian_match, mask_loss
from .query_loss import real_query_loss, synthetic_query_loss, total_query_loss
from .quality import MetricReport, compression_ratio, glcm_score, score_corpus

__all__ = [
    "ConfigError",
    "EvaluationError",
    "ExitCode",
    "FormatError",
    "MatchingError",
    "OracleSizeError",
    "OTLabelError",
    "ShapeError",
    "SimplexError",
    "SolveStatus",
    "ZeroMassError",
    "CostMatrix",
    "LayoutDescriptor",
    "MarginalPrior",
    "SinkhornSettings",
    "TransportPlan",
    "build_cost_matrix",
    "flatten_predictions",
    "plan_entropy",
    "plan_row_normalize",
    "sinkhorn_solve",
    "transport_cost",
    "lp_oracle_solve",
    "GateMask",
    "LabelGrid",
    "PseudoLabelGrid",
    "argmax_pseudo_labels",
    "confidence_gate",
    "make_pseudo_labels",
    "real_pixel_loss",
    "synthetic_pixel_loss",
    "total_pixel_loss",
    "QuerySet",
    "aggregate_semantics",
    "derive_pseudo_pairs",
    "label_map_to_pairs",
    "normalize_semantics",
    "pseudo_pair_confidence",
    "REAL_WEIGHTS",
    "SYNTHETIC_WEIGHTS",
    "MaskLossWeights",
    "MatchResult",
    "hungarian_match",
    "mask_loss",
    "real_query_loss",
    "synthetic_query_loss",
    "total_query_loss",
    "MetricReport",
    "compression_ratio",
    "glcm_score",
    "score_corpus",
]
