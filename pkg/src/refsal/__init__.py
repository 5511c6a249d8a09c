"""Referring-expression localization via iterative saliency refinement."""

from .backend import (
    Backend,
    BackendRequest,
    BackendResponse,
    Blob,
    SyntheticBackend,
    SyntheticScene,
    synthetic_forward,
)
from .emphasis import AugmentedGradcam, TokenSaliencyStack, augment
from .heatmap import (
    argmax_coords,
    bilinear_upsample,
    center_sigmoid,
    compose_gradcam,
    mean_over_tokens,
    threshold_drop_mask,
)
from .metrics import MetricsReport, aggregate_metrics, iou
from .parsing import ParsedExpression, Token, parse
from .refinement import (
    RefinementConfig,
    RefinementState,
    run_refinement,
)
from .selection import MaskProposal, SelectionResult, select_mask

__version__ = "0.1.0"

__all__ = [
    "AugmentedGradcam",
    "Backend",
    "BackendRequest",
    "BackendResponse",
    "Blob",
    "MaskProposal",
    "MetricsReport",
    "ParsedExpression",
    "RefinementConfig",
    "RefinementState",
    "SelectionResult",
    "SyntheticBackend",
    "SyntheticScene",
    "Token",
    "TokenSaliencyStack",
    "aggregate_metrics",
    "argmax_coords",
    "augment",
    "bilinear_upsample",
    "center_sigmoid",
    "compose_gradcam",
    "iou",
    "mean_over_tokens",
    "parse",
    "run_refinement",
    "select_mask",
    "synthetic_forward",
    "threshold_drop_mask",
]
