"""Differentiable SLIC superpixels.

Soft relaxation of the classic grid-seeded clustering with exact
reverse-mode gradients through the unrolled iterations, task losses, a
trainable linear feature transform, and a superpixel evaluation suite.
"""

from .autodiff import (
    AdamState,
    CheckpointError,
    GradCheckReport,
    LinearModel,
    Tape,
    adam_step,
    backward,
    forward_recorded,
    grad_check,
    load_model,
    model_backward,
    model_forward,
    replay_tape,
    save_model,
)
from .cluster import (
    Association,
    LabelMap,
    NumericError,
    SuperpixelState,
    enforce_connectivity,
    hard_labels,
    make_association,
    pixels_to_superpixels,
    run_dslic,
    run_slic_hard,
    soft_assign,
    superpixels_to_pixels,
    update_centers,
)
from .features import (
    FeatureScales,
    build_features,
    compute_scales,
    rgb_to_lab,
)
from .grid import (
    GridSpec,
    NeighborTable,
    init_centers,
    neighbor_table,
    plan_grid,
)
from .losses import (
    LossValue,
    PixelProperty,
    combined_loss,
    compact_loss,
    recon_loss,
)
from .metrics import (
    EvalReport,
    GroundTruth,
    PipelineParams,
    asa,
    boundary_pr,
    compactness_score,
    segment_image,
    segmented_flow_epe,
    sweep,
)
from .synth import SyntheticSpec, generate_corpus
from .train import TrainResult, train_model

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Association", "CheckpointError", "EvalReport",
    "FeatureScales", "GradCheckReport", "GridSpec", "GroundTruth",
    "LabelMap", "LinearModel", "LossValue", "NeighborTable", "NumericError",
    "PipelineParams", "PixelProperty", "SuperpixelState", "SyntheticSpec",
    "Tape", "TrainResult", "adam_step", "asa", "backward", "boundary_pr",
    "build_features", "combined_loss", "compact_loss", "compactness_score",
    "compute_scales", "enforce_connectivity", "forward_recorded",
    "generate_corpus", "grad_check", "hard_labels", "init_centers",
    "load_model", "make_association", "model_backward", "model_forward",
    "neighbor_table", "pixels_to_superpixels", "plan_grid", "recon_loss",
    "replay_tape", "rgb_to_lab", "run_dslic", "run_slic_hard", "save_model",
    "segment_image", "segmented_flow_epe", "soft_assign",
    "superpixels_to_pixels", "sweep", "train_model", "update_centers",
]
