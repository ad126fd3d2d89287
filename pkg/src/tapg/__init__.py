"""Temporal action proposal generation and detection at desk scale.

The pipeline: snippet features -> sliding/rescaled windows -> bidirectional
boundary heatmaps -> boundary map -> attention-based confidence maps ->
fused proposal scores -> Soft-NMS -> class assignment -> mAP evaluation.
"""

from .boundary import (
    BoundaryHeatmaps,
    BoundaryMap,
    CbgParams,
    bidirectional_infer,
    build_boundary_map,
    cbg_forward,
    fuse_heatmaps,
    init_cbg,
)
from .config import PipelineConfig, load_config
from .data import (
    BoundaryLabels,
    FeatureSequence,
    GroundTruthInstance,
    LabelConfidenceMap,
    ObservationWindow,
    build_windows,
    label_boundaries,
    label_confidence_map,
    rescale_to_window,
)
from .evaluation import EvalResult, average_precision, evaluate, tiou
from .losses import (
    LossReport,
    cbg_loss,
    prb_loss,
    smooth_l1,
    total_loss,
    weighted_logistic_loss,
)
from .model import ModelParams, init_model, load_model, save_model
from .postprocess import (
    Detection,
    ProposalCandidate,
    assign_classes,
    concat_ensemble,
    ensemble_maps,
    fuse_scores,
    greedy_nms,
    multiscale_route,
    soft_nms,
)
from .relation import (
    ConfidenceMaps,
    PrbParams,
    channel_attention,
    init_prb,
    position_attention,
    prb_forward,
    reduce_features,
    sample_proposal_features,
)
from .sampling import (
    SampledBatch,
    SamplerConfig,
    iou_balanced_sample,
    scale_balanced_ratio,
    scale_balanced_sample,
)
from .synthetic import generate_class_scores, generate_synthetic_dataset
from .training import fit_toy, prepare_examples

__version__ = "0.1.0"
