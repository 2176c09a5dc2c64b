"""mitoforge: non-neural pipeline for mitosis detection workflows.

Stain normalization, patch tiling, detection-aware augmentation, cascade
assignment simulation and detection scoring around an external detector.
"""

from .geometry import BBox, ScoredBox, iou, clip_to_region, nms
from .stain import (
    StainBasis,
    rgb_to_od,
    od_to_rgb,
    estimate_stain_basis,
    stain_concentrations,
    normalize_to_reference,
)
from .tiler import (
    Annotation,
    Label,
    TileGrid,
    PatchRecord,
    DatasetSplit,
    build_tile_grid,
    project_annotations,
    filter_nonempty,
    split_random,
)
from .augment import (
    AugmentConfig,
    scale_set,
    flip,
    rescale,
    min_iou_random_crop,
    color_contrast_jitter,
)
from .cascade import (
    CascadeStageConfig,
    CascadeReport,
    Sampler,
    Status,
    assign_proposals,
    sample_random,
    sample_ohem,
    sample_iou_balanced,
    run_cascade,
    focal_loss,
    warmup_lr,
    clip_gradient_norm,
)
from .evaluate import (
    Detection,
    MatchCriterion,
    MatchResult,
    PRCurve,
    stitch_detections,
    match_detections,
    precision_recall_f1,
    pr_curve,
    average_precision,
    evaluate,
    export_pr,
)
from .config import PipelineConfig, load_config
from .errors import (
    MitoforgeError,
    DegenerateTissue,
    SingularBasis,
    ImageTooSmall,
    InsufficientRecords,
    EmptyAssignment,
    MissingLosses,
    ConfigError,
)

__version__ = "0.1.0"
