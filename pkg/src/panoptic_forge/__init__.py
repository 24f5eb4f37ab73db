"""Panoptic segmentation post-processing and evaluation toolkit.

Covers label-space unification across datasets, semantic/instance logit
fusion, PQ/SQ/RQ evaluation, epoch planning and augmentation, and
test-time-augmentation merging. No network inference is included.
"""

from panoptic_forge.raster import PanopticMap, Segment, SemanticLogits
from panoptic_forge.label_space import (
    ClassDef,
    DatasetSchema,
    JointLabelSpace,
    MergeRule,
    build_joint_space,
    category_of,
    remap_panoptic,
)
from panoptic_forge.fusion import (
    FusionConfig,
    InstancePrediction,
    filter_instances,
    fuse_logits,
    panoptic_fuse,
)
from panoptic_forge.metrics import PqReport, PqStats, finalize, match_segments, merge_stats
from panoptic_forge.data_plan import (
    AugmentationSpec,
    DatasetStats,
    EpochPlan,
    LrSchedule,
    apply_to_labels,
    cap_longest_side,
    lr_at,
    plan_epoch,
    sample_augmentation,
)
from panoptic_forge.tta import TtaConfig, merge_predictions, upsample_panoptic

__version__ = "0.1.0"

__all__ = [
    "AugmentationSpec",
    "ClassDef",
    "DatasetSchema",
    "DatasetStats",
    "EpochPlan",
    "FusionConfig",
    "InstancePrediction",
    "JointLabelSpace",
    "LrSchedule",
    "MergeRule",
    "PanopticMap",
    "PqReport",
    "PqStats",
    "Segment",
    "SemanticLogits",
    "TtaConfig",
    "apply_to_labels",
    "build_joint_space",
    "cap_longest_side",
    "category_of",
    "filter_instances",
    "finalize",
    "fuse_logits",
    "lr_at",
    "match_segments",
    "merge_predictions",
    "merge_stats",
    "panoptic_fuse",
    "plan_epoch",
    "remap_panoptic",
    "sample_augmentation",
    "upsample_panoptic",
]
