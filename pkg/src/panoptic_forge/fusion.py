"""Adaptive fusion of semantic and instance logits into a panoptic map.

For each kept instance of class ``c`` the fused logit plane is

    FL = (sigmoid(mask_logits) + sigmoid(sem[c])) * (mask_logits + sem[c])

Outside the instance's retained mask the mask logit is a large negative
sentinel, so FL stays finite there but cannot realistically win. The final
label per pixel is the argmax over the stuff channels followed by every FL
plane; ties go to the lowest index.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import expit

from panoptic_forge.errors import FusionError
from panoptic_forge.label_space import THING, JointLabelSpace
from panoptic_forge.raster import PanopticMap, Segment, SemanticLogits
from panoptic_forge.resample import resize_bilinear

OUTSIDE_MASK_LOGIT = -1.0e4


@dataclass(frozen=True, eq=False)
class InstancePrediction:
    """A detected thing.

    ``bbox`` is ``(x0, y0, x1, y1)`` with exclusive upper corners.
    ``mask_logits`` is either a full-canvas grid or a grid for the box, which
    is bilinearly resized to the box size when the shapes differ.
    """

    class_id: int
    confidence: float
    bbox: tuple
    mask_logits: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise FusionError(f"confidence {self.confidence} outside [0, 1]")
        x0, y0, x1, y1 = (int(v) for v in self.bbox)
        if x0 < 0 or y0 < 0 or x1 <= x0 or y1 <= y0:
            raise FusionError(f"degenerate bbox {self.bbox}")
        object.__setattr__(self, "bbox", (x0, y0, x1, y1))
        mask = np.asarray(self.mask_logits, dtype=np.float64)
        if mask.ndim != 2 or mask.size == 0:
            raise FusionError("mask_logits must be a non-empty 2-D grid")
        object.__setattr__(self, "mask_logits", mask)

    def canvas_logits(self, width: int, height: int) -> np.ndarray:
        """Mask logits on the full canvas; the sentinel everywhere outside the box."""
        x0, y0, x1, y1 = self.bbox
        if x1 > width or y1 > height:
            raise FusionError(f"bbox {self.bbox} exceeds the {width}x{height} canvas")
        out = np.full((height, width), OUTSIDE_MASK_LOGIT)
        if self.mask_logits.shape == (height, width):
            out[y0:y1, x0:x1] = self.mask_logits[y0:y1, x0:x1]
        else:
            out[y0:y1, x0:x1] = resize_bilinear(self.mask_logits, y1 - y0, x1 - x0)
        return out


@dataclass(frozen=True)
class FusionConfig:
    confidence_threshold: float = 0.5
    overlap_threshold: float = 0.5
    min_sa: int = 0

    def __post_init__(self):
        for name in ("confidence_threshold", "overlap_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise FusionError(f"{name} = {v} outside [0, 1]")
        if self.min_sa < 0:
            raise FusionError(f"min_sa = {self.min_sa} must be >= 0")

    @classmethod
    def from_json(cls, doc: dict) -> "FusionConfig":
        known = {"confidence_threshold", "overlap_threshold", "min_sa"}
        unknown = set(doc) - known
        if unknown:
            raise FusionError(f"unknown fusion config keys {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True, eq=False)
class KeptInstance:
    index: int  # position in the caller's instance list
    instance: InstancePrediction
    mask: np.ndarray  # retained binary mask, full canvas
    logits: np.ndarray  # full-canvas mask logits (sentinel outside the box)


def fuse_logits(ml_a, ml_b) -> np.ndarray:
    """Elementwise ``(sigmoid(a) + sigmoid(b)) * (a + b)``; symmetric in its arguments."""
    a = np.asarray(ml_a, dtype=np.float64)
    b = np.asarray(ml_b, dtype=np.float64)
    if a.shape != b.shape:
        raise FusionError(f"shape mismatch {a.shape} vs {b.shape}")
    return (expit(a) + expit(b)) * (a + b)


def filter_instances(instances: Sequence[InstancePrediction], config: FusionConfig, canvas) -> List[KeptInstance]:
    """Threshold, sort and de-overlap instances.

    Instances below the confidence threshold are dropped; the rest are
    visited by descending confidence (input order on ties). Masks are the
    pixels with logit > 0. Each pixel goes to the first visited instance
    claiming it, and an instance keeping less than ``overlap_threshold`` of
    its own mask area is dropped without claiming anything.
    """
    width, height = canvas
    order = sorted(
        (i for i, inst in enumerate(instances) if inst.confidence >= config.confidence_threshold),
        key=lambda i: (-instances[i].confidence, i),
    )
    taken = np.zeros((height, width), dtype=bool)
    kept = []
    for i in order:
        logits = instances[i].canvas_logits(width, height)
        mask = logits > 0.0
        area = int(mask.sum())
        if area == 0:
            continue
        retained = mask & ~taken
        if int(retained.sum()) < config.overlap_threshold * area:
            continue
        taken |= retained
        kept.append(KeptInstance(i, instances[i], retained, logits))
    return kept


def panoptic_fuse(
    sem: SemanticLogits,
    instances: Sequence[InstancePrediction],
    config: FusionConfig,
    space: Optional[JointLabelSpace] = None,
) -> PanopticMap:
    """Fuse semantic logits and instance predictions into a panoptic map.

    Segment ids are assigned sequentially from 1: surviving stuff classes in
    channel order first, then instances in the order they were kept.
    Stuff classes whose total area is below ``config.min_sa`` become void.
    """
    height, width = sem.height, sem.width
    for inst in instances:
        if inst.class_id not in sem.channel_classes:
            raise FusionError(f"instance class {inst.class_id} has no semantic channel")
        if space is not None and space.category_of(inst.class_id) != THING:
            raise FusionError(f"instance class {inst.class_id} is not a thing class")

    kept = filter_instances(instances, config, (width, height))
    sem_logits = np.asarray(sem.logits, dtype=np.float64)
    stuff = list(sem.stuff_channels)
    n_stuff = len(stuff)
    planes = [sem_logits[c] for c in stuff]
    for k in kept:
        ml_a = np.where(k.mask, k.logits, OUTSIDE_MASK_LOGIT)
        ml_b = sem_logits[sem.channel_of(k.instance.class_id)]
        planes.append(fuse_logits(ml_a, ml_b))

    pixels = np.zeros((height, width), dtype=np.uint32)
    if not planes:
        return PanopticMap(pixels, ())
    winner = np.argmax(np.stack(planes), axis=0)
    counts = np.bincount(winner.ravel(), minlength=len(planes))

    segments = []
    next_id = 1
    for idx in range(len(planes)):
        area = int(counts[idx])
        if area == 0:
            continue
        if idx < n_stuff:
            if area < config.min_sa:
                continue
            class_id = sem.channel_classes[stuff[idx]]
        else:
            class_id = kept[idx - n_stuff].instance.class_id
        pixels[winner == idx] = next_id
        segments.append(Segment(next_id, class_id, area, False))
        next_id += 1
    return PanopticMap(pixels, tuple(segments))


def instances_from_json(doc, base_dir, read_tensor) -> List[InstancePrediction]:
    """Parse an instance document; mask tensors are resolved relative to ``base_dir``.

    Expected layout::

        {"instances": [{"class_id": 3, "confidence": 0.9,
                        "bbox": [x0, y0, x1, y1], "mask": "mask_0.ptns"}]}
    """
    items = doc["instances"] if isinstance(doc, dict) else doc
    out = []
    for item in items:
        mask = read_tensor(base_dir / item["mask"])
        out.append(
            InstancePrediction(int(item["class_id"]), float(item["confidence"]), tuple(item["bbox"]), mask)
        )
    return out
