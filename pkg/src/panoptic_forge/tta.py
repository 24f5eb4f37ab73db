"""Test-time augmentation: merging semantic variants and upsampling panoptic output."""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy.special import softmax

from panoptic_forge.errors import TtaError
from panoptic_forge.raster import PanopticMap, SemanticLogits
from panoptic_forge.resample import resize_bilinear, resize_nearest


@dataclass(frozen=True)
class TtaConfig:
    scales: Tuple[float, ...]
    flip: bool = True

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        if not scales or any(s <= 0 for s in scales):
            raise TtaError(f"scales must be non-empty and positive, got {scales}")
        object.__setattr__(self, "scales", scales)

    def variants(self):
        """(scale, flipped) pairs in evaluation order."""
        flips = (False, True) if self.flip else (False,)
        return [(s, f) for s in self.scales for f in flips]


COCO_TTA = TtaConfig((0.75, 1.0, 1.25, 1.5, 1.75, 2.0))
CITYSCAPES_TTA = TtaConfig((0.75, 1.0, 1.25, 1.5))
TTA_PRESETS = {"coco": COCO_TTA, "cityscapes": CITYSCAPES_TTA}


def _variant_probabilities(sem: SemanticLogits, flipped: bool, target_size) -> np.ndarray:
    tw, th = target_size
    prob = softmax(np.asarray(sem.logits, dtype=np.float64), axis=0)
    if flipped:
        prob = prob[:, :, ::-1]
    return resize_bilinear(prob, th, tw)


def merged_probabilities(variants: Sequence[Tuple[SemanticLogits, float, bool]], target_size) -> np.ndarray:
    """Mean class probabilities over all variants at ``target_size = (w, h)``.

    Variants are summed in the given order so the result is bitwise
    reproducible.
    """
    if not variants:
        raise TtaError("no variants to merge")
    tw, th = target_size
    classes = variants[0][0].channel_classes
    total = None
    for sem, scale, flipped in variants:
        if sem.channel_classes != classes:
            raise TtaError("variants disagree on channel classes")
        if abs(sem.width - tw * scale) > 1 or abs(sem.height - th * scale) > 1:
            raise TtaError(
                f"variant of size {sem.width}x{sem.height} does not match scale {scale} of {tw}x{th}"
            )
        prob = _variant_probabilities(sem, flipped, target_size)
        total = prob if total is None else total + prob
    return total / len(variants)


def merge_predictions(variants: Sequence[Tuple[SemanticLogits, float, bool]], target_size) -> SemanticLogits:
    """Average variant probabilities and return them as log-probabilities.

    Each variant is ``(logits, scale, flipped)``; flipped variants are
    mirrored back before resampling. Argmax of the output is the argmax of
    the averaged probabilities.
    """
    prob = merged_probabilities(variants, target_size)
    logp = np.log(np.maximum(prob, np.finfo(np.float64).tiny))
    first = variants[0][0]
    return SemanticLogits(logp, first.channel_classes, first.stuff_channels)


def flip_logits(sem: SemanticLogits) -> SemanticLogits:
    return SemanticLogits(np.ascontiguousarray(sem.logits[:, :, ::-1]), sem.channel_classes, sem.stuff_channels)


def upsample_panoptic(pmap: PanopticMap, target_size) -> PanopticMap:
    """Nearest-neighbour upsampling to ``(w, h)``.

    The target must be at least the source size in both dimensions and keep
    the aspect ratio to within one pixel.
    """
    tw, th = target_size
    sw, sh = pmap.size
    if tw < sw or th < sh:
        raise TtaError(f"target {tw}x{th} is smaller than source {sw}x{sh}")
    # accepted when either side is within one pixel of the proportional size
    if abs(th * sw - sh * tw) > sw and abs(tw * sh - sw * th) > sh:
        raise TtaError(f"target {tw}x{th} changes the aspect ratio of {sw}x{sh}")
    if (tw, th) == (sw, sh):
        return pmap
    return pmap.with_pixels(resize_nearest(pmap.pixels, th, tw))
