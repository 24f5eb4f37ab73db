"""Epoch composition, augmentation parameters and the learning-rate schedule."""

import bisect
import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from panoptic_forge.errors import PlanError
from panoptic_forge.raster import PanopticMap
from panoptic_forge.resample import resize_nearest

SCALE_RANGE = (0.5, 2.0)

# recorded for reference; nothing in this package trains a network
SGD_MOMENTUM = 0.9
BATCH_SIZE = 4


@dataclass(frozen=True)
class DatasetStats:
    name: str
    train_size: int

    def __post_init__(self):
        if self.train_size <= 0:
            raise PlanError(f"{self.name}: train_size must be positive")


@dataclass(frozen=True)
class EpochPlan:
    items: Tuple[Tuple[str, int], ...]
    seed: int

    def __len__(self):
        return len(self.items)

    def counts(self):
        """{(dataset, index): occurrences}"""
        out = {}
        for item in self.items:
            out[item] = out.get(item, 0) + 1
        return out

    def to_json(self) -> dict:
        return {"seed": self.seed, "items": [[d, i] for d, i in self.items]}


def plan_epoch(stats: Sequence[DatasetStats], anchor: str, factor: int, seed: int) -> EpochPlan:
    """One epoch: anchor images once, every other dataset ``factor`` times, shuffled.

    The shuffle is a uniform permutation drawn from ``numpy.random.default_rng(seed)``.
    """
    names = [s.name for s in stats]
    if anchor not in names:
        raise PlanError(f"anchor {anchor!r} not among datasets {names}")
    if len(set(names)) != len(names):
        raise PlanError(f"duplicate dataset names {names}")
    if factor < 1:
        raise PlanError("factor must be >= 1")
    if not 0 <= seed < 2**64:
        raise PlanError("seed must be an unsigned 64-bit integer")
    base = []
    for s in stats:
        reps = 1 if s.name == anchor else factor
        base.extend([(s.name, i) for i in range(s.train_size)] * reps)
    perm = np.random.default_rng(seed).permutation(len(base))
    return EpochPlan(tuple(base[i] for i in perm), seed)


def split_train_val(n: int, seed: int, train_ratio: float = 0.8):
    """Seeded shuffle of ``range(n)``; the first ``floor(train_ratio * n)`` are training."""
    perm = np.random.default_rng(seed).permutation(n)
    k = int(math.floor(train_ratio * n))
    return sorted(perm[:k].tolist()), sorted(perm[k:].tolist())


@dataclass(frozen=True)
class LrSchedule:
    lr_base: float = 0.01
    warmup_iters: int = 200
    warmup_start_factor: float = 1.0 / 3.0
    milestones: Tuple[int, ...] = (400_000, 520_000)
    decay: float = 10.0

    def __post_init__(self):
        ms = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise PlanError(f"milestones {ms} must be strictly increasing")
        if ms and ms[0] <= self.warmup_iters:
            raise PlanError("milestones must come after the warm-up")
        object.__setattr__(self, "milestones", ms)


def lr_at(iteration: int, schedule: LrSchedule = LrSchedule()) -> float:
    """Linear warm-up from ``start_factor * lr_base``, then a step decay per milestone.

    A milestone applies from its own iteration onward.
    """
    if iteration < 0:
        raise PlanError("iteration must be >= 0")
    s = schedule
    if iteration < s.warmup_iters:
        f = s.warmup_start_factor
        return s.lr_base * (f + (1.0 - f) * iteration / s.warmup_iters)
    passed = bisect.bisect_right(s.milestones, iteration)
    return s.lr_base / s.decay**passed


def _round_half_up(num: int, den: int) -> int:
    return (2 * num + den) // (2 * den)


def cap_longest_side(size: Tuple[int, int], cap: int) -> Tuple[int, int]:
    """Shrink ``(w, h)`` so the longest side equals ``cap``; smaller sizes pass through."""
    w, h = size
    if w <= 0 or h <= 0 or cap <= 0:
        raise PlanError(f"sizes must be positive, got {size} and cap {cap}")
    longest = max(w, h)
    if longest <= cap:
        return (w, h)
    if w >= h:
        return (cap, max(1, _round_half_up(h * cap, w)))
    return (max(1, _round_half_up(w * cap, h)), cap)


@dataclass(frozen=True)
class AugmentationSpec:
    """``crop`` is ``(x0, y0, x1, y1)`` in scaled-canvas pixels, upper corners exclusive."""

    flip: bool
    scale: float
    crop: Tuple[int, int, int, int]

    def __post_init__(self):
        lo, hi = SCALE_RANGE
        if not lo <= self.scale <= hi:
            raise PlanError(f"scale {self.scale} outside [{lo}, {hi}]")


def scaled_size(size: Tuple[int, int], scale: float) -> Tuple[int, int]:
    w, h = size
    return (max(1, int(math.floor(w * scale + 0.5))), max(1, int(math.floor(h * scale + 0.5))))


def sample_augmentation(rng: np.random.Generator, original_size, scale=None, flip=None) -> AugmentationSpec:
    """Draw flip, scale and a crop the size of the unscaled image.

    ``scale``/``flip`` may be pinned. When the scaled canvas is smaller than
    the original, the crop shrinks to the canvas.
    """
    w, h = original_size
    if w <= 0 or h <= 0:
        raise PlanError(f"invalid size {original_size}")
    if flip is None:
        flip = bool(rng.integers(0, 2))
    if scale is None:
        scale = float(rng.uniform(*SCALE_RANGE))
    sw, sh = scaled_size((w, h), scale)
    cw, ch = min(w, sw), min(h, sh)
    x0 = int(rng.integers(0, sw - cw + 1))
    y0 = int(rng.integers(0, sh - ch + 1))
    return AugmentationSpec(bool(flip), float(scale), (x0, y0, x0 + cw, y0 + ch))


def apply_to_labels(pmap: PanopticMap, spec: AugmentationSpec) -> PanopticMap:
    """Nearest-neighbour scale, optional horizontal flip, then crop."""
    sw, sh = scaled_size(pmap.size, spec.scale)
    x0, y0, x1, y1 = spec.crop
    if not (0 <= x0 < x1 <= sw and 0 <= y0 < y1 <= sh):
        raise PlanError(f"crop {spec.crop} outside the {sw}x{sh} scaled canvas")
    pixels = resize_nearest(pmap.pixels, sh, sw)
    if spec.flip:
        pixels = pixels[:, ::-1]
    return pmap.with_pixels(np.ascontiguousarray(pixels[y0:y1, x0:x1]))


def identity_spec(size) -> AugmentationSpec:
    w, h = size
    return AugmentationSpec(False, 1.0, (0, 0, w, h))
