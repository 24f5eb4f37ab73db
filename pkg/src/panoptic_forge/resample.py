"""Resampling helpers shared by fusion, augmentation and TTA."""

import numpy as np


def nearest_indices(src_len: int, dst_len: int) -> np.ndarray:
    """Source index for each destination index under pixel-center nearest sampling.

    Uses integer arithmetic only: ``floor((i + 0.5) * src / dst)``. When
    ``dst >= src`` every source index is hit at least once.
    """
    i = np.arange(dst_len, dtype=np.int64)
    return np.minimum((2 * i + 1) * src_len // (2 * dst_len), src_len - 1)


def resize_nearest(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of the last two axes; never creates new values."""
    rows = nearest_indices(arr.shape[-2], height)
    cols = nearest_indices(arr.shape[-1], width)
    return arr[..., rows[:, None], cols[None, :]]


def _bilinear_weights(src_len, dst_len):
    # half-pixel centres, edge clamped
    pos = (np.arange(dst_len, dtype=np.float64) + 0.5) * (src_len / dst_len) - 0.5
    pos = np.clip(pos, 0.0, src_len - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src_len - 1)
    frac = pos - lo
    return lo, hi, frac


def resize_bilinear(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of the last two axes with half-pixel centres.

    Returns float64. Equal sizes return a float64 copy unchanged.
    """
    arr = np.asarray(arr, dtype=np.float64)
    src_h, src_w = arr.shape[-2:]
    if (src_h, src_w) == (height, width):
        return arr.copy()
    lo, hi, f = _bilinear_weights(src_h, height)
    f = f[:, None]
    rows = arr[..., lo, :] * (1.0 - f) + arr[..., hi, :] * f
    lo, hi, f = _bilinear_weights(src_w, width)
    return rows[..., lo] * (1.0 - f) + rows[..., hi] * f
