"""Reconstruction quality metrics and the storage-fraction law."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, RangeError
from .volume import VideoVolume

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class QualityScore:
    psnr: float  # dB; math.inf when the inputs are identical
    ssim: float


def _array(v) -> np.ndarray:
    return np.asarray(v.data if isinstance(v, VideoVolume) else v, dtype=np.float64)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    x, y = _array(a), _array(b)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.size == 0:
        raise DimensionError("empty volumes")
    return x, y


def to_luma(x: np.ndarray) -> np.ndarray:
    """BT.601 luma of a ``(3, ...)`` array, keeping a singleton channel axis."""
    if x.shape[0] != 3:
        raise DimensionError(f"luma needs 3 channels, got {x.shape[0]}")
    return np.tensordot(LUMA_WEIGHTS, x, axes=(0, 0))[None]


def _space(x, space: str) -> np.ndarray:
    if space == "rgb":
        return x
    if space == "luma":
        return to_luma(x)
    raise ValueError(f"unknown colour space {space!r}")


def psnr(a, b, peak: float = 255.0, space: str = "rgb") -> float:
    """``10 log10(peak^2 / MSE)`` over every sample; ``inf`` when MSE is zero."""
    x, y = _pair(a, b)
    x, y = _space(x, space), _space(y, space)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, g1: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation over the last two axes."""
    k = len(g1)
    rows = sliding_window_view(img, k, axis=-1) @ g1
    return np.moveaxis(sliding_window_view(np.moveaxis(rows, -2, -1), k, axis=-1) @ g1, -1, -2)


def ssim_map(x: np.ndarray, y: np.ndarray, peak: float = 255.0, size: int = 11,
             sigma: float = 1.5) -> np.ndarray:
    """Per-pixel SSIM over the last two axes (valid window positions only)."""
    if x.shape[-1] < size or x.shape[-2] < size:
        raise DimensionError(f"frames of {x.shape[-2]}x{x.shape[-1]} are smaller than the {size}x{size} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    g = np.exp(-((np.arange(size) - (size - 1) / 2.0) ** 2) / (2 * sigma * sigma))
    g /= g.sum()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(a, b, peak: float = 255.0, space: str = "rgb") -> float:
    """Mean SSIM over all frames and channels; each frame is scored in 2-D."""
    x, y = _pair(a, b)
    x, y = _space(x, space), _space(y, space)
    if x.ndim < 2:
        raise DimensionError(f"need at least (H, W), got {x.shape}")
    return float(ssim_map(x, y, peak).mean())


def quality(a, b, peak: float = 255.0, space: str = "rgb") -> QualityScore:
    return QualityScore(psnr(a, b, peak, space), ssim(a, b, peak, space))


def pixel_percentage(r: int, s: int) -> float:
    """Fraction of samples kept after ``r``x temporal and ``s``x spatial striding."""
    if r < 1 or s < 1:
        raise RangeError(f"factors must be >= 1, got r={r}, s={s}")
    return 1.0 / (r * s * s)
