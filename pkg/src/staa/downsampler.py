"""Learned space-time anti-aliasing downsampler.

A single small 3-D kernel is applied depthwise to every colour channel,
followed by strided sampling in time and space and an optional
straight-through 8-bit quantization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError, NumericError, RangeError
from .tensor import Tensor
from .volume import VideoVolume

CONSTRAINTS = ("none", "softmax", "softmax+quantize")


@dataclass
class FilterBank:
    """Raw 3-D filter weights plus the constraint and stride configuration.

    ``raw_weights`` has shape ``(k_t, k_h, k_w)`` when shared across channels,
    or ``(C, k_t, k_h, k_w)`` when ``per_channel`` is set.
    """

    raw_weights: Tensor
    constraint: str = "softmax"
    stride: tuple[int, int] = (2, 2)  # (time, space)
    per_channel: bool = False
    value_range: tuple[float, float] = (0.0, 255.0)

    def __post_init__(self):
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"constraint must be one of {CONSTRAINTS}")
        ks = self.raw_weights.shape[-3:]
        if any(k % 2 == 0 for k in ks):
            raise DimensionError(f"kernel extents must be odd, got {ks}")
        if self.raw_weights.ndim != (4 if self.per_channel else 3):
            raise DimensionError(f"unexpected raw weight shape {self.raw_weights.shape}")
        r, s = self.stride
        if r < 1 or s < 1:
            raise DimensionError(f"strides must be >= 1, got {self.stride}")

    @classmethod
    def create(cls, size=(3, 3, 3), constraint: str = "softmax", stride=(2, 2),
               per_channel: bool = False, channels: int = 3, dtype=np.float32) -> "FilterBank":
        """Bank whose effective kernel starts as the uniform box.

        Softmax variants start from zero raw weights; the unconstrained variant
        starts from ``1/size`` directly (zeros would be the all-zero filter).
        """
        shape = ((channels,) if per_channel else ()) + tuple(size)
        fill = 0.0 if constraint != "none" else 1.0 / float(np.prod(size))
        w = Tensor(np.full(shape, fill, dtype=dtype), requires_grad=True, name="filter.raw")
        return cls(w, constraint=constraint, stride=tuple(stride), per_channel=per_channel)

    @classmethod
    def from_kernel(cls, kernel: np.ndarray, stride=(2, 2), dtype=np.float32) -> "FilterBank":
        """Unconstrained bank holding exactly ``kernel``."""
        return cls(Tensor(np.asarray(kernel, dtype=dtype), requires_grad=True, name="filter.raw"),
                   constraint="none", stride=tuple(stride))

    @property
    def quantize(self) -> bool:
        return self.constraint == "softmax+quantize"


def effective_kernel(fb: FilterBank) -> Tensor:
    w = fb.raw_weights
    if not np.all(np.isfinite(w.data)):
        raise NumericError("filter weights contain non-finite values")
    if fb.constraint == "none":
        return w
    if fb.per_channel:
        return T.stack([T.softmax_flat(w[c]) for c in range(w.shape[0])], axis=0)
    return T.softmax_flat(w)


def filter_tensor(x: Tensor, kernel: Tensor, stride: tuple[int, int]) -> Tensor:
    """Depthwise strided convolution of ``x (N,C,T,H,W)`` with a 3-D kernel.

    ``kernel`` is ``(kt,kh,kw)`` (shared) or ``(C,kt,kh,kw)`` (per channel).
    """
    N, C, Tn, H, W = x.shape
    r, s = stride
    if kernel.ndim == 3:
        folded = T.reshape(x, (N * C, 1, Tn, H, W))
        y = T.conv3d(folded, T.reshape(kernel, (1, 1) + kernel.shape), stride=(r, s, s))
        return T.reshape(y, (N, C) + y.shape[2:])
    if kernel.shape[0] != C:
        raise DimensionError(f"per-channel kernel has {kernel.shape[0]} channels, input has {C}")
    outs = []
    for c in range(C):
        xc = T.slice_(x, 1, c, c + 1)
        kc = T.reshape(kernel[c], (1, 1) + kernel.shape[1:])
        outs.append(T.conv3d(xc, kc, stride=(r, s, s)))
    return T.concat(outs, axis=1)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_layer(x: Tensor, lo: float = 0.0, hi: float = 255.0) -> Tensor:
    """``round(clamp(x, lo, hi))`` with a surrogate gradient that never vanishes.

    The backward pass uses slope 2 at or beyond either bound and 1 inside,
    i.e. the derivative of ``x - relu(lo - x) + relu(x - hi)``, so the
    downsampler keeps receiving gradient when its output saturates. Rounding
    passes the gradient through unchanged.
    """
    if not lo < hi:
        raise RangeError(f"quantization range requires lo < hi, got [{lo}, {hi}]")
    xd = x.data
    if not np.all(np.isfinite(xd)):
        raise NumericError("quantize_layer input contains non-finite values")
    y = round_half_away(np.clip(xd, lo, hi)).astype(x.dtype)
    slope = np.where((xd <= lo) | (xd >= hi), 2.0, 1.0).astype(x.dtype)
    return T.record("quantize", y, (x,), lambda g: (g * slope,))


def downsample_tensor(x: Tensor, fb: FilterBank) -> Tensor:
    """Filter, stride and (if configured) quantize a ``(N,C,T,H,W)`` batch."""
    if min(x.shape) < 1:
        raise DimensionError(f"volume extents must be >= 1, got {x.shape}")
    y = filter_tensor(x, effective_kernel(fb), fb.stride)
    if fb.quantize:
        y = quantize_layer(y, *fb.value_range)
    return y


def downsample(v: VideoVolume, fb: FilterBank) -> VideoVolume:
    x = Tensor(v.data[None].astype(fb.raw_weights.dtype, copy=False))
    y = downsample_tensor(x, fb).data[0]
    return VideoVolume(y, fps=v.fps / fb.stride[0], value_range=v.value_range)


def channel_mean_drift(v: VideoVolume, fb: FilterBank) -> np.ndarray:
    """Per-channel mean of ``downsample(v) - v``; the colour-shift diagnostic."""
    d = downsample(v, fb)
    return d.data.reshape(d.channels, -1).mean(axis=1) - v.data.reshape(v.channels, -1).mean(axis=1)
