"""Classical downsampling filters used as comparison points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .downsampler import filter_tensor
from .errors import DimensionError, RangeError
from .tensor import Tensor
from .volume import VideoVolume

KINDS = ("nearest", "bicubic", "gaussian3d", "box_temporal")


@dataclass(frozen=True)
class ClassicalFilter:
    kind: str = "nearest"
    a: float = -0.5  # Keys bicubic parameter
    sigma_t: float = 0.8
    sigma_s: float = 0.8
    extent: int = 3
    length: int = 2  # temporal box window

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "box_temporal" and self.length < 1:
            raise RangeError("box length must be >= 1")

    @property
    def label(self) -> str:
        return {"nearest": "nearest", "bicubic": "bicubic", "gaussian3d": "gaussian",
                "box_temporal": "box"}[self.kind]


def gaussian_kernel(sigma: float, extent: int) -> np.ndarray:
    """Sampled 1-D Gaussian normalised to unit sum."""
    if sigma <= 0:
        raise RangeError(f"sigma must be positive, got {sigma}")
    if extent < 1 or extent % 2 == 0:
        raise DimensionError(f"extent must be odd, got {extent}")
    x = np.arange(extent) - extent // 2
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_kernel3d(sigma_t: float, sigma_s: float, extent: int = 3) -> np.ndarray:
    kt = gaussian_kernel(sigma_t, extent)
    ks = gaussian_kernel(sigma_s, extent)
    return kt[:, None, None] * ks[None, :, None] * ks[None, None, :]


def box_kernel(length: int) -> np.ndarray:
    """Temporal box of ``length`` taps centred (rounding down) on the current frame.

    Even lengths are zero-padded at the front so the kernel extent stays odd.
    """
    if length < 1:
        raise RangeError("box length must be >= 1")
    k = np.full(length, 1.0 / length)
    if length % 2 == 0:
        k = np.concatenate([[0.0], k])
    return k


def keys_cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    out = np.zeros_like(x, dtype=np.float64)
    m1 = x <= 1
    m2 = (x > 1) & (x < 2)
    out[m1] = (a + 2) * x[m1] ** 3 - (a + 3) * x[m1] ** 2 + 1
    out[m2] = a * x[m2] ** 3 - 5 * a * x[m2] ** 2 + 8 * a * x[m2] - 4 * a
    return out


def bicubic_matrix(n_in: int, s: int, a: float = -0.5) -> np.ndarray:
    """Antialiased Keys downsampling weights ``(ceil(n_in/s), n_in)``.

    Output ``i`` is centred on input ``s*i``; the kernel is stretched by ``s``
    and taps beyond the border are folded onto the edge sample.
    """
    n_out = -(-n_in // s)
    m = np.zeros((n_out, n_in))
    support = 2 * s
    offs = np.arange(-support + 1, support)
    w = keys_cubic(offs / s, a)
    w = w / w.sum()
    for i in range(n_out):
        idx = np.clip(s * i + offs, 0, n_in - 1)
        np.add.at(m[i], idx, w)
    return m


def _as_batch(x) -> tuple[Tensor, bool]:
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if x.ndim == 4:
        return T.reshape(x, (1,) + x.shape), True
    if x.ndim != 5:
        raise DimensionError(f"expected (C,T,H,W) or (N,C,T,H,W), got {x.shape}")
    return x, False


def classical_downsample_tensor(x, f: ClassicalFilter, stride) -> Tensor:
    """Apply ``f`` to a ``(N,C,T,H,W)`` (or ``(C,T,H,W)``) tensor."""
    r, s = stride
    if r < 1 or s < 1:
        raise DimensionError(f"strides must be >= 1, got {stride}")
    x5, squeeze = _as_batch(x)
    if f.kind == "nearest":
        y = x5[:, :, ::r, ::s, ::s]
    elif f.kind == "bicubic":
        y = x5[:, :, ::r]
        if s > 1:
            y = T.linear_resample(y, 3, bicubic_matrix(y.shape[3], s, f.a))
            y = T.linear_resample(y, 4, bicubic_matrix(y.shape[4], s, f.a))
    elif f.kind == "gaussian3d":
        k = gaussian_kernel3d(f.sigma_t, f.sigma_s, f.extent)
        y = filter_tensor(x5, Tensor(k.astype(x5.dtype)), (r, s))
    else:
        k = box_kernel(f.length)[:, None, None]
        y = filter_tensor(x5, Tensor(k.astype(x5.dtype)), (r, s))
    return T.reshape(y, y.shape[1:]) if squeeze else y


def classical_downsample(v: VideoVolume, f: ClassicalFilter, stride) -> VideoVolume:
    y = classical_downsample_tensor(Tensor(v.data.astype(np.float64)), f, stride).data
    return VideoVolume(y.astype(v.data.dtype if v.data.dtype.kind == "f" else np.float32),
                       fps=v.fps / stride[0], value_range=v.value_range)


def temporal_response(f, n: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude of the filter's temporal frequency response on ``[0, 0.5]`` cycles/frame.

    Accepts a :class:`ClassicalFilter` or a raw ``(kt,kh,kw)`` kernel.
    """
    if isinstance(f, ClassicalFilter):
        if f.kind == "gaussian3d":
            taps = gaussian_kernel(f.sigma_t, f.extent)
        elif f.kind == "box_temporal":
            taps = box_kernel(f.length)
        else:
            taps = np.array([1.0])
    else:
        k = np.asarray(f, dtype=np.float64)
        taps = k.reshape(k.shape[-3], -1).sum(axis=1)
    freqs = np.linspace(0.0, 0.5, n)
    idx = np.arange(len(taps)) - len(taps) // 2
    resp = np.abs(np.exp(-2j * np.pi * np.outer(freqs, idx)) @ taps)
    return freqs, resp


def temporal_notches(f, rel: float = 1e-3) -> list[float]:
    """Temporal frequencies (cycles/frame) where the response dips below ``rel * max``."""
    freqs, resp = temporal_response(f, 1025)
    thresh = rel * resp.max()
    notches = []
    for i in range(len(resp)):
        left = resp[i - 1] if i > 0 else np.inf
        right = resp[i + 1] if i + 1 < len(resp) else np.inf
        if resp[i] < thresh and resp[i] <= left and resp[i] <= right:
            notches.append(float(freqs[i]))
    return notches
