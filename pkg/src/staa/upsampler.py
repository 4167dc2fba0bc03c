"""Space-time reconstruction network.

Pipeline for a low-resolution batch ``x (B, C, N, H, W)``::

    features = conv3d(x)                      # lift to feature space
    features = dtm_bidirectional(features)    # deformable recurrent alignment
    features = rdb_trunk(features)            # residual dense 3-D blocks
    residual = shuffle(conv3d(features))      # (B, C, r*N, s*H, s*W)
    output   = trilinear_upscale(x) + residual

The output convolution starts at zero, so an untrained network reproduces
trilinear interpolation exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, SpecError
from .tensor import Tensor
from .volume import VideoVolume


@dataclass(frozen=True)
class UpscaleConfig:
    r_num: int = 2
    r_den: int = 1
    s: int = 2
    channels: int = 3
    features: int = 16
    n_rdb: int = 2
    rdb_layers: int = 3
    growth: int = 8
    beta: float = 0.2
    use_dtm: bool = True
    value_range: tuple[float, float] = (0.0, 255.0)

    def __post_init__(self):
        if self.r_num < 1 or self.r_den < 1 or self.s < 1:
            raise SpecError(f"factors must be >= 1, got r={self.r_num}/{self.r_den}, s={self.s}")
        if math.gcd(self.r_num, self.r_den) != 1:
            raise SpecError(f"temporal ratio {self.r_num}/{self.r_den} is not in lowest terms")
        if not 0.0 < self.beta <= 1.0:
            raise SpecError(f"residual scale must lie in (0, 1], got {self.beta}")

    @property
    def r(self) -> Fraction:
        return Fraction(self.r_num, self.r_den)

    @property
    def out_channels(self) -> int:
        return self.r_num * self.s * self.s * self.channels


class ModelParams(dict):
    """Named parameter tensors of the upsampler (``name -> Tensor``)."""

    FROZEN = ("rdb.beta",)

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(k, v) for k, v in self.items() if k not in self.FROZEN]

    @property
    def beta(self) -> float:
        return float(self["rdb.beta"].data.reshape(-1)[0])

    def astype(self, dtype) -> "ModelParams":
        return ModelParams({k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad, name=k)
                            for k, v in self.items()})

    def count(self) -> int:
        return sum(v.size for k, v in self.trainable())


def init_params(config: UpscaleConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Seeded LeCun-normal convolutions; identity deformable kernel; zero output stage."""
    rng = np.random.default_rng(seed)
    F, C, G = config.features, config.channels, config.growth
    p: dict[str, np.ndarray] = {}

    def conv(name, shape, scale=1.0):
        fan_in = int(np.prod(shape[1:]))
        p[name + ".w"] = rng.standard_normal(shape) * scale / math.sqrt(fan_in)
        p[name + ".b"] = np.zeros(shape[0])

    conv("in_conv", (F, C, 3, 3, 3))
    for d in ("fwd", "bwd"):
        pre = f"dtm.{d}"
        p[pre + ".offset.w"] = np.zeros((18, 2 * F, 3, 3))
        p[pre + ".offset.b"] = np.zeros(18)
        dk = np.zeros((F, F, 3, 3))
        dk[np.arange(F), np.arange(F), 1, 1] = 1.0
        p[pre + ".deform.w"] = dk
        conv(pre + ".lstm", (4 * F, 2 * F, 3, 3))
        p[pre + ".lstm.b"][F:2 * F] = 1.0  # forget gate
    p["dtm.w_f"] = 0.5 * np.eye(F)
    p["dtm.w_b"] = 0.5 * np.eye(F)
    for b in range(config.n_rdb):
        for layer in range(config.rdb_layers):
            conv(f"rdb{b}.conv{layer}", (G, F + layer * G, 3, 3, 3))
        conv(f"rdb{b}.fuse", (F, F + config.rdb_layers * G, 1, 1, 1))
    p["out_conv.w"] = np.zeros((config.out_channels, F * config.r_den, 3, 3, 3))
    p["out_conv.b"] = np.zeros(config.out_channels)
    params = ModelParams({k: Tensor(v.astype(dtype), requires_grad=True, name=k) for k, v in p.items()})
    params["rdb.beta"] = Tensor(np.array([config.beta], dtype=dtype), name="rdb.beta")
    return params


# ---------------------------------------------------------------------------
# shuffle


def space_time_shuffle(x: Tensor, r: int, s: int) -> Tensor:
    """``(r*s*s*C, N, H, W) -> (C, r*N, s*H, s*W)``; a leading batch axis is allowed.

    ``out[c, r*n+i, s*h+j, s*w+k] = x[((i*s + j)*s + k)*C + c, n, h, w]``.
    """
    batched = x.ndim == 5
    if not batched:
        x = T.reshape(x, (1,) + x.shape)
    B, K, N, H, W = x.shape
    if K % (r * s * s):
        raise DimensionError(f"channel extent {K} is not divisible by r*s^2 = {r * s * s}")
    C = K // (r * s * s)
    y = T.reshape(x, (B, r, s, s, C, N, H, W))
    y = T.transpose(y, (0, 4, 5, 1, 6, 2, 7, 3))
    y = T.reshape(y, (B, C, N * r, H * s, W * s))
    return y if batched else T.reshape(y, y.shape[1:])


def space_time_unshuffle(y: Tensor, r: int, s: int) -> Tensor:
    """Exact inverse of :func:`space_time_shuffle`."""
    batched = y.ndim == 5
    if not batched:
        y = T.reshape(y, (1,) + y.shape)
    B, C, NT, HS, WS = y.shape
    if NT % r or HS % s or WS % s:
        raise DimensionError(f"extents {y.shape[2:]} not divisible by (r, s, s) = {(r, s, s)}")
    N, H, W = NT // r, HS // s, WS // s
    x = T.reshape(y, (B, C, N, r, H, s, W, s))
    x = T.transpose(x, (0, 3, 5, 7, 1, 2, 4, 6))
    x = T.reshape(x, (B, r * s * s * C, N, H, W))
    return x if batched else T.reshape(x, x.shape[1:])


# ---------------------------------------------------------------------------
# trilinear skip


def linear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear interpolation weights ``(n_out, n_in)`` with align-corners off."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        src = min(max((o + 0.5) * scale - 0.5, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        w = src - i0
        m[o, i0] += 1.0 - w
        m[o, i1] += w
    return m


def trilinear_upscale(x: Tensor, r_num: int, r_den: int = 1, s: int = 1) -> Tensor:
    """Separable linear upscaling of the last three axes ``(T, H, W)``."""
    if r_num < 1 or r_den < 1 or s < 1:
        raise SpecError("upscale factors must be >= 1")
    Tn, H, W = x.shape[-3:]
    if (Tn * r_num) % r_den:
        raise DimensionError(f"{Tn} frames cannot be scaled by {r_num}/{r_den}")
    y = x
    for axis, n_in, n_out in ((-3, Tn, Tn * r_num // r_den), (-2, H, H * s), (-1, W, W * s)):
        if n_in != n_out:
            y = T.linear_resample(y, axis, linear_matrix(n_in, n_out))
    return y


# ---------------------------------------------------------------------------
# deformable temporal modelling


def _frames(features) -> list[Tensor]:
    if isinstance(features, Tensor):
        return [features[:, :, i] for i in range(features.shape[2])]
    return list(features)


def align(prev: Tensor, offsets: Tensor, kernel: Tensor) -> Tensor:
    """Deformably resample ``prev (B,F,H,W)`` with per-tap offsets."""
    return T.deform_conv2d(prev, offsets, kernel)


def convlstm_cell(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """ConvLSTM update from input ``x`` and (aligned) state ``h, c``, all ``(B,F,H,W)``.

    ``w`` is ``(4F, 2F, kh, kw)`` acting on ``[x, h]``; gate order is input,
    forget, output, candidate.
    """
    F = h.shape[1]
    gates = T.conv2d(T.concat([x, h], axis=1), w, b)
    g_i, g_f, g_o, g_g = (gates[:, k * F:(k + 1) * F] for k in range(4))
    c_new = T.add(T.mul(T.sigmoid(g_f), c), T.mul(T.sigmoid(g_i), T.tanh(g_g)))
    return T.mul(T.sigmoid(g_o), T.tanh(c_new)), c_new


def dtm_pass(features, direction: str, params: ModelParams, prefix: str | None = None) -> list[Tensor]:
    """One recurrent sweep of deformable alignment plus a ConvLSTM cell.

    ``features`` is a sequence of ``(B,F,H,W)`` tensors (or a ``(B,F,N,H,W)``
    tensor). ``direction`` is ``"forward"`` or ``"backward"``; the returned
    list is in the original time order either way.
    """
    seq = _frames(features)
    if not seq:
        raise DimensionError("dtm_pass needs a non-empty sequence")
    shape = seq[0].shape
    for f in seq:
        if f.shape != shape:
            raise DimensionError(f"frame feature shapes differ: {shape} vs {f.shape}")
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    pre = prefix or ("dtm.fwd" if direction == "forward" else "dtm.bwd")
    B = shape[0]
    order = range(len(seq)) if direction == "forward" else range(len(seq) - 1, -1, -1)
    zero = Tensor(np.zeros(shape, dtype=seq[0].dtype))
    h = c = None
    out: list[Tensor | None] = [None] * len(seq)
    for i in order:
        fi = seq[i]
        if h is None:
            h_al = c_al = zero
        else:
            off = T.conv2d(T.concat([h, fi], axis=1), params[pre + ".offset.w"], params[pre + ".offset.b"])
            both = align(T.concat([h, c], axis=0), T.concat([off, off], axis=0), params[pre + ".deform.w"])
            h_al, c_al = both[:B], both[B:]
        h, c = convlstm_cell(fi, h_al, c_al, params[pre + ".lstm.w"], params[pre + ".lstm.b"])
        out[i] = h
    return out


def _pointwise(x: Tensor, w: Tensor) -> Tensor:
    """1x1x1 convolution of ``(B,F,N,H,W)`` with a ``(F_out, F_in)`` matrix."""
    return T.conv3d(x, T.reshape(w, w.shape + (1, 1, 1)))


def dtm_bidirectional(features, params: ModelParams) -> Tensor:
    """``w_f * r_f(f_i) + w_b * r_b(f_i)`` for every frame; returns ``(B,F,N,H,W)``."""
    rf = T.stack(dtm_pass(features, "forward", params), axis=2)
    rb = T.stack(dtm_pass(features, "backward", params), axis=2)
    return T.add(_pointwise(rf, params["dtm.w_f"]), _pointwise(rb, params["dtm.w_b"]))


# ---------------------------------------------------------------------------
# residual dense trunk


def rdb_block(x: Tensor, params: ModelParams, b: int, layers: int, beta: float) -> Tensor:
    feats = [x]
    for layer in range(layers):
        inp = feats[0] if len(feats) == 1 else T.concat(feats, axis=1)
        y = T.conv3d(inp, params[f"rdb{b}.conv{layer}.w"], params[f"rdb{b}.conv{layer}.b"])
        feats.append(T.leaky_relu(y, 0.1))
    fused = T.conv3d(T.concat(feats, axis=1), params[f"rdb{b}.fuse.w"], params[f"rdb{b}.fuse.b"])
    return T.add(x, T.mul(fused, beta))


def rdb_trunk(x: Tensor, params: ModelParams, n_blocks: int | None = None, layers: int | None = None) -> Tensor:
    """Stack of residual dense blocks; no normalisation layers."""
    if n_blocks is None:
        n_blocks = sum(1 for k in params if k.endswith(".fuse.w"))
    if layers is None:
        layers = sum(1 for k in params if k.startswith("rdb0.conv") and k.endswith(".w"))
    beta = params.beta if isinstance(params, ModelParams) else float(params["rdb.beta"].data.reshape(-1)[0])
    squeeze = x.ndim == 4
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    for b in range(n_blocks):
        x = rdb_block(x, params, b, layers, beta)
    return T.reshape(x, x.shape[1:]) if squeeze else x


# ---------------------------------------------------------------------------
# full upsampler


def check_compatible(params: ModelParams, config: UpscaleConfig) -> None:
    w = params["out_conv.w"]
    expect = (config.out_channels, config.features * config.r_den)
    if w.shape[:2] != expect:
        raise SpecError(f"parameters produce {w.shape[:2]} output/input channels, config needs {expect}")


def upscale_tensor(x: Tensor, params: ModelParams, config: UpscaleConfig) -> Tensor:
    """Differentiable upsampler on a ``(B, C, N, H, W)`` batch in value units."""
    if x.ndim != 5:
        raise DimensionError(f"expected (B,C,N,H,W), got {x.shape}")
    B, C, N, H, W = x.shape
    p, q, s = config.r_num, config.r_den, config.s
    if N % q:
        raise DimensionError(f"{N} frames cannot be grouped into blocks of {q} for ratio {p}/{q}")
    lo, hi = config.value_range
    span = hi - lo
    xn = T.mul(T.add(x, -lo), 1.0 / span)
    f = T.conv3d(xn, params["in_conv.w"], params["in_conv.b"])
    if config.use_dtm:
        f = dtm_bidirectional(f, params)
    f = rdb_trunk(f, params, config.n_rdb, config.rdb_layers)
    if q > 1:
        Fc = f.shape[1]
        f = T.reshape(f, (B, Fc, N // q, q, H, W))
        f = T.transpose(f, (0, 1, 3, 2, 4, 5))
        f = T.reshape(f, (B, Fc * q, N // q, H, W))
    o = T.conv3d(f, params["out_conv.w"], params["out_conv.b"])
    residual = T.mul(space_time_shuffle(o, p, s), span)
    return T.add(trilinear_upscale(x, p, q, s), residual)


def upscale(v_down: VideoVolume, params: ModelParams, config: UpscaleConfig) -> VideoVolume:
    check_compatible(params, config)
    dtype = params["out_conv.w"].dtype
    x = Tensor(v_down.data[None].astype(np.result_type(dtype, v_down.data.dtype), copy=False))
    y = upscale_tensor(x, params, config).data[0]
    return VideoVolume(y, fps=v_down.fps * config.r, value_range=v_down.value_range)
