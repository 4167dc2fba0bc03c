"""Joint optimisation of the downsampler and upsampler.

The loop samples random space-time patches, optionally flips and rotates
them, runs ``downsample -> (quantize) -> upscale`` and minimises the L1
distance to the original patch with Adam and a step-decay schedule.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .baselines import ClassicalFilter, classical_downsample_tensor
from .downsampler import CONSTRAINTS, FilterBank, downsample_tensor
from .errors import (DimensionError, EmptyInputError, FormatError, NumericError, SpecError,
                     UnsupportedVersionError)
from .metrics import psnr
from .tensor import Tensor
from .upsampler import (ModelParams, UpscaleConfig, check_compatible, init_params, trilinear_upscale,
                        upscale_tensor)
from .volume import VideoVolume

CSV_COLUMNS = ("step", "lr", "train_l1", "val_psnr")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 2e-4
    decay: float = 0.2
    milestones: tuple[float, ...] = (0.5, 0.8)  # fractions of ``steps``
    batch_size: int = 2
    steps: int = 2000
    patch: tuple[int, int, int] = (4, 32, 32)  # (t, h, w) at full resolution
    seed: int = 0
    flip: bool = True
    rot90: bool = True
    quantize: bool = False
    downsampler: str = "learned"  # "learned" | "fixed"
    constraint: str = "softmax"
    filter_size: tuple[int, int, int] = (3, 3, 3)
    fixed_filter: ClassicalFilter | None = None
    filter_lr_scale: float = 1.0  # learning-rate multiplier for the filter weights
    upscale: UpscaleConfig = field(default_factory=UpscaleConfig)
    n_val: int = 8
    val_every: int = 0  # 0: validate only after the last step
    log_every: int = 1

    def __post_init__(self):
        if not self.lr0 > 0:
            raise SpecError(f"lr0 must be positive, got {self.lr0}")
        ms = tuple(self.milestones)
        if any(not 0.0 < m < 1.0 for m in ms) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise SpecError(f"milestones must be strictly increasing in (0, 1), got {ms}")
        if self.downsampler not in ("learned", "fixed"):
            raise SpecError(f"downsampler must be 'learned' or 'fixed', got {self.downsampler!r}")
        if self.downsampler == "fixed" and self.fixed_filter is None:
            raise SpecError("fixed downsampler needs fixed_filter")
        if self.constraint not in CONSTRAINTS:
            raise SpecError(f"constraint must be one of {CONSTRAINTS}")
        if self.downsampler == "learned" and self.upscale.r_den != 1:
            raise SpecError("the learned downsampler needs an integer temporal factor")
        if self.batch_size < 1 or self.steps < 0 or self.log_every < 1:
            raise SpecError("batch_size and log_every must be >= 1 and steps >= 0")
        t, h, w = self.patch
        if h % self.upscale.s or w % self.upscale.s:
            raise SpecError(f"patch {self.patch} not divisible by spatial factor {self.upscale.s}")
        if self.upscale.r_den == 1 and t % self.upscale.r_num:
            raise SpecError(f"patch {self.patch} not divisible by temporal factor {self.upscale.r_num}")
        if self.upscale.r_den > 1 and t % self.upscale.r_num:
            raise SpecError(f"{t} target frames do not fill whole {self.upscale.r_num}-frame blocks")

    @property
    def stride(self) -> tuple[int, int]:
        return (self.upscale.r_num, self.upscale.s)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              lr_scale: dict[str, float] | None = None) -> AdamState:
    """Bias-corrected Adam update, applied in place to ``params[name].data``."""
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NumericError(f"non-finite gradients for {bad}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        step = lr * (lr_scale or {}).get(name, 1.0)
        p.data = (p.data - step * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return state


def lr_at(step: int, config: TrainConfig) -> float:
    """``lr0 * decay ** (milestones passed)``; milestone ``m`` is passed at ``step >= m * steps``."""
    if step < 0:
        raise SpecError("step must be non-negative")
    passed = sum(1 for m in config.milestones if step >= m * config.steps)
    return config.lr0 * config.decay ** passed


# ---------------------------------------------------------------------------
# state and data


@dataclass
class TrainState:
    """Everything a checkpoint holds, plus the optimiser and loss history."""

    params: ModelParams
    filter: FilterBank | None
    config: TrainConfig
    step: int = 0
    adam: AdamState = field(default_factory=AdamState)
    history: list[dict] = field(default_factory=list)

    def named_tensors(self) -> dict[str, Tensor]:
        named = dict(self.params)
        if self.filter is not None:
            named["filter.raw"] = self.filter.raw_weights
        return named

    def trainable(self) -> dict[str, Tensor]:
        named = dict(self.params.trainable())
        if self.filter is not None and self.config.downsampler == "learned":
            named["filter.raw"] = self.filter.raw_weights
        return named


def init_state(config: TrainConfig) -> TrainState:
    params = init_params(config.upscale, seed=config.seed)
    fb = None
    if config.downsampler == "learned":
        constraint = config.constraint
        if config.quantize and constraint == "softmax":
            constraint = "softmax+quantize"
        fb = FilterBank.create(config.filter_size, constraint, config.stride,
                               channels=config.upscale.channels)
    return TrainState(params, fb, config)


def split_dataset(dataset: Sequence[VideoVolume], n_val: int) -> tuple[list, list]:
    """Hold out the last ``n_val`` clips; the rest train."""
    data = list(dataset)
    if not data:
        raise EmptyInputError("empty dataset")
    if n_val >= len(data):
        raise SpecError(f"{len(data)} clips cannot hold out {n_val} for validation")
    return data[:len(data) - n_val], data[len(data) - n_val:]


def _base_frames(config: TrainConfig) -> int:
    """Frames of source clip one training sample spans."""
    p, q = config.upscale.r_num, config.upscale.r_den
    t = config.patch[0]
    return t if q == 1 else t * q


def sample_batch(clips: Sequence[VideoVolume], config: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Random augmented patches ``(B, C, t', h, w)`` of source-rate frames."""
    tb = _base_frames(config)
    _, h, w = config.patch
    out = []
    for _ in range(config.batch_size):
        clip = clips[int(rng.integers(len(clips)))].data
        C, Tn, H, W = clip.shape
        if Tn < tb or H < h or W < w:
            raise DimensionError(f"clip {clip.shape[1:]} smaller than patch {(tb, h, w)}")
        t0 = int(rng.integers(Tn - tb + 1))
        y0 = int(rng.integers(H - h + 1))
        x0 = int(rng.integers(W - w + 1))
        p = clip[:, t0:t0 + tb, y0:y0 + h, x0:x0 + w]
        if config.flip and rng.random() < 0.5:
            p = p[..., ::-1]
        if config.rot90 and h == w:
            p = np.rot90(p, int(rng.integers(4)), axes=(2, 3))
        out.append(np.ascontiguousarray(p))
    return np.stack(out).astype(np.float32)


def rate_pair(base: np.ndarray, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Source-rate frames -> (network input before filtering, target) for a ``p/q`` ratio.

    For integer factors both are ``base``; for ``p/q`` the input keeps every
    ``p``-th and the target every ``q``-th frame, so ``q`` inputs span ``p``
    targets.
    """
    p, q = config.upscale.r_num, config.upscale.r_den
    if q == 1:
        return base, base
    t = config.patch[0]
    return base[:, :, ::p][:, :, :t * q // p], base[:, :, ::q][:, :, :t]


def _down(state: TrainState, x: Tensor) -> Tensor:
    cfg = state.config
    if cfg.upscale.r_den > 1:
        # rational conversion: frames were already decimated by ``rate_pair``
        y = x if cfg.fixed_filter is None else classical_downsample_tensor(x, cfg.fixed_filter, (1, cfg.upscale.s))
        return Tensor(y.data)
    if cfg.downsampler == "learned":
        return downsample_tensor(x, state.filter)
    y = classical_downsample_tensor(Tensor(x.data.astype(np.float64)), cfg.fixed_filter, cfg.stride).data
    if cfg.quantize:
        lo, hi = cfg.upscale.value_range
        y = np.sign(y) * np.floor(np.abs(np.clip(y, lo, hi)) + 0.5)
    return Tensor(y.astype(x.dtype))


def reconstruct(state: TrainState, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run the full pipeline on a ``(B,C,T,H,W)`` source array; returns ``(output, low-res input)``."""
    x_in, _ = rate_pair(gt, state.config)
    down = _down(state, Tensor(np.asarray(x_in, dtype=np.float32)))
    out = upscale_tensor(down, state.params, state.config.upscale)
    return out.data, down.data


def eval_chunks(clip: VideoVolume, config: TrainConfig) -> list[np.ndarray]:
    """Split a validation clip into full-frame chunks of the training sequence length.

    The recurrent alignment is trained on ``patch[0]``-frame sequences, so it
    is scored on sequences of that length too. Spatial extents are cropped to
    multiples of ``s``; trailing frames that do not fill a chunk are dropped.
    """
    s = config.upscale.s
    tb = _base_frames(config)
    C, Tn, H, W = clip.shape
    data = clip.data[:, :, :H - H % s, :W - W % s].astype(np.float32)
    chunks = [data[None, :, t0:t0 + tb] for t0 in range(0, Tn - tb + 1, tb)]
    if not chunks:
        raise DimensionError(f"clip with {Tn} frames is shorter than one {tb}-frame chunk")
    return chunks


def evaluate(state: TrainState, clips: Sequence[VideoVolume]) -> dict[str, float]:
    """Mean validation PSNR of the model and of the trilinear skip path alone."""
    cfg = state.config
    lo, hi = cfg.upscale.value_range
    model, tri = [], []
    for clip in clips:
        for gt in eval_chunks(clip, cfg):
            out, down = reconstruct(state, gt)
            _, target = rate_pair(gt, cfg)
            base = trilinear_upscale(Tensor(down), cfg.upscale.r_num, cfg.upscale.r_den, cfg.upscale.s).data
            model.append(psnr(np.clip(out, lo, hi), target, peak=hi - lo))
            tri.append(psnr(np.clip(base, lo, hi), target, peak=hi - lo))
    return {"psnr": float(np.mean(model)), "trilinear_psnr": float(np.mean(tri))}


def train_step(state: TrainState, batch: np.ndarray) -> float:
    """One optimisation step on a ``(B,C,t,h,w)`` patch batch; returns the L1 loss."""
    cfg = state.config
    lo, hi = cfg.upscale.value_range
    x_in, target = rate_pair(batch, cfg)
    trainable = state.trainable()
    with T.Tape() as tape:
        down = _down(state, Tensor(np.ascontiguousarray(x_in)))
        out = upscale_tensor(down, state.params, cfg.upscale)
        loss = T.mul(T.l1_loss(out, Tensor(np.ascontiguousarray(target))), 1.0 / (hi - lo))
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss at step {state.step}")
    grads = T.backward(tape, loss, list(trainable.values()))
    named = {name: grads[t] for name, t in trainable.items()}
    scale = {"filter.raw": cfg.filter_lr_scale}
    adam_step(trainable, named, state.adam, lr_at(state.step, cfg), lr_scale=scale)
    state.step += 1
    return value


def _snapshot(state: TrainState) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in state.named_tensors().items()}


def _restore(state: TrainState, snap: dict[str, np.ndarray]) -> None:
    for k, t in state.named_tensors().items():
        t.data = snap[k]


def run_training(dataset: Sequence[VideoVolume], config: TrainConfig, csv_path=None,
                 checkpoint_path=None, state: TrainState | None = None) -> TrainState:
    """Shared loop behind :func:`train_joint` and :func:`train_upsampler_only`.

    On a non-finite loss the parameters are rolled back to the last good step,
    written to ``checkpoint_path`` when given, and ``NumericError`` is raised
    with the state attached as ``err.state``.
    """
    train, val = split_dataset(dataset, config.n_val)
    state = state or init_state(config)
    rng = np.random.default_rng(config.seed + 1)
    writer = fh = None
    if csv_path is not None:
        fh = open(csv_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
    try:
        while state.step < config.steps:
            step, lr = state.step, lr_at(state.step, config)
            batch = sample_batch(train, config, rng)
            snap = _snapshot(state)
            try:
                loss = train_step(state, batch)
            except NumericError as err:
                _restore(state, snap)
                state.step = step
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, state)
                err.state = state
                raise
            row = {"step": step, "lr": lr, "train_l1": loss, "val_psnr": None}
            last = state.step == config.steps
            if last or (config.val_every and state.step % config.val_every == 0):
                row["val_psnr"] = evaluate(state, val)["psnr"]
            state.history.append(row)
            if writer is not None and (step % config.log_every == 0 or last):
                writer.writerow([step, f"{lr:.9g}", f"{loss:.9g}",
                                 "" if row["val_psnr"] is None else f"{row['val_psnr']:.6f}"])
    finally:
        if fh is not None:
            fh.close()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, state)
    return state


def train_joint(dataset: Sequence[VideoVolume], config: TrainConfig, csv_path=None,
                checkpoint_path=None) -> TrainState:
    """End-to-end training of the filter bank and the upsampler."""
    if config.downsampler != "learned":
        config = replace(config, downsampler="learned", fixed_filter=None)
    return run_training(dataset, config, csv_path, checkpoint_path)


def train_upsampler_only(dataset: Sequence[VideoVolume], fixed: ClassicalFilter, config: TrainConfig,
                         csv_path=None, checkpoint_path=None) -> TrainState:
    """Train only the upsampler behind a frozen classical downsampler.

    With a temporal box this is the motion-blur model: the network sees
    blurred (and strided) frames and is supervised by the sharp sequence.
    """
    config = replace(config, downsampler="fixed", fixed_filter=fixed)
    return run_training(dataset, config, csv_path, checkpoint_path)


# ---------------------------------------------------------------------------
# checkpoint format

MAGIC = b"STAA"
VERSION = 1
META_NAME = "meta.config"


def encode_meta(config: TrainConfig) -> np.ndarray:
    """Model geometry as a small float vector, stored as an ordinary tensor."""
    u = config.upscale
    lo, hi = u.value_range
    return np.array([u.r_num, u.r_den, u.s, u.channels, u.features, u.n_rdb, u.rdb_layers, u.growth,
                     u.beta, float(u.use_dtm), CONSTRAINTS.index(config.constraint), float(config.quantize),
                     lo, hi], dtype=np.float32)


def _f32_value(x) -> float:
    """The shortest decimal that rounds to the stored float32, e.g. 0.2 rather than 0.2000000029."""
    return float(str(np.float32(x)))


def decode_meta(vec: np.ndarray) -> tuple[UpscaleConfig, str, bool]:
    v = [_f32_value(x) for x in np.asarray(vec).reshape(-1)]
    if len(v) != 14:
        raise FormatError(f"{META_NAME} has {len(v)} entries, expected 14")
    cfg = UpscaleConfig(r_num=int(v[0]), r_den=int(v[1]), s=int(v[2]), channels=int(v[3]),
                        features=int(v[4]), n_rdb=int(v[5]), rdb_layers=int(v[6]), growth=int(v[7]),
                        beta=v[8], use_dtm=bool(v[9]), value_range=(v[12], v[13]))
    return cfg, CONSTRAINTS[int(v[10])], bool(v[11])


def write_tensors(path, tensors: dict[str, np.ndarray], step: int) -> None:
    """Write named float32 tensors in the checkpoint layout."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        a = np.asarray(arr)
        if len(raw) > 0xFFFF or a.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    parts.append(struct.pack("<Q", step))
    Path(path).write_bytes(b"".join(parts))


def read_tensors(path) -> tuple[dict[str, np.ndarray], int]:
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: checkpoint version {version} is not supported")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            if pos + n + 1 > len(buf):
                raise FormatError(f"{path}: truncated tensor name")
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            rank = buf[pos]
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if pos + size > len(buf):
                raise FormatError(f"{path}: truncated payload for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=size // 4, offset=pos).reshape(shape).astype(np.float32)
            pos += size
        (step,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
    except struct.error as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    if pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - pos} trailing bytes")
    return out, step


def save_checkpoint(path, state: TrainState) -> None:
    tensors = {k: t.data for k, t in state.named_tensors().items()}
    tensors[META_NAME] = encode_meta(state.config)
    write_tensors(path, tensors, state.step)


@dataclass
class Checkpoint:
    params: ModelParams
    filter: FilterBank | None
    upscale: UpscaleConfig
    step: int
    quantize: bool


def load_checkpoint(path) -> Checkpoint:
    tensors, step = read_tensors(path)
    if META_NAME not in tensors:
        raise FormatError(f"{path}: missing {META_NAME}")
    cfg, constraint, quantize = decode_meta(tensors.pop(META_NAME))
    fb = None
    if "filter.raw" in tensors:
        fb = FilterBank(Tensor(tensors.pop("filter.raw"), requires_grad=True, name="filter.raw"),
                        constraint=constraint, stride=(cfg.r_num, cfg.s), value_range=cfg.value_range)
    params = ModelParams({k: Tensor(v, requires_grad=k not in ModelParams.FROZEN, name=k)
                          for k, v in tensors.items()})
    check_compatible(params, cfg)
    return Checkpoint(params, fb, cfg, step, quantize)


def state_from_checkpoint(ck: Checkpoint, config: TrainConfig) -> TrainState:
    return TrainState(ck.params, ck.filter, config, step=ck.step)
