"""Video volumes, on-disk formats and the synthetic moving-sprite scenes."""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import DimensionError, EmptyInputError, FormatError, SpecError


@dataclass(frozen=True)
class VideoVolume:
    """An xyt volume laid out as ``(C, T, H, W)``."""

    data: np.ndarray
    fps: Fraction = Fraction(24)
    value_range: tuple[float, float] = (0.0, 255.0)

    def __post_init__(self):
        if self.data.ndim != 4:
            raise DimensionError(f"volume data must be (C,T,H,W), got {self.data.shape}")
        if self.data.shape[0] not in (1, 3):
            raise DimensionError(f"channel count must be 1 or 3, got {self.data.shape[0]}")
        if min(self.data.shape) < 1:
            raise EmptyInputError(f"zero-size volume {self.data.shape}")
        fps = Fraction(self.fps)
        if fps <= 0:
            raise SpecError(f"fps must be positive, got {fps}")
        object.__setattr__(self, "fps", fps)
        lo, hi = self.value_range
        if not lo < hi:
            raise SpecError(f"bad value range {self.value_range}")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray, fps=None) -> "VideoVolume":
        return replace(self, data=data, fps=self.fps if fps is None else Fraction(fps))

    def to_u8(self) -> np.ndarray:
        """Values rounded half away from zero and clamped to ``[0, 255]``."""
        x = np.clip(self.data, 0.0, 255.0)
        return np.floor(x + 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# synthetic scenes

SPRITE_KINDS = ("checkerboard", "random-noise", "bar")


@dataclass(frozen=True)
class SceneSpec:
    """A single sprite moving with constant velocity over a flat background."""

    sprite: str = "bar"
    sprite_size: tuple[int, int] = (12, 4)
    velocity: tuple[float, float] = (1.0, 0.0)  # (v_x, v_y) in pixels per frame
    background: float = 32.0
    extents: tuple[int, int, int] = (32, 64, 64)  # (T, H, W)
    seed: int = 0
    channels: int = 3
    start: tuple[float, float] | None = None  # (x0, y0); centred on the path by default
    colors: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    cell: int = 2  # checkerboard cell size in pixels

    def validate(self) -> None:
        T, H, W = self.extents
        h, w = self.sprite_size
        vx, vy = self.velocity
        if self.sprite not in SPRITE_KINDS:
            raise SpecError(f"unknown sprite kind {self.sprite!r}")
        if min(T, H, W, h, w) < 1:
            raise SpecError("extents and sprite size must be positive")
        if self.channels not in (1, 3):
            raise SpecError("channels must be 1 or 3")
        if abs(vx) * T >= W or abs(vy) * T >= H:
            raise SpecError(f"velocity {self.velocity} carries the object out of a {W}x{H} frame in {T} frames")
        x0, y0 = self.start_position()
        span_x = (min(0.0, vx * (T - 1)), max(0.0, vx * (T - 1)))
        span_y = (min(0.0, vy * (T - 1)), max(0.0, vy * (T - 1)))
        if x0 + span_x[0] < 0 or x0 + span_x[1] + w > W or y0 + span_y[0] < 0 or y0 + span_y[1] + h > H:
            raise SpecError("object leaves the frame during the clip")

    def start_position(self) -> tuple[float, float]:
        if self.start is not None:
            return self.start
        T, H, W = self.extents
        h, w = self.sprite_size
        vx, vy = self.velocity
        x0 = (W - w - vx * (T - 1)) / 2.0
        y0 = (H - h - vy * (T - 1)) / 2.0
        return float(np.floor(x0)), float(np.floor(y0))


def _sprite_texture(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.sprite_size
    C = spec.channels
    if spec.colors is not None:
        c0 = np.asarray(spec.colors[0], dtype=np.float64)[:C]
        c1 = np.asarray(spec.colors[1], dtype=np.float64)[:C]
    else:
        c0 = rng.uniform(120, 255, size=C)
        c1 = rng.uniform(0, 100, size=C)
    if spec.sprite == "bar":
        return np.broadcast_to(c0[:, None, None], (C, h, w)).copy()
    if spec.sprite == "checkerboard":
        yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        mask = ((yy // spec.cell + xx // spec.cell) % 2).astype(np.float64)
        return c0[:, None, None] * (1 - mask) + c1[:, None, None] * mask
    return rng.uniform(0, 255, size=(C, h, w))


def generate_scene(spec: SceneSpec) -> VideoVolume:
    """Render the sprite at ``start + t*velocity`` in every frame.

    Sub-pixel placements are bilinearly splatted, both for colour and for
    coverage, and composited over the background.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    tex = _sprite_texture(spec, rng)
    T, H, W = spec.extents
    C = spec.channels
    h, w = spec.sprite_size
    x0, y0 = spec.start_position()
    vx, vy = spec.velocity
    out = np.empty((C, T, H, W), dtype=np.float32)
    for t in range(T):
        px, py = x0 + t * vx, y0 + t * vy
        ix, iy = int(np.floor(px)), int(np.floor(py))
        fx, fy = px - ix, py - iy
        color = np.zeros((C, H + 1, W + 1))
        cover = np.zeros((H + 1, W + 1))
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                wgt = wy * wx
                if wgt == 0.0:
                    continue
                color[:, iy + dy:iy + dy + h, ix + dx:ix + dx + w] += wgt * tex
                cover[iy + dy:iy + dy + h, ix + dx:ix + dx + w] += wgt
        color, cover = color[:, :H, :W], np.minimum(cover[:H, :W], 1.0)
        out[:, t] = spec.background * (1.0 - cover) + color
    return VideoVolume(out, fps=Fraction(24), value_range=(0.0, 255.0))


def synthetic_corpus(n: int = 64, extents=(16, 64, 64), seed: int = 0, max_speed: float = 3.0) -> list[VideoVolume]:
    """A deterministic mix of sprite kinds, sizes and velocities in ``[0, max_speed]``."""
    rng = np.random.default_rng(seed)
    T, H, W = extents
    clips = []
    for i in range(n):
        kind = SPRITE_KINDS[i % 3]
        for _ in range(100):
            speed = rng.uniform(0.0, max_speed) if i % 8 else 0.0
            angle = rng.uniform(0, 2 * np.pi)
            v = (round(speed * np.cos(angle), 2), round(speed * np.sin(angle), 2))
            sh = int(rng.integers(8, 24))
            sw = int(rng.integers(4, 12)) if kind == "bar" else int(rng.integers(8, 24))
            if abs(v[0]) * (T - 1) + sw + 1 <= W and abs(v[1]) * (T - 1) + sh + 1 <= H:
                break
        spec = SceneSpec(sprite=kind, sprite_size=(sh, sw), velocity=v,
                         background=float(rng.uniform(16, 96)), extents=extents,
                         seed=seed * 1000 + i, cell=int(rng.integers(2, 5)))
        clips.append(generate_scene(spec))
    return clips


# ---------------------------------------------------------------------------
# profiles


def temporal_profile(v: VideoVolume, *, row: int | None = None, column: int | None = None) -> np.ndarray:
    """The xt slice at a fixed ``row`` or the yt slice at a fixed ``column``."""
    if (row is None) == (column is None):
        raise ValueError("give exactly one of row= or column=")
    C, T, H, W = v.shape
    if row is not None:
        if not 0 <= row < H:
            raise IndexError(f"row {row} outside [0, {H})")
        return v.data[:, :, row, :].copy()
    if not 0 <= column < W:
        raise IndexError(f"column {column} outside [0, {W})")
    return v.data[:, :, :, column].copy()


# ---------------------------------------------------------------------------
# P6 frame directories

_P6_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*([^\s#]+)")


def _parse_p6(buf: bytes, path) -> np.ndarray:
    pos = 0
    tokens = []
    for _ in range(4):
        m = _P6_TOKEN.match(buf, pos)
        if m is None:
            raise FormatError(f"{path}: truncated header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (P6) file")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header") from exc
    if maxval != 255 or w < 1 or h < 1:
        raise FormatError(f"{path}: unsupported header {w}x{h} maxval {maxval}")
    pos += 1  # single whitespace after maxval
    payload = buf[pos:pos + w * h * 3]
    if len(payload) != w * h * 3:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)


def _frame_key(p: Path):
    m = re.search(r"(\d+)", p.stem)
    return (int(m.group(1)) if m else -1, p.name)


def load_frames(directory, fps=Fraction(24)) -> VideoVolume:
    """Load every ``*.ppm`` file of a directory in ascending numeric order."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"no such directory: {d}")
    files = sorted((p for p in d.iterdir() if p.suffix.lower() in (".ppm", ".pnm")), key=_frame_key)
    if not files:
        raise EmptyInputError(f"{d}: no P6 frames found")
    frames = [_parse_p6(p.read_bytes(), p) for p in files]
    if len({f.shape for f in frames}) != 1:
        raise FormatError(f"{d}: frames have inconsistent dimensions")
    data = np.stack(frames).transpose(3, 0, 1, 2).astype(np.float32)
    return VideoVolume(data, fps=Fraction(fps))


def save_frames(v: VideoVolume, directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    u8 = v.to_u8()
    if u8.shape[0] == 1:
        u8 = np.repeat(u8, 3, axis=0)
    width = max(4, len(str(v.frames - 1)))
    paths = []
    for t in range(v.frames):
        p = d / f"{t:0{width}d}.ppm"
        frame = np.ascontiguousarray(u8[:, t].transpose(1, 2, 0))
        h, w = frame.shape[:2]
        p.write_bytes(f"P6\n{w} {h}\n255\n".encode() + frame.tobytes())
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# .stv raw volumes

STV_MAGIC = b"STV1"
_DTYPES = {0: np.dtype(np.uint8), 1: np.dtype("<f4")}


def write_stv(v: VideoVolume, path, dtype: str | None = None) -> None:
    """Write ``v`` as a raw volume. ``dtype`` is ``"u8"`` or ``"f32"``.

    Defaults to u8 when every sample is already an integer in ``[0, 255]``.
    """
    if dtype is None:
        d = v.data
        dtype = "u8" if (d.dtype == np.uint8 or (np.all(d == np.round(d)) and d.min() >= 0 and d.max() <= 255)) else "f32"
    code = {"u8": 0, "f32": 1}[dtype]
    payload = v.to_u8() if code == 0 else np.ascontiguousarray(v.data, dtype="<f4")
    C, T, H, W = v.shape
    fps = Fraction(v.fps)
    header = STV_MAGIC + struct.pack("<5I", code, C, T, H, W) + struct.pack("<2I", fps.numerator, fps.denominator)
    Path(path).write_bytes(header + payload.tobytes())


def read_stv(path) -> VideoVolume:
    buf = Path(path).read_bytes()
    if buf[:4] != STV_MAGIC:
        raise FormatError(f"{path}: bad magic {buf[:4]!r}")
    if len(buf) < 32:
        raise FormatError(f"{path}: truncated header")
    code, C, T, H, W = struct.unpack_from("<5I", buf, 4)
    num, den = struct.unpack_from("<2I", buf, 24)
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if den == 0 or num == 0:
        raise FormatError(f"{path}: invalid fps {num}/{den}")
    dt = _DTYPES[code]
    n = C * T * H * W
    body = buf[32:]
    if len(body) != n * dt.itemsize:
        raise FormatError(f"{path}: expected {n * dt.itemsize} payload bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=dt).reshape(C, T, H, W)
    data = arr.copy() if code == 0 else arr.astype(np.float32)
    return VideoVolume(data, fps=Fraction(num, den))


def load_volume(path, fps=Fraction(24)) -> VideoVolume:
    """Read either a frame directory or an ``.stv`` file."""
    p = Path(path)
    if p.is_dir():
        return load_frames(p, fps=fps)
    if not p.exists():
        raise FileNotFoundError(f"no such file or directory: {p}")
    return read_stv(p)


def save_volume(v: VideoVolume, path, u8: bool = False) -> None:
    p = Path(path)
    if p.suffix == ".stv":
        write_stv(v, p, "u8" if u8 else None)
    else:
        save_frames(v, p)
