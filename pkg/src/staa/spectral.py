"""Fourier analysis of xt temporal profiles.

For an object translating with velocity ``v_x`` the xt spectrum collapses
onto the line ``Omega_x * v_x + Omega_t = 0``. Frequencies are in
cycles/sample and wrap modulo 1.

Aliasing is measured by linearity. The ground-truth volume is split into
the temporal band the reduced frame rate can represent and the band above
it. Downsampling and restoration are linear, so the restored profile is the
sum of the two parts' responses; the share of its (mean-removed) energy that
comes from the upper band is the replicated-subband, or folded, energy. On a
grid DFT of a short clip this is far more robust than counting energy off
the delta line, whose leakage is dominated by the clip's temporal window.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import ClassicalFilter, classical_downsample, classical_downsample_tensor, temporal_notches
from .downsampler import FilterBank, downsample, effective_kernel, filter_tensor
from .errors import DimensionError, RangeError
from .tensor import Tensor
from .upsampler import trilinear_upscale
from .volume import SceneSpec, VideoVolume, generate_scene


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def naive_dft2(x: np.ndarray) -> np.ndarray:
    """Direct O(N^2) 2-D DFT by separable DFT matrices."""
    Tn, W = x.shape
    et = np.exp(-2j * np.pi * np.outer(np.arange(Tn), np.arange(Tn)) / Tn)
    ew = np.exp(-2j * np.pi * np.outer(np.arange(W), np.arange(W)) / W)
    return et @ x @ ew.T


def dft2(x: np.ndarray) -> np.ndarray:
    if _is_pow2(x.shape[0]) and _is_pow2(x.shape[1]):
        return np.fft.fft2(x)
    return naive_dft2(x)


@dataclass
class SpectrumReport:
    """DC-centred magnitude spectrum over ``(Omega_t, Omega_x)``."""

    magnitude: np.ndarray
    freq_t: np.ndarray
    freq_x: np.ndarray
    total_energy: float

    def line_distance(self, v_x: float) -> np.ndarray:
        d = self.freq_x[None, :] * v_x + self.freq_t[:, None]
        return np.abs(d - np.round(d))

    def line_energy_fraction(self, v_x: float, bandwidth: float) -> float:
        return line_energy(self, v_x, bandwidth)

    def subband_energy_fraction(self, v_x: float, bandwidth: float) -> float:
        return 1.0 - line_energy(self, v_x, bandwidth)


def xt_spectrum(profile) -> SpectrumReport:
    """Spectrum of a mean-subtracted ``(T, W)`` profile."""
    p = np.asarray(profile.data if isinstance(profile, Tensor) else profile, dtype=np.float64)
    if p.ndim == 3:
        p = p.mean(axis=0)
    if p.ndim != 2 or min(p.shape) < 2:
        raise DimensionError(f"profile must be (T, W) with both extents >= 2, got {p.shape}")
    p = p - p.mean()
    F = np.fft.fftshift(dft2(p))
    mag = np.abs(F)
    Tn, W = p.shape
    return SpectrumReport(mag, np.fft.fftshift(np.fft.fftfreq(Tn)), np.fft.fftshift(np.fft.fftfreq(W)),
                          float((mag ** 2).sum()))


def line_energy(report: SpectrumReport, v_x: float, bandwidth: float) -> float:
    """Fraction of energy with ``|Omega_x*v_x + Omega_t| <= bandwidth`` (wrapped)."""
    if bandwidth < 0:
        raise RangeError("bandwidth must be non-negative")
    if report.total_energy == 0.0:
        return 1.0
    mask = report.line_distance(v_x) <= bandwidth + 1e-12
    return float(min(1.0, (report.magnitude[mask] ** 2).sum() / report.total_energy))


def fit_line_slope(report: SpectrumReport, n_peaks: int = 12, max_speed: float = 4.0) -> float:
    """Slope ``dOmega_t/dOmega_x`` of the dominant spectral line.

    A coarse scan over slopes resolves frequency wrap-around. Each of the
    ``n_peaks`` strongest ``Omega_x`` columns is then reduced to its
    energy-weighted ``Omega_t`` centroid (unwrapped around the coarse line),
    because on short clips the temporal grid is coarser than the line and a
    single column's energy straddles several bins. The slope is the weighted
    least-squares fit through the origin over those peak coordinates.
    """
    mag2 = report.magnitude ** 2
    mag2[:, report.freq_x == 0] = 0.0
    if not np.any(mag2 > 0):
        return 0.0
    ft, fx = np.meshgrid(report.freq_t, report.freq_x, indexing="ij")
    best, best_cost = 0.0, np.inf
    for a in np.arange(-max_speed, max_speed + 1e-9, 0.01):
        d = ft - a * fx
        cost = float((mag2 * (d - np.round(d)) ** 2).sum())
        if cost < best_cost - 1e-12 * best_cost:
            best, best_cost = a, cost
    col_energy = mag2.sum(axis=0)
    cols = np.argsort(col_energy)[::-1][:n_peaks]
    cols = cols[col_energy[cols] > 0]
    fx_c = report.freq_x[cols]
    ft_c = np.empty(len(cols))
    for i, j in enumerate(cols):
        centre = best * report.freq_x[j]
        t_unwrapped = report.freq_t - np.round(report.freq_t - centre)
        ft_c[i] = (mag2[:, j] * t_unwrapped).sum() / col_energy[j]
    w = col_energy[cols]
    return float((w * fx_c * ft_c).sum() / (w * fx_c * fx_c).sum())


# ---------------------------------------------------------------------------
# filter comparison


@dataclass
class AliasReport:
    label: str
    v_x: float
    bandwidth: float
    pre: SpectrumReport
    post: SpectrumReport
    line_fraction: float
    alias_fraction: float
    notches: list[float] = field(default_factory=list)


def profile_row(scene: SceneSpec) -> int:
    _, y0 = scene.start_position()
    return int(y0 + scene.sprite_size[0] // 2)


def _linear_down(x: np.ndarray, flt, stride) -> np.ndarray:
    """Downsample a float64 ``(C,T,H,W)`` array with the filter's linear part.

    Quantization is skipped so the operator stays linear for the band split.
    """
    xt = Tensor(np.asarray(x, dtype=np.float64))
    if isinstance(flt, ClassicalFilter):
        return classical_downsample_tensor(xt, flt, stride).data
    if isinstance(flt, FilterBank):
        fb = FilterBank(Tensor(flt.raw_weights.data.astype(np.float64)), flt.constraint,
                        tuple(stride), flt.per_channel, flt.value_range)
        return filter_tensor(xt[None], effective_kernel(fb), tuple(stride)).data[0]
    raise TypeError(f"unsupported filter {flt!r}")


def _apply_filter(v: VideoVolume, flt, stride) -> VideoVolume:
    if isinstance(flt, ClassicalFilter):
        return classical_downsample(v, flt, stride)
    if isinstance(flt, FilterBank):
        fb = FilterBank(Tensor(flt.raw_weights.data.astype(np.float64)), flt.constraint,
                        tuple(stride), flt.per_channel, flt.value_range)
        return downsample(VideoVolume(v.data.astype(np.float64), v.fps, v.value_range), fb)
    raise TypeError(f"unsupported filter {flt!r}")


def restore(v_down, stride, extents) -> np.ndarray:
    """Trilinear restoration of a downsampled volume (or array) cropped to ``extents``."""
    r, s = stride
    arr = v_down.data if isinstance(v_down, VideoVolume) else v_down
    up = trilinear_upscale(Tensor(np.asarray(arr, dtype=np.float64)), r, 1, s).data
    Tn, H, W = extents
    return up[:, :Tn, :H, :W]


def temporal_highband(x: np.ndarray, r: int) -> np.ndarray:
    """Part of ``x (C,T,H,W)`` above the Nyquist limit ``1/(2r)`` of a ``1/r`` frame rate."""
    F = np.fft.fft(np.asarray(x, dtype=np.float64), axis=1)
    keep = np.abs(np.fft.fftfreq(x.shape[1])) > 0.5 / r + 1e-12
    return np.real(np.fft.ifft(F * keep[None, :, None, None], axis=1))


def folded_energy_fraction(gt: np.ndarray, flt, stride, row: int) -> float:
    """Share of the restored xt profile's energy contributed by the temporal high band."""
    extents = gt.shape[1:]
    full = restore(_linear_down(gt, flt, stride), stride, extents)[:, :, row, :].mean(axis=0)
    high = restore(_linear_down(temporal_highband(gt, stride[0]), flt, stride), stride,
                   extents)[:, :, row, :].mean(axis=0)
    denom = float(((full - full.mean()) ** 2).sum())
    if denom == 0.0:
        return 0.0
    return float(((high - high.mean()) ** 2).sum() / denom)


def filter_label(flt) -> str:
    if isinstance(flt, ClassicalFilter):
        return flt.label
    return "staa"


def aliasing_report(scene: SceneSpec, flt, stride=(2, 2), bandwidth: float | None = None,
                    row: int | None = None, label: str | None = None) -> AliasReport:
    """Spectra of the ground-truth xt profile and of its downsampled-then-restored copy.

    ``line_fraction`` is the delta-line energy of the restored spectrum;
    ``alias_fraction`` is the folded (replicated-subband) energy share.
    """
    gt = generate_scene(scene)
    row = profile_row(scene) if row is None else row
    Tn, H, W = scene.extents
    b = 1.0 / Tn if bandwidth is None else bandwidth
    v_x = scene.velocity[0]
    down = _apply_filter(gt, flt, stride)
    rec = restore(down, stride, (Tn, H, W))
    pre = xt_spectrum(gt.data[:, :, row, :].mean(axis=0))
    post = xt_spectrum(rec[:, :, row, :].mean(axis=0))
    line = line_energy(post, v_x, b)
    alias = folded_energy_fraction(gt.data, flt, stride, row)
    if isinstance(flt, ClassicalFilter):
        notches = temporal_notches(flt)
    else:
        notches = temporal_notches(effective_kernel(flt).data)
    return AliasReport(label or filter_label(flt), v_x, b, pre, post, line, alias, notches)


# ---------------------------------------------------------------------------
# outputs


def spectrum_heatmap(report: SpectrumReport) -> np.ndarray:
    """``log10(1 + |F|)`` scaled to ``[0, 255]`` as uint8."""
    lg = np.log10(1.0 + report.magnitude)
    top = lg.max()
    if top > 0:
        lg = lg / top
    return np.floor(lg * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a P5 file")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)


CSV_COLUMNS = ("filter", "v_x", "line_fraction", "alias_fraction")


def write_energy_csv(path, reports: list[AliasReport]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_COLUMNS)
        for rep in reports:
            wr.writerow([rep.label, f"{rep.v_x:g}", f"{rep.line_fraction:.9g}", f"{rep.alias_fraction:.9g}"])
