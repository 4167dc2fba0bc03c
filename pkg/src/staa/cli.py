"""Command-line front end: ``staa <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 I/O, 4 format, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4, 5


class UsageError(Exception):
    """Semantically invalid arguments (argparse handles the syntactic ones)."""


# ---------------------------------------------------------------------------
# argument parsing helpers


def parse_ratio(text: str) -> Fraction:
    """``"P/Q"`` or an integer; must be a positive ratio >= 1."""
    try:
        r = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"invalid ratio {text!r}; expected P/Q or an integer")
    if r < 1:
        raise argparse.ArgumentTypeError(f"ratio must be >= 1, got {text}")
    return r


def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def parse_filter(text: str):
    """``nearest``, ``bicubic``, ``gaussian[:sigma]``, ``box[:len]`` or ``staa:CKPT``.

    Returns a ``ClassicalFilter`` or ``("staa", path)``; the checkpoint is
    loaded later so a missing file maps to an I/O error rather than usage.
    """
    from .baselines import ClassicalFilter

    kind, _, arg = text.partition(":")
    try:
        if kind == "nearest" and not arg:
            return ClassicalFilter("nearest")
        if kind == "bicubic" and not arg:
            return ClassicalFilter("bicubic")
        if kind == "gaussian":
            sigma = float(arg) if arg else 0.8
            if sigma <= 0:
                raise ValueError
            return ClassicalFilter("gaussian3d", sigma_t=sigma, sigma_s=sigma)
        if kind == "box":
            length = int(arg) if arg else 2
            if length < 1:
                raise ValueError
            return ClassicalFilter("box_temporal", length=length)
        if kind == "staa" and arg:
            return ("staa", arg)
    except ValueError:
        pass
    raise UsageError(f"invalid filter {text!r}; expected nearest, bicubic, gaussian:SIGMA, box:LEN or staa:CKPT")


SCENE_KEYS = {"vx", "vy", "t", "h", "w", "height", "width", "seed", "bg"}


def parse_scene(text: str):
    """``KIND[:key=value,...]`` with keys vx, vy, t, h, w, height, width, seed, bg."""
    from .volume import SPRITE_KINDS, SceneSpec

    kind, _, rest = text.partition(":")
    if kind not in SPRITE_KINDS:
        raise UsageError(f"unknown sprite kind {kind!r}; expected one of {SPRITE_KINDS}")
    vals: dict[str, float] = {}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq or key not in SCENE_KEYS:
            raise UsageError(f"malformed scene field {item!r}")
        try:
            vals[key] = float(value)
        except ValueError:
            raise UsageError(f"scene field {key} needs a number, got {value!r}")
    spec = SceneSpec(sprite=kind, velocity=(vals.get("vx", 1.0), vals.get("vy", 0.0)),
                     extents=(int(vals.get("t", 16)), int(vals.get("h", 64)), int(vals.get("w", 64))),
                     sprite_size=(int(vals.get("height", 12)), int(vals.get("width", 4))),
                     background=vals.get("bg", 32.0), seed=int(vals.get("seed", 0)))
    spec.validate()
    return spec


def _integer_rt(r: Fraction) -> int:
    if r.denominator != 1:
        raise UsageError(f"temporal factor {r} must be an integer here")
    return int(r)


# ---------------------------------------------------------------------------
# subcommands


def _resolve_filter(spec, stride):
    from .downsampler import FilterBank
    from .trainer import load_checkpoint

    if isinstance(spec, tuple):
        ck = load_checkpoint(spec[1])
        if ck.filter is None:
            raise UsageError(f"{spec[1]} holds no learned filter")
        fb = ck.filter
        constraint = "softmax" if fb.constraint == "softmax+quantize" else fb.constraint
        return FilterBank(fb.raw_weights, constraint, tuple(stride), fb.per_channel, fb.value_range)
    return spec


def _downsample_any(v, flt, stride, quantize: bool):
    from .baselines import classical_downsample
    from .downsampler import FilterBank, downsample, round_half_away

    out = downsample(v, flt) if isinstance(flt, FilterBank) else classical_downsample(v, flt, stride)
    if quantize:
        lo, hi = v.value_range
        out = out.with_data(round_half_away(np.clip(out.data, lo, hi)).astype(np.float32))
    return out


def cmd_downsample(args) -> int:
    from .volume import load_volume, save_volume

    flt = parse_filter(args.filter)
    stride = (_integer_rt(args.rt), args.rs)
    v = load_volume(args.input, fps=args.fps)
    out = _downsample_any(v, _resolve_filter(flt, stride), stride, args.quantize)
    save_volume(out, args.out, u8=args.quantize)
    print(f"{args.out}: {out.shape} @ {out.fps} fps")
    return EXIT_OK


def _run_upscale(args, rt: Fraction, rs: int) -> int:
    from .trainer import load_checkpoint
    from .upsampler import upscale
    from .volume import load_volume, save_volume

    ck = load_checkpoint(args.ckpt)
    cfg = ck.upscale
    if Fraction(cfg.r_num, cfg.r_den) != rt or cfg.s != rs:
        raise UsageError(f"checkpoint upscales by {cfg.r_num}/{cfg.r_den} x {cfg.s}, flags ask for {rt} x {rs}")
    v = load_volume(args.input, fps=args.fps)
    if v.channels != cfg.channels:
        raise UsageError(f"input has {v.channels} channels, checkpoint expects {cfg.channels}")
    if v.frames % cfg.r_den:
        raise UsageError(f"{v.frames} frames are not divisible by {cfg.r_den} for ratio {rt}")
    out = upscale(v, ck.params, cfg)
    out = out.with_data(np.clip(out.data, *out.value_range))
    save_volume(out, args.out)
    print(f"{args.out}: {out.shape} @ {out.fps} fps")
    return EXIT_OK


def cmd_upscale(args) -> int:
    return _run_upscale(args, args.rt, args.rs)


def cmd_convert_fps(args) -> int:
    return _run_upscale(args, args.rt, 1)


def _dataset(args):
    from .volume import load_volume, synthetic_corpus

    data = synthetic_corpus(args.scenes, extents=tuple(args.scene_extents), seed=args.seed)
    extra = [load_volume(p, fps=args.fps) for p in args.data or ()]
    # user clips train; the synthetic tail stays the held-out set
    return extra + data


def _train_config(args, **over):
    from .trainer import TrainConfig
    from .upsampler import UpscaleConfig

    rt = args.rt
    up = UpscaleConfig(r_num=rt.numerator, r_den=rt.denominator, s=args.rs, features=args.features,
                       n_rdb=args.rdb, use_dtm=not args.no_dtm)
    return TrainConfig(steps=args.steps, batch_size=args.batch, patch=tuple(args.patch), seed=args.seed,
                       lr0=args.lr, filter_lr_scale=args.filter_lr_scale, upscale=up, n_val=args.val,
                       val_every=args.val_every, **over)


def cmd_train(args) -> int:
    from .trainer import train_joint

    cfg = _train_config(args, constraint=args.constraint, quantize=args.quantize)
    st = train_joint(_dataset(args), cfg, csv_path=args.csv, checkpoint_path=args.out)
    last = st.history[-1] if st.history else {}
    print(f"{args.out}: {st.step} steps, final L1 {last.get('train_l1', float('nan')):.6f}, "
          f"val PSNR {last.get('val_psnr') or float('nan'):.3f} dB")
    return EXIT_OK


def cmd_train_blur(args) -> int:
    from .baselines import ClassicalFilter
    from .trainer import train_upsampler_only

    box = ClassicalFilter("box_temporal", length=args.box_len)
    cfg = _train_config(args, downsampler="fixed", fixed_filter=box)
    st = train_upsampler_only(_dataset(args), box, cfg, csv_path=args.csv, checkpoint_path=args.out)
    last = st.history[-1] if st.history else {}
    print(f"{args.out}: {st.step} steps, val PSNR {last.get('val_psnr') or float('nan'):.3f} dB")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .spectral import aliasing_report, spectrum_heatmap, write_energy_csv, write_pgm

    scene = parse_scene(args.scene)
    stride = (_integer_rt(args.rt), args.rs)
    specs = [parse_filter(f) for f in args.filters.split(",") if f]
    if not specs:
        raise UsageError("no filters given")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports, seen = [], set()
    for spec in specs:
        flt = _resolve_filter(spec, stride)
        label = "staa" if isinstance(spec, tuple) else flt.label
        while label in seen:
            label += "_"
        seen.add(label)
        rep = aliasing_report(scene, flt, stride, label=label)
        write_pgm(out / f"{label}.pgm", spectrum_heatmap(rep.post))
        reports.append(rep)
    write_pgm(out / "ground_truth.pgm", spectrum_heatmap(reports[0].pre))
    write_energy_csv(out / "energy.csv", reports)
    for rep in reports:
        print(f"{rep.label}: line_fraction={rep.line_fraction:.6f} alias_fraction={rep.alias_fraction:.6g}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .metrics import psnr, ssim
    from .volume import load_volume

    a = load_volume(args.a, fps=args.fps)
    b = load_volume(args.b, fps=args.fps)
    p = psnr(a, b, args.peak, args.ssim_space)
    s = ssim(a, b, args.peak, args.ssim_space)
    print("file_a,file_b,psnr_db,ssim")
    print(f"{args.a},{args.b},{p:.6f},{s:.6f}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    from .trainer import META_NAME, decode_meta, read_tensors

    tensors, step = read_tensors(args.ckpt)
    print(f"step {step}")
    for name, arr in tensors.items():
        print(f"{name}\t{'x'.join(map(str, arr.shape)) or 'scalar'}")
    if META_NAME in tensors:
        cfg, constraint, quantize = decode_meta(tensors[META_NAME])
        print(f"ratio {cfg.r_num}/{cfg.r_den} x {cfg.s}, features {cfg.features}, dtm {cfg.use_dtm}, "
              f"constraint {constraint}, quantize {quantize}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="staa", description="Learned space-time downsampling and upscaling.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def io(p, ckpt=False):
        p.add_argument("--in", dest="input", required=True, help="frame directory or .stv file")
        p.add_argument("--out", required=True, help="output frame directory or .stv file")
        p.add_argument("--fps", type=parse_ratio, default=Fraction(24), help="frame rate of frame-directory input")
        if ckpt:
            p.add_argument("--ckpt", required=True, help="trained checkpoint")

    p = sub.add_parser("downsample", help="filter and stride a volume")
    io(p)
    p.add_argument("--filter", required=True, help="nearest | bicubic | gaussian:SIGMA | box:LEN | staa:CKPT")
    p.add_argument("--rt", type=parse_ratio, default=Fraction(2), help="temporal factor")
    p.add_argument("--rs", type=positive_int, default=2, help="spatial factor")
    p.add_argument("--quantize", action="store_true", help="round to 8-bit values")
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("upscale", help="reconstruct with a trained upsampler")
    io(p, ckpt=True)
    p.add_argument("--rt", type=parse_ratio, default=Fraction(2), help="temporal ratio P/Q")
    p.add_argument("--rs", type=positive_int, default=2)
    p.set_defaults(func=cmd_upscale)

    p = sub.add_parser("convert-fps", help="frame-rate conversion (upscale with --rs 1)")
    io(p, ckpt=True)
    p.add_argument("--rt", type=parse_ratio, required=True, help="frame-rate ratio P/Q")
    p.set_defaults(func=cmd_convert_fps)

    def training(p):
        p.add_argument("--out", required=True, help="checkpoint path")
        p.add_argument("--csv", help="loss curve CSV path")
        p.add_argument("--steps", type=int, default=2000)
        p.add_argument("--batch", type=positive_int, default=2)
        p.add_argument("--patch", type=positive_int, nargs=3, default=[4, 32, 32], metavar=("T", "H", "W"))
        p.add_argument("--rt", type=parse_ratio, default=Fraction(2))
        p.add_argument("--rs", type=positive_int, default=2)
        p.add_argument("--lr", type=float, default=1e-3, help="initial learning rate (desk-scale default)")
        p.add_argument("--filter-lr-scale", type=float, default=10.0, help="learning-rate multiplier for the filter")
        p.add_argument("--features", type=positive_int, default=16)
        p.add_argument("--rdb", type=positive_int, default=2, help="residual dense blocks")
        p.add_argument("--no-dtm", action="store_true", help="drop the deformable temporal module")
        p.add_argument("--scenes", type=positive_int, default=64, help="synthetic corpus size")
        p.add_argument("--scene-extents", type=positive_int, nargs=3, default=[16, 64, 64], metavar=("T", "H", "W"))
        p.add_argument("--val", type=positive_int, default=8, help="held-out synthetic clips")
        p.add_argument("--val-every", type=int, default=0, help="validate every N steps (0: at the end)")
        p.add_argument("--data", nargs="*", help="extra training clips (frame dirs or .stv)")
        p.add_argument("--fps", type=parse_ratio, default=Fraction(24))

    p = sub.add_parser("train", help="train downsampler and upsampler jointly")
    training(p)
    p.add_argument("--constraint", choices=("none", "softmax"), default="softmax")
    p.add_argument("--quantize", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-blur", help="train the upsampler behind a temporal box (motion blur)")
    training(p)
    p.add_argument("--box-len", type=positive_int, default=2)
    p.set_defaults(func=cmd_train_blur)

    p = sub.add_parser("analyze", help="Fourier aliasing report for a synthetic scene")
    p.add_argument("--scene", required=True, help="e.g. bar:vx=1 (keys vx,vy,t,h,w,height,width,seed,bg)")
    p.add_argument("--filters", required=True, help="comma-separated filter list")
    p.add_argument("--rt", type=parse_ratio, default=Fraction(2))
    p.add_argument("--rs", type=positive_int, default=2)
    p.add_argument("--out", required=True, help="report directory (created if absent)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("metrics", help="PSNR and SSIM between two volumes")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--peak", type=float, default=255.0)
    p.add_argument("--ssim-space", choices=("rgb", "luma"), default="rgb")
    p.add_argument("--fps", type=parse_ratio, default=Fraction(24))
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("inspect-checkpoint", help="list checkpoint tensors")
    p.add_argument("ckpt")
    p.set_defaults(func=cmd_inspect)

    for p in sub.choices.values():
        p.add_argument("--seed", type=int, default=0, help="random seed")
    return ap


def main(argv=None) -> int:
    from .errors import DimensionError, EmptyInputError, FormatError, NumericError, RangeError, SpecError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    np.random.seed(args.seed)
    try:
        return args.func(args)
    except (UsageError, SpecError, DimensionError, RangeError, argparse.ArgumentTypeError) as exc:
        print(f"staa {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"staa {args.command}: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (OSError, EmptyInputError) as exc:
        print(f"staa {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError) as exc:
        print(f"staa {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
