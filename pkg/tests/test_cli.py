import csv
from fractions import Fraction

import numpy as np
import pytest

from staa.baselines import ClassicalFilter
from staa.cli import build_parser, main, parse_ratio
from staa.trainer import TrainConfig, init_state, save_checkpoint
from staa.upsampler import UpscaleConfig
from staa.volume import VideoVolume, load_volume, read_stv, save_frames, write_stv

SUBCOMMANDS = ["downsample", "upscale", "convert-fps", "train", "train-blur", "analyze", "metrics",
               "inspect-checkpoint"]


def volume(frames=8, h=16, w=16, seed=0, fps=24):
    data = np.random.default_rng(seed).integers(0, 256, (3, frames, h, w)).astype(np.float32)
    return VideoVolume(data, fps=Fraction(fps))


def checkpoint(path, r_num=2, r_den=1, s=2):
    up = UpscaleConfig(r_num=r_num, r_den=r_den, s=s, features=4, n_rdb=1, rdb_layers=1, growth=2)
    if r_den == 1:
        cfg = TrainConfig(upscale=up, patch=(r_num * 2, 4 * s, 4 * s))
    else:
        cfg = TrainConfig(upscale=up, patch=(r_num, 8, 8), downsampler="fixed",
                          fixed_filter=ClassicalFilter("nearest"))
    save_checkpoint(path, init_state(cfg))
    return path


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_exits_zero(cmd, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main([cmd, "--help"]) == 0
    assert "usage:" in capsys.readouterr().out
    assert list(tmp_path.iterdir()) == []


def test_usage_errors(tmp_path):
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["downsample", "--in", "x", "--out", "y", "--filter", "nearest", "--bogus"]) == 2
    assert main(["downsample", "--in", "x", "--out", "y", "--filter", "lanczos"]) == 2
    assert main(["analyze", "--scene", "bar:vx=oops", "--filters", "nearest", "--out", str(tmp_path / "r")]) == 2
    assert main(["analyze", "--scene", "blob:vx=1", "--filters", "nearest", "--out", str(tmp_path / "r")]) == 2


def test_ratio_parsing():
    assert parse_ratio("6/5") == Fraction(6, 5)
    assert parse_ratio("2") == 2
    parser = build_parser()
    with pytest.raises(SystemExit):
        parser.parse_args(["convert-fps", "--in", "a", "--out", "b", "--ckpt", "c", "--rt", "1/2"])


def test_downsample_nearest_halves_frames(tmp_path):
    src = tmp_path / "in"
    v = volume(8)
    save_frames(v, src)
    out = tmp_path / "out.stv"
    assert main(["downsample", "--in", str(src), "--out", str(out), "--filter", "nearest", "--rt", "2", "--rs", "1"]) == 0
    got = read_stv(out)
    assert got.shape == (3, 4, 16, 16)
    np.testing.assert_array_equal(got.data, v.data[:, ::2])


def test_downsample_quantize_is_integer(tmp_path):
    write_stv(volume(4), tmp_path / "a.stv")
    out = tmp_path / "q"
    assert main(["downsample", "--in", str(tmp_path / "a.stv"), "--out", str(out), "--filter", "gaussian:1.0",
                 "--quantize"]) == 0
    d = load_volume(out).data
    assert d.shape == (3, 2, 8, 8) and np.all(d == np.round(d))


def test_downsample_with_learned_filter(tmp_path):
    ck = checkpoint(tmp_path / "m.staa")
    write_stv(volume(4), tmp_path / "a.stv")
    out = tmp_path / "d.stv"
    assert main(["downsample", "--in", str(tmp_path / "a.stv"), "--out", str(out), "--filter", f"staa:{ck}"]) == 0
    assert read_stv(out).shape == (3, 2, 8, 8)


def test_io_and_format_errors(tmp_path):
    write_stv(volume(4), tmp_path / "a.stv")
    a = str(tmp_path / "a.stv")
    assert main(["downsample", "--in", a, "--out", str(tmp_path / "o"), "--filter", "staa:missing.staa"]) == 3
    assert main(["downsample", "--in", str(tmp_path / "nope"), "--out", "o", "--filter", "nearest"]) == 3
    (tmp_path / "bad.staa").write_bytes(b"JUNKJUNKJUNKJUNK")
    assert main(["inspect-checkpoint", str(tmp_path / "bad.staa")]) == 4
    (tmp_path / "bad.stv").write_bytes(b"XXXX" + bytes(40))
    assert main(["metrics", str(tmp_path / "bad.stv"), a]) == 4


def test_upscale_shape_law(tmp_path):
    ck = checkpoint(tmp_path / "m.staa", r_num=2, s=4)
    write_stv(volume(4, 32, 32), tmp_path / "a.stv")
    out = tmp_path / "up.stv"
    assert main(["upscale", "--in", str(tmp_path / "a.stv"), "--ckpt", str(ck), "--rt", "2", "--rs", "4",
                 "--out", str(out)]) == 0
    got = read_stv(out)
    assert got.shape == (3, 8, 128, 128) and got.fps == 48
    assert main(["upscale", "--in", str(tmp_path / "a.stv"), "--ckpt", str(ck), "--rt", "2", "--rs", "2",
                 "--out", str(out)]) == 2


def test_convert_fps_five_to_six(tmp_path):
    ck = checkpoint(tmp_path / "r.staa", r_num=6, r_den=5, s=1)
    write_stv(volume(5, fps=20), tmp_path / "five.stv")
    out = tmp_path / "six.stv"
    assert main(["convert-fps", "--in", str(tmp_path / "five.stv"), "--ckpt", str(ck), "--rt", "6/5",
                 "--out", str(out)]) == 0
    got = read_stv(out)
    assert got.frames == 6 and got.fps == 24
    write_stv(volume(7), tmp_path / "seven.stv")
    assert main(["convert-fps", "--in", str(tmp_path / "seven.stv"), "--ckpt", str(ck), "--rt", "6/5",
                 "--out", str(out)]) == 2


def test_analyze_report(tmp_path):
    out = tmp_path / "deep" / "report"
    assert main(["analyze", "--scene", "bar:vx=1", "--filters", "nearest,box:2,gaussian", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "energy.csv")))
    alias = {r["filter"]: float(r["alias_fraction"]) for r in rows}
    assert max(alias, key=alias.get) == "nearest"
    assert (out / "ground_truth.pgm").exists() and (out / "nearest.pgm").exists()

    still = tmp_path / "still"
    assert main(["analyze", "--scene", "bar:vx=0", "--filters", "nearest,gaussian", "--out", str(still)]) == 0
    rows = list(csv.DictReader(open(still / "energy.csv")))
    assert all(float(r["alias_fraction"]) < 1e-6 for r in rows)


def test_metrics_csv(tmp_path, capsys):
    a, b = volume(2, seed=1), volume(2, seed=1)
    b = b.with_data(np.clip(b.data + 1, 0, 255))
    write_stv(a, tmp_path / "a.stv")
    write_stv(b, tmp_path / "b.stv")
    assert main(["metrics", str(tmp_path / "a.stv"), str(tmp_path / "b.stv")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "file_a,file_b,psnr_db,ssim"
    fields = lines[1].split(",")
    assert 48.0 < float(fields[2]) < 49.0 and 0.9 < float(fields[3]) <= 1.0
    assert main(["metrics", str(tmp_path / "a.stv"), str(tmp_path / "b.stv"), "--ssim-space", "luma"]) == 0


def test_inspect_checkpoint(tmp_path, capsys):
    ck = checkpoint(tmp_path / "m.staa")
    assert main(["inspect-checkpoint", str(ck)]) == 0
    out = capsys.readouterr().out
    assert "step 0" in out and "filter.raw\t3x3x3" in out and "meta.config" in out


def test_train_and_train_blur(tmp_path, capsys):
    common = ["--steps", "2", "--batch", "1", "--patch", "2", "16", "16", "--features", "4", "--rdb", "1",
              "--scenes", "3", "--val", "1", "--scene-extents", "4", "16", "16", "--no-dtm"]
    ck, log = tmp_path / "t.staa", tmp_path / "t.csv"
    assert main(["train", "--out", str(ck), "--csv", str(log)] + common) == 0
    assert ck.exists() and len(log.read_text().splitlines()) == 3
    assert main(["train-blur", "--out", str(tmp_path / "b.staa"), "--box-len", "2"] + common) == 0
    assert main(["inspect-checkpoint", str(tmp_path / "b.staa")]) == 0
    assert "filter.raw" not in capsys.readouterr().out.split("step 2")[-1].split("ratio")[0]


def test_train_blur_rational_ratio(tmp_path):
    ck = tmp_path / "fps.staa"
    assert main(["train-blur", "--out", str(ck), "--rt", "6/5", "--rs", "1", "--box-len", "1",
                 "--patch", "6", "16", "16", "--steps", "1", "--features", "4", "--rdb", "1", "--scenes", "3",
                 "--val", "1", "--no-dtm", "--scene-extents", "30", "16", "16"]) == 0
    write_stv(volume(5, fps=20), tmp_path / "five.stv")
    assert main(["convert-fps", "--in", str(tmp_path / "five.stv"), "--ckpt", str(ck), "--rt", "6/5",
                 "--out", str(tmp_path / "six.stv")]) == 0
    assert read_stv(tmp_path / "six.stv").frames == 6
