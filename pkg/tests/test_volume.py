from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from staa.errors import DimensionError, EmptyInputError, FormatError, SpecError
from staa.volume import (SceneSpec, VideoVolume, generate_scene, load_frames, load_volume, read_stv,
                         save_frames, save_volume, synthetic_corpus, temporal_profile, write_stv)


def test_volume_validation():
    with pytest.raises(DimensionError):
        VideoVolume(np.zeros((3, 4, 4)))
    with pytest.raises(DimensionError):
        VideoVolume(np.zeros((2, 1, 4, 4)))
    with pytest.raises(SpecError):
        VideoVolume(np.zeros((1, 1, 4, 4)), fps=Fraction(0))
    v = VideoVolume(np.zeros((3, 2, 4, 5)), fps=Fraction(30000, 1001))
    assert (v.channels, v.frames, v.shape) == (3, 2, (3, 2, 4, 5))


def test_to_u8_rounds_half_away_and_clamps():
    v = VideoVolume(np.array([-3.0, 0.5, 1.49, 2.5, 254.6, 300.0]).reshape(1, 1, 1, 6))
    np.testing.assert_array_equal(v.to_u8().ravel(), [0, 1, 1, 3, 255, 255])


# -- scenes ---------------------------------------------------------------


def test_static_scene_frames_identical():
    v = generate_scene(SceneSpec(sprite="checkerboard", velocity=(0, 0), extents=(6, 32, 32)))
    assert np.all(v.data == v.data[:, :1])


@pytest.mark.parametrize("kind", ["bar", "checkerboard", "random-noise"])
def test_scene_is_deterministic(kind):
    spec = SceneSpec(sprite=kind, velocity=(0.5, -0.25), extents=(8, 32, 32), seed=3)
    np.testing.assert_array_equal(generate_scene(spec).data, generate_scene(spec).data)


@pytest.mark.parametrize("v", [1, 2, -1])
def test_integer_velocity_translates_frames(v):
    spec = SceneSpec(sprite="random-noise", sprite_size=(10, 8), velocity=(v, 0), extents=(8, 32, 48))
    d = generate_scene(spec).data
    for t in range(7):
        if v > 0:
            np.testing.assert_array_equal(d[:, t + 1, :, v:], d[:, t, :, :-v])
        else:
            np.testing.assert_array_equal(d[:, t + 1, :, :v], d[:, t, :, -v:])


def test_moving_bar_profile_is_sheared():
    spec = SceneSpec(sprite="bar", sprite_size=(12, 4), velocity=(1, 0), extents=(16, 64, 64))
    v = generate_scene(spec)
    x0, y0 = spec.start_position()
    prof = temporal_profile(v, row=int(y0) + 6)[0]
    left_edges = [int(np.argmax(row > spec.background + 1)) for row in prof]
    assert np.all(np.diff(left_edges) == 1)


def test_subpixel_motion_conserves_mass():
    spec = SceneSpec(sprite="bar", velocity=(0.3, 0.7), extents=(6, 32, 32), background=0.0,
                     colors=((100, 100, 100), (0, 0, 0)))
    d = generate_scene(spec).data
    np.testing.assert_allclose(d[0].sum(axis=(1, 2)), 100 * 12 * 4, rtol=1e-5)


def test_scene_leaving_frame_is_rejected():
    with pytest.raises(SpecError):
        generate_scene(SceneSpec(velocity=(3, 0), extents=(32, 64, 64)))
    with pytest.raises(SpecError):
        generate_scene(SceneSpec(start=(61.0, 0.0), velocity=(0, 0), extents=(2, 64, 64)))


def test_corpus_mix():
    clips = synthetic_corpus(16, extents=(4, 32, 32), seed=1)
    assert len(clips) == 16
    assert all(c.shape == (3, 4, 32, 32) for c in clips)
    assert np.all(clips[0].data == clips[0].data[:, :1])  # every 8th scene is static


def test_temporal_profile_matches_indexing(rng):
    v = VideoVolume(rng.uniform(0, 255, (3, 7, 16, 12)))
    p = temporal_profile(v, row=5)
    ref = np.stack([[v.data[c, t, 5, :] for t in range(7)] for c in range(3)])
    np.testing.assert_array_equal(p, ref)
    assert temporal_profile(v, column=2).shape == (3, 7, 16)
    with pytest.raises(IndexError):
        temporal_profile(v, row=16)
    with pytest.raises(ValueError):
        temporal_profile(v)


# -- P6 frames ------------------------------------------------------------------


def test_frames_round_trip(tmp_path, rng):
    data = rng.integers(0, 256, (3, 7, 64, 64)).astype(np.float32)
    save_frames(VideoVolume(data), tmp_path)
    back = load_frames(tmp_path)
    assert back.shape == (3, 7, 64, 64)
    np.testing.assert_array_equal(back.data, data)


def test_frames_load_in_numeric_order(tmp_path):
    for i, name in enumerate(["0010", "0003", "2"]):
        frame = np.full((2, 2, 3), i, dtype=np.uint8)
        (tmp_path / f"{name}.ppm").write_bytes(b"P6\n2 2\n255\n" + frame.tobytes())
    v = load_frames(tmp_path)
    np.testing.assert_array_equal(v.data[0, :, 0, 0], [2, 1, 0])


def test_frames_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_frames(tmp_path / "missing")
    with pytest.raises(EmptyInputError):
        load_frames(tmp_path)
    (tmp_path / "0.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0")
    with pytest.raises(FormatError):
        load_frames(tmp_path)
    (tmp_path / "0.ppm").write_bytes(b"P6\n1 1\n255\n" + bytes(3))
    (tmp_path / "1.ppm").write_bytes(b"P6\n2 1\n255\n" + bytes(6))
    with pytest.raises(FormatError):
        load_frames(tmp_path)
    (tmp_path / "1.ppm").write_bytes(b"P6\n1 1\n255\n" + bytes(2))
    with pytest.raises(FormatError):
        load_frames(tmp_path)


def test_ppm_header_comments_are_skipped(tmp_path):
    (tmp_path / "0.ppm").write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([1, 2, 3]))
    np.testing.assert_array_equal(load_frames(tmp_path).data[:, 0, 0, 0], [1, 2, 3])


# -- .stv -------------------------------------------------------------------------


def test_stv_file_size_and_round_trip(tmp_path):
    p = tmp_path / "a.stv"
    v = VideoVolume(np.arange(8, dtype=np.uint8).reshape(1, 2, 2, 2), fps=Fraction(30000, 1001))
    write_stv(v, p)
    assert p.stat().st_size == 4 + 7 * 4 + 8
    back = read_stv(p)
    np.testing.assert_array_equal(back.data, v.data)
    assert back.fps == Fraction(30000, 1001)


@settings(max_examples=20, deadline=None)
@given(shape=st.tuples(st.sampled_from([1, 3]), st.integers(1, 4), st.integers(1, 5), st.integers(1, 5)),
       seed=st.integers(0, 1000))
def test_stv_float_round_trip_is_bit_exact(tmp_path_factory, shape, seed):
    p = tmp_path_factory.mktemp("stv") / "f.stv"
    data = np.random.default_rng(seed).normal(100, 80, shape).astype(np.float32)
    write_stv(VideoVolume(data), p, "f32")
    assert read_stv(p).data.tobytes() == data.tobytes()


def test_stv_errors(tmp_path):
    p = tmp_path / "bad.stv"
    p.write_bytes(b"XXXX" + bytes(28))
    with pytest.raises(FormatError):
        read_stv(p)
    write_stv(VideoVolume(np.zeros((1, 2, 2, 2), dtype=np.float32) + 0.5), p)
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(FormatError):
        read_stv(p)


def test_load_save_volume_dispatch(tmp_path, rng):
    v = VideoVolume(rng.integers(0, 256, (3, 2, 4, 4)).astype(np.float32))
    save_volume(v, tmp_path / "v.stv")
    save_volume(v, tmp_path / "frames")
    np.testing.assert_array_equal(load_volume(tmp_path / "v.stv").data, v.data)
    np.testing.assert_array_equal(load_volume(tmp_path / "frames").data, v.data)
    with pytest.raises(FileNotFoundError):
        load_volume(tmp_path / "nope.stv")
