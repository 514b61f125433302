import numpy as np
import pytest

from tneedle.needle import (NeedleParams, compute_field, field_from_video,
                            load_field, misalignment_bound, needle_at_scale,
                            patch_ssd, save_field)
from tneedle.pyramid import build_pyramid
from tneedle.synthgen import MotionScript, generate, invert_appearance
from tneedle.video_io import Video

from reference_impl import naive_field


def test_patch_ssd_by_hand():
    data = np.zeros((2, 5, 5))
    data[0] = 0.5
    data[1] = 0.3
    v = Video(data)
    # 3x3 patch, uniform diff 0.2 -> 9 * 0.04
    assert patch_ssd(v, 2, 2, 0, 1) == pytest.approx(0.36, abs=1e-12)
    assert patch_ssd(v, 2, 2, 0, 0) == 0.0


def test_patch_ssd_bounds():
    v = Video(np.zeros((3, 5, 5)))
    with pytest.raises(ValueError, match="spatial"):
        patch_ssd(v, 0, 2, 1, 1)
    with pytest.raises(ValueError, match="temporal"):
        patch_ssd(v, 2, 2, 2, 1)


def test_needle_at_scale_order():
    rng = np.random.default_rng(1)
    v = Video(rng.random((9, 5, 5)))
    got = needle_at_scale(v, 2, 2, 4, gamma=2)
    expect = [patch_ssd(v, 2, 2, 4, r) for r in (-2, -1, 1, 2)]
    np.testing.assert_allclose(got, expect, rtol=0, atol=0)


def test_params_validation_and_lengths():
    p = NeedleParams()
    assert (p.patch_radius, p.gamma, p.scale_count) == (1, 3, 3)
    assert p.entries_per_scale == 6
    assert p.descriptor_length == 18
    assert p.offsets() == [-3, -2, -1, 1, 2, 3]
    with pytest.raises(ValueError):
        NeedleParams(gamma=0)
    with pytest.raises(ValueError):
        NeedleParams(noise_percentile=1.5)


def test_misalignment_bound_reference_values():
    wide = misalignment_bound(25, 0.25)
    assert wide.average == pytest.approx(1.5625, abs=0)
    assert wide.peak == pytest.approx(3.0, abs=0)
    narrow = misalignment_bound(7, 0.25)
    assert narrow.average == pytest.approx(0.4375, abs=0)
    assert narrow.peak == pytest.approx(0.75, abs=0)


def test_misalignment_multiscale_average_is_quarter_of_wide():
    # averaging the per-scale bound over L scales keeps the narrow value,
    # 4x below the single wide-window bound at the same total context
    assert misalignment_bound(7, 0.25).average == \
        misalignment_bound(25, 0.25).average / 25 * 7


def test_static_video_descriptors_all_zero():
    v = Video(np.full((30, 7, 7), 0.6))
    f = field_from_video(v, NeedleParams(gamma=2, scale_count=2))
    assert f.noise_floor == 1e-12
    np.testing.assert_array_equal(f.data, 0.0)


def test_valid_region_default_params():
    v = Video(np.random.default_rng(0).random((64, 9, 9)))
    f = field_from_video(v)  # gamma 3, 3 scales: full-res context radius 12
    assert f.t_start == 12
    assert (f.x_start, f.y_start) == (1, 1)
    assert f.grid_shape == (40, 7, 7)
    locs = f.locations()
    assert locs.shape == (40 * 49, 3)
    assert tuple(locs[0]) == (1, 1, 12)
    np.testing.assert_array_equal(
        f.flat()[f.flat_index(3, 2, 15)], f.descriptor_at(3, 2, 15))


def test_descriptor_sums_bounded():
    v = Video(np.random.default_rng(5).random((40, 8, 8)))
    f = field_from_video(v, NeedleParams(gamma=2, scale_count=2))
    sums = f.data.sum(axis=-1)
    assert sums.max() <= 1.0 + 1e-9
    # noisy random video: raw sums exceed the floor almost everywhere
    assert (np.abs(sums - 1.0) < 1e-9).mean() > 0.5


def test_matches_naive_reference():
    rng = np.random.default_rng(42)
    cases = [
        ((30, 7, 7), NeedleParams(gamma=2, scale_count=2)),
        ((33, 6, 9), NeedleParams()),
        ((25, 7, 6), NeedleParams(patch_radius=0, gamma=2, scale_count=2)),
        ((20, 8, 5), NeedleParams(gamma=3, scale_count=1)),
        ((26, 5, 5), NeedleParams(patch_radius=2, gamma=2, scale_count=2)),
    ]
    for shape, params in cases:
        data = rng.random(shape)
        fast = compute_field(build_pyramid(Video(data), params.scale_count), params)
        desc, x0, y0, t0, floor = naive_field(
            data, params.patch_radius, params.gamma, params.scale_count,
            params.noise_percentile)
        assert (fast.x_start, fast.y_start, fast.t_start) == (x0, y0, t0)
        assert fast.noise_floor == pytest.approx(floor, rel=1e-12)
        assert fast.data.shape == desc.shape
        assert np.abs(fast.data - desc).max() <= 1e-9


def test_appearance_inversion_invariance():
    v = generate(MotionScript(pattern="oscillating-dot", period=8,
                              amplitude=6.0, background="gradient"),
                 24, 20, 40, seed=3)
    a = field_from_video(v, NeedleParams(gamma=2, scale_count=2))
    b = field_from_video(invert_appearance(v), NeedleParams(gamma=2, scale_count=2))
    assert np.abs(a.data - b.data).max() <= 1e-9


def test_pulse_normalizes_to_quarter_pattern():
    # a patch identical in frames t-1,t,t+1 and equal static background
    # in t-3,t-2,t+2,t+3 gives raw [a,a,0,0,a,a] -> [1/4,1/4,0,0,1/4,1/4]
    data = np.full((16, 9, 9), 0.2)
    data[7:10, 3:6, 3:6] = 0.9
    f = field_from_video(Video(data), NeedleParams(gamma=3, scale_count=1))
    d = f.descriptor_at(4, 4, 8)
    np.testing.assert_allclose(d, [0.25, 0.25, 0.0, 0.0, 0.25, 0.25], atol=1e-9)


def test_field_dump_round_trip(tmp_path):
    v = Video(np.random.default_rng(9).random((28, 6, 6)), fps=12.5)
    f = field_from_video(v, NeedleParams(gamma=2, scale_count=2))
    save_field(f, tmp_path / "f.bin")
    g = load_field(tmp_path / "f.bin")
    assert g.params == f.params
    assert g.noise_floor == f.noise_floor
    assert g.fps == 12.5
    assert (g.x_start, g.y_start, g.t_start) == (f.x_start, f.y_start, f.t_start)
    assert (g.width, g.height, g.frame_count) == (f.width, f.height, f.frame_count)
    # payload is float32; equality holds at that precision
    np.testing.assert_array_equal(g.data, f.data.astype("<f4").astype(np.float64))


def test_field_dump_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"WRONG!\n")
    with pytest.raises(ValueError):
        load_field(p)
    p.write_bytes(b"NDLF1\n1 2 3\n")
    with pytest.raises(ValueError):
        load_field(p)


def test_too_small_inputs_rejected():
    with pytest.raises(ValueError, match="too short|too small"):
        field_from_video(Video(np.zeros((8, 9, 9))))  # needs t >= 12
    with pytest.raises(ValueError, match="too small"):
        field_from_video(Video(np.zeros((64, 2, 2))))  # patch cannot fit
