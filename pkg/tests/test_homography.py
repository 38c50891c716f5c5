import numpy as np
import pytest
import torch

from lapsegen.errors import NumericsError
from lapsegen.homography import (Homography, clock_homography,
                                 conjugate_by_reflection, effective_matrix,
                                 homography_from_correspondences,
                                 load_clock_presets, reflect_below_horizon,
                                 reflect_field, warp_dynamic_noise,
                                 warp_noise_map)

UNIT_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.5], [1.0, 0.5]])


def test_zero_displacement_gives_identity():
    h = homography_from_correspondences(UNIT_CORNERS, UNIT_CORNERS)
    assert np.abs(h.matrix - np.eye(3)).max() < 1e-9


def test_horizontal_shift_gives_translation():
    delta = 0.37
    dst = UNIT_CORNERS + np.array([delta, 0.0])
    h = homography_from_correspondences(UNIT_CORNERS, dst)
    expected = np.eye(3)
    expected[0, 2] = delta
    assert np.abs(h.matrix - expected).max() < 1e-9


def test_dlt_residual_on_random_instances():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 1000:
        src = UNIT_CORNERS + rng.uniform(-0.05, 0.05, size=(4, 2))
        dst = src + rng.uniform(-0.05, 0.05, size=(4, 2))
        try:
            h = homography_from_correspondences(src, dst)
        except NumericsError:
            continue
        assert np.abs(h.apply(src) - dst).max() < 1e-6
        checked += 1


def test_degenerate_points_raise():
    src = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    with pytest.raises(NumericsError):
        homography_from_correspondences(src, src + 0.1)


def test_matrix_power_composition():
    h = clock_homography(2, speed_scale=1.5)
    assert np.abs(effective_matrix(h, 1) - np.eye(3)).max() == 0.0
    two_fold = h.matrix @ h.matrix
    assert np.abs(effective_matrix(h, 3) - two_fold).max() < 1e-9
    # h^(a+b) == h^a . h^b
    assert np.abs(h.power(7) - h.power(3) @ h.power(4)).max() < 1e-9


def test_reflection_field_double_reflect_is_exact_identity():
    h = clock_homography(5, speed_scale=2.0)
    field = reflect_below_horizon(h)
    twice = reflect_field(reflect_field(field))
    assert np.array_equal(twice.above, field.above)
    assert np.array_equal(twice.below, field.below)


def test_reflection_conjugation_algebra():
    # V (V M V) V == M up to float rounding of the two matmul passes
    h = clock_homography(5, speed_scale=2.0)
    once = conjugate_by_reflection(h.matrix, 0.5)
    twice = conjugate_by_reflection(once, 0.5)
    assert np.abs(twice - h.matrix).max() < 1e-14


def test_reflection_field_preserves_horizontal_flips_vertical():
    # rightward drift (translation) above stays rightward below
    m = np.eye(3)
    m[0, 2] = 0.1
    field = reflect_below_horizon(Homography(m, 0.5))
    above = field.apply(np.array([[0.3, 0.2]]))[0]
    below = field.apply(np.array([[0.3, 0.8]]))[0]
    assert above[0] == pytest.approx(0.4)
    assert below[0] == pytest.approx(0.4)
    assert below[1] == pytest.approx(0.8)
    # upward motion above maps to downward below
    m2 = np.eye(3)
    m2[1, 2] = -0.1
    field2 = reflect_below_horizon(Homography(m2, 0.5))
    assert field2.apply(np.array([[0.3, 0.2]]))[0][1] == pytest.approx(0.1)
    assert field2.apply(np.array([[0.3, 0.8]]))[0][1] == pytest.approx(0.9)


def test_identity_field_is_identity_everywhere():
    field = reflect_below_horizon(Homography.identity())
    pts = np.random.default_rng(0).uniform(0, 1, size=(50, 2))
    assert np.abs(field.apply(pts) - pts).max() < 1e-12


def test_warp_frame_one_returns_base_unchanged(torch_rng):
    base = [torch.randn(4, 4, generator=torch_rng),
            torch.randn(8, 8, generator=torch_rng)]
    h = clock_homography(3)
    out = warp_dynamic_noise(base, h, frame_index=1)
    for o, b in zip(out, base):
        assert torch.equal(o, b)
        assert o is not b


def test_warp_identity_homography_is_resampling_identity(torch_rng):
    base = torch.randn(16, 16, generator=torch_rng)
    field = reflect_below_horizon(Homography.identity())
    out = warp_noise_map(base, field)
    assert torch.equal(out, base)


def test_warp_moves_content():
    # a bright pixel drifts along a rightward translation
    base = torch.zeros(16, 16)
    base[4, 4] = 10.0
    m = np.eye(3)
    m[0, 2] = 4.0 / 16.0  # four pixels right
    h = Homography(m, 0.9)
    out = warp_dynamic_noise([base], h, frame_index=2)[0]
    assert float(out[4, 8]) == pytest.approx(10.0, abs=1e-5)
    assert float(out[4, 4]) == pytest.approx(0.0, abs=1e-5)


def test_warp_fresh_fill_is_seeded(torch_rng):
    base = torch.randn(16, 16, generator=torch_rng)
    h = clock_homography(3, speed_scale=5.0)
    a = warp_dynamic_noise([base], h, frame_index=4, stream_seed=9)[0]
    b = warp_dynamic_noise([base], h, frame_index=4, stream_seed=9)[0]
    c = warp_dynamic_noise([base], h, frame_index=4, stream_seed=10)[0]
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_warp_reflect_fill_has_no_randomness(torch_rng):
    base = torch.randn(16, 16, generator=torch_rng)
    h = clock_homography(9, speed_scale=5.0)
    a = warp_dynamic_noise([base], h, frame_index=4, fill="reflect", stream_seed=1)[0]
    b = warp_dynamic_noise([base], h, frame_index=4, fill="reflect", stream_seed=2)[0]
    assert torch.equal(a, b)


def test_clock_presets_cover_all_hours():
    presets = load_clock_presets()
    assert set(presets["hours"]) == {str(h) for h in range(1, 13)}


def test_clock_three_is_pure_rightward():
    presets = load_clock_presets()
    dx, dy = presets["hours"]["3"]["corner"]
    assert dx > 0 and dy == pytest.approx(0.0)
    h = clock_homography(3, speed_scale=1.0)
    moved = h.apply(np.array([[0.0, 0.0], [1.0, 0.0]]))
    assert np.all(moved[:, 0] > np.array([0.0, 1.0]) - 1e-12 + 0)  # drifted right
    assert np.abs(moved[:, 1]).max() < 1e-9


def test_clock_zero_speed_is_identity():
    h = clock_homography(7, speed_scale=0.0)
    assert np.abs(h.matrix - np.eye(3)).max() < 1e-9


def test_clock_three_and_nine_mirror():
    presets = load_clock_presets()
    c3 = np.array(presets["hours"]["3"]["corner"])
    c9 = np.array(presets["hours"]["9"]["corner"])
    assert c3[0] == pytest.approx(-c9[0])
    assert c3[1] == pytest.approx(c9[1])


def test_clock_rejects_bad_hour():
    with pytest.raises(ValueError):
        clock_homography(0)
    with pytest.raises(ValueError):
        clock_homography(13)


def test_homography_requires_invertible_matrix():
    with pytest.raises(NumericsError):
        Homography(np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 0, 1.0]]))
