import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deshadow.colorspace import (
    lab_to_norm,
    lab_to_rgb,
    norm_to_lab,
    rgb_to_lab,
    rgb_to_norm,
)


def textbook_lab(r, g, b):
    """Independent scalar sRGB/D65 -> LAB conversion for oracle checks."""
    def lin(c):
        c = c / 255.0
        return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4

    rl, gl, bl = lin(r), lin(g), lin(b)
    x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl
    y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl
    z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl

    def f(t):
        d = 6 / 29
        return t ** (1 / 3) if t > d**3 else t / (3 * d**2) + 4 / 29

    fx, fy, fz = f(x / 0.95047), f(y / 1.0), f(z / 1.08883)
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


def test_white_point():
    lab = rgb_to_lab(np.full((1, 1, 3), 255, np.uint8))
    assert lab[0, 0, 0] == pytest.approx(100.0, abs=1e-3)
    assert lab[0, 0, 1] == pytest.approx(0.0, abs=1e-2)
    assert lab[0, 0, 2] == pytest.approx(0.0, abs=1e-2)


def test_black():
    lab = rgb_to_lab(np.zeros((1, 1, 3), np.uint8))
    assert np.allclose(lab, 0.0, atol=1e-12)


def test_midgray_matches_textbook():
    lab = rgb_to_lab(np.full((1, 1, 3), 119, np.uint8))[0, 0]
    expected = textbook_lab(119, 119, 119)
    assert lab == pytest.approx(expected, abs=1e-10)


@given(
    st.integers(0, 255), st.integers(0, 255), st.integers(0, 255)
)
@settings(max_examples=200, deadline=None)
def test_matches_textbook_everywhere(r, g, b):
    lab = rgb_to_lab(np.array([[[r, g, b]]], np.uint8))[0, 0]
    assert lab == pytest.approx(textbook_lab(r, g, b), abs=1e-9)


@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
@settings(max_examples=300, deadline=None)
def test_roundtrip_within_one(r, g, b):
    rgb = np.array([[[r, g, b]]], np.uint8)
    back = lab_to_rgb(rgb_to_lab(rgb))
    assert np.abs(back.astype(int) - rgb.astype(int)).max() <= 1


def test_roundtrip_full_gray_ramp():
    ramp = np.arange(256, dtype=np.uint8).reshape(-1, 1, 1).repeat(3, axis=2)
    back = lab_to_rgb(rgb_to_lab(ramp))
    assert np.abs(back.astype(int) - ramp.astype(int)).max() <= 1


def test_norm_mapping_bounds_and_inverse():
    rng = np.random.default_rng(3)
    rgb = rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)
    norm = rgb_to_norm(rgb)
    assert norm.min() >= -1.0 - 1e-9 and norm.max() <= 1.0 + 1e-9
    lab = rgb_to_lab(rgb)
    assert np.allclose(norm_to_lab(lab_to_norm(lab)), lab, atol=1e-12)


def test_rejects_wrong_channel_count():
    with pytest.raises(ValueError):
        rgb_to_lab(np.zeros((4, 4), np.uint8))
    with pytest.raises(ValueError):
        rgb_to_lab(np.zeros((4, 4, 4), np.uint8))
