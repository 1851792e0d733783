import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptdiff.numerics import SeededRng
from adaptdiff.wavelet import (
    FrequencyBands,
    haar_decompose,
    haar_reconstruct,
    high_frequency,
    high_frequency_adjoint,
)
from helpers import oracle_haar_band


def test_constant_image():
    img = np.full((3, 8, 8), 0.37)
    bands = haar_decompose(img)
    assert np.allclose(bands.ll, 2 * 0.37, atol=1e-15)
    for band in (bands.lh, bands.hl, bands.hh):
        assert np.all(band == 0.0)
    assert np.all(high_frequency(img) == 0.0)


def test_2x2_block_matches_kernel_oracle():
    rng = SeededRng(5)
    img = rng.normal((2, 2))
    bands = haar_decompose(img)
    a, b = img[0]
    c, d = img[1]
    assert np.isclose(bands.ll[0, 0], (a + b + c + d) / 2)
    for name, got in (("lh", bands.lh), ("hl", bands.hl), ("hh", bands.hh)):
        assert np.allclose(got, oracle_haar_band(img, name), atol=1e-12)


def test_energy_conservation():
    img = SeededRng(9).normal((3, 16, 16))
    bands = haar_decompose(img)
    energy = sum(float(np.sum(b**2)) for b in (bands.ll, bands.lh, bands.hl, bands.hh))
    assert np.isclose(energy, float(np.sum(img**2)), rtol=1e-10)


def test_round_trip_random_64():
    img = SeededRng(2).normal((3, 64, 64))
    back = haar_reconstruct(haar_decompose(img))
    assert np.max(np.abs(back - img)) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 30), st.integers(1, 3), st.integers(1, 8), st.integers(1, 8))
def test_round_trip_property(seed, c, hh, ww):
    img = SeededRng(seed).normal((c, 2 * hh, 2 * ww))
    back = haar_reconstruct(haar_decompose(img))
    assert np.max(np.abs(back - img)) <= 1e-10
    bands = haar_decompose(img)
    energy = sum(float(np.sum(b**2)) for b in (bands.ll, bands.lh, bands.hl, bands.hh))
    assert np.isclose(energy, float(np.sum(img**2)), rtol=1e-10)


def test_zero_bands_give_zero_image():
    z = np.zeros((1, 4, 4))
    img = haar_reconstruct(FrequencyBands(ll=z, lh=z, hl=z, hh=z))
    assert np.all(img == 0.0)


def test_hand_inversion_of_2x2():
    img = np.array([[1.5, -0.5], [2.0, 0.25]])
    assert np.allclose(haar_reconstruct(haar_decompose(img)), img, atol=1e-14)


def test_horizontal_step_edge_hits_hl_only():
    # top row 1, bottom row 0: variation along height -> high-pass along
    # height = HL under the convention pinned in the module docstring
    img = np.zeros((2, 4))
    img[0, :] = 1.0
    bands = haar_decompose(img)
    assert np.allclose(bands.hl, -1.0)
    assert np.all(bands.lh == 0.0)
    assert np.all(bands.hh == 0.0)
    hf = high_frequency(img)
    assert np.allclose(hf, -1.0)


def test_hf_linearity():
    rng = SeededRng(14)
    x = rng.normal((2, 8, 8))
    y = rng.normal((2, 8, 8))
    combo = high_frequency(2.5 * x - 1.25 * y)
    assert np.allclose(combo, 2.5 * high_frequency(x) - 1.25 * high_frequency(y),
                       atol=1e-10)


def test_odd_sizes_rejected():
    with pytest.raises(ValueError, match="even"):
        haar_decompose(np.zeros((3, 7, 8)))
    with pytest.raises(ValueError, match="even"):
        high_frequency(np.zeros((3, 8, 9)))


def test_band_shape_mismatch_rejected():
    z = np.zeros((1, 4, 4))
    with pytest.raises(ValueError):
        haar_reconstruct(FrequencyBands(ll=z, lh=z, hl=z, hh=np.zeros((1, 2, 2))))


def test_hf_adjoint_identity():
    rng = SeededRng(21)
    x = rng.normal((3, 8, 8))
    g = rng.normal((3, 4, 4))
    lhs = float(np.sum(high_frequency(x) * g))
    rhs = float(np.sum(x * high_frequency_adjoint(g)))
    assert np.isclose(lhs, rhs, rtol=1e-12)
