import numpy as np
import pytest

from sargan.filters import FilterConfig, kuan_filter, lee_filter, local_moments
from sargan.speckle import SpeckleParams, sample_speckle
from sargan.tensor import ContractError


def reflect_index(i, n):
    if i < 0:
        return -i
    if i >= n:
        return 2 * (n - 1) - i
    return i


def filter_oracle(img, window, looks, kind):
    """Scalar per-pixel loop over mirror-padded windows."""
    h, w = img.shape
    r = window // 2
    n = window * window
    cu2 = 1.0 / looks
    out = np.empty_like(img)
    for i in range(h):
        for j in range(w):
            vals = [img[reflect_index(i + di - r, h), reflect_index(j + dj - r, w)]
                    for di in range(window) for dj in range(window)]
            s = 0.0
            for v in vals:
                s = s + v
            m = s / n
            d = 0.0
            for v in vals:
                d = d + (v - m) * (v - m)
            var = d / n
            cy2 = var / (m * m) if m != 0 else 0.0
            if cy2 > 0:
                k = 1.0 - cu2 / cy2
                if kind == "kuan":
                    k = k / (1.0 + cu2)
                k = min(max(k, 0.0), 1.0)
            else:
                k = 0.0
            out[i, j] = m + k * (img[i, j] - m)
    return out


@pytest.fixture
def patch():
    rng = np.random.default_rng(77)
    clean = np.array([[0.2, 0.2, 0.6, 0.6, 0.6]] * 5)
    return clean * sample_speckle((5, 5), SpeckleParams(1, seed=4)) + 0.01 * rng.random((5, 5))


@pytest.mark.parametrize("flt", [lee_filter, kuan_filter])
def test_constant_image_fixed_point(flt):
    img = np.full((1, 9, 9), 0.37)
    out = flt(img, FilterConfig(7, 1))
    np.testing.assert_allclose(out, img, atol=1e-15)
    assert out.shape == img.shape


@pytest.mark.parametrize("flt", [lee_filter, kuan_filter])
def test_noiseless_limit_is_identity(flt, patch):
    out = flt(patch, FilterConfig(3, 10 ** 9))
    assert np.max(np.abs(out - patch)) < 1e-6


@pytest.mark.parametrize("kind,flt", [("lee", lee_filter), ("kuan", kuan_filter)])
@pytest.mark.parametrize("window", [3, 5])
def test_matches_scalar_oracle(kind, flt, window, patch):
    out = flt(patch[None], FilterConfig(window, 1))[0]
    expected = filter_oracle(patch, window, 1, kind)
    assert np.array_equal(out, expected)


def test_kuan_gain_not_above_lee(patch):
    m, v = local_moments(patch, 3)
    lee = lee_filter(patch, FilterConfig(3, 1))
    kuan = kuan_filter(patch, FilterConfig(3, 1))
    cy2 = v / m ** 2
    sel = (cy2 > 1.0) & (np.abs(patch - m) > 1e-12)
    assert sel.any()
    k_lee = (lee - m)[sel] / (patch - m)[sel]
    k_kuan = (kuan - m)[sel] / (patch - m)[sel]
    assert np.all(k_kuan <= k_lee + 1e-12)


@pytest.mark.parametrize("flt", [lee_filter, kuan_filter])
def test_output_within_window_range(flt, patch):
    out = flt(patch, FilterConfig(3, 1))
    padded = np.pad(patch, 1, mode="reflect")
    for i in range(5):
        for j in range(5):
            win = padded[i:i + 3, j:j + 3]
            assert win.min() - 1e-12 <= out[i, j] <= win.max() + 1e-12


@pytest.mark.parametrize("flt", [lee_filter, kuan_filter])
def test_smooths_flat_region(flt):
    noisy = 0.5 * sample_speckle((64, 64), SpeckleParams(1, seed=8))
    out = flt(noisy, FilterConfig(7, 1))
    assert out.var() < noisy.var()


@pytest.mark.parametrize("flt", [lee_filter, kuan_filter])
def test_idempotent_on_constant(flt):
    img = np.full((12, 12), 0.8)
    once = flt(img)
    assert np.array_equal(flt(once), once)


def test_rejects_multichannel():
    with pytest.raises(ContractError):
        lee_filter(np.ones((3, 8, 8)))


def test_config_validation():
    with pytest.raises(ValueError):
        FilterConfig(window=4)
    with pytest.raises(ValueError):
        FilterConfig(window=1)
    with pytest.raises(ValueError):
        FilterConfig(looks=0)
