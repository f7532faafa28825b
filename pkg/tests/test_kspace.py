import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import direct_dft2
from swinrecon.dataio import phantom
from swinrecon.kspace import (
    UndersamplingMask,
    fft2c,
    gaussian1d_mask,
    ifft2c,
    undersample,
    zero_fill,
)


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def random_complex(rng, h, w):
    return rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))


def test_fft2c_dc_of_ones():
    k = fft2c(np.ones((4, 4)))
    expected = np.zeros((4, 4))
    expected[2, 2] = 4.0
    np.testing.assert_allclose(k, expected, atol=1e-12)


def test_fft2c_matches_direct_dft(rng):
    x = random_complex(rng, 16, 16)
    assert rel(fft2c(x), direct_dft2(x)) <= 1e-6
    assert rel(ifft2c(fft2c(x)), x) <= 1e-6


@pytest.mark.parametrize("shape", [(8, 12), (9, 8), (15, 11)])
def test_fft2c_direct_dft_nonsquare_and_odd(rng, shape):
    x = random_complex(rng, *shape)
    assert rel(fft2c(x), direct_dft2(x)) <= 1e-6
    assert rel(ifft2c(x), direct_dft2(x, inverse=True)) <= 1e-6


def test_parseval(rng):
    x = random_complex(rng, 32, 32)
    e_img = np.sum(np.abs(x) ** 2)
    assert abs(np.sum(np.abs(fft2c(x)) ** 2) - e_img) / e_img <= 1e-6


def test_ifft2c_center_impulse_is_constant():
    y = np.zeros((8, 16), dtype=complex)
    y[4, 8] = 1.0
    np.testing.assert_allclose(ifft2c(y), np.full((8, 16), 1 / np.sqrt(128)), atol=1e-12)


def test_ifft2c_inverse_and_linearity(rng):
    y1, y2 = random_complex(rng, 16, 16), random_complex(rng, 16, 16)
    assert rel(fft2c(ifft2c(y1)), y1) <= 1e-6
    a = 2.5 - 0.5j
    assert rel(ifft2c(a * y1 + y2), a * ifft2c(y1) + ifft2c(y2)) <= 1e-6


def test_torch_and_numpy_paths_agree(rng):
    x = random_complex(rng, 16, 8)
    np.testing.assert_allclose(fft2c(torch.from_numpy(x)).numpy(), fft2c(x), atol=1e-12)
    np.testing.assert_allclose(ifft2c(torch.from_numpy(x)).numpy(), ifft2c(x), atol=1e-12)


def test_nonfinite_rejected():
    x = np.ones((8, 8))
    x[3, 3] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        fft2c(x)
    with pytest.raises(ValueError, match="non-finite"):
        ifft2c(torch.full((8, 8), float("inf")))


@settings(max_examples=25, deadline=None)
@given(h=st.integers(8, 64), w=st.integers(8, 64), seed=st.integers(0, 2**16))
def test_roundtrip_all_sizes(h, w, seed):
    x = random_complex(np.random.default_rng(seed), h, w)
    assert rel(ifft2c(fft2c(x)), x) <= 1e-6


# -- masks -----------------------------------------------------------------------


@pytest.mark.parametrize("width", [8, 64, 257])
def test_full_rate_mask_is_all_ones(width):
    assert gaussian1d_mask(width, 1.0, 0.04, seed=3).columns.all()


@pytest.mark.parametrize("seed", range(5))
def test_center_band_forced(seed):
    m = gaussian1d_mask(100, 0.3, 0.08, seed)
    assert m.columns[46:54].all()
    assert m.num_sampled == 30


def test_mask_count_and_determinism():
    a = gaussian1d_mask(256, 0.1, 0.04, seed=0)
    b = gaussian1d_mask(256, 0.1, 0.04, seed=0)
    assert a.num_sampled == 26
    assert np.array_equal(a.columns, b.columns)
    assert not np.array_equal(a.columns, gaussian1d_mask(256, 0.1, 0.04, seed=1).columns)


def test_mask_prefers_center():
    counts = sum(gaussian1d_mask(256, 0.2, 0.0, s).columns.astype(int) for s in range(200))
    assert counts[112:144].mean() > 3 * counts[:32].mean()


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(width=64, rate=0.1, center_fraction=0.1),
        dict(width=64, rate=0.1, center_fraction=0.2),
        dict(width=64, rate=0.0, center_fraction=0.0),
        dict(width=64, rate=1.5, center_fraction=0.0),
        dict(width=8, rate=0.1, center_fraction=0.0),
    ],
)
def test_invalid_mask_parameters(kwargs):
    with pytest.raises(ValueError):
        gaussian1d_mask(**kwargs)


@settings(max_examples=40, deadline=None)
@given(
    width=st.integers(16, 300),
    rate=st.floats(0.05, 1.0),
    frac=st.floats(0.0, 0.04),
    seed=st.integers(0, 10_000),
)
def test_mask_count_exact(width, rate, frac, seed):
    if rate * width < 1:
        return
    m = gaussian1d_mask(width, rate, frac, seed)
    assert m.num_sampled == round(rate * width)
    n_center = round(frac * width)
    start = width // 2 - n_center // 2
    assert m.columns[start : start + n_center].all()


def test_mask_json_roundtrip(tmp_path):
    m = gaussian1d_mask(64, 0.3, 0.04, 11)
    m.save(tmp_path / "m.json")
    record = json.loads((tmp_path / "m.json").read_text())
    assert set(record) == {"width", "rate", "center_fraction", "seed", "columns"}
    back = UndersamplingMask.load(tmp_path / "m.json")
    assert np.array_equal(back.columns, m.columns)
    assert (back.rate, back.center_fraction, back.seed, back.width) == (0.3, 0.04, 11, 64)


def test_mask_json_width_mismatch():
    d = gaussian1d_mask(64, 0.3, 0.04, 11).to_dict()
    d["width"] = 65
    with pytest.raises(ValueError):
        UndersamplingMask.from_dict(d)


# -- undersampling / zero filling --------------------------------------------------------


def test_undersample_full_mask_is_fft(rng):
    x = rng.random((16, 16))
    full = gaussian1d_mask(16, 1.0, 0.0, 0)
    assert np.array_equal(undersample(x, full), fft2c(x))


def test_undersample_center_band_only(rng):
    x = rng.random((16, 16))
    cols = np.zeros(16, dtype=np.uint8)
    cols[6:10] = 1
    m = UndersamplingMask(cols, rate=0.25, center_fraction=0.25, seed=0)
    y = undersample(x, m)
    assert np.all(y[:, cols == 0] == 0)
    assert np.all(np.abs(y[:, 6:10]) > 0)


def test_undersample_matches_direct_oracle(rng):
    x = rng.random((16, 16))
    m = gaussian1d_mask(16, 0.5, 0.125, seed=4)
    expected = direct_dft2(x) * m.columns[None, :]
    assert rel(undersample(x, m), expected) <= 1e-6


def test_undersample_width_mismatch(rng):
    with pytest.raises(ValueError, match="width"):
        undersample(rng.random((16, 16)), gaussian1d_mask(32, 0.5, 0.1, 0))


def test_undersample_idempotent(rng):
    from swinrecon.kspace import apply_mask

    x = rng.random((32, 32))
    m = gaussian1d_mask(32, 0.3, 0.04, 2)
    y = undersample(x, m)
    assert np.array_equal(apply_mask(y, m), y)


def test_zero_fill_roundtrip_and_zero(rng):
    x = rng.random((16, 16))
    full = gaussian1d_mask(16, 1.0, 0.0, 0)
    assert rel(zero_fill(undersample(x, full)), x) <= 1e-6
    assert np.all(zero_fill(np.zeros((16, 16), dtype=complex)) == 0)


def test_zero_fill_phantom_loses_energy():
    x = phantom(0, 64).image.astype(np.float64)
    zf = zero_fill(undersample(x, gaussian1d_mask(64, 0.3, 0.04, 0)))
    e_zf, e_x = np.sum(np.abs(zf) ** 2), np.sum(x**2)
    assert 0 < e_zf <= e_x
    assert np.abs(zf - x).max() > 1e-3


def test_zero_fill_linear(rng):
    m = gaussian1d_mask(32, 0.3, 0.04, 5)
    a, b = rng.random((32, 32)), rng.random((32, 32))
    lhs = zero_fill(undersample(3.0 * a - b, m))
    rhs = 3.0 * zero_fill(undersample(a, m)) - zero_fill(undersample(b, m))
    assert rel(lhs, rhs) <= 1e-12


def test_per_sample_mask_tensor(rng):
    x = torch.from_numpy(rng.random((2, 1, 16, 16)))
    m0, m1 = gaussian1d_mask(16, 0.5, 0.1, 0), gaussian1d_mask(16, 0.5, 0.1, 1)
    cols = torch.from_numpy(np.stack([m0.columns, m1.columns])).view(2, 1, 1, 16)
    y = undersample(x, cols)
    np.testing.assert_allclose(y[0, 0].numpy(), undersample(x[0, 0].numpy(), m0), atol=1e-12)
    np.testing.assert_allclose(y[1, 0].numpy(), undersample(x[1, 0].numpy(), m1), atol=1e-12)
