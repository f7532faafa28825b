import json
import math

import numpy as np
import pytest
import torch

from swinrecon.dataio import phantom
from swinrecon.features import ModuleExtractor, ProxyExtractor
from swinrecon.metrics import (
    GaussianStats,
    MetricReport,
    evaluate_set,
    fid,
    frechet_distance,
    gaussian_stats,
    psnr,
    save_reports,
    ssim,
)


def test_psnr_identical_is_inf():
    x = np.random.default_rng(0).random((8, 8))
    assert psnr(x, x) == math.inf


def test_psnr_uniform_offset_is_20db():
    x = np.full((16, 16), 0.4)
    assert psnr(x, x + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_matches_direct_formula(rng):
    x, y = rng.random((9, 13)), rng.random((9, 13))
    mse = sum((a - b) ** 2 for a, b in zip(x.ravel(), y.ravel())) / x.size
    assert abs(psnr(x, y) - 10 * math.log10(1 / mse)) <= 1e-9


def test_psnr_decreases_with_noise(rng):
    x = rng.random((32, 32))
    u = rng.uniform(-1, 1, x.shape)
    values = [psnr(x, x + a * u) for a in (0.01, 0.03, 0.1, 0.3)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_psnr_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(3), max_val=0)


@pytest.mark.parametrize("window", [7, 11])
def test_ssim_identity_and_symmetry(rng, window):
    x, y = rng.random((32, 32)), rng.random((32, 32))
    assert ssim(x, x, window) == 1.0
    assert abs(ssim(x, y, window) - ssim(y, x, window)) <= 1e-12
    assert -1 <= ssim(x, y, window) <= 1


def test_ssim_constant_images_closed_form():
    c1v, c2v = 0.3, 0.7
    C1, C2 = 0.01**2, 0.03**2
    expected = (2 * c1v * c2v + C1) * C2 / ((c1v**2 + c2v**2 + C1) * C2)
    got = ssim(np.full((16, 16), c1v), np.full((16, 16), c2v))
    assert abs(got - expected) <= 1e-9


def test_ssim_decreases_with_noise(rng):
    x = phantom(1, 64).image
    noise = rng.standard_normal(x.shape)
    assert ssim(x, x + 0.01 * noise) > ssim(x, x + 0.1 * noise)


def test_ssim_errors(rng):
    with pytest.raises(ValueError, match="larger"):
        ssim(np.zeros((6, 6)), np.zeros((6, 6)))
    with pytest.raises(ValueError):
        ssim(np.zeros((16, 16)), np.zeros((16, 16)), window=9)


def test_gaussian_stats_basic(rng):
    row = rng.random(5)
    s = gaussian_stats(np.stack([row, row]))
    assert np.array_equal(s.mean, row)
    assert np.all(s.covariance == 0)
    f = rng.random((6, 3))
    np.testing.assert_allclose(gaussian_stats(f).covariance, np.cov(f.T, ddof=1), atol=1e-15)
    with pytest.raises(ValueError):
        gaussian_stats(f[:1])


def test_gaussian_stats_converge_to_standard_normal():
    f = np.random.default_rng(7).standard_normal((10_000, 4))
    s = gaussian_stats(f)
    assert np.abs(s.mean).max() <= 0.1
    assert np.abs(s.covariance - np.eye(4)).max() <= 0.1
    assert np.array_equal(s.covariance, s.covariance.T)


def _stats(mean, cov):
    return GaussianStats(np.asarray(mean, float), np.asarray(cov, float), 10)


def test_frechet_equal_is_zero(rng):
    a = rng.standard_normal((50, 6))
    s = gaussian_stats(a)
    assert frechet_distance(s, s) < 1e-6


def test_frechet_identity_covariance_shift():
    m = np.array([1.0, -2.0, 0.5])
    assert frechet_distance(_stats(np.zeros(3), np.eye(3)), _stats(m, np.eye(3))) == pytest.approx(m @ m, abs=1e-12)


def test_frechet_diagonal_closed_form(rng):
    p, q = rng.random(5) + 0.1, rng.random(5) + 0.1
    ma, mb = rng.random(5), rng.random(5)
    expected = np.sum((ma - mb) ** 2) + np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)
    got = frechet_distance(_stats(ma, np.diag(p)), _stats(mb, np.diag(q)))
    assert abs(got - expected) <= 1e-10


def test_frechet_symmetric(rng):
    a = gaussian_stats(rng.standard_normal((40, 4)))
    b = gaussian_stats(rng.standard_normal((40, 4)) * 2 + 1)
    assert abs(frechet_distance(a, b) - frechet_distance(b, a)) <= 1e-9


def test_frechet_errors():
    with pytest.raises(ValueError, match="dimensions"):
        frechet_distance(_stats(np.zeros(2), np.eye(2)), _stats(np.zeros(3), np.eye(3)))
    bad = np.diag([1.0, -0.5])
    with pytest.raises(ValueError, match="semi-definite"):
        frechet_distance(_stats(np.zeros(2), bad), _stats(np.zeros(2), np.eye(2)))


def test_frechet_tolerates_roundoff_negative_eigenvalues():
    tiny = np.diag([1.0, -1e-12])
    assert frechet_distance(_stats(np.zeros(2), tiny), _stats(np.zeros(2), tiny)) < 1e-6


def _phantom_set(n=8, size=32, start=0):
    return np.stack([phantom(s, size).image for s in range(start, start + n)])


def test_fid_identical_sets():
    a = _phantom_set()
    assert fid(a, a.copy()) < 1e-6


def test_fid_monotone_in_noise(rng):
    a = _phantom_set()
    noise = rng.standard_normal(a.shape)
    assert fid(a, a + 0.1 * noise) > fid(a, a + 0.01 * noise)


def test_fid_needs_two_images():
    a = _phantom_set(2)
    with pytest.raises(ValueError, match="two"):
        fid(a[:1], a)


def test_fid_ordering_agrees_across_extractors(rng):
    """A second, unrelated network ranks a mild and a strong degradation the same way."""
    a = _phantom_set(12)
    noise = rng.standard_normal(a.shape)
    other_net = torch.nn.Sequential(
        torch.nn.Conv2d(1, 8, 5, stride=2, padding=2), torch.nn.Tanh(),
        torch.nn.Conv2d(8, 12, 3, stride=2, padding=1), torch.nn.Tanh(),
    ).double()
    other = ModuleExtractor(other_net)
    for ext in (ProxyExtractor(), ProxyExtractor(channels=(8, 24), seed=99), other):
        assert fid(a, a + 0.2 * noise, ext) > fid(a, a + 0.02 * noise, ext)


def test_metric_report_json(tmp_path):
    truth = _phantom_set(4)
    rep = evaluate_set(truth, truth.copy(), "G1D30%")
    assert rep.psnr_db == math.inf and rep.ssim == 1.0 and rep.n_images == 4
    save_reports(tmp_path / "m.json", {"recon": rep}, extra={"seed": 3})
    payload = json.loads((tmp_path / "m.json").read_text())
    assert payload["reports"]["recon"]["psnr_db"] == "inf"
    assert payload["seed"] == 3
    assert MetricReport.from_dict(payload["reports"]["recon"]) == rep
