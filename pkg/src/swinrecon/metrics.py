"""PSNR, SSIM and Frechet distance over extractor features."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch


def psnr(x, y, max_val: float = 1.0) -> float:
    """``10 log10(max_val**2 / MSE)`` in dB; ``inf`` for identical inputs."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if max_val <= 0:
        raise ValueError("max_val must be positive")
    mse = np.mean((x - y) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(max_val**2 / mse))


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation with the 1D window ``g`` on both axes."""
    k = g.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(x, y, window: int = 7, k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0,
         sigma: float = 1.5) -> float:
    """Mean SSIM over all fully-contained Gaussian windows of a 2D pair."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    x, y = np.squeeze(x), np.squeeze(y)
    if x.ndim != 2:
        raise ValueError("ssim expects single 2D images")
    if window not in (7, 11):
        raise ValueError("window must be 7 or 11")
    if min(x.shape) < window:
        raise ValueError(f"window {window} larger than image {x.shape}")

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    g = _gaussian_window(window, sigma)
    mu_x, mu_y = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mu_x**2
    syy = _filter_valid(y * y, g) - mu_y**2
    sxy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int


def gaussian_stats(features) -> GaussianStats:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError("need an N x F feature matrix with N >= 2")
    cov = np.cov(f, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    return GaussianStats(mean=f.mean(axis=0), covariance=0.5 * (cov + cov.T), count=f.shape[0])


def _psd_sqrt(m: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    floor = -tol * max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < floor:
        raise ValueError(f"matrix is not positive semi-definite (eigenvalue {vals.min():.3g})")
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """``||mu_a - mu_b||**2 + tr(S_a + S_b - 2 (S_a S_b)**0.5)``.

    The cross term uses ``tr((S_a S_b)**0.5) = tr((A S_b A)**0.5)`` with
    ``A = S_a**0.5``, so only symmetric eigendecompositions are needed.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"feature dimensions differ: {a.mean.shape} vs {b.mean.shape}")
    root_a = _psd_sqrt(a.covariance)
    cross = _psd_sqrt(root_a @ b.covariance @ root_a)
    diff = a.mean - b.mean
    value = diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2 * np.trace(cross)
    return float(max(value, 0.0))


def _as_batch(images) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(images, dtype=np.float64))
    if t.ndim == 3:
        t = t.unsqueeze(1)
    if t.ndim != 4:
        raise ValueError("images must be (N, H, W) or (N, 1, H, W)")
    return t


@torch.no_grad()
def embed_images(images, extractor, batch_size: int = 32) -> np.ndarray:
    batch = _as_batch(images)
    chunks = [extractor.embed(batch[i : i + batch_size]) for i in range(0, len(batch), batch_size)]
    return torch.cat(chunks).double().cpu().numpy()


def fid(images_a, images_b, extractor=None) -> float:
    """Frechet distance between Gaussian fits of extractor embeddings."""
    if extractor is None:
        from .features import ProxyExtractor

        extractor = ProxyExtractor()
    if len(images_a) < 2 or len(images_b) < 2:
        raise ValueError("FID needs at least two images per set")
    stats_a = gaussian_stats(embed_images(images_a, extractor))
    stats_b = gaussian_stats(embed_images(images_b, extractor))
    return frechet_distance(stats_a, stats_b)


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    fid: float
    n_images: int
    mask_tag: str

    def to_dict(self) -> dict:
        d = asdict(self)
        # JSON has no infinity; identical images are flagged with a string sentinel
        if math.isinf(self.psnr_db):
            d["psnr_db"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        d = dict(d)
        d["psnr_db"] = float(d["psnr_db"])
        return cls(**d)


def evaluate_set(truth, recon, mask_tag: str, extractor=None) -> MetricReport:
    """Mean PSNR/SSIM over pairs plus set-level FID."""
    truth = [np.asarray(t, dtype=np.float64).squeeze() for t in truth]
    recon = [np.asarray(r, dtype=np.float64).squeeze() for r in recon]
    if len(truth) != len(recon):
        raise ValueError("truth and reconstruction sets differ in size")
    psnrs = [psnr(t, r) for t, r in zip(truth, recon)]
    ssims = [ssim(t, r) for t, r in zip(truth, recon)]
    return MetricReport(
        psnr_db=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        fid=fid(np.stack(truth), np.stack(recon), extractor),
        n_images=len(truth),
        mask_tag=mask_tag,
    )


def save_reports(path, reports: dict[str, MetricReport], extra: dict | None = None) -> None:
    payload = {"reports": {k: r.to_dict() for k, r in reports.items()}}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
