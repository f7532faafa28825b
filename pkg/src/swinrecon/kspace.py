"""Single-coil Cartesian MRI forward model.

Images and spectra are plain 2D arrays (numpy or torch, complex or real).
The Fourier pair is centered (DC at ``[H // 2, W // 2]``) and orthonormally
scaled, so Parseval holds exactly and ``ifft2c`` is the adjoint of ``fft2c``.
The trailing two axes are always the spatial ones; leading axes are treated
as a batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch


def _is_torch(x) -> bool:
    return isinstance(x, torch.Tensor)


def _check_finite(x, what: str) -> None:
    finite = torch.isfinite(x).all().item() if _is_torch(x) else np.isfinite(x).all()
    if not finite:
        raise ValueError(f"{what} contains non-finite values")


def _check_shape(x, what: str) -> None:
    if x.ndim < 2:
        raise ValueError(f"{what} must be at least 2D, got shape {tuple(x.shape)}")


def fft2c(image):
    """Centered, orthonormal 2D DFT over the last two axes."""
    _check_shape(image, "image")
    _check_finite(image, "image")
    if _is_torch(image):
        dims = (-2, -1)
        x = torch.fft.ifftshift(image, dim=dims)
        x = torch.fft.fft2(x, dim=dims, norm="ortho")
        return torch.fft.fftshift(x, dim=dims)
    axes = (-2, -1)
    x = np.fft.ifftshift(np.asarray(image), axes=axes)
    x = np.fft.fft2(x, axes=axes, norm="ortho")
    return np.fft.fftshift(x, axes=axes)


def ifft2c(kspace):
    """Inverse of :func:`fft2c`."""
    _check_shape(kspace, "k-space")
    _check_finite(kspace, "k-space")
    if _is_torch(kspace):
        dims = (-2, -1)
        x = torch.fft.ifftshift(kspace, dim=dims)
        x = torch.fft.ifft2(x, dim=dims, norm="ortho")
        return torch.fft.fftshift(x, dim=dims)
    axes = (-2, -1)
    x = np.fft.ifftshift(np.asarray(kspace), axes=axes)
    x = np.fft.ifft2(x, axes=axes, norm="ortho")
    return np.fft.fftshift(x, axes=axes)


@dataclass(frozen=True)
class UndersamplingMask:
    """Binary phase-encode (column) sampling pattern.

    ``columns[j] == 1`` means every k-space row is acquired at column ``j``.
    """

    columns: np.ndarray
    rate: float
    center_fraction: float
    seed: int
    width: int = field(init=False)

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=np.uint8)
        if cols.ndim != 1:
            raise ValueError("mask columns must be a 1D vector")
        if not np.isin(cols, (0, 1)).all():
            raise ValueError("mask columns must be binary")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "width", int(cols.size))

    @property
    def num_sampled(self) -> int:
        return int(self.columns.sum())

    def as_grid(self, height: int) -> np.ndarray:
        """The mask replicated over ``height`` rows, as float64."""
        return np.broadcast_to(self.columns.astype(np.float64), (height, self.width)).copy()

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "rate": self.rate,
            "center_fraction": self.center_fraction,
            "seed": self.seed,
            "columns": [int(c) for c in self.columns],
        }

    @classmethod
    def from_dict(cls, record: dict) -> "UndersamplingMask":
        mask = cls(
            columns=np.asarray(record["columns"], dtype=np.uint8),
            rate=float(record["rate"]),
            center_fraction=float(record["center_fraction"]),
            seed=int(record["seed"]),
        )
        if mask.width != int(record["width"]):
            raise ValueError(
                f"mask record width {record['width']} does not match {mask.width} columns"
            )
        return mask

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "UndersamplingMask":
        return cls.from_dict(json.loads(Path(path).read_text()))


def center_band(width: int, center_fraction: float) -> slice:
    """Column slice of the always-sampled band around the DC column."""
    n = int(round(center_fraction * width))
    start = width // 2 - n // 2
    return slice(start, start + n)


def gaussian1d_mask(
    width: int, rate: float, center_fraction: float = 0.04, seed: int = 0
) -> UndersamplingMask:
    """Gaussian-weighted 1D column mask with an exact sampled-column count.

    The centered ``round(center_fraction * width)`` columns are always kept.
    The rest of the ``round(rate * width)`` budget is drawn without
    replacement with weights from a Gaussian (std ``width / 6``) centered on
    the DC column.
    """
    if not 0 < rate <= 1:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    if not 0 <= center_fraction < rate:
        raise ValueError(
            f"center_fraction must satisfy 0 <= center_fraction < rate, got {center_fraction}"
        )
    if rate * width < 1:
        raise ValueError(f"rate * width = {rate * width:g} samples less than one column")
    if width < 1:
        raise ValueError("width must be positive")

    n_total = int(round(rate * width))
    columns = np.zeros(width, dtype=np.uint8)
    columns[center_band(width, center_fraction)] = 1
    n_remaining = n_total - int(columns.sum())

    if n_remaining > 0:
        candidates = np.flatnonzero(columns == 0)
        offsets = candidates - width // 2
        weights = np.exp(-0.5 * (offsets / (width / 6.0)) ** 2)
        weights /= weights.sum()
        rng = np.random.default_rng(seed)
        chosen = rng.choice(candidates, size=n_remaining, replace=False, p=weights)
        columns[chosen] = 1

    return UndersamplingMask(columns=columns, rate=rate, center_fraction=center_fraction, seed=seed)


def _mask_like(mask, x):
    """Column weights broadcastable against ``x``.

    ``mask`` is an :class:`UndersamplingMask` or an array/tensor whose last
    axis holds the columns (e.g. ``(B, 1, 1, W)`` for per-sample masks).
    """
    cols = mask.columns if isinstance(mask, UndersamplingMask) else mask
    if cols.shape[-1] != x.shape[-1]:
        raise ValueError(f"mask width {cols.shape[-1]} does not match image width {x.shape[-1]}")
    if _is_torch(x):
        return torch.as_tensor(np.asarray(cols) if not _is_torch(cols) else cols, device=x.device).to(
            x.real.dtype
        )
    return np.asarray(cols, dtype=np.float64)


def apply_mask(kspace, mask):
    """Zero every unsampled column of ``kspace``."""
    return kspace * _mask_like(mask, kspace)


def undersample(image, mask):
    """Simulated measurements ``M F x``; unsampled columns are exactly zero."""
    _check_shape(image, "image")
    _mask_like(mask, image)
    return apply_mask(fft2c(image), mask)


def zero_fill(measurements):
    """Zero-filled back-projection: the aliased image fed to the generator."""
    return ifft2c(measurements)


def zero_filled_magnitude(image, mask):
    """``|zero_fill(undersample(image, mask))|`` as a real array."""
    zf = zero_fill(undersample(image, mask))
    return zf.abs() if _is_torch(zf) else np.abs(zf)
