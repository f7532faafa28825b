"""Training objectives.

Pixel and frequency terms use the global-norm Charbonnier form
``sqrt(||a - b||_2**2 + eps**2)`` over the whole batch tensor. Adversarial
terms work on pre-sigmoid decision logits via log-sigmoid identities.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import torch
import torch.nn.functional as F

from .kspace import UndersamplingMask, apply_mask, fft2c

VARIANTS = ("swinmr", "st", "ees", "tes")
DUAL_VARIANTS = ("ees", "tes")


@dataclass
class LossWeights:
    alpha: float = 15.0
    beta: float = 0.1
    gamma: float = 0.0025
    delta: float = 0.1
    mu: float = 0.05
    nu: float = 0.05
    epsilon: float = 1e-9

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be non-negative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossRecord:
    step: int
    pix: float
    freq: float
    vgg_like: float
    adv1: float
    adv2: float
    total: float

    CSV_FIELDS = ("step", "pix", "freq", "vgg_like", "adv1", "adv2", "total")

    def as_row(self) -> list:
        return [getattr(self, k) for k in self.CSV_FIELDS]


def _squared_norm(diff: torch.Tensor) -> torch.Tensor:
    if diff.is_complex():
        diff = torch.view_as_real(diff)
    return (diff * diff).sum()


def charbonnier(a: torch.Tensor, b: torch.Tensor, epsilon: float = 1e-9, per_pixel: bool = False):
    """``sqrt(||a - b||**2 + eps**2)``; complex inputs use ``|.|**2``.

    ``per_pixel=True`` switches to the common ``mean(sqrt((a - b)**2 + eps**2))``.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    diff = a - b
    if per_pixel:
        if diff.is_complex():
            sq = torch.view_as_real(diff).pow(2).sum(-1)
        else:
            sq = diff * diff
        return torch.sqrt(sq + epsilon**2).mean()
    return torch.sqrt(_squared_norm(diff) + epsilon**2)


def pixel_loss(x: torch.Tensor, x_hat: torch.Tensor, weights: LossWeights | None = None):
    eps = (weights or LossWeights()).epsilon
    return charbonnier(x_hat, x, eps)


def freq_loss(y: torch.Tensor, x_hat: torch.Tensor, mask, weights: LossWeights | None = None):
    """Charbonnier distance between measurements ``y`` and ``M F x_hat``.

    Only sampled k-space locations are compared: ``y`` is zero elsewhere.
    ``x_hat`` may carry a channel axis; the last two axes are spatial.
    """
    eps = (weights or LossWeights()).epsilon
    width = mask.width if isinstance(mask, UndersamplingMask) else mask.shape[-1]
    if y.shape[-1] != width or x_hat.shape[-1] != width:
        raise ValueError("mask width does not match the k-space grid")
    predicted = apply_mask(fft2c(x_hat.to(y.real.dtype)), mask)
    if predicted.shape != y.shape:
        raise ValueError(f"shape mismatch: {tuple(y.shape)} vs {tuple(predicted.shape)}")
    return charbonnier(y, predicted, eps)


def perceptual_loss(x: torch.Tensor, x_hat: torch.Tensor, extractor) -> torch.Tensor:
    """Mean absolute difference between feature maps, summed over layers."""
    total = x_hat.new_zeros(())
    for fx, fh in zip(extractor.layers(x), extractor.layers(x_hat)):
        total = total + (fx - fh).abs().mean()
    return total


def _check_logits(*logits):
    for t in logits:
        if not torch.isfinite(t).all():
            raise ValueError("discriminator logits contain non-finite values")


def adv_loss_d(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """``-(log D(x) + log(1 - D(x_hat)))`` averaged over the batch."""
    _check_logits(real_logits, fake_logits)
    return (F.softplus(-real_logits) + F.softplus(fake_logits)).mean()


def adv_loss_g(fake_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator term ``-log D(x_hat)``."""
    _check_logits(fake_logits)
    return F.softplus(-fake_logits).mean()


def combine_adv(variant: str, adv1, adv2, weights: LossWeights):
    """The adversarial total: ``adv1`` alone for ST, ``mu*adv1 + nu*adv2`` for EES/TES."""
    if variant == "swinmr":
        return 0.0 * adv1
    if variant == "st":
        return adv1
    if variant in DUAL_VARIANTS:
        return weights.mu * adv1 + weights.nu * adv2
    raise ValueError(f"unknown variant {variant!r}")


def total_adv_loss(variant: str, d1_logits, d2_logits, weights: LossWeights):
    """Generator-side adversarial loss from D1 (and D2) logits on reconstructions."""
    adv1 = adv_loss_g(d1_logits)
    if variant in DUAL_VARIANTS:
        if d2_logits is None:
            raise ValueError(f"variant {variant!r} needs D2 logits")
        adv2 = adv_loss_g(d2_logits)
    else:
        adv2 = torch.zeros_like(adv1)
    return combine_adv(variant, adv1, adv2, weights)


def weighted_total(pix, freq, vgg_like, adv1, adv2, weights: LossWeights, variant: str):
    """``alpha*pix + beta*freq + gamma*vgg + delta*adv``; works on tensors or floats."""
    total = weights.alpha * pix + weights.beta * freq + weights.gamma * vgg_like
    if variant != "swinmr":
        total = total + weights.delta * combine_adv(variant, adv1, adv2, weights)
    return total


def _as_float(v) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def total_loss(
    pix, freq, vgg_like, adv1=0.0, adv2=0.0, *, weights: LossWeights | None = None,
    variant: str = "st", step: int = 0,
) -> LossRecord:
    w = weights or LossWeights()
    vals = [_as_float(v) for v in (pix, freq, vgg_like, adv1, adv2)]
    if variant not in DUAL_VARIANTS:
        vals[4] = 0.0
    if variant == "swinmr":
        vals[3] = 0.0
    total = weighted_total(*vals, weights=w, variant=variant)
    return LossRecord(step, *vals, total=float(total))


class CurveWriter:
    """Appends :class:`LossRecord` rows to a CSV file."""

    def __init__(self, path, truncate_after: int | None = None):
        self.path = Path(path)
        rows = []
        if truncate_after is not None and self.path.exists():
            rows = [r for r in read_curves(self.path) if r.step <= truncate_after]
        with self.path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LossRecord.CSV_FIELDS)
            for r in rows:
                writer.writerow(r.as_row())

    def write(self, record: LossRecord) -> None:
        with self.path.open("a", newline="") as fh:
            csv.writer(fh).writerow(record.as_row())


def read_curves(path) -> list[LossRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            LossRecord(
                step=int(row["step"]),
                **{k: float(row[k]) for k in LossRecord.CSV_FIELDS if k != "step"},
            )
            for row in reader
        ]


def is_finite_record(record: LossRecord) -> bool:
    return all(math.isfinite(getattr(record, k)) for k in LossRecord.CSV_FIELDS[1:])
