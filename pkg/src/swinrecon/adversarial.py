"""U-Net discriminators and the edge/texture operators feeding D2.

All operators take ``(B, C, H, W)`` tensors and are differentiable, since
the generator's adversarial term backpropagates through ``A(x_hat)``.
Image coordinates: ``x`` runs along columns, ``y`` along rows.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

SOBEL_X = ((-1.0, 0.0, 1.0), (-2.0, 0.0, 2.0), (-1.0, 0.0, 1.0))

DEFAULT_ORIENTATIONS = (0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4)
DEFAULT_FREQUENCIES = (0.1, 0.2)

ROLES = ("D1", "D2-edge", "D2-texture")


@dataclass(frozen=True)
class GaborSpec:
    orientation: float  # radians
    frequency: float  # cycles / pixel
    sigma: float = 2.5  # pixels


def default_bank(sigma: float = 2.5) -> list[GaborSpec]:
    return [GaborSpec(t, f, sigma) for t in DEFAULT_ORIENTATIONS for f in DEFAULT_FREQUENCIES]


def _check_image(image: torch.Tensor, min_size: int) -> None:
    if image.ndim != 4:
        raise ValueError(f"expected (B, C, H, W), got shape {tuple(image.shape)}")
    if min(image.shape[-2:]) < min_size:
        raise ValueError(
            f"image {tuple(image.shape[-2:])} smaller than the {min_size}x{min_size} minimum"
        )


def sobel(image: torch.Tensor) -> torch.Tensor:
    """Gradient magnitude ``sqrt(Gx**2 + Gy**2)`` with reflect-padded borders.

    Exactly zero wherever both gradients vanish; the gradient there is taken
    as zero rather than NaN.
    """
    _check_image(image, 3)
    kx = torch.tensor(SOBEL_X, dtype=image.dtype, device=image.device)
    kernels = torch.stack([kx, kx.T]).unsqueeze(1)  # (2, 1, 3, 3): Gx, Gy
    c = image.shape[1]
    padded = F.pad(image, (1, 1, 1, 1), mode="reflect")
    grads = F.conv2d(padded.reshape(-1, 1, *padded.shape[-2:]), kernels)
    sq = (grads**2).sum(dim=1, keepdim=True)
    mag = torch.where(sq > 0, torch.sqrt(sq.clamp_min(torch.finfo(sq.dtype).tiny)), torch.zeros_like(sq))
    return mag.reshape(image.shape[0], c, *image.shape[-2:])


def gabor_kernel(spec: GaborSpec, size: int = 11, dtype=torch.float64) -> torch.Tensor:
    """Real, zero-mean Gabor kernel of shape ``(size, size)``."""
    r = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    y, x = torch.meshgrid(r, r, indexing="ij")
    along = x * math.cos(spec.orientation) + y * math.sin(spec.orientation)
    envelope = torch.exp(-(x**2 + y**2) / (2 * spec.sigma**2))
    k = envelope * torch.cos(2 * math.pi * spec.frequency * along)
    return (k - k.mean()).to(dtype)


def gabor_bank(
    image: torch.Tensor, bank: Sequence[GaborSpec] | None = None, size: int = 11
) -> torch.Tensor:
    """One response channel per bank entry, reflect-padded; input must be 1-channel."""
    bank = default_bank() if bank is None else list(bank)
    if not bank:
        raise ValueError("Gabor bank is empty")
    _check_image(image, size // 2 + 1)
    if image.shape[1] != 1:
        raise ValueError("gabor_bank expects single-channel images")
    kernels = torch.stack([gabor_kernel(s, size, image.dtype) for s in bank]).unsqueeze(1)
    p = size // 2
    padded = F.pad(image, (p, p, p, p), mode="reflect")
    return F.conv2d(padded, kernels.to(image.device))


def d2_input(x: torch.Tensor, variant: str, bank: Sequence[GaborSpec] | None = None) -> torch.Tensor:
    """Operator maps fed to D2: Sobel edges or the Gabor texture stack."""
    if variant == "edge":
        return sobel(x)
    if variant == "texture":
        return gabor_bank(x, bank)
    raise ValueError(f"unknown D2 variant {variant!r}; expected 'edge' or 'texture'")


@dataclass
class DiscriminatorConfig:
    base_channels: int = 32
    depth: int = 3
    input_channels: int = 1
    negative_slope: float = 0.2

    def __post_init__(self):
        if min(self.base_channels, self.depth, self.input_channels) <= 0:
            raise ValueError("discriminator sizes must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class UNetDiscriminator(nn.Module):
    """Encoder/decoder discriminator with a global and a per-pixel head.

    The encoder halves the resolution ``depth`` times (4x4 stride-2 convs);
    the bottleneck is mean-pooled into the global logit. The decoder
    upsamples (nearest), concatenates the matching encoder map and convolves,
    ending in a 1x1 conv that gives per-pixel logits.
    """

    def __init__(self, config: DiscriminatorConfig, role: str = "D1"):
        super().__init__()
        if role not in ROLES:
            raise ValueError(f"unknown discriminator role {role!r}")
        self.config = config
        self.role = role
        widths = [config.base_channels * 2**i for i in range(config.depth + 1)]
        self.widths = widths
        self.stem = nn.Conv2d(config.input_channels, widths[0], 3, padding=1)
        self.down = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 4, stride=2, padding=1) for i in range(config.depth)
        )
        self.global_head = nn.Linear(widths[-1], 1)
        self.up = nn.ModuleList(
            nn.Conv2d(widths[i + 1] + widths[i], widths[i], 3, padding=1)
            for i in reversed(range(config.depth))
        )
        self.pixel_head = nn.Conv2d(widths[0], 1, 1)

    def _act(self, x):
        return F.leaky_relu(x, self.config.negative_slope)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns ``(pixel_logits (B, 1, H, W), global_logit (B,))``."""
        h, w = x.shape[-2:]
        factor = 2**self.config.depth
        if h % factor or w % factor:
            raise ValueError(f"input {h}x{w} is not divisible by 2**depth = {factor}")
        if x.shape[1] != self.config.input_channels:
            raise ValueError(
                f"expected {self.config.input_channels} input channels, got {x.shape[1]}"
            )
        skips = [self._act(self.stem(x))]
        for conv in self.down:
            skips.append(self._act(conv(skips[-1])))
        global_logit = self.global_head(skips[-1].mean(dim=(-2, -1))).squeeze(-1)

        d = skips[-1]
        for conv, skip in zip(self.up, reversed(skips[:-1])):
            d = F.interpolate(d, scale_factor=2, mode="nearest")
            d = self._act(conv(torch.cat([d, skip], dim=1)))
        return self.pixel_head(d), global_logit

    def score(self, x: torch.Tensor) -> torch.Tensor:
        """Per-sample decision logit: mean pixel logit averaged with the global one."""
        pixel, global_logit = self(x)
        return 0.5 * (pixel.mean(dim=(1, 2, 3)) + global_logit)


def discriminator_for(role: str, config: DiscriminatorConfig, bank=None) -> UNetDiscriminator:
    """Build D1 / D2-edge (1 channel) / D2-texture (one channel per Gabor filter)."""
    channels = {"D1": 1, "D2-edge": 1, "D2-texture": len(default_bank() if bank is None else bank)}
    cfg = DiscriminatorConfig(**{**config.to_dict(), "input_channels": channels[role]})
    return UNetDiscriminator(cfg, role)
