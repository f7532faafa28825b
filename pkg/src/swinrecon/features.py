"""Feature extractors shared by the perceptual loss and FID.

An extractor maps a ``(B, 1, H, W)`` image batch to a list of feature maps
(``layers``) and to one vector per image (``embed``). The default
:class:`ProxyExtractor` is a frozen, fixed-seed strided conv stack so nothing
has to be downloaded. :class:`ModuleExtractor` wraps any externally supplied
network, and :func:`torchvision_extractor` builds one from pretrained
torchvision weights when they are already cached locally.
"""

from __future__ import annotations

import os
from typing import Callable, Protocol, Sequence

import torch
import torch.nn.functional as F
from torch import nn


class FeatureExtractor(Protocol):
    def layers(self, images: torch.Tensor) -> list[torch.Tensor]: ...

    def embed(self, images: torch.Tensor) -> torch.Tensor: ...


class ProxyExtractor(nn.Module):
    """Three strided 3x3 convs with ReLU, weights drawn from a fixed seed."""

    def __init__(self, channels: Sequence[int] = (16, 32, 64), seed: int = 1234, in_channels: int = 1):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        cin = in_channels
        for cout in channels:
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            bound = (6.0 / (9 * cin)) ** 0.5  # He-uniform keeps activations O(1)
            with torch.no_grad():
                conv.weight.copy_(torch.empty_like(conv.weight).uniform_(-bound, bound, generator=gen))
                conv.bias.zero_()
            convs.append(conv)
            cin = cout
        self.convs = nn.ModuleList(convs)
        self.requires_grad_(False)
        self.eval()

    def layers(self, images: torch.Tensor) -> list[torch.Tensor]:
        x = images
        out = []
        for conv in self.convs:
            w, b = conv.weight.to(x.dtype), conv.bias.to(x.dtype)
            x = F.relu(F.conv2d(x, w, b, stride=2, padding=1))
            out.append(x)
        return out

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        return torch.cat([f.mean(dim=(-2, -1)) for f in self.layers(images)], dim=1)

    def forward(self, images):
        return self.layers(images)


class ModuleExtractor:
    """Adapter around an external network.

    ``network`` maps a batch to either one tensor or a list of tensors.
    ``preprocess`` (e.g. channel replication and ImageNet normalization) runs
    first. Embeddings are spatial means of every returned map.
    """

    def __init__(self, network: Callable, preprocess: Callable | None = None):
        self.network = network
        self.preprocess = preprocess

    def layers(self, images: torch.Tensor) -> list[torch.Tensor]:
        x = self.preprocess(images) if self.preprocess else images
        out = self.network(x)
        return list(out) if isinstance(out, (list, tuple)) else [out]

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        feats = []
        for f in self.layers(images):
            feats.append(f.mean(dim=(-2, -1)) if f.ndim == 4 else f.flatten(1))
        return torch.cat(feats, dim=1)


class IdentityExtractor:
    """The image itself as the only feature map."""

    def layers(self, images):
        return [images]

    def embed(self, images):
        return images.flatten(1)


def _imagenet_preprocess(size: int | None):
    mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
    std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)

    def prep(images):
        x = images.float().expand(-1, 3, -1, -1)
        if size is not None:
            x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
        return (x - mean) / std

    return prep


def torchvision_extractor(name: str = "vgg19") -> ModuleExtractor:
    """Pretrained VGG-19 (perceptual) or Inception-v3 (FID) features.

    Raises ``RuntimeError`` if torchvision or the cached weights are missing;
    nothing is downloaded.
    """
    try:
        import torchvision
    except ImportError as exc:
        raise RuntimeError("torchvision is not installed") from exc

    hub = torch.hub.get_dir()
    if name == "vgg19":
        weights = torchvision.models.VGG19_Weights.IMAGENET1K_V1
    elif name == "inception_v3":
        weights = torchvision.models.Inception_V3_Weights.IMAGENET1K_V1
    else:
        raise ValueError(f"unknown extractor {name!r}")
    cached = os.path.join(hub, "checkpoints", os.path.basename(weights.url))
    if not os.path.exists(cached):
        raise RuntimeError(f"pretrained weights for {name} not cached at {cached}")

    if name == "vgg19":
        net = torchvision.models.vgg19(weights=weights).features[:35].eval()
        net.requires_grad_(False)
        return ModuleExtractor(net, _imagenet_preprocess(None))

    net = torchvision.models.inception_v3(weights=weights, aux_logits=True).eval()
    net.fc = nn.Identity()
    net.requires_grad_(False)
    return ModuleExtractor(net, _imagenet_preprocess(299))
