"""Shifted-window transformer generator.

IM (3x3 conv, 1 -> C) feeds a cascade of residual Swin transformer blocks
(RSTBs), each a stack of Swin transformer layers (STLs) followed by a 3x3
conv and a residual add; OM (3x3 conv, C -> 1) maps back to image space and
the input is added back (global residual). The network never changes the
spatial resolution.

Tensors follow torch conventions: images and feature maps are ``(B, C, H, W)``,
token sequences ``(B, H*W, C)`` and windows ``(B*nW, w*w, C)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

MASK_VALUE = -1.0e4


@dataclass
class GeneratorConfig:
    num_rstb: int = 6
    stl_per_rstb: int = 6
    embed_dim: int = 180
    window_size: int = 8
    num_heads: int = 6
    mlp_ratio: float = 2.0
    input_size: tuple[int, int] = (96, 96)
    in_channels: int = 1
    zero_init_output: bool = False

    def __post_init__(self):
        self.input_size = tuple(int(s) for s in self.input_size)
        for name in ("num_rstb", "stl_per_rstb", "embed_dim", "window_size", "num_heads"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.mlp_ratio <= 0:
            raise ValueError("mlp_ratio must be positive")
        if self.embed_dim % self.num_heads:
            raise ValueError(
                f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}"
            )
        check_divisible(self.input_size, self.window_size)

    @property
    def shift_size(self) -> int:
        return self.window_size // 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d


def check_divisible(size, window_size: int) -> None:
    h, w = size
    if h % window_size or w % window_size:
        raise ValueError(
            f"spatial size {h}x{w} is not divisible by window size {window_size}"
        )


# -- token <-> feature map ----------------------------------------------------


def patch_embed(features: torch.Tensor) -> torch.Tensor:
    """``(B, C, H, W)`` -> ``(B, H*W, C)`` with 1x1 patches."""
    return features.flatten(2).transpose(1, 2)


def patch_unembed(tokens: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Inverse of :func:`patch_embed`."""
    b, n, c = tokens.shape
    h, w = size
    if n != h * w:
        raise ValueError(f"{n} tokens cannot be unembedded to {h}x{w}")
    return tokens.transpose(1, 2).reshape(b, c, h, w)


def window_partition(x: torch.Tensor, window_size: int) -> torch.Tensor:
    """Tile ``(B, H, W, C)`` into ``(B*nW, w*w, C)`` row-major windows."""
    b, h, w, c = x.shape
    check_divisible((h, w), window_size)
    ws = window_size
    x = x.view(b, h // ws, ws, w // ws, ws, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, ws * ws, c)


def window_reverse(windows: torch.Tensor, window_size: int, h: int, w: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`."""
    ws = window_size
    c = windows.shape[-1]
    x = windows.view(-1, h // ws, w // ws, ws, ws, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, h, w, c)


# -- attention ------------------------------------------------------------------


def relative_position_index(window_size: int) -> torch.Tensor:
    """``(w*w, w*w)`` indices into a ``(2w-1)**2`` bias table."""
    ws = window_size
    coords = torch.stack(torch.meshgrid(torch.arange(ws), torch.arange(ws), indexing="ij"))
    coords = coords.flatten(1)
    rel = (coords[:, :, None] - coords[:, None, :]).permute(1, 2, 0)
    rel = rel + (ws - 1)
    return rel[..., 0] * (2 * ws - 1) + rel[..., 1]


def shifted_window_mask(h: int, w: int, window_size: int, shift: int) -> torch.Tensor:
    """Additive attention masks ``(nW, w*w, w*w)`` for the cyclically shifted map.

    After rolling by ``(-shift, -shift)`` a window may hold tokens that were
    far apart before the roll; such pairs get ``MASK_VALUE``. ``shift=0``
    gives all-zero masks.
    """
    if shift < 0 or shift >= window_size:
        raise ValueError(f"shift must lie in [0, window_size), got {shift}")
    check_divisible((h, w), window_size)
    n_windows = (h // window_size) * (w // window_size)
    n = window_size * window_size
    if shift == 0:
        return torch.zeros(n_windows, n, n)

    region = torch.zeros(1, h, w, 1)
    bands = (slice(0, -window_size), slice(-window_size, -shift), slice(-shift, None))
    label = 0
    for hs in bands:
        for ws in bands:
            region[:, hs, ws, :] = label
            label += 1
    region_windows = window_partition(region, window_size).squeeze(-1)
    diff = region_windows[:, None, :] - region_windows[:, :, None]
    return torch.where(diff != 0, MASK_VALUE, 0.0)


def windowed_attention(
    tokens: torch.Tensor,
    qkv_weight: torch.Tensor,
    qkv_bias: Optional[torch.Tensor],
    proj_weight: torch.Tensor,
    proj_bias: Optional[torch.Tensor],
    num_heads: int,
    bias: Optional[torch.Tensor] = None,
    attn_mask: Optional[torch.Tensor] = None,
    return_attn: bool = False,
):
    """Multi-head self-attention inside each window.

    ``tokens`` is ``(B*nW, N, C)``; ``bias`` is the relative-position bias
    ``(heads, N, N)``; ``attn_mask`` is ``(nW, N, N)`` and is tiled over the
    batch. With ``return_attn`` the softmax weights ``(B*nW, heads, N, N)``
    are returned as well.
    """
    bw, n, c = tokens.shape
    if c % num_heads:
        raise ValueError(f"channels {c} not divisible by {num_heads} heads")
    head_dim = c // num_heads

    qkv = F.linear(tokens, qkv_weight, qkv_bias)
    qkv = qkv.reshape(bw, n, 3, num_heads, head_dim).permute(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]

    logits = (q * head_dim**-0.5) @ k.transpose(-2, -1)
    if bias is not None:
        logits = logits + bias.unsqueeze(0)
    if attn_mask is not None:
        n_windows = attn_mask.shape[0]
        if attn_mask.shape[1:] != (n, n) or bw % n_windows:
            raise ValueError(
                f"mask of shape {tuple(attn_mask.shape)} does not fit {bw} windows of {n} tokens"
            )
        logits = logits.view(bw // n_windows, n_windows, num_heads, n, n)
        logits = logits + attn_mask.to(logits.dtype)[None, :, None]
        logits = logits.view(bw, num_heads, n, n)
    attn = logits.softmax(dim=-1)

    out = (attn @ v).transpose(1, 2).reshape(bw, n, c)
    out = F.linear(out, proj_weight, proj_bias)
    return (out, attn) if return_attn else out


class WindowAttention(nn.Module):
    def __init__(self, dim: int, window_size: int, num_heads: int):
        super().__init__()
        self.dim = dim
        self.window_size = window_size
        self.num_heads = num_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.relative_position_bias_table = nn.Parameter(
            torch.zeros((2 * window_size - 1) ** 2, num_heads)
        )
        self.register_buffer(
            "relative_position_index", relative_position_index(window_size), persistent=False
        )

    def position_bias(self) -> torch.Tensor:
        n = self.window_size**2
        table = self.relative_position_bias_table[self.relative_position_index.view(-1)]
        return table.view(n, n, self.num_heads).permute(2, 0, 1)

    def forward(self, x, mask=None, return_attn=False):
        return windowed_attention(
            x,
            self.qkv.weight,
            self.qkv.bias,
            self.proj.weight,
            self.proj.bias,
            self.num_heads,
            bias=self.position_bias(),
            attn_mask=mask,
            return_attn=return_attn,
        )


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class SwinLayer(nn.Module):
    """Pre-norm Swin transformer layer (STL).

    Even ``layer_index`` uses plain windows (W-MSA), odd ones shift the map
    by ``window_size // 2`` first (SW-MSA).
    """

    def __init__(self, dim, input_size, num_heads, window_size, mlp_ratio, layer_index):
        super().__init__()
        self.input_size = tuple(input_size)
        self.window_size = window_size
        self.layer_index = layer_index
        self.shift_size = 0 if layer_index % 2 == 0 else window_size // 2
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window_size, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))
        self._mask_cache: dict[tuple[int, int], torch.Tensor] = {}

    def attention_mask(self, size, device, dtype):
        if self.shift_size == 0:
            return None
        key = tuple(size)
        if key not in self._mask_cache:
            self._mask_cache[key] = shifted_window_mask(*size, self.window_size, self.shift_size)
        return self._mask_cache[key].to(device=device, dtype=dtype)

    def forward(self, x: torch.Tensor, size: Optional[tuple[int, int]] = None) -> torch.Tensor:
        h, w = size or self.input_size
        b, n, c = x.shape
        if n != h * w:
            raise ValueError(f"expected {h * w} tokens, got {n}")
        ws, s = self.window_size, self.shift_size

        shortcut = x
        x = self.norm1(x).view(b, h, w, c)
        if s:
            x = torch.roll(x, shifts=(-s, -s), dims=(1, 2))
        windows = window_partition(x, ws)
        windows = self.attn(windows, mask=self.attention_mask((h, w), x.device, x.dtype))
        x = window_reverse(windows, ws, h, w)
        if s:
            x = torch.roll(x, shifts=(s, s), dims=(1, 2))
        x = shortcut + x.reshape(b, n, c)
        return x + self.mlp(self.norm2(x))


class RSTB(nn.Module):
    """Residual Swin transformer block: STL stack -> 3x3 conv -> + input."""

    def __init__(self, dim, input_size, depth, num_heads, window_size, mlp_ratio):
        super().__init__()
        self.layers = nn.ModuleList(
            SwinLayer(dim, input_size, num_heads, window_size, mlp_ratio, i) for i in range(depth)
        )
        self.conv = nn.Conv2d(dim, dim, 3, padding=1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        size = features.shape[-2:]
        x = patch_embed(features)
        for layer in self.layers:
            x = layer(x, size)
        return self.conv(patch_unembed(x, size)) + features


class SwinGenerator(nn.Module):
    """``x_hat = OM(RSTB_n(...RSTB_1(IM(x_u)))) + x_u``."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        c = config.embed_dim
        self.conv_first = nn.Conv2d(config.in_channels, c, 3, padding=1)
        self.blocks = nn.ModuleList(
            RSTB(
                c,
                config.input_size,
                config.stl_per_rstb,
                config.num_heads,
                config.window_size,
                config.mlp_ratio,
            )
            for _ in range(config.num_rstb)
        )
        self.conv_last = nn.Conv2d(c, config.in_channels, 3, padding=1)
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
            elif isinstance(m, nn.Conv2d):
                m.reset_parameters()
                nn.init.zeros_(m.bias)
            elif isinstance(m, WindowAttention):
                nn.init.zeros_(m.relative_position_bias_table)
        if self.config.zero_init_output:
            nn.init.zeros_(self.conv_last.weight)
            nn.init.zeros_(self.conv_last.bias)

    def forward(self, x_u: torch.Tensor) -> torch.Tensor:
        if x_u.ndim != 4:
            raise ValueError(f"expected (B, C, H, W) input, got shape {tuple(x_u.shape)}")
        h, w = x_u.shape[-2:]
        ws = self.config.window_size
        if h % ws or w % ws:
            raise ValueError(
                f"input {h}x{w} is not divisible by window size {ws}; "
                f"crop or pad to a multiple of {ws}"
            )
        features = self.conv_first(x_u)
        for block in self.blocks:
            features = block(features)
        return self.conv_last(features) + x_u


def count_params(params) -> int:
    """Total scalar count of a module or a name -> array mapping."""
    if isinstance(params, nn.Module):
        return sum(p.numel() for p in params.parameters())
    return sum(math.prod(tuple(v.shape)) for v in params.values())

