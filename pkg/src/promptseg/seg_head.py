"""Prompt encoder and mask decoder.

Point prompts become positional-Fourier embeddings plus a learned
positive-label embedding; the dense prompt is downscaled convolutionally to
the feature grid. The decoder runs two two-way attention layers between an
unordered token set (one output mask token + the point tokens) and the image
features, then reads the mask out through a hypernetwork over a
transposed-conv upscaled feature map. One mask per call; no ambiguity head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, InputError
from .prompts import DensePrompt, PointPrompts


class Mode(str, Enum):
    MANUAL = "manual"
    SEMI_AUTOMATIC = "semi_automatic"


@dataclass
class PromptBundle:
    points: PointPrompts
    dense: DensePrompt | None
    mode: Mode


@dataclass
class MaskPrediction:
    logits: torch.Tensor  # (image_H, image_W)

    @property
    def probabilities(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)

    def binary(self, threshold: float = 0.5) -> torch.Tensor:
        return (self.probabilities >= threshold).to(torch.float32)


class FourierPositionEncoding(nn.Module):
    """Random-Fourier positional features for normalized 2-D coordinates."""

    def __init__(self, dim: int, scale: float = 1.0):
        super().__init__()
        if dim % 2 != 0:
            raise ConfigError("positional encoding dim must be even")
        self.register_buffer("gauss", torch.randn(2, dim // 2) * scale)

    def encode_normalized(self, coords: torch.Tensor) -> torch.Tensor:
        proj = (2.0 * coords - 1.0) @ self.gauss * (2.0 * math.pi)
        return torch.cat([torch.sin(proj), torch.cos(proj)], dim=-1)

    def grid(self, size: tuple[int, int]) -> torch.Tensor:
        h, w = size
        rows = (torch.arange(h, dtype=torch.float32) + 0.5) / h
        cols = (torch.arange(w, dtype=torch.float32) + 0.5) / w
        yy = rows[:, None].expand(h, w)
        xx = cols[None, :].expand(h, w)
        return self.encode_normalized(torch.stack([yy, xx], dim=-1))


class PromptEncoder(nn.Module):
    def __init__(self, embed_dim: int, image_size: int, grid: tuple[int, int], dense_scale: int = 4):
        super().__init__()
        self.embed_dim = embed_dim
        self.image_size = image_size
        self.grid = grid
        self.dense_resolution = (grid[0] * dense_scale, grid[1] * dense_scale)
        self.pe = FourierPositionEncoding(embed_dim)
        self.positive_embed = nn.Parameter(torch.zeros(embed_dim))
        self.no_mask_embed = nn.Parameter(torch.zeros(embed_dim))
        nn.init.trunc_normal_(self.positive_embed, std=0.02)
        nn.init.trunc_normal_(self.no_mask_embed, std=0.02)
        c1 = max(4, embed_dim // 64)
        c2 = max(16, embed_dim // 16)
        self.dense_down = nn.Sequential(
            nn.Conv2d(1, c1, kernel_size=2, stride=2),
            nn.GELU(),
            nn.Conv2d(c1, c2, kernel_size=2, stride=2),
            nn.GELU(),
            nn.Conv2d(c2, embed_dim, kernel_size=1),
        )
        for m in self.dense_down:
            if isinstance(m, nn.Conv2d):
                nn.init.zeros_(m.bias)

    def encode_points(self, points: PointPrompts) -> torch.Tensor:
        """(K, embed_dim) sparse embeddings for positive points."""
        coords = []
        for r, c, _ in points.points:
            if not (0 <= r < self.image_size and 0 <= c < self.image_size):
                raise InputError(f"point ({r}, {c}) outside image of size {self.image_size}")
            coords.append(((r + 0.5) / self.image_size, (c + 0.5) / self.image_size))
        pos = self.pe.encode_normalized(torch.tensor(coords, dtype=torch.float32))
        return pos + self.positive_embed

    def encode_dense(self, dense: DensePrompt | None) -> torch.Tensor:
        """(H, W, embed_dim) dense embedding at the feature grid."""
        if dense is None:
            h, w = self.grid
            return self.no_mask_embed.expand(h, w, self.embed_dim)
        if tuple(dense.values.shape) != self.dense_resolution:
            raise InputError(
                f"dense prompt {tuple(dense.values.shape)} != expected {self.dense_resolution}"
            )
        x = dense.values.to(torch.float32)[None, None]
        return self.dense_down(x)[0].permute(1, 2, 0)

    def image_pe(self) -> torch.Tensor:
        return self.pe.grid(self.grid)


class _DecoderAttention(nn.Module):
    """Multi-head attention with optional internal channel downsampling."""

    def __init__(self, dim: int, heads: int, downsample: int = 1):
        super().__init__()
        inner = dim // downsample
        self.heads = heads
        self.head_dim = inner // heads
        self.q = nn.Linear(dim, inner)
        self.k = nn.Linear(dim, inner)
        self.v = nn.Linear(dim, inner)
        self.out = nn.Linear(inner, dim)
        for lin in (self.q, self.k, self.v, self.out):
            nn.init.zeros_(lin.bias)

    def forward(self, q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        def split(x):
            return x.reshape(x.shape[0], self.heads, self.head_dim).transpose(0, 1)

        qh, kh, vh = split(self.q(q)), split(self.k(k)), split(self.v(v))
        attn = (qh @ kh.transpose(-2, -1)) / math.sqrt(self.head_dim)
        attn = attn.softmax(dim=-1)
        out = (attn @ vh).transpose(0, 1).reshape(q.shape[0], -1)
        return self.out(out)


class TwoWayBlock(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: float, downsample: int):
        super().__init__()
        self.self_attn = _DecoderAttention(dim, heads)
        self.ln1 = nn.LayerNorm(dim)
        self.cross_t2i = _DecoderAttention(dim, heads, downsample)
        self.ln2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))
        for m in self.mlp:
            if isinstance(m, nn.Linear):
                nn.init.zeros_(m.bias)
        self.ln3 = nn.LayerNorm(dim)
        self.cross_i2t = _DecoderAttention(dim, heads, downsample)
        self.ln4 = nn.LayerNorm(dim)

    def forward(self, tokens, image, token_pe, image_pe):
        q = tokens + token_pe
        tokens = self.ln1(tokens + self.self_attn(q, q, tokens))
        q = tokens + token_pe
        kv = image + image_pe
        tokens = self.ln2(tokens + self.cross_t2i(q, kv, image))
        tokens = self.ln3(tokens + self.mlp(tokens))
        q = image + image_pe
        kv = tokens + token_pe
        image = self.ln4(image + self.cross_i2t(q, kv, tokens))
        return tokens, image


class LayerNorm2d(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.LayerNorm(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class MaskDecoder(nn.Module):
    def __init__(self, dim: int, heads: int = 8, depth: int = 2, mlp_ratio: float = 8.0, downsample: int = 2):
        super().__init__()
        self.dim = dim
        self.mask_token = nn.Parameter(torch.zeros(1, dim))
        nn.init.trunc_normal_(self.mask_token, std=0.02)
        self.blocks = nn.ModuleList(
            TwoWayBlock(dim, heads, mlp_ratio, downsample) for _ in range(depth)
        )
        self.final_t2i = _DecoderAttention(dim, heads, downsample)
        self.ln_final = nn.LayerNorm(dim)
        up1 = dim // 4
        up2 = dim // 8
        self.upscale = nn.Sequential(
            nn.ConvTranspose2d(dim, up1, kernel_size=2, stride=2),
            LayerNorm2d(up1),
            nn.GELU(),
            nn.ConvTranspose2d(up1, up2, kernel_size=2, stride=2),
            nn.GELU(),
        )
        self.mask_mlp = nn.Sequential(
            nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, up2)
        )
        for m in list(self.upscale) + list(self.mask_mlp):
            if isinstance(m, (nn.Linear, nn.ConvTranspose2d)):
                nn.init.zeros_(m.bias)

    def forward(
        self,
        image_features: torch.Tensor,  # (H, W, dim)
        sparse: torch.Tensor,  # (K, dim)
        dense: torch.Tensor,  # (H, W, dim)
        image_pe: torch.Tensor,  # (H, W, dim)
        out_size: tuple[int, int],
    ) -> MaskPrediction:
        h, w, dim = image_features.shape
        if dim != self.dim or dense.shape != image_features.shape:
            raise InputError("decoder feature/dense shapes disagree")
        tokens = torch.cat([self.mask_token, sparse], dim=0)
        token_pe = tokens  # initial embeddings double as token positions
        image = (image_features + dense).reshape(h * w, dim)
        pe = image_pe.reshape(h * w, dim)
        for block in self.blocks:
            tokens, image = block(tokens, image, token_pe, pe)
        q = tokens + token_pe
        tokens = self.ln_final(tokens + self.final_t2i(q, image + pe, image))
        mask_embed = self.mask_mlp(tokens[0])
        fmap = image.reshape(h, w, dim).permute(2, 0, 1).unsqueeze(0)
        upscaled = self.upscale(fmap)[0]  # (dim/8, 4h, 4w)
        lowres = torch.einsum("c,chw->hw", mask_embed, upscaled)
        logits = F.interpolate(
            lowres[None, None], size=out_size, mode="bilinear", align_corners=False
        )[0, 0]
        return MaskPrediction(logits=logits)
