"""Configurable ViT encoders.

Three encoders share the same transformer block family:

* ``SegImageEncoder`` — the segmentation-side image encoder. Every block
  carries a parallel adapter next to attention, and the deepest blocks of
  the budget plan carry semantic adapters next to the MLP.
* ``VLImageEncoder`` — the vision-language image encoder. Emits per-patch
  embeddings in the shared text/image space (the [CLS] token is kept
  internally and dropped from the output).
* ``TextEncoder`` — a small transformer over a closed word vocabulary,
  producing one global embedding per prompt. Embeddings are cached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import torch
from torch import nn

from .conditioning import BudgetPlan, ParallelAdapter, SemanticAdapter, SemanticInputs
from .errors import ConfigError, InputError


@dataclass(frozen=True)
class EncoderConfig:
    image_size: int
    patch_size: int
    depth: int
    width: int
    heads: int
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by patch_size {self.patch_size}"
            )
        if self.width % self.heads != 0:
            raise ConfigError(f"width {self.width} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")

    @property
    def grid(self) -> tuple[int, int]:
        side = self.image_size // self.patch_size
        return (side, side)

    @property
    def num_patches(self) -> int:
        h, w = self.grid
        return h * w


@dataclass
class PatchEmbeddings:
    """Per-patch embeddings (N, C) with their source grid, N = H*W row-major."""

    values: torch.Tensor
    grid: tuple[int, int]

    def __post_init__(self):
        h, w = self.grid
        if self.values.ndim != 2 or self.values.shape[0] != h * w:
            raise InputError(
                f"patch embeddings shape {tuple(self.values.shape)} does not match grid {self.grid}"
            )


@dataclass
class FeatureMap:
    """A (H, W, C) feature map tagged with the layer it came from."""

    values: torch.Tensor
    layer_index: int


def init_projection(weight: torch.Tensor) -> None:
    nn.init.trunc_normal_(weight, std=0.02)


class Attention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.qkv = nn.Linear(width, width * 3)
        self.proj = nn.Linear(width, width)
        init_projection(self.qkv.weight)
        init_projection(self.proj.weight)
        nn.init.zeros_(self.qkv.bias)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, c = x.shape
        qkv = self.qkv(x).reshape(n, 3, self.heads, self.head_dim).permute(1, 2, 0, 3)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(0, 1).reshape(n, c)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, width: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(width, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, width)
        init_projection(self.fc1.weight)
        init_projection(self.fc2.weight)
        nn.init.zeros_(self.fc1.bias)
        nn.init.zeros_(self.fc2.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm block: x + attn(ln1(x)); then x + mlp(ln2(x))."""

    def __init__(self, width: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = Attention(width, heads)
        self.ln2 = nn.LayerNorm(width)
        self.mlp = Mlp(width, int(width * mlp_ratio))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        x = x + self.mlp(self.ln2(x))
        return x


class AdaptedBlock(nn.Module):
    """Transformer block with a parallel adapter beside attention and an
    optional semantic adapter beside the MLP.

    Adapter deltas are added to the corresponding sub-layer output; with all
    gates at zero the arithmetic reduces to the plain block exactly.
    """

    def __init__(
        self,
        width: int,
        heads: int,
        mlp_ratio: float,
        grid: tuple[int, int],
        semantic_dim: int | None,
        bottleneck_ratio: int,
    ):
        super().__init__()
        self.grid = grid
        self.ln1 = nn.LayerNorm(width)
        self.attn = Attention(width, heads)
        self.ln2 = nn.LayerNorm(width)
        self.mlp = Mlp(width, int(width * mlp_ratio))
        self.parallel_adapter = ParallelAdapter(width, bottleneck_ratio)
        self.semantic_adapter = (
            SemanticAdapter(semantic_dim, width, bottleneck_ratio)
            if semantic_dim is not None
            else None
        )

    def forward(
        self,
        x: torch.Tensor,
        semantic: SemanticInputs | None,
        adapters_enabled: bool = True,
    ) -> torch.Tensor:
        a = self.attn(self.ln1(x))
        if adapters_enabled:
            a = a + self.parallel_adapter(x)
        h = x + a
        m = self.mlp(self.ln2(h))
        if adapters_enabled and self.semantic_adapter is not None and semantic is not None:
            gh, gw = self.grid
            h_map = h.reshape(gh, gw, -1)
            m = m + self.semantic_adapter(h_map, semantic).reshape(h.shape)
        return h + m


def _validate_image(image: torch.Tensor, config: EncoderConfig) -> torch.Tensor:
    if not torch.is_tensor(image):
        image = torch.as_tensor(image, dtype=torch.float32)
    image = image.to(torch.float32)
    if image.shape != (3, config.image_size, config.image_size):
        raise ConfigError(
            f"expected image of shape (3, {config.image_size}, {config.image_size}), "
            f"got {tuple(image.shape)}"
        )
    if image.numel() and (image.min() < 0.0 or image.max() > 1.0):
        raise InputError("image values must lie in [0, 1]")
    return image


class VLImageEncoder(nn.Module):
    """Vision-language image encoder: image -> per-patch embeddings (N, C_c)."""

    def __init__(self, config: EncoderConfig, embed_dim: int):
        super().__init__()
        self.config = config
        self.embed_dim = embed_dim
        self.patch_embed = nn.Conv2d(
            3, config.width, kernel_size=config.patch_size, stride=config.patch_size
        )
        init_projection(self.patch_embed.weight)
        nn.init.zeros_(self.patch_embed.bias)
        self.cls_token = nn.Parameter(torch.zeros(1, config.width))
        init_projection(self.cls_token)
        self.pos_embed = nn.Parameter(torch.zeros(config.num_patches + 1, config.width))
        init_projection(self.pos_embed)
        self.blocks = nn.ModuleList(
            TransformerBlock(config.width, config.heads, config.mlp_ratio)
            for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(config.width)
        self.proj = nn.Linear(config.width, embed_dim, bias=False)
        init_projection(self.proj.weight)

    def patch_tokens(self, image: torch.Tensor) -> torch.Tensor:
        """Raw patch-projection output (N, width), before [CLS]/positions."""
        image = _validate_image(image, self.config)
        x = self.patch_embed(image.unsqueeze(0))[0]  # (width, H, W)
        return x.flatten(1).transpose(0, 1)  # row-major (N, width)

    def forward(self, image: torch.Tensor) -> PatchEmbeddings:
        tokens = self.patch_tokens(image)
        x = torch.cat([self.cls_token, tokens], dim=0) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        x = self.norm(x)
        patches = self.proj(x[1:])  # discard [CLS]
        return PatchEmbeddings(values=patches, grid=self.config.grid)


class SegImageEncoder(nn.Module):
    """Segmentation-side image encoder with adapter hook points.

    The final feature map passes through a small convolutional neck that
    projects from the transformer width down to the decoder dimension; the
    neck belongs to the frozen backbone group.
    """

    def __init__(
        self,
        config: EncoderConfig,
        plan: BudgetPlan,
        out_dim: int,
        semantic_dim: int,
        bottleneck_ratio: int = 4,
    ):
        super().__init__()
        plan.check(seg_depth=config.depth)
        self.config = config
        self.plan = plan
        self.out_dim = out_dim
        self.patch_embed = nn.Conv2d(
            3, config.width, kernel_size=config.patch_size, stride=config.patch_size
        )
        init_projection(self.patch_embed.weight)
        nn.init.zeros_(self.patch_embed.bias)
        self.pos_embed = nn.Parameter(torch.zeros(config.num_patches, config.width))
        init_projection(self.pos_embed)
        self.blocks = nn.ModuleList(
            AdaptedBlock(
                config.width,
                config.heads,
                config.mlp_ratio,
                config.grid,
                semantic_dim if i in plan.semantic_adapter_layers else None,
                bottleneck_ratio,
            )
            for i in range(config.depth)
        )
        self.norm = nn.LayerNorm(config.width)
        self.neck_proj = nn.Conv2d(config.width, out_dim, kernel_size=1, bias=False)
        self.neck_ln1 = nn.LayerNorm(out_dim)
        self.neck_conv = nn.Conv2d(out_dim, out_dim, kernel_size=3, padding=1, bias=False)
        self.neck_ln2 = nn.LayerNorm(out_dim)
        init_projection(self.neck_proj.weight)
        init_projection(self.neck_conv.weight)

    def adapter_modules(self) -> Iterable[nn.Module]:
        for block in self.blocks:
            yield block.parallel_adapter
            if block.semantic_adapter is not None:
                yield block.semantic_adapter

    def zero_adapter_gates(self) -> None:
        with torch.no_grad():
            for adapter in self.adapter_modules():
                adapter.gate.zero_()

    def forward(
        self,
        image: torch.Tensor,
        semantic: SemanticInputs | None = None,
        adapters_enabled: bool = True,
    ) -> FeatureMap:
        image = _validate_image(image, self.config)
        x = self.patch_embed(image.unsqueeze(0))[0].flatten(1).transpose(0, 1)
        x = x + self.pos_embed
        for block in self.blocks:
            x = block(x, semantic, adapters_enabled)
        x = self.norm(x)
        gh, gw = self.config.grid
        fmap = x.reshape(gh, gw, self.config.width).permute(2, 0, 1).unsqueeze(0)
        fmap = self.neck_proj(fmap)
        fmap = self.neck_ln1(fmap.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
        fmap = self.neck_conv(fmap)
        fmap = self.neck_ln2(fmap.permute(0, 2, 3, 1))[0]  # (H, W, out_dim)
        return FeatureMap(values=fmap, layer_index=self.config.depth)


DEFAULT_TEMPLATE = "a photo of a {}"

# Closed-set vocabulary: template words plus the synthetic class names.
DEFAULT_VOCAB = (
    "a", "photo", "of",
    "circle", "square", "triangle", "cross", "ring", "bar",
)


class TextTokenizer:
    """Lowercase whitespace tokenizer over a fixed word list.

    id 0 is padding, id 1 the learned unknown token; words follow in order.
    """

    PAD = 0
    UNK = 1

    def __init__(self, vocab: Iterable[str] = DEFAULT_VOCAB):
        self.words = list(dict.fromkeys(w.lower() for w in vocab))
        self._ids = {w: i + 2 for i, w in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words) + 2

    def encode(self, text: str) -> list[int]:
        return [self._ids.get(w, self.UNK) for w in text.lower().split()]


class TextEncoder(nn.Module):
    """Prompt -> one global embedding (C_c,). Always run frozen; results are
    cached per (prompt, template) so repeated classes never re-encode."""

    def __init__(
        self,
        tokenizer: TextTokenizer,
        width: int,
        depth: int,
        heads: int,
        embed_dim: int,
        context_length: int = 16,
        vocab_size: int | None = None,
    ):
        super().__init__()
        self.tokenizer = tokenizer
        self.context_length = context_length
        self.embed_dim = embed_dim
        size = max(len(tokenizer), vocab_size or 0)
        self.token_embed = nn.Embedding(size, width)
        init_projection(self.token_embed.weight)
        self.pos_embed = nn.Parameter(torch.zeros(context_length, width))
        init_projection(self.pos_embed)
        self.blocks = nn.ModuleList(
            TransformerBlock(width, heads, 4.0) for _ in range(depth)
        )
        self.norm = nn.LayerNorm(width)
        self.proj = nn.Linear(width, embed_dim, bias=False)
        init_projection(self.proj.weight)
        self._cache: dict[tuple[str, str], torch.Tensor] = {}
        self.encode_count = 0

    def clear_cache(self) -> None:
        self._cache.clear()

    def encode(self, prompt: str, template: str = DEFAULT_TEMPLATE) -> torch.Tensor:
        if not prompt or not prompt.strip():
            raise InputError("text prompt must be non-empty")
        key = (prompt, template)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        text = template.format(prompt)
        ids = self.tokenizer.encode(text)[: self.context_length]
        with torch.no_grad():
            x = self.token_embed(torch.tensor(ids, dtype=torch.long))
            x = x + self.pos_embed[: len(ids)]
            for block in self.blocks:
                x = block(x)
            x = self.norm(x)
            # pool at the final token: with the class name last in the
            # template, the pooled state is dominated by the class word
            embedding = self.proj(x[-1])
        self.encode_count += 1
        self._cache[key] = embedding
        return embedding

    forward = encode


@dataclass
class ParamEntry:
    name: str
    total_count: int
    trainable_count: int

    def __post_init__(self):
        if self.trainable_count > self.total_count:
            raise ConfigError(
                f"{self.name}: trainable {self.trainable_count} exceeds total {self.total_count}"
            )


@dataclass
class ParamReport:
    entries: list[ParamEntry] = field(default_factory=list)

    @property
    def total(self) -> int:
        return sum(e.total_count for e in self.entries)

    @property
    def trainable(self) -> int:
        return sum(e.trainable_count for e in self.entries)

    def entry(self, name: str) -> ParamEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "components": [
                {"name": e.name, "total": e.total_count, "trainable": e.trainable_count}
                for e in self.entries
            ],
            "total": self.total,
            "trainable": self.trainable,
        }

    def format_table(self) -> str:
        w = max((len(e.name) for e in self.entries), default=4)
        lines = [f"{'component':<{w}}  {'total':>12}  {'trainable':>12}"]
        for e in self.entries:
            lines.append(f"{e.name:<{w}}  {e.total_count:>12,}  {e.trainable_count:>12,}")
        lines.append(f"{'TOTAL':<{w}}  {self.total:>12,}  {self.trainable:>12,}")
        return "\n".join(lines)


def count_parameters(
    components: Mapping[str, nn.Module],
    trainable: Callable[[str, torch.nn.Parameter], bool] | None = None,
) -> ParamReport:
    """Exact per-component parameter counts.

    ``trainable`` defaults to the parameter's requires_grad flag; pass a
    predicate over (qualified name, parameter) to count a hypothetical policy.
    """
    entries = []
    for name, module in components.items():
        total = 0
        train = 0
        for pname, p in module.named_parameters():
            total += p.numel()
            is_train = trainable(f"{name}.{pname}", p) if trainable else p.requires_grad
            if is_train:
                train += p.numel()
        entries.append(ParamEntry(name, total, train))
    return ParamReport(entries)
