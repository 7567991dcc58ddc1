"""Semantic and parallel adapters, and the (C, S) co-adaptation budget.

A semantic adapter sits beside a transformer MLP. It receives the shared
vision-language signals (patch embeddings V, similarity scores s, text
embedding t), fuses vision and similarity by broadcasted addition, projects
both streams to the backbone channel width, aligns them to the feature grid,
adds them onto the incoming features, and passes the sum through a gated
bottleneck. Parallel adapters sit beside attention and apply the same gated
bottleneck without semantic inputs.

The gate scalar starts at zero, so a freshly built model is exactly the
no-adapter model; the bottleneck projections start non-zero so the gate
itself receives gradient and the pathway can open during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, InputError


@dataclass
class SemanticInputs:
    """The (V, s, t) triple consumed by semantic adapters.

    ``patches.values`` is (N, C_c), ``scores`` is (N, 1) and ``text`` (C_c,).
    """

    patches: "PatchEmbeddings"  # noqa: F821 - defined in backbone, kept untyped to avoid a cycle
    scores: torch.Tensor
    text: torch.Tensor

    def __post_init__(self):
        n = self.patches.values.shape[0]
        if self.scores.shape != (n, 1):
            raise InputError(
                f"similarity scores shape {tuple(self.scores.shape)} does not match N={n}"
            )
        if self.text.ndim != 1:
            raise InputError("text embedding must be a flat vector")


def fuse_vision_similarity(values: torch.Tensor, scores: torch.Tensor) -> torch.Tensor:
    """U = V + s, the per-patch score broadcast across channels."""
    if values.ndim != 2 or scores.shape != (values.shape[0], 1):
        raise InputError(
            f"cannot fuse shapes {tuple(values.shape)} and {tuple(scores.shape)}"
        )
    return values + scores


def bilinear_resize(grid_map: torch.Tensor, target: tuple[int, int]) -> torch.Tensor:
    """Differentiable bilinear resize of an (H, W, C) map to (target_h, target_w, C).

    Uses half-pixel-center sampling; identity when sizes already match.
    """
    h, w = grid_map.shape[:2]
    if (h, w) == tuple(target):
        return grid_map
    x = grid_map.permute(2, 0, 1).unsqueeze(0)
    x = F.interpolate(x, size=tuple(target), mode="bilinear", align_corners=False)
    return x[0].permute(1, 2, 0)


def project_and_align(
    fused: torch.Tensor,
    projection: nn.Linear,
    grid: tuple[int, int],
    target: tuple[int, int],
) -> torch.Tensor:
    """Project fused vision-similarity features to backbone width and resize.

    fused (N, C_c) -> (N, C_l) -> row-major (H, W, C_l) -> bilinear to target.
    """
    h, w = grid
    if fused.ndim != 2 or fused.shape[0] != h * w:
        raise InputError(f"fused features {tuple(fused.shape)} do not match grid {grid}")
    if projection.in_features != fused.shape[1]:
        raise ConfigError(
            f"projection expects {projection.in_features} channels, got {fused.shape[1]}"
        )
    projected = projection(fused).reshape(h, w, -1)
    return bilinear_resize(projected, target)


def project_text(
    text: torch.Tensor, projection: nn.Linear, target: tuple[int, int]
) -> torch.Tensor:
    """t' = GELU(W_t t), tiled to (target_h, target_w, C_l)."""
    if text.ndim != 1:
        raise InputError("text embedding must be a flat vector")
    if projection.in_features != text.shape[0]:
        raise ConfigError(
            f"projection expects {projection.in_features} channels, got {text.shape[0]}"
        )
    t = F.gelu(projection(text))
    return t.expand(target[0], target[1], t.shape[0])


class _GatedBottleneck(nn.Module):
    """gate * up(GELU(down(x))), the shared tail of both adapter kinds."""

    def __init__(self, width: int, ratio: int):
        super().__init__()
        hidden = max(1, width // ratio)
        self.down = nn.Linear(width, hidden)
        self.act = nn.GELU()
        self.up = nn.Linear(hidden, width)
        self.gate = nn.Parameter(torch.zeros(()))
        nn.init.zeros_(self.down.bias)
        nn.init.zeros_(self.up.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.gate * self.up(self.act(self.down(x)))


class ParallelAdapter(nn.Module):
    """Adapter beside attention: delta = gate * up(GELU(down(F)))."""

    def __init__(self, width: int, ratio: int = 4):
        super().__init__()
        self.bottleneck = _GatedBottleneck(width, ratio)

    @property
    def gate(self) -> nn.Parameter:
        return self.bottleneck.gate

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.bottleneck(features)


class SemanticAdapter(nn.Module):
    """Adapter beside the MLP, fed by the vision-language triple.

    Each adapter owns its own projection pair, so per-layer conditioning can
    specialize independently.
    """

    def __init__(self, semantic_dim: int, width: int, ratio: int = 4):
        super().__init__()
        self.vision_proj = nn.Linear(semantic_dim, width)
        self.text_proj = nn.Linear(semantic_dim, width)
        nn.init.zeros_(self.vision_proj.bias)
        nn.init.zeros_(self.text_proj.bias)
        self.bottleneck = _GatedBottleneck(width, ratio)

    @property
    def gate(self) -> nn.Parameter:
        return self.bottleneck.gate

    def conditioned_features(
        self, features: torch.Tensor, semantic: SemanticInputs
    ) -> torch.Tensor:
        if features.ndim != 3:
            raise InputError("semantic adapter expects an (H, W, C) feature map")
        target = (features.shape[0], features.shape[1])
        fused = fuse_vision_similarity(semantic.patches.values, semantic.scores)
        u = project_and_align(fused, self.vision_proj, semantic.patches.grid, target)
        t = project_text(semantic.text, self.text_proj, target)
        return features + u + t

    def forward(self, features: torch.Tensor, semantic: SemanticInputs) -> torch.Tensor:
        return self.bottleneck(self.conditioned_features(features, semantic))


@dataclass(frozen=True)
class BudgetPlan:
    """Which layers participate in co-adaptation.

    ``trainable_vl_attention_layers``: attention blocks of the VL image
    encoder whose weights train (the C budget, deepest blocks first).
    ``semantic_adapter_layers``: segmentation blocks carrying a semantic
    adapter (the S budget, deepest first). Parallel adapters go on every
    segmentation block regardless.
    """

    c: int
    s: int
    trainable_vl_attention_layers: tuple[int, ...]
    semantic_adapter_layers: tuple[int, ...]
    parallel_adapter_layers: tuple[int, ...]

    def check(self, seg_depth: int | None = None, vl_depth: int | None = None) -> None:
        if seg_depth is not None:
            for i in self.semantic_adapter_layers + self.parallel_adapter_layers:
                if not 0 <= i < seg_depth:
                    raise ConfigError(f"adapter layer {i} outside depth {seg_depth}")
        if vl_depth is not None:
            for i in self.trainable_vl_attention_layers:
                if not 0 <= i < vl_depth:
                    raise ConfigError(f"trainable attention layer {i} outside depth {vl_depth}")


def configure_budget(c: int, s: int, vl_depth: int, seg_depth: int) -> BudgetPlan:
    """Build the placement plan for a (C, S) budget, deepest layers first."""
    if not 0 <= c <= vl_depth:
        raise ConfigError(f"C={c} outside [0, {vl_depth}]")
    if not 0 <= s <= seg_depth:
        raise ConfigError(f"S={s} outside [0, {seg_depth}]")
    return BudgetPlan(
        c=c,
        s=s,
        trainable_vl_attention_layers=tuple(range(vl_depth - c, vl_depth)),
        semantic_adapter_layers=tuple(range(seg_depth - s, seg_depth)),
        parallel_adapter_layers=tuple(range(seg_depth)),
    )
