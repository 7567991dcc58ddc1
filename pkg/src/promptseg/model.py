"""Full model assembly and the mode pipeline.

``SegModel`` owns the three encoders, the prompt encoder and the mask
decoder. ``run_mode_pipeline`` executes one (image, class prompt) pass:
text -> patch embeddings -> similarity -> mask -> prompts -> conditioned
segmentation forward -> decoded mask, in either operating mode.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .backbone import (
    DEFAULT_TEMPLATE,
    DEFAULT_VOCAB,
    EncoderConfig,
    SegImageEncoder,
    TextEncoder,
    TextTokenizer,
    VLImageEncoder,
)
from .conditioning import SemanticInputs, configure_budget
from .errors import ConfigError, InputError
from .prompts import (
    PointPrompts,
    cosine_similarity_map,
    make_dense_prompt,
    sample_points,
    sample_points_from_gt,
    similarity_to_map,
    threshold_map,
)
from .seg_head import MaskDecoder, MaskPrediction, Mode, PromptBundle, PromptEncoder


@dataclass(frozen=True)
class TextConfig:
    width: int = 64
    depth: int = 1
    heads: int = 2
    context_length: int = 16
    vocab_size: int | None = None


@dataclass(frozen=True)
class ModelConfig:
    seg: EncoderConfig
    vl: EncoderConfig
    text: TextConfig = TextConfig()
    embed_dim: int = 64  # shared vision-language space (C_c)
    decoder_dim: int = 128
    decoder_heads: int = 8
    decoder_mlp_ratio: float = 8.0
    budget_c: int = 0
    budget_s: int = 0
    bottleneck_ratio: int = 4
    dense_scale: int = 4
    tau: float = 0.5
    k_points: int = 5
    vocab: tuple[str, ...] = DEFAULT_VOCAB
    template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if self.k_points < 1:
            raise ConfigError(f"k_points must be >= 1, got {self.k_points}")
        if not 0 <= self.budget_c <= self.vl.depth:
            raise ConfigError(f"budget_c={self.budget_c} outside [0, {self.vl.depth}]")
        if not 0 <= self.budget_s <= self.seg.depth:
            raise ConfigError(f"budget_s={self.budget_s} outside [0, {self.seg.depth}]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocab"] = list(self.vocab)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        d["seg"] = EncoderConfig(**d["seg"])
        d["vl"] = EncoderConfig(**d["vl"])
        d["text"] = TextConfig(**d.get("text", {}))
        if "vocab" in d:
            d["vocab"] = tuple(d["vocab"])
        return ModelConfig(**d)


def toy_config(
    image_size: int = 96,
    budget_c: int | None = None,
    budget_s: int | None = None,
    classes: tuple[str, ...] = DEFAULT_VOCAB,
) -> ModelConfig:
    """Desk-scale defaults: trains in minutes on a CPU."""
    seg = EncoderConfig(image_size=image_size, patch_size=12, depth=3, width=96, heads=4)
    vl = EncoderConfig(image_size=image_size, patch_size=12, depth=2, width=64, heads=4)
    return ModelConfig(
        seg=seg,
        vl=vl,
        embed_dim=48,
        decoder_dim=96,
        decoder_heads=4,
        decoder_mlp_ratio=4.0,
        bottleneck_ratio=2,
        budget_c=vl.depth if budget_c is None else budget_c,
        budget_s=seg.depth if budget_s is None else budget_s,
        vocab=classes,
    )


def vit_b_config() -> ModelConfig:
    """Published ViT-B shapes for parameter accounting."""
    return ModelConfig(
        seg=EncoderConfig(image_size=1024, patch_size=16, depth=12, width=768, heads=12),
        vl=EncoderConfig(image_size=224, patch_size=16, depth=12, width=768, heads=12),
        text=TextConfig(width=512, depth=12, heads=8, context_length=77, vocab_size=49408),
        embed_dim=512,
        decoder_dim=256,
        budget_c=12,
        budget_s=12,
    )


class SegModel(nn.Module):
    def __init__(self, config: ModelConfig, seed: int = 0, vl_encoder: nn.Module | None = None):
        """``vl_encoder`` is a swap hook: any module mapping an image to
        PatchEmbeddings in the shared space can replace the built-in one."""
        super().__init__()
        torch.manual_seed(seed)
        self.config = config
        self.plan = configure_budget(
            config.budget_c, config.budget_s, config.vl.depth, config.seg.depth
        )
        self.tokenizer = TextTokenizer(config.vocab)
        self.text_encoder = TextEncoder(
            self.tokenizer,
            width=config.text.width,
            depth=config.text.depth,
            heads=config.text.heads,
            embed_dim=config.embed_dim,
            context_length=config.text.context_length,
            vocab_size=config.text.vocab_size,
        )
        self.vl_encoder = vl_encoder or VLImageEncoder(config.vl, embed_dim=config.embed_dim)
        self.seg_encoder = SegImageEncoder(
            config.seg,
            self.plan,
            out_dim=config.decoder_dim,
            semantic_dim=config.embed_dim,
            bottleneck_ratio=config.bottleneck_ratio,
        )
        self.prompt_encoder = PromptEncoder(
            config.decoder_dim,
            image_size=config.seg.image_size,
            grid=config.seg.grid,
            dense_scale=config.dense_scale,
        )
        self.mask_decoder = MaskDecoder(
            config.decoder_dim,
            heads=config.decoder_heads,
            mlp_ratio=config.decoder_mlp_ratio,
        )
        for p in self.text_encoder.parameters():
            p.requires_grad_(False)

    @property
    def class_vocabulary(self) -> list[str]:
        return [w for w in self.config.vocab if w not in ("a", "photo", "of")]

    def semantic_inputs(self, image: torch.Tensor, class_name: str) -> SemanticInputs:
        text = self.text_encoder.encode(class_name, self.config.template)
        patches = self.vl_encoder(image)
        scores = cosine_similarity_map(patches, text)
        return SemanticInputs(patches=patches, scores=scores, text=text)

    def decode(
        self, image: torch.Tensor, semantic: SemanticInputs | None, bundle: PromptBundle
    ) -> MaskPrediction:
        features = self.seg_encoder(image, semantic)
        sparse = self.prompt_encoder.encode_points(bundle.points)
        dense = self.prompt_encoder.encode_dense(bundle.dense)
        return self.mask_decoder(
            features.values,
            sparse,
            dense,
            self.prompt_encoder.image_pe(),
            out_size=(self.config.seg.image_size, self.config.seg.image_size),
        )


@dataclass
class PipelineResult:
    prediction: MaskPrediction
    bundle: PromptBundle
    similarity: "SimilarityMap"  # noqa: F821
    mask: "BinaryPromptMask"  # noqa: F821
    point_source: str = "similarity"


def run_mode_pipeline(
    model: SegModel,
    image: torch.Tensor,
    class_name: str,
    mode: Mode | str,
    gt: torch.Tensor | None = None,
    user_points: list[tuple[int, int]] | None = None,
    seed: int = 0,
    k: int | None = None,
    tau: float | None = None,
) -> PipelineResult:
    """One full (image, class) pass in the given mode.

    Semi-automatic mode samples points from the thresholded similarity mask;
    manual mode takes them from user clicks or the ground-truth mask. Dense
    prompts come from the similarity mask in both modes.
    """
    mode = Mode(mode)
    cfg = model.config
    k = cfg.k_points if k is None else k
    tau = cfg.tau if tau is None else tau
    semantic = model.semantic_inputs(image, class_name)
    out_size = (cfg.seg.image_size, cfg.seg.image_size)
    sim_map = similarity_to_map(semantic.scores, semantic.patches.grid, out_size)
    mask = threshold_map(sim_map, tau)
    dense = make_dense_prompt(mask, model.prompt_encoder.dense_resolution)
    point_source = "similarity"
    if mode is Mode.SEMI_AUTOMATIC:
        points = sample_points(mask, k, seed, fallback=sim_map)
        if points.fallback_used:
            point_source = "similarity_fallback"
    else:
        if user_points:
            points = PointPrompts(points=[(int(r), int(c), 1) for r, c in user_points])
            point_source = "user"
        elif gt is not None:
            points = sample_points_from_gt(gt, k, seed)
            point_source = "gt"
        else:
            raise InputError("manual mode requires ground truth or user points")
    bundle = PromptBundle(points=points, dense=dense, mode=mode)
    semantic_used = semantic if model.plan.semantic_adapter_layers else None
    prediction = model.decode(image, semantic_used, bundle)
    return PipelineResult(
        prediction=prediction,
        bundle=bundle,
        similarity=sim_map,
        mask=mask,
        point_source=point_source,
    )
