"""Joint optimization under the freezing policy.

Trainable groups: the prompt encoder, the mask decoder, every adapter, and
the attention weights of the top-C vision-language encoder blocks. Frozen:
all remaining segmentation-backbone weights, the VL encoder's MLP blocks and
embeddings, and the text encoder. Supervision touches only the decoded mask;
the thresholded prompt mask carries no gradient, so the VL encoder learns
exclusively through the injected feature pathway.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .backbone import ParamEntry, ParamReport
from .checkpoint import save_checkpoint
from .errors import ConfigError, InputError, NaNLossError
from .model import SegModel, run_mode_pipeline
from .rng import substream_seed
from .seg_head import Mode

LOGIT_CLAMP = 15.0
SMOOTH_EPS = 1.0


@dataclass(frozen=True)
class LossSwitches:
    bce: bool = True
    dice: bool = True
    iou: bool = True

    def __post_init__(self):
        if not (self.bce or self.dice or self.iou):
            raise ConfigError("at least one loss term must be enabled")


@dataclass
class LossBreakdown:
    total: torch.Tensor
    terms: dict[str, float]


def segmentation_loss(
    logits: torch.Tensor, gt: torch.Tensor, switches: LossSwitches = LossSwitches()
) -> LossBreakdown:
    """BCE + Dice + soft-IoU over one logit map, each term optional.

    Dice = 1 - (2*sum(p*g)+eps) / (sum(p)+sum(g)+eps) and
    IoU  = 1 - (sum(p*g)+eps) / (sum(p)+sum(g)-sum(p*g)+eps), eps = 1,
    with p = sigmoid(logits) clamped to +-15 beforehand.
    """
    if logits.shape != gt.shape:
        raise InputError(f"logits {tuple(logits.shape)} != gt {tuple(gt.shape)}")
    gt = gt.to(logits.dtype)
    if not torch.logical_or(gt == 0.0, gt == 1.0).all():
        raise InputError("ground truth must be binary")
    logits = logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    p = torch.sigmoid(logits)
    inter = (p * gt).sum()
    p_sum = p.sum()
    g_sum = gt.sum()
    terms: dict[str, torch.Tensor] = {}
    if switches.bce:
        terms["bce"] = torch.nn.functional.binary_cross_entropy_with_logits(logits, gt)
    if switches.dice:
        terms["dice"] = 1.0 - (2.0 * inter + SMOOTH_EPS) / (p_sum + g_sum + SMOOTH_EPS)
    if switches.iou:
        terms["iou"] = 1.0 - (inter + SMOOTH_EPS) / (p_sum + g_sum - inter + SMOOTH_EPS)
    total = sum(terms.values())
    return LossBreakdown(
        total=total, terms={k: float(v.detach()) for k, v in terms.items()}
    )


TRAINABLE_GROUPS = ("prompt_encoder", "mask_decoder", "adapters", "vl_attention")
FROZEN_GROUPS = ("seg_backbone", "vl_other", "text_encoder")

_ADAPTER_RE = re.compile(r"^seg_encoder\.blocks\.\d+\.(parallel_adapter|semantic_adapter)\.")
_VL_BLOCK_RE = re.compile(r"^vl_encoder\.blocks\.(\d+)\.(.+)$")


def classify_parameter(name: str, plan) -> str:
    """Map a qualified parameter name to exactly one policy group."""
    if name.startswith("text_encoder."):
        return "text_encoder"
    if _ADAPTER_RE.match(name):
        return "adapters"
    if name.startswith("seg_encoder."):
        return "seg_backbone"
    if name.startswith("prompt_encoder."):
        return "prompt_encoder"
    if name.startswith("mask_decoder."):
        return "mask_decoder"
    m = _VL_BLOCK_RE.match(name)
    if m:
        layer, rest = int(m.group(1)), m.group(2)
        if rest.startswith("attn.") and layer in plan.trainable_vl_attention_layers:
            return "vl_attention"
        return "vl_other"
    if name.startswith("vl_encoder."):
        return "vl_other"
    raise ConfigError(f"parameter {name!r} matches no policy group")


def build_trainable_set(model: SegModel) -> tuple[dict[str, list[torch.nn.Parameter]], ParamReport]:
    """Partition all parameters by group, set requires_grad accordingly, and
    report trainable counts per group."""
    groups: dict[str, list[torch.nn.Parameter]] = {
        g: [] for g in TRAINABLE_GROUPS + FROZEN_GROUPS
    }
    for name, p in model.named_parameters():
        group = classify_parameter(name, model.plan)
        groups[group].append(p)
        p.requires_grad_(group in TRAINABLE_GROUPS)
    entries = [
        ParamEntry(
            g,
            sum(p.numel() for p in groups[g]),
            sum(p.numel() for p in groups[g]) if g in TRAINABLE_GROUPS else 0,
        )
        for g in TRAINABLE_GROUPS + FROZEN_GROUPS
    ]
    return groups, ParamReport(entries)


def grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.detach() ** 2).sum())
    return math.sqrt(total)


def check_gradient_gating(
    model: SegModel,
    batch: list[tuple[torch.Tensor, str, torch.Tensor]],
    mode: Mode | str = Mode.SEMI_AUTOMATIC,
    seed: int = 0,
) -> dict[str, float]:
    """Run one forward/backward and report gradient norms per policy group.

    With S=0 the vision-language encoder must come back at exactly zero: the
    prompt mask is thresholded, so no gradient survives that route.
    """
    groups, _ = build_trainable_set(model)
    model.zero_grad(set_to_none=True)
    total = None
    for i, (image, class_name, gt) in enumerate(batch):
        result = run_mode_pipeline(
            model, image, class_name, mode, gt=gt, seed=substream_seed(seed, "gating", i)
        )
        loss = segmentation_loss(result.prediction.logits, gt).total
        total = loss if total is None else total + loss
    total.backward()
    report = {g: grad_norm(groups[g]) for g in groups}
    report["vl_encoder_total"] = math.sqrt(
        report["vl_attention"] ** 2 + report["vl_other"] ** 2
    )
    model.zero_grad(set_to_none=True)
    return report


@dataclass(frozen=True)
class TrainConfig:
    mode: str = Mode.SEMI_AUTOMATIC.value
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    # adapter gates start at zero; a faster, decay-free group lets the
    # injection pathway open without dragging the rest of the schedule
    gate_lr_multiplier: float = 10.0
    seed: int = 0
    loss: LossSwitches = LossSwitches()
    prefinetune_vl_epochs: int = 0

    def __post_init__(self):
        Mode(self.mode)
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        if "loss" in d:
            d["loss"] = LossSwitches(**d["loss"])
        return TrainConfig(**d)


@dataclass
class Sample:
    """One (image, class, mask) training unit."""

    sample_id: str
    image: torch.Tensor
    class_name: str
    gt: torch.Tensor


@dataclass
class TrainResult:
    log: list[dict] = field(default_factory=list)
    best_val_miou: float = 0.0
    best_epoch: int = 0
    checkpoint_path: Path | None = None


def _epoch_val_miou(model: SegModel, val_samples: list[Sample], cfg: TrainConfig) -> float:
    from .evaluation import MIoUAccumulator

    acc = MIoUAccumulator()
    model.eval()
    with torch.no_grad():
        for s in val_samples:
            result = run_mode_pipeline(
                model,
                s.image,
                s.class_name,
                cfg.mode,
                gt=s.gt,
                seed=substream_seed(cfg.seed, "val_sampling", s.sample_id, s.class_name),
            )
            acc.add(s.class_name, result.prediction.binary(), s.gt)
    model.train()
    return acc.miou()


def _vl_prefinetune(model: SegModel, samples: list[Sample], cfg: TrainConfig) -> None:
    """Optional stage that tunes the VL attention alone to sharpen similarity
    maps against the GT masks, before joint training."""
    params = [
        p
        for name, p in model.named_parameters()
        if classify_parameter(name, model.plan) == "vl_attention"
    ]
    if not params:
        return
    opt = torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    for epoch in range(cfg.prefinetune_vl_epochs):
        for s in samples:
            semantic = model.semantic_inputs(s.image, s.class_name)
            gh, gw = semantic.patches.grid
            target = torch.nn.functional.adaptive_avg_pool2d(s.gt[None, None], (gh, gw))[0, 0]
            scores = semantic.scores.reshape(gh, gw)
            loss = torch.nn.functional.mse_loss(scores, target * 2.0 - 1.0)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()


def train(
    model: SegModel,
    cfg: TrainConfig,
    train_samples: list[Sample],
    val_samples: list[Sample],
    out_dir: Path | None = None,
) -> TrainResult:
    """Optimize the trainable set end-to-end over mode-pipeline outputs.

    Per epoch: shuffled batches, loss accumulation per sample, one optimizer
    step per batch, cosine learning-rate decay, validation mIoU, best-epoch
    checkpointing. Aborts with a diagnostic on a non-finite loss.
    """
    if not train_samples:
        raise InputError("training requires a non-empty dataset")
    groups, _ = build_trainable_set(model)
    if cfg.prefinetune_vl_epochs:
        _vl_prefinetune(model, train_samples, cfg)
    gates = [
        p
        for name, p in model.named_parameters()
        if name.endswith("bottleneck.gate") and p.requires_grad
    ]
    gate_ids = {id(p) for p in gates}
    trainable = [
        p for g in TRAINABLE_GROUPS for p in groups[g] if id(p) not in gate_ids
    ]
    optimizer = torch.optim.AdamW(
        [
            {"params": trainable},
            {
                "params": gates,
                "lr": cfg.learning_rate * cfg.gate_lr_multiplier,
                "weight_decay": 0.0,
            },
        ],
        lr=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.epochs)
    shuffle_rng = torch.Generator().manual_seed(substream_seed(cfg.seed, "shuffling"))
    result = TrainResult()
    log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "metrics.jsonl"
        log_path.write_text("", encoding="utf-8")
    # shuffle whole images, keeping each image's class prompts adjacent so a
    # batch sees the same pixels under different prompts
    by_image: dict[str, list[int]] = {}
    for i, s in enumerate(train_samples):
        by_image.setdefault(s.sample_id, []).append(i)
    image_ids = sorted(by_image)
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        img_order = torch.randperm(len(image_ids), generator=shuffle_rng).tolist()
        order = [i for j in img_order for i in by_image[image_ids[j]]]
        epoch_terms: dict[str, float] = {}
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[start : start + cfg.batch_size]]
            optimizer.zero_grad(set_to_none=True)
            batch_loss = None
            batch_terms: dict[str, float] = {}
            for s in batch:
                pipeline = run_mode_pipeline(
                    model,
                    s.image,
                    s.class_name,
                    cfg.mode,
                    gt=s.gt,
                    seed=substream_seed(cfg.seed, "sampling", epoch, s.sample_id, s.class_name),
                )
                loss = segmentation_loss(pipeline.prediction.logits, s.gt, cfg.loss)
                batch_loss = loss.total if batch_loss is None else batch_loss + loss.total
                for k, v in loss.terms.items():
                    batch_terms[k] = batch_terms.get(k, 0.0) + v / len(batch)
            batch_loss = batch_loss / len(batch)
            if not torch.isfinite(batch_loss):
                raise NaNLossError([s.sample_id for s in batch], batch_terms)
            batch_loss.backward()
            optimizer.step()
            epoch_loss += float(batch_loss.detach())
            for k, v in batch_terms.items():
                epoch_terms[k] = epoch_terms.get(k, 0.0) + v
            n_batches += 1
        scheduler.step()
        entry = {
            "epoch": epoch,
            "loss": epoch_loss / n_batches,
            **{k: v / n_batches for k, v in epoch_terms.items()},
            "val_miou": _epoch_val_miou(model, val_samples, cfg) if val_samples else 0.0,
        }
        result.log.append(entry)
        if log_path is not None:
            with log_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        if entry["val_miou"] >= result.best_val_miou or result.best_epoch == 0:
            result.best_val_miou = entry["val_miou"]
            result.best_epoch = epoch
            if out_dir is not None:
                result.checkpoint_path = out_dir / "best.ckpt"
                save_checkpoint(
                    result.checkpoint_path,
                    model_config=model.config,
                    state_dict=model.state_dict(),
                    extra={"epoch": epoch, "val_miou": entry["val_miou"]},
                )
    if out_dir is not None:
        save_checkpoint(
            Path(out_dir) / "last.ckpt",
            model_config=model.config,
            state_dict=model.state_dict(),
            extra={"epoch": cfg.epochs},
        )
    model.eval()
    return result
