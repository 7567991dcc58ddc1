"""Component-level parameter accounting in the deployment-report shape."""

from __future__ import annotations

from dataclasses import dataclass

from .backbone import ParamReport, count_parameters
from .model import SegModel
from .training import TRAINABLE_GROUPS, classify_parameter


@dataclass
class SystemReport:
    report: ParamReport
    adapter_params: int
    seg_backbone_params: int  # segmentation encoder without adapters
    adapter_overhead_pct: float
    deployment_total: int  # text embeddings cached: everything but the text encoder

    def to_dict(self) -> dict:
        d = self.report.to_dict()
        d.update(
            {
                "adapter_params": self.adapter_params,
                "seg_backbone_params": self.seg_backbone_params,
                "adapter_overhead_pct": self.adapter_overhead_pct,
                "deployment_total": self.deployment_total,
            }
        )
        return d

    def format_table(self) -> str:
        lines = [self.report.format_table()]
        lines.append(
            f"adapter overhead: {self.adapter_params:,} params, "
            f"{self.adapter_overhead_pct:.1f}% of the {self.seg_backbone_params:,}-param backbone"
        )
        lines.append(f"deployment total (text embeddings cached): {self.deployment_total:,}")
        return "\n".join(lines)


def parameter_report(model: SegModel) -> SystemReport:
    """Exact counts per component; adapters are attributed to the
    segmentation image encoder and counted trainable by policy."""
    report = count_parameters(
        {
            "seg_image_encoder": model.seg_encoder,
            "seg_mask_decoder": model.mask_decoder,
            "seg_prompt_encoder": model.prompt_encoder,
            "vl_image_encoder": model.vl_encoder,
            "text_encoder": model.text_encoder,
        },
        trainable=lambda name, p: _policy_for(name, model),
    )
    adapter_params = sum(
        p.numel()
        for name, p in model.seg_encoder.named_parameters()
        if ".parallel_adapter." in name or ".semantic_adapter." in name
    )
    backbone = report.entry("seg_image_encoder").total_count - adapter_params
    return SystemReport(
        report=report,
        adapter_params=adapter_params,
        seg_backbone_params=backbone,
        adapter_overhead_pct=100.0 * adapter_params / backbone if backbone else 0.0,
        deployment_total=report.total - report.entry("text_encoder").total_count,
    )


_COMPONENT_TO_ATTR = {
    "seg_image_encoder": "seg_encoder",
    "seg_mask_decoder": "mask_decoder",
    "seg_prompt_encoder": "prompt_encoder",
    "vl_image_encoder": "vl_encoder",
    "text_encoder": "text_encoder",
}


def _policy_for(qualified: str, model: SegModel) -> bool:
    component, rest = qualified.split(".", 1)
    name = f"{_COMPONENT_TO_ATTR[component]}.{rest}"
    return classify_parameter(name, model.plan) in TRAINABLE_GROUPS
