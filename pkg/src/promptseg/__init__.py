"""Text-conditioned promptable segmentation with semantic adapter injection."""

__version__ = "0.1.0"

from .backbone import (
    EncoderConfig,
    FeatureMap,
    ParamReport,
    PatchEmbeddings,
    SegImageEncoder,
    TextEncoder,
    TextTokenizer,
    VLImageEncoder,
    count_parameters,
)
from .conditioning import (
    BudgetPlan,
    ParallelAdapter,
    SemanticAdapter,
    SemanticInputs,
    configure_budget,
    fuse_vision_similarity,
    project_and_align,
    project_text,
)
from .evaluation import (
    MetricsRecord,
    MIoUAccumulator,
    binary_iou,
    e_measure,
    evaluate,
    mae,
    miou_protocol,
    s_measure,
    weighted_fbeta,
)
from .model import ModelConfig, SegModel, run_mode_pipeline, toy_config, vit_b_config
from .prompts import (
    BinaryPromptMask,
    DensePrompt,
    PointPrompts,
    SimilarityMap,
    cosine_similarity_map,
    make_dense_prompt,
    sample_points,
    sample_points_from_gt,
    similarity_to_map,
    threshold_map,
)
from .seg_head import MaskDecoder, MaskPrediction, Mode, PromptBundle, PromptEncoder
from .training import (
    LossSwitches,
    Sample,
    TrainConfig,
    build_trainable_set,
    check_gradient_gating,
    segmentation_loss,
    train,
)

__all__ = [name for name in dir() if not name.startswith("_")]
