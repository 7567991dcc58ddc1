import numpy as np
import pytest
import torch

import promptseg as ps


@pytest.fixture(scope="session")
def tiny_model():
    """Smallest full model that exercises every pathway (session-shared,
    read-only: tests that mutate weights must build their own)."""
    return ps.SegModel(tiny_config(), seed=0)


def tiny_config(budget_c=None, budget_s=None, image_size=48):
    from promptseg.backbone import EncoderConfig
    from promptseg.model import ModelConfig

    seg = EncoderConfig(image_size=image_size, patch_size=8, depth=3, width=32, heads=2)
    vl = EncoderConfig(image_size=image_size, patch_size=8, depth=2, width=24, heads=2)
    return ModelConfig(
        seg=seg,
        vl=vl,
        embed_dim=16,
        decoder_dim=32,
        decoder_heads=4,
        decoder_mlp_ratio=2.0,
        bottleneck_ratio=2,
        budget_c=vl.depth if budget_c is None else budget_c,
        budget_s=seg.depth if budget_s is None else budget_s,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand_image(rng, size=48):
    return torch.from_numpy(rng.random((3, size, size), dtype=np.float32))
