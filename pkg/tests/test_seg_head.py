import itertools

import pytest
import torch

from promptseg.errors import InputError
from promptseg.prompts import DensePrompt, PointPrompts
from promptseg.seg_head import MaskDecoder, PromptEncoder

def points(coords):
    return PointPrompts(points=[(r, c, 1) for r, c in coords])


@pytest.fixture
def prompt_encoder():
    torch.manual_seed(0)
    return PromptEncoder(embed_dim=32, image_size=48, grid=(6, 6), dense_scale=4)


@pytest.fixture
def decoder():
    torch.manual_seed(1)
    return MaskDecoder(dim=32, heads=4, mlp_ratio=2.0)


class TestPointEncoding:
    def test_same_point_same_embedding(self, prompt_encoder):
        a = prompt_encoder.encode_points(points([(3, 4)]))
        b = prompt_encoder.encode_points(points([(3, 4)]))
        assert torch.equal(a, b)

    def test_k_rows(self, prompt_encoder):
        out = prompt_encoder.encode_points(points([(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]))
        assert out.shape == (5, 32)

    def test_pairwise_distinct_over_full_grid(self, prompt_encoder):
        grid_points = [(r, c) for r in range(48) for c in range(48)]
        embeds = prompt_encoder.encode_points(points(grid_points))
        # positional encoding must separate every pixel pair; nearest-pair
        # distance over the whole grid stays bounded away from zero
        flat = embeds.reshape(len(grid_points), -1)
        sample = flat[:: 37]  # spot-check pairs across the grid
        d = torch.cdist(sample, sample)
        d.fill_diagonal_(float("inf"))
        assert d.min() > 1e-4
        # and exhaustive uniqueness via hashing rounded rows
        keys = {tuple(row) for row in torch.round(flat * 1e6).to(torch.int64).tolist()}
        assert len(keys) == len(grid_points)

    def test_out_of_bounds_rejected(self, prompt_encoder):
        with pytest.raises(InputError):
            prompt_encoder.encode_points(points([(48, 0)]))
        with pytest.raises(InputError):
            prompt_encoder.encode_points(points([(0, -1)]))


class TestDenseEncoding:
    def test_absent_prompt_is_uniform(self, prompt_encoder):
        out = prompt_encoder.encode_dense(None)
        assert out.shape == (6, 6, 32)
        assert torch.all(out == out[0, 0])

    def test_zero_vs_one_prompts_differ(self, prompt_encoder):
        zero = prompt_encoder.encode_dense(DensePrompt(values=torch.zeros(24, 24)))
        one = prompt_encoder.encode_dense(DensePrompt(values=torch.ones(24, 24)))
        assert not torch.equal(zero, one)

    def test_output_matches_feature_dims(self, prompt_encoder):
        out = prompt_encoder.encode_dense(DensePrompt(values=torch.zeros(24, 24)))
        assert out.shape == (6, 6, 32)

    def test_wrong_resolution_rejected(self, prompt_encoder):
        with pytest.raises(InputError):
            prompt_encoder.encode_dense(DensePrompt(values=torch.zeros(12, 12)))


class TestMaskDecoder:
    def run(self, prompt_encoder, decoder, pts, seed=0):
        torch.manual_seed(seed)
        feats = torch.randn(6, 6, 32)
        sparse = prompt_encoder.encode_points(pts)
        dense = prompt_encoder.encode_dense(None)
        return decoder(feats, sparse, dense, prompt_encoder.image_pe(), out_size=(48, 48))

    def test_output_shape_equals_image(self, prompt_encoder, decoder):
        pred = self.run(prompt_encoder, decoder, points([(1, 1), (2, 2)]))
        assert pred.logits.shape == (48, 48)

    def test_probabilities_strictly_inside_unit_interval(self, prompt_encoder, decoder):
        pred = self.run(prompt_encoder, decoder, points([(1, 1)]))
        p = pred.probabilities
        assert torch.isfinite(pred.logits).all()
        assert (p > 0).all() and (p < 1).all()

    def test_no_nan_across_100_seeds(self, prompt_encoder):
        for seed in range(100):
            torch.manual_seed(seed)
            dec = MaskDecoder(dim=32, heads=4, mlp_ratio=2.0)
            pred = self.run(prompt_encoder, dec, points([(3, 3)]), seed=seed)
            assert torch.isfinite(pred.logits).all()

    def test_point_order_permutation_invariant(self, prompt_encoder, decoder):
        coords = [(1, 1), (7, 13), (20, 5), (33, 40), (46, 2)]
        base = self.run(prompt_encoder, decoder, points(coords))
        for perm in itertools.islice(itertools.permutations(coords), 1, 6):
            other = self.run(prompt_encoder, decoder, points(list(perm)))
            assert torch.allclose(base.logits, other.logits, atol=1e-6)

    def test_different_points_different_logits(self, prompt_encoder, decoder):
        a = self.run(prompt_encoder, decoder, points([(1, 1), (2, 2)]))
        b = self.run(prompt_encoder, decoder, points([(40, 40), (45, 12)]))
        assert not torch.allclose(a.logits, b.logits)

    def test_gradients_reach_prompt_encoder_and_decoder(self, prompt_encoder, decoder):
        torch.manual_seed(0)
        feats = torch.randn(6, 6, 32)
        sparse = prompt_encoder.encode_points(points([(5, 5), (10, 40)]))
        dense = prompt_encoder.encode_dense(DensePrompt(values=torch.ones(24, 24)))
        pred = decoder(feats, sparse, dense, prompt_encoder.image_pe(), out_size=(48, 48))
        loss = pred.logits.square().mean()
        loss.backward()
        pe_grads = [
            p.grad.abs().sum().item()
            for p in prompt_encoder.parameters()
            if p.grad is not None
        ]
        dec_grads = [
            p.grad.abs().sum().item()
            for p in decoder.parameters()
            if p.grad is not None
        ]
        assert sum(pe_grads) > 0
        assert sum(dec_grads) > 0
