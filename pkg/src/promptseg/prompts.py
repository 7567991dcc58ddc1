"""From (patch embeddings, text embedding) to spatial prompts.

Pipeline: cosine scores per patch -> reshape + bilinear upsample + min-max
normalize -> threshold into a binary mask -> sample positive points / resize
into a dense prompt. Everything downstream of the threshold is
non-differentiable by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .backbone import PatchEmbeddings
from .errors import InputError

NORM_EPS = 1e-8


@dataclass
class SimilarityMap:
    values: torch.Tensor  # (out_H, out_W)
    normalized: bool


@dataclass
class BinaryPromptMask:
    values: torch.Tensor  # (out_H, out_W) in {0, 1}
    threshold_used: float


@dataclass
class PointPrompts:
    """Positive point prompts as (row, col, label) with label always 1.

    ``fallback_used`` flags points taken from the similarity map because the
    binary mask had no foreground.
    """

    points: list[tuple[int, int, int]]
    fallback_used: bool = False

    @property
    def k(self) -> int:
        return len(self.points)

    def coords(self) -> list[tuple[int, int]]:
        return [(r, c) for r, c, _ in self.points]


@dataclass
class DensePrompt:
    values: torch.Tensor  # (h, w) in {0, 1}


def cosine_similarity_map(patches: PatchEmbeddings, text: torch.Tensor) -> torch.Tensor:
    """Per-patch cosine similarity against the text embedding, shape (N, 1).

    Norms are clamped at 1e-8 before dividing, so zero patch rows are safe
    and ordinary rows divide by their exact norm.
    """
    t_norm = torch.linalg.vector_norm(text)
    if t_norm.item() == 0.0:
        raise InputError("text embedding has zero norm")
    v = patches.values
    v_unit = v / torch.linalg.vector_norm(v, dim=1, keepdim=True).clamp_min(NORM_EPS)
    t_unit = text / t_norm.clamp_min(NORM_EPS)
    return (v_unit @ t_unit).unsqueeze(1)


def similarity_to_map(
    scores: torch.Tensor, grid: tuple[int, int], out_size: tuple[int, int]
) -> SimilarityMap:
    """Reshape scores row-major to the grid, bilinear-upsample, then min-max
    normalize. A constant map normalizes to all zeros."""
    h, w = grid
    if scores.numel() != h * w:
        raise InputError(f"{scores.numel()} scores do not fill a {h}x{w} grid")
    plane = scores.reshape(h, w)
    if (h, w) != tuple(out_size):
        plane = F.interpolate(
            plane[None, None], size=tuple(out_size), mode="bilinear", align_corners=False
        )[0, 0]
    lo, hi = plane.min(), plane.max()
    if (hi - lo).item() == 0.0:
        plane = torch.zeros_like(plane)
    else:
        plane = (plane - lo) / (hi - lo)
    return SimilarityMap(values=plane.detach(), normalized=True)


def threshold_map(sim_map: SimilarityMap, tau: float) -> BinaryPromptMask:
    if not sim_map.normalized:
        raise InputError("threshold_map requires a normalized similarity map")
    if not 0.0 < tau < 1.0:
        raise InputError(f"tau must lie in (0, 1), got {tau}")
    mask = (sim_map.values >= tau).to(torch.float32)
    return BinaryPromptMask(values=mask, threshold_used=tau)


def _foreground_coords(mask: np.ndarray) -> np.ndarray:
    rows, cols = np.nonzero(mask)
    return np.stack([rows, cols], axis=1)


def sample_points(
    mask: BinaryPromptMask,
    k: int,
    seed: int,
    fallback: SimilarityMap,
) -> PointPrompts:
    """Sample K positive points from the mask foreground.

    Foreground >= K: uniform without replacement. 0 < foreground < K: every
    foreground pixel once, the remainder with replacement. Empty foreground:
    the top-K pixels of the fallback map (row-major tie order), flagged.
    """
    if k < 1:
        raise InputError(f"K must be >= 1, got {k}")
    grid = mask.values.detach().cpu().numpy()
    coords = _foreground_coords(grid)
    rng = np.random.default_rng(seed)
    if len(coords) == 0:
        flat = fallback.values.detach().cpu().numpy().reshape(-1)
        width = fallback.values.shape[1]
        # stable sort on negated values keeps row-major order among ties
        order = np.argsort(-flat, kind="stable")[:k]
        points = [(int(i // width), int(i % width), 1) for i in order]
        return PointPrompts(points=points, fallback_used=True)
    if len(coords) >= k:
        chosen = coords[rng.choice(len(coords), size=k, replace=False)]
    else:
        extra = coords[rng.choice(len(coords), size=k - len(coords), replace=True)]
        chosen = np.concatenate([coords, extra], axis=0)
    return PointPrompts(points=[(int(r), int(c), 1) for r, c in chosen])


def sample_points_from_gt(gt, k: int, seed: int) -> PointPrompts:
    """Same sampling contract, from a ground-truth mask; empty GT is an error."""
    arr = gt.detach().cpu().numpy() if torch.is_tensor(gt) else np.asarray(gt)
    if arr.sum() == 0:
        raise InputError("ground-truth mask has no foreground to sample from")
    mask = BinaryPromptMask(values=torch.as_tensor(arr, dtype=torch.float32), threshold_used=0.5)
    empty_fallback = SimilarityMap(values=torch.zeros_like(mask.values), normalized=True)
    return sample_points(mask, k, seed, empty_fallback)


def make_dense_prompt(mask: BinaryPromptMask, resolution: tuple[int, int]) -> DensePrompt:
    """Nearest-neighbor resize of the binary mask; values stay binary.

    Index mapping is the plain integer rule src = (dst * src_size) // dst_size.
    """
    src = mask.values
    h_src, w_src = src.shape
    h_dst, w_dst = resolution
    if (h_src, w_src) == (h_dst, w_dst):
        return DensePrompt(values=src.clone())
    row_idx = (torch.arange(h_dst) * h_src) // h_dst
    col_idx = (torch.arange(w_dst) * w_src) // w_dst
    return DensePrompt(values=src[row_idx][:, col_idx].clone())


@dataclass
class PromptArtifacts:
    """Optional debug export of the intermediate prompt products."""

    sim_map: SimilarityMap
    mask: BinaryPromptMask
    points: PointPrompts
    written: list[Path] = field(default_factory=list)


def to_grayscale_png(values: torch.Tensor, path: Path) -> None:
    from PIL import Image

    arr = (values.detach().cpu().numpy() * 255.0).round().clip(0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def export_debug(
    sim_map: SimilarityMap, mask: BinaryPromptMask, points: PointPrompts, out_dir: Path
) -> PromptArtifacts:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = PromptArtifacts(sim_map, mask, points)
    sim_path = out_dir / "similarity.png"
    mask_path = out_dir / "mask.png"
    pts_path = out_dir / "points.txt"
    to_grayscale_png(sim_map.values, sim_path)
    to_grayscale_png(mask.values, mask_path)
    pts_path.write_text(
        "".join(f"{r} {c} {label}\n" for r, c, label in points.points), encoding="utf-8"
    )
    artifacts.written = [sim_path, mask_path, pts_path]
    return artifacts
