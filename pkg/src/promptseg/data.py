"""Synthetic shapes dataset: generation, split manifests, loading.

Each sample is an RGB image with 1-3 shapes of distinct classes on a
textured background, plus one binary mask per present class. The camouflage
variant draws foreground colors from a narrow band around the local
background so that boundary contrast collapses.

Layout under the dataset root:
    images/<id>.png        8-bit RGB, lossless
    masks/<class>/<id>.png 8-bit single channel, 0 or 255
    manifest.json          field-documented manifest, stable ordering
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataIOError, InputError
from .rng import substream_seed

KNOWN_CLASSES = ("circle", "square", "triangle", "cross", "ring", "bar")

# Characteristic palette per class (low, high) RGB bands: appearance carries
# class identity, as it does in natural imagery, while exact colors still
# vary per instance. The camouflage variant overrides these entirely.
CLASS_PALETTES = {
    "circle": ((0.70, 0.05, 0.05), (1.00, 0.35, 0.35)),
    "square": ((0.05, 0.05, 0.70), (0.35, 0.35, 1.00)),
    "triangle": ((0.05, 0.60, 0.05), (0.35, 1.00, 0.35)),
    "cross": ((0.70, 0.60, 0.05), (1.00, 1.00, 0.35)),
    "ring": ((0.60, 0.05, 0.60), (1.00, 0.40, 1.00)),
    "bar": ((0.05, 0.60, 0.60), (0.40, 1.00, 1.00)),
}

MANIFEST_VERSION = 1


@dataclass
class SampleRecord:
    sample_id: str
    image: str
    masks: dict[str, str]
    classes: list[str]


@dataclass
class DatasetManifest:
    root: Path
    image_size: int
    classes: list[str]
    seed: int
    camouflage: bool
    samples: list[SampleRecord] = field(default_factory=list)

    def ids(self) -> list[str]:
        return [s.sample_id for s in self.samples]

    def record(self, sample_id: str) -> SampleRecord:
        for s in self.samples:
            if s.sample_id == sample_id:
                return s
        raise InputError(f"sample id {sample_id!r} not in manifest")

    def to_dict(self) -> dict:
        return {
            "format_version": MANIFEST_VERSION,
            "image_size": self.image_size,
            "classes": list(self.classes),
            "generator": {"seed": self.seed, "camouflage": self.camouflage},
            "samples": [
                {
                    "id": s.sample_id,
                    "image": s.image,
                    "masks": dict(sorted(s.masks.items())),
                    "classes": sorted(s.classes),
                }
                for s in self.samples
            ],
        }

    def save(self) -> Path:
        path = self.root / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @staticmethod
    def load(path: Path | str) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise DataIOError(str(path), "manifest not found")
        d = json.loads(path.read_text(encoding="utf-8"))
        manifest = DatasetManifest(
            root=path.parent,
            image_size=d["image_size"],
            classes=list(d["classes"]),
            seed=d["generator"]["seed"],
            camouflage=d["generator"]["camouflage"],
            samples=[
                SampleRecord(s["id"], s["image"], dict(s["masks"]), list(s["classes"]))
                for s in d["samples"]
            ],
        )
        return manifest


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Textured background: base color plus bilinearly upsampled coarse noise."""
    base = rng.uniform(0.2, 0.8, size=3)
    coarse = rng.uniform(-0.12, 0.12, size=(6, 6, 3))
    reps = int(np.ceil(size / 6))
    noise = np.kron(coarse, np.ones((reps, reps, 1)))[:size, :size]
    fine = rng.uniform(-0.02, 0.02, size=(size, size, 3))
    return np.clip(base[None, None, :] + noise + fine, 0.0, 1.0)


def _shape_mask(rng: np.random.Generator, class_name: str, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r = rng.uniform(0.12, 0.22) * size
    cy = rng.uniform(r + 1, size - r - 1)
    cx = rng.uniform(r + 1, size - r - 1)
    if class_name == "circle":
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
    elif class_name == "square":
        mask = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    elif class_name == "triangle":
        # upright triangle: apex above, base below
        h = r * 1.6
        top = cy - h / 2
        mask = (yy >= top) & (yy <= top + h)
        half_width = (yy - top) / h * r
        mask &= np.abs(xx - cx) <= half_width
    elif class_name == "cross":
        arm = r * 0.45
        mask = ((np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= r)) | (
            (np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= r)
        )
    elif class_name == "ring":
        dist2 = (yy - cy) ** 2 + (xx - cx) ** 2
        mask = (dist2 <= r**2) & (dist2 >= (0.55 * r) ** 2)
    elif class_name == "bar":
        mask = (np.abs(yy - cy) <= r * 0.35) & (np.abs(xx - cx) <= r * 1.3)
    else:
        raise InputError(f"unknown class {class_name!r}")
    return mask.astype(np.uint8)


def _render_sample(
    rng: np.random.Generator, classes: list[str], size: int, camouflage: bool
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    n_shapes = int(rng.choice([1, 2, 3], p=[0.2, 0.4, 0.4]))
    present = [classes[i] for i in rng.choice(len(classes), size=min(n_shapes, len(classes)), replace=False)]
    image = _background(rng, size)
    masks: dict[str, np.ndarray] = {}
    for class_name in present:
        mask = _shape_mask(rng, class_name, size)
        # carve this shape out of any earlier ones so masks stay disjoint
        for other in masks.values():
            other[mask == 1] = 0
        if camouflage:
            local_mean = image[mask == 1].mean(axis=0)
            color = np.clip(local_mean + rng.uniform(-0.06, 0.06, size=3), 0.0, 1.0)
        else:
            lo, hi = CLASS_PALETTES[class_name]
            color = rng.uniform(lo, hi)
        jitter = rng.uniform(-0.02, 0.02, size=(size, size, 3))
        fill = np.clip(color[None, None, :] + jitter, 0.0, 1.0)
        image = np.where(mask[:, :, None] == 1, fill, image)
        masks[class_name] = mask
    masks = {c: m for c, m in masks.items() if m.sum() > 0}
    return image, masks


def generate_synthetic_dataset(
    root: Path | str,
    n_samples: int,
    classes=("circle", "square", "triangle", "cross"),
    size: int = 96,
    camouflage: bool = False,
    seed: int = 0,
) -> DatasetManifest:
    """Write n_samples images with per-class masks; deterministic per seed."""
    classes = list(classes)
    for c in classes:
        if c not in KNOWN_CLASSES:
            raise InputError(f"unknown class {c!r}; known: {KNOWN_CLASSES}")
    if n_samples < 1:
        raise InputError("n_samples must be >= 1")
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    for c in classes:
        (root / "masks" / c).mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(
        root=root, image_size=size, classes=classes, seed=seed, camouflage=camouflage
    )
    for i in range(n_samples):
        sample_id = f"{i:06d}"
        rng = np.random.default_rng(substream_seed(seed, "sample", sample_id))
        image, masks = _render_sample(rng, classes, size, camouflage)
        image_rel = f"images/{sample_id}.png"
        Image.fromarray((image * 255.0).round().astype(np.uint8)).save(root / image_rel)
        mask_rels: dict[str, str] = {}
        for c, m in masks.items():
            rel = f"masks/{c}/{sample_id}.png"
            Image.fromarray(m * np.uint8(255), mode="L").save(root / rel)
            mask_rels[c] = rel
        manifest.samples.append(
            SampleRecord(sample_id, image_rel, mask_rels, sorted(masks))
        )
    manifest.save()
    return manifest


@dataclass
class SplitManifest:
    parent: str
    fraction: float
    seed: int
    included: list[str]

    def to_dict(self) -> dict:
        return {
            "format_version": MANIFEST_VERSION,
            "parent": self.parent,
            "fraction": self.fraction,
            "seed": self.seed,
            "included": list(self.included),
        }

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @staticmethod
    def load(path: Path | str) -> "SplitManifest":
        path = Path(path)
        if not path.exists():
            raise DataIOError(str(path), "split manifest not found")
        d = json.loads(path.read_text(encoding="utf-8"))
        return SplitManifest(d["parent"], d["fraction"], d["seed"], list(d["included"]))


def split_size(n_parent: int, fraction: float) -> int:
    """Round-half-up with a floor of one sample."""
    return max(1, int(np.floor(n_parent * fraction + 0.5)))


def make_split(manifest: DatasetManifest, fraction: float, seed: int) -> SplitManifest:
    """Uniform subsample without replacement; splits nest across fractions at
    equal seed (a smaller fraction is always a prefix of a larger one)."""
    if not 0.0 < fraction <= 1.0:
        raise InputError(f"fraction must lie in (0, 1], got {fraction}")
    ids = manifest.ids()
    rng = np.random.default_rng(substream_seed(seed, "split"))
    order = rng.permutation(len(ids))
    n = split_size(len(ids), fraction)
    included = [ids[i] for i in order[:n]]
    return SplitManifest(
        parent=str(manifest.root / "manifest.json"),
        fraction=fraction,
        seed=seed,
        included=included,
    )


def load_sample(manifest: DatasetManifest, sample_id: str):
    """Returns (image float array in [0,1], {class: binary mask}, class list)."""
    record = manifest.record(sample_id)
    image_path = manifest.root / record.image
    if not image_path.exists():
        raise DataIOError(str(image_path), "image file missing")
    image = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.float64) / 255.0
    masks: dict[str, np.ndarray] = {}
    for c, rel in record.masks.items():
        mask_path = manifest.root / rel
        if not mask_path.exists():
            raise DataIOError(str(mask_path), "mask file missing")
        arr = np.asarray(Image.open(mask_path).convert("L"))
        mask = (arr >= 128).astype(np.float32)
        if mask.shape != image.shape[:2]:
            raise DataIOError(str(mask_path), "mask size differs from image")
        masks[c] = mask
    return image, masks, list(record.classes)


def load_training_samples(manifest: DatasetManifest, ids=None) -> list:
    """Expand (image, class) pairs into training.Sample units; images with
    several classes contribute one sample per present class."""
    import torch

    from .training import Sample

    out = []
    for sample_id in ids if ids is not None else manifest.ids():
        image, masks, classes = load_sample(manifest, sample_id)
        image_t = torch.from_numpy(image.transpose(2, 0, 1)).to(torch.float32)
        for c in classes:
            out.append(
                Sample(
                    sample_id=sample_id,
                    image=image_t,
                    class_name=c,
                    gt=torch.from_numpy(masks[c]).to(torch.float32),
                )
            )
    return out
