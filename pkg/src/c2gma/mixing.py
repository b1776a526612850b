"""Mixed-class synthesis through the trained source-to-target generator.

Pairs of source images are alpha-blended together with their labels and class
embeddings; the blend is translated with the blended embedding as the
condition, and the blended label is kept as the synthetic sample's label.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .baselines import random_stitch_specs, mixcg_stitch
from .datasets import DomainDataset, LabeledImage
from .errors import ConfigurationError, ParameterError, ShapeError


@dataclass
class MixTuple:
    image: np.ndarray
    label: np.ndarray
    embedding: np.ndarray
    ratio: float
    parents: tuple = ()


@dataclass
class SynthesizedSample:
    image: np.ndarray
    label: np.ndarray
    provenance: dict = field(default_factory=dict)

    def to_labeled_image(self, index: int = 0) -> LabeledImage:
        return LabeledImage(
            pixels=self.image,
            label=self.label,
            domain="target",
            id=f"synth_{index}",
            synthetic=True,
            provenance=dict(self.provenance),
        )


def sample_ratio(alpha: float, rng: np.random.Generator) -> float:
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    return float(rng.beta(alpha, alpha))


def _embedding_table(embedding) -> np.ndarray:
    if isinstance(embedding, torch.nn.Module):
        return embedding.weight.detach().double().cpu().numpy()
    return np.asarray(embedding, dtype=np.float64)


def mix_pair(a: LabeledImage, b: LabeledImage, lam: float, embedding) -> MixTuple:
    """Blend two labelled images, their labels and their class embeddings with ratio ``lam``.

    ``embedding`` is a ClassEmbedding or a (classes, dim) array; the embedding
    of a label vector is ``label @ table``, i.e. the row for a hard label.
    """
    if a.pixels.shape != b.pixels.shape:
        raise ShapeError(f"cannot mix shapes {a.pixels.shape} and {b.pixels.shape}")
    if a.label.shape != b.label.shape:
        raise ShapeError("parents have different class rosters")
    if a.domain != b.domain:
        raise ConfigurationError("parents come from different domains")
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"mixing ratio must lie in [0, 1], got {lam}")
    table = _embedding_table(embedding)
    pa, pb = a.pixels.astype(np.float64), b.pixels.astype(np.float64)
    image = lam * pa + (1.0 - lam) * pb
    image = np.clip(image, np.minimum(pa, pb), np.maximum(pa, pb))
    label = np.clip(lam * a.label + (1.0 - lam) * b.label, 0.0, 1.0)
    emb = lam * (a.label @ table) + (1.0 - lam) * (b.label @ table)
    return MixTuple(image, label, emb, float(lam), (a.id, b.id))


def _draw_pairs(n_source: int, count: int, alpha: float, rng: np.random.Generator):
    draws = []
    for _ in range(count):
        i = int(rng.integers(n_source))
        j = int(rng.integers(n_source))
        draws.append((i, j, sample_ratio(alpha, rng)))
    return draws


@torch.no_grad()
def _translate(G, images: np.ndarray, cond: np.ndarray, batch_size: int) -> np.ndarray:
    G.eval()
    dtype = next(G.parameters()).dtype
    out = []
    for start in range(0, len(images), batch_size):
        x = torch.as_tensor(images[start:start + batch_size], dtype=dtype).unsqueeze(1)
        e = torch.as_tensor(cond[start:start + batch_size], dtype=dtype)
        out.append(G(x, e).squeeze(1).double().numpy())
    return np.concatenate(out) if out else np.zeros((0,) + images.shape[1:])


def synthesize(bundle, source: DomainDataset, count: int, alpha: float = 0.2,
               rng: np.random.Generator | None = None, batch_size: int = 64) -> list[SynthesizedSample]:
    """Draw ``count`` source pairs and ratios, mix, translate to the target domain.

    All random draws happen up front in index order, so output ``k`` depends
    only on the generator state and ``k``.
    """
    if count < 0:
        raise ParameterError(f"count must be >= 0, got {count}")
    if count == 0:
        return []
    if len(source) == 0:
        raise ConfigurationError("source dataset is empty")
    if tuple(source.classes) != tuple(bundle.classes):
        raise ConfigurationError(f"source roster {source.classes} does not match the model's {bundle.classes}")
    rng = rng if rng is not None else np.random.default_rng(0)
    draws = _draw_pairs(len(source), count, alpha, rng)
    tuples = [mix_pair(source[i], source[j], lam, bundle.e_s) for i, j, lam in draws]
    images = np.stack([t.image for t in tuples])
    cond = np.stack([t.embedding for t in tuples])
    fakes = _translate(bundle.G_t, images, cond, batch_size)
    ckpt = bundle.checkpoint_id
    out = []
    for k, ((i, j, lam), t, img) in enumerate(zip(draws, tuples, fakes)):
        if not np.all(np.isfinite(img)):
            raise FloatingPointError(f"synthesized sample {k} has non-finite pixels")
        out.append(SynthesizedSample(
            image=img,
            label=t.label,
            provenance={"index": k, "parent_i": source[i].id, "parent_j": source[j].id,
                        "lambda": lam, "checkpoint": ckpt, "method": "c2gma"},
        ))
    return out


def synthesize_mixcg(bundle, source: DomainDataset, count: int, alpha: float = 0.2,
                     rng: np.random.Generator | None = None, batch_size: int = 64) -> list[SynthesizedSample]:
    """Region-stitched source pairs through an unconditional generator.

    The label is the parents' labels weighted by the stitched area fraction.
    """
    if count < 0:
        raise ParameterError(f"count must be >= 0, got {count}")
    if count == 0:
        return []
    rng = rng if rng is not None else np.random.default_rng(0)
    pairs = [(int(rng.integers(len(source))), int(rng.integers(len(source)))) for _ in range(count)]
    specs = random_stitch_specs(count, alpha, rng)
    images, labels = [], []
    for (i, j), spec in zip(pairs, specs):
        a, b = source[i], source[j]
        images.append(mixcg_stitch(a.pixels.astype(np.float64), b.pixels.astype(np.float64), spec))
        length = a.pixels.shape[0] if spec.axis == "vertical" else a.pixels.shape[1]
        frac = spec.boundary(length) / length
        labels.append(np.clip(frac * a.label + (1 - frac) * b.label, 0.0, 1.0))
    images = np.stack(images)
    cond = np.repeat(_embedding_table(bundle.e_s)[:1], count, axis=0)
    fakes = _translate(bundle.G_t, images, cond, batch_size)
    ckpt = bundle.checkpoint_id
    return [
        SynthesizedSample(img, lab, {"index": k, "parent_i": source[i].id, "parent_j": source[j].id,
                                     "lambda": spec.ratio, "axis": spec.axis, "checkpoint": ckpt,
                                     "method": "mixcg"})
        for k, (img, lab, (i, j), spec) in enumerate(zip(fakes, labels, pairs, specs))
    ]


def augment_union(target: DomainDataset, fakes) -> DomainDataset:
    """Real target items first, then the synthesized ones flagged as synthetic."""
    items = list(target.items)
    shape = target.image_shape
    for k, f in enumerate(fakes):
        if len(f.label) != len(target.classes):
            raise ConfigurationError(
                f"synthetic sample {k} has a {len(f.label)}-class label, roster has {len(target.classes)}")
        if shape is not None and f.image.shape != shape:
            raise ShapeError(f"synthetic sample {k} has shape {f.image.shape}, dataset has {shape}")
        items.append(f.to_labeled_image(k))
    return target.with_items(items)


def fakes_to_dataset(fakes, classes) -> DomainDataset:
    return DomainDataset([f.to_labeled_image(k) for k, f in enumerate(fakes)], classes, "target")


def dataset_to_fakes(ds: DomainDataset) -> list[SynthesizedSample]:
    return [SynthesizedSample(it.pixels.astype(np.float64), it.label, dict(it.provenance)) for it in ds]


def write_provenance(fakes, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "parent_i", "parent_j", "lambda", "checkpoint"])
        for k, f in enumerate(fakes):
            p = f.provenance
            writer.writerow([k, p.get("parent_i"), p.get("parent_j"), repr(p.get("lambda")), p.get("checkpoint")])
    return path
