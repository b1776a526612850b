"""Comparison augmenters: right-angle rotations, Mixup and the MixCycleGAN region stitch."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .datasets import DomainDataset, LabeledImage
from .errors import EmptyDatasetError, ParameterError, ShapeError

MIX_EPS = 1e-7
AXES = ("vertical", "horizontal")


def rot_augment(ds: DomainDataset) -> DomainDataset:
    """Originals followed by their 90, 180 and 270 degree (counter-clockwise) rotations."""
    for it in ds:
        if it.pixels.shape[0] != it.pixels.shape[1]:
            raise ShapeError(f"image {it.id!r} is not square: {it.pixels.shape}")
    out = list(ds.items)
    for k in (1, 2, 3):
        for it in ds:
            out.append(LabeledImage(
                pixels=np.rot90(it.pixels, k).copy(),
                label=it.label.copy(),
                domain=it.domain,
                group=it.group,
                id=f"{it.id}#rot{90 * k}",
                synthetic=it.synthetic,
                provenance={**it.provenance, "rotation": 90 * k},
            ))
    return ds.with_items(out)


def mixup_arrays(images, labels, alpha: float, rng: np.random.Generator, lam=None, partners=None):
    """Blend each row with a partner row. Returns (images, labels, lams, partners).

    Partners default to a uniformly random permutation of the batch; one ratio
    is drawn per pair from Beta(alpha, alpha) unless ``lam`` forces it.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = len(images)
    if n == 0:
        raise EmptyDatasetError("mixup needs a non-empty batch")
    if partners is None:
        partners = rng.permutation(n)
    partners = np.asarray(partners)
    if lam is None:
        if alpha <= 0:
            raise ParameterError(f"alpha must be positive, got {alpha}")
        lams = rng.beta(alpha, alpha, size=n)
    else:
        lams = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,)).copy()
    shape = (n,) + (1,) * (images.ndim - 1)
    li = lams.reshape(shape)
    mixed = li * images + (1 - li) * images[partners]
    mixed_labels = np.clip(lams[:, None] * labels + (1 - lams[:, None]) * labels[partners], 0.0, 1.0)
    return mixed, mixed_labels, lams, partners


def mixup_batch(batch, alpha: float, rng: np.random.Generator, lam=None, partners=None) -> list[LabeledImage]:
    """Classic Mixup over a list of LabeledImage; batch size is preserved."""
    if len(batch) == 0:
        raise EmptyDatasetError("mixup needs a non-empty batch")
    x = np.stack([it.pixels for it in batch])
    y = np.stack([it.label for it in batch])
    mx, my, lams, partners = mixup_arrays(x, y, alpha, rng, lam, partners)
    return [
        LabeledImage(pixels=mx[i], label=my[i], domain=it.domain, group=it.group, id=f"{it.id}+mix",
                     synthetic=it.synthetic, provenance={"partner": int(partners[i]), "lambda": float(lams[i])})
        for i, it in enumerate(batch)
    ]


def _round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass
class StitchSpec:
    axis: str = "vertical"
    ratio: float = 0.5

    def __post_init__(self):
        if self.axis not in AXES:
            raise ParameterError(f"axis must be one of {AXES}, got {self.axis!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise ParameterError(f"ratio must lie in [0, 1], got {self.ratio}")

    def boundary(self, length: int) -> int:
        return min(max(_round_half_away(self.ratio * length), 0), length)


def mixcg_stitch(x1, x2, spec: StitchSpec):
    """Top rows (vertical) or left columns (horizontal) from ``x1``, the rest from ``x2``.

    Works on numpy arrays or tensors whose last two dimensions are (H, W).
    """
    if tuple(x1.shape) != tuple(x2.shape):
        raise ShapeError(f"stitch inputs differ: {tuple(x1.shape)} vs {tuple(x2.shape)}")
    out = x2.clone() if isinstance(x2, torch.Tensor) else np.array(x2, copy=True)
    if spec.axis == "vertical":
        b = spec.boundary(x1.shape[-2])
        out[..., :b, :] = x1[..., :b, :]
    else:
        b = spec.boundary(x1.shape[-1])
        out[..., :, :b] = x1[..., :, :b]
    return out


def mixcg_disc_loss(estimate, lam, eps: float = MIX_EPS):
    """log(max(|lam - estimate|, eps)); minimised by a ratio-estimating discriminator."""
    if isinstance(estimate, torch.Tensor) or isinstance(lam, torch.Tensor):
        return torch.log(torch.clamp((torch.as_tensor(lam) - estimate).abs(), min=eps))
    return math.log(max(abs(lam - estimate), eps))


def random_stitch_specs(n: int, alpha: float, rng: np.random.Generator) -> list[StitchSpec]:
    """One Beta(alpha, alpha) ratio and a fair coin-flip axis per sample."""
    if alpha <= 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    lams = rng.beta(alpha, alpha, size=n)
    axes = rng.integers(0, 2, size=n)
    return [StitchSpec(AXES[a], float(l)) for a, l in zip(axes, lams)]
