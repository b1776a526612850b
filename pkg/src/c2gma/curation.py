"""Outlier filtering of the source domain in a VAE latent space.

Each class is embedded by a variational encoder; samples are ranked by their
Mahalanobis distance to the class's componentwise latent median, and the
nearer half is kept.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .datasets import DomainDataset
from .errors import EmptyDatasetError, InsufficientDataError, ShapeError
from .utils import seeded


class VAE(nn.Module):
    """Three strided conv blocks down to (mean, logvar), mirrored decoder."""

    def __init__(self, image_size: int = 75, latent_dim: int = 32, width: int = 16):
        super().__init__()
        self.image_size = image_size
        self.latent_dim = latent_dim
        self.enc = nn.Sequential(
            nn.Conv2d(1, width, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(width, 2 * width, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, 4 * width, 4, 2, 1), nn.LeakyReLU(0.2),
        )
        self._grid = image_size // 2 // 2 // 2
        flat = 4 * width * self._grid * self._grid
        self.head = nn.Linear(flat, 2 * latent_dim)
        self.dec_in = nn.Linear(latent_dim, flat)
        self.dec = nn.Sequential(
            nn.ConvTranspose2d(4 * width, 2 * width, 4, 2, 1), nn.ReLU(),
            nn.ConvTranspose2d(2 * width, width, 4, 2, 1), nn.ReLU(),
            nn.ConvTranspose2d(width, 1, 4, 2, 1),
        )
        self._width = width
        self.loss_history: list[float] = []

    def encode_stats(self, x):
        h = self.enc(x).flatten(1)
        mean, logvar = self.head(h).chunk(2, dim=1)
        return mean, logvar.clamp(-10, 10)

    def decode(self, z):
        h = self.dec_in(z).view(-1, 4 * self._width, self._grid, self._grid)
        out = self.dec(h)
        out = F.interpolate(out, size=(self.image_size, self.image_size), mode="bilinear", align_corners=False)
        return torch.sigmoid(out)

    def forward(self, x):
        mean, logvar = self.encode_stats(x)
        z = mean + torch.randn_like(mean) * torch.exp(0.5 * logvar)
        return self.decode(z), mean, logvar

    @torch.no_grad()
    def encode(self, images) -> np.ndarray:
        """Latent means for a stack of (N, H, W) images."""
        self.eval()
        x = torch.as_tensor(np.asarray(images), dtype=torch.float32).unsqueeze(1)
        mean, _ = self.encode_stats(x)
        return mean.double().numpy()


def train_vae(images, latent_dim: int = 32, steps: int = 500, seed: int = 0, batch_size: int = 32,
              lr: float = 1e-3, width: int = 16) -> VAE:
    """Fit a VAE on a list of LabeledImage (or an (N, H, W) array).

    ``loss_history`` on the returned model holds the per-step reconstruction loss.
    """
    if isinstance(images, DomainDataset):
        images = images.items
    if len(images) == 0:
        raise EmptyDatasetError("cannot train a VAE on an empty image set")
    arr = np.stack([getattr(im, "pixels", im) for im in images]).astype(np.float32)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ShapeError(f"expected square single-channel images, got {arr.shape}")
    if len(arr) < 2:
        raise InsufficientDataError("need at least 2 images")

    rng = np.random.default_rng(seed)
    data = torch.from_numpy(arr).unsqueeze(1)
    with seeded(seed):
        model = VAE(arr.shape[1], latent_dim, width)
        opt = torch.optim.Adam(model.parameters(), lr=lr)
        model.train()
        for _ in range(steps):
            idx = torch.from_numpy(rng.integers(0, len(arr), size=min(batch_size, len(arr))))
            x = data[idx]
            recon, mean, logvar = model(x)
            rec = F.binary_cross_entropy(recon, x, reduction="sum") / len(x)
            kl = -0.5 * torch.sum(1 + logvar - mean.pow(2) - logvar.exp()) / len(x)
            loss = rec + kl
            opt.zero_grad()
            loss.backward()
            opt.step()
            model.loss_history.append(rec.item())
    model.eval()
    return model


@dataclass
class LatentStats:
    median: np.ndarray
    covariance: np.ndarray
    eps: float = 1e-6

    @property
    def regularized(self) -> np.ndarray:
        return self.covariance + self.eps * np.eye(len(self.median))


def latent_stats(features, eps: float = 1e-6) -> LatentStats:
    """Componentwise median and the second-moment matrix about that median."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or len(f) < 2:
        raise InsufficientDataError(f"need at least 2 feature vectors, got {len(f)}")
    med = np.median(f, axis=0)
    dev = f - med
    cov = dev.T @ dev / len(f)
    cov = 0.5 * (cov + cov.T)
    return LatentStats(med, cov, eps)


def mahalanobis(feature, stats: LatentStats) -> float:
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != stats.median.shape:
        raise ShapeError(f"feature has shape {f.shape}, stats expect {stats.median.shape}")
    d = f - stats.median
    q = float(d @ np.linalg.solve(stats.regularized, d))
    return math.sqrt(max(q, 0.0))


def mahalanobis_batch(features, stats: LatentStats) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != stats.median.size:
        raise ShapeError(f"features have shape {f.shape}, stats expect dimension {stats.median.size}")
    d = f - stats.median
    q = np.einsum("ij,ij->i", d, np.linalg.solve(stats.regularized, d.T).T)
    return np.sqrt(np.maximum(q, 0.0))


def _encoder_for(encoder, cls_index: int):
    if isinstance(encoder, dict):
        return encoder[cls_index]
    return encoder


def _encode(encoder, images) -> np.ndarray:
    if hasattr(encoder, "encode"):
        return np.asarray(encoder.encode(images), dtype=np.float64)
    return np.asarray(encoder(images), dtype=np.float64)


def score_dataset(dataset: DomainDataset, encoder, eps: float = 1e-6) -> list[dict]:
    """Per-item rows of (id, class, distance, kept) for the keep-nearer-half rule.

    ``encoder`` is either one encoder for all classes or a dict from class
    index to encoder. Anything with ``encode(images)`` or a plain callable works.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot curate an empty dataset")
    labels = dataset.hard_labels()
    images = dataset.images(np.float32)
    rows: list[dict | None] = [None] * len(dataset)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        name = dataset.classes[c]
        if len(idx) < 2:
            warnings.warn(f"class {name!r} has {len(idx)} sample(s); kept unfiltered", stacklevel=2)
            for i in idx:
                rows[i] = {"id": dataset[i].id, "class": name, "distance": 0.0, "kept": True}
            continue
        feats = _encode(_encoder_for(encoder, int(c)), images[idx])
        dist = mahalanobis_batch(feats, latent_stats(feats, eps))
        order = np.argsort(dist, kind="stable")
        keep = set(order[: math.ceil(len(idx) / 2)].tolist())
        for k, i in enumerate(idx):
            rows[i] = {"id": dataset[i].id, "class": name, "distance": float(dist[k]), "kept": k in keep}
    return rows


def filter_half(dataset: DomainDataset, encoder, eps: float = 1e-6) -> DomainDataset:
    rows = score_dataset(dataset, encoder, eps)
    return dataset.subset(i for i, r in enumerate(rows) if r["kept"])


def curate(dataset: DomainDataset, latent_dim: int = 32, steps: int = 500, seed: int = 0,
           joint: bool = False, width: int = 16):
    """Train the encoder(s) and filter. Returns ``(curated, rows, encoders)``.

    By default one VAE is trained per class; ``joint=True`` trains a single VAE
    on every class and still computes statistics per class.
    """
    labels = dataset.hard_labels()
    if joint:
        encoder = train_vae(dataset.items, latent_dim, steps, seed, width=width)
    else:
        encoder = {}
        for c in np.unique(labels):
            members = [dataset[i] for i in np.flatnonzero(labels == c)]
            if len(members) >= 2:
                encoder[int(c)] = train_vae(members, latent_dim, steps, seed + int(c), width=width)
            else:
                encoder[int(c)] = None
    rows = score_dataset(dataset, encoder)
    curated = dataset.subset(i for i, r in enumerate(rows) if r["kept"])
    return curated, rows, encoder
