"""Core data containers and the on-disk dataset format.

A dataset on disk is a single ``.npz`` archive holding the stacked pixels,
soft labels, ids, groups, synthetic flags, the class roster and the domain
tag. Per-item provenance is stored as one JSON string per item.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ParseError, ShapeError

DOMAINS = ("source", "target")
GROUPS = ("a", "b", "c")
LABEL_TOL = 1e-6


def one_hot(index: int, n_classes: int) -> np.ndarray:
    y = np.zeros(n_classes, dtype=np.float64)
    y[index] = 1.0
    return y


@dataclass
class LabeledImage:
    """One single-channel image with a soft class vector."""

    pixels: np.ndarray
    label: np.ndarray
    domain: str = "target"
    group: str | None = None
    id: str = ""
    synthetic: bool = False
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        self.label = np.asarray(self.label, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ShapeError(f"image {self.id!r}: expected a 2-D grid, got shape {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError(f"image {self.id!r}: non-finite pixels")
        if self.label.ndim != 1 or self.label.size == 0:
            raise ShapeError(f"image {self.id!r}: label must be a non-empty vector")
        if np.any(self.label < 0.0) or np.any(self.label > 1.0):
            raise ValueError(f"image {self.id!r}: label components must lie in [0, 1]")
        if abs(self.label.sum() - 1.0) > LABEL_TOL:
            raise ValueError(f"image {self.id!r}: label sums to {self.label.sum()}, not 1")
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        if self.group is not None and self.group not in GROUPS:
            raise ValueError(f"unknown group {self.group!r}")

    @property
    def hard_label(self) -> int:
        return int(np.argmax(self.label))

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass
class DomainDataset:
    items: list
    classes: tuple
    domain: str

    def __post_init__(self):
        self.items = list(self.items)
        self.classes = tuple(self.classes)
        for item in self.items:
            if item.label.size != len(self.classes):
                raise ConfigurationError(
                    f"item {item.id!r} has a {item.label.size}-class label, roster has {len(self.classes)}"
                )
            if item.domain != self.domain:
                raise ConfigurationError(f"item {item.id!r} is tagged {item.domain!r}, dataset is {self.domain!r}")

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    @property
    def ids(self) -> list[str]:
        return [it.id for it in self.items]

    @property
    def image_shape(self) -> tuple[int, int] | None:
        return self.items[0].shape if self.items else None

    def images(self, dtype=np.float32) -> np.ndarray:
        if not self.items:
            return np.zeros((0, 0, 0), dtype=dtype)
        return np.stack([it.pixels for it in self.items]).astype(dtype, copy=False)

    def labels(self) -> np.ndarray:
        if not self.items:
            return np.zeros((0, len(self.classes)))
        return np.stack([it.label for it in self.items])

    def hard_labels(self) -> np.ndarray:
        return np.array([it.hard_label for it in self.items], dtype=np.int64)

    def subset(self, indices: Iterable[int]) -> "DomainDataset":
        return DomainDataset([self.items[i] for i in indices], self.classes, self.domain)

    def with_items(self, items: Sequence[LabeledImage]) -> "DomainDataset":
        return DomainDataset(list(items), self.classes, self.domain)


def save_dataset(ds: DomainDataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(ds)
    h, w = ds.image_shape or (0, 0)
    with open(path, "wb") as fh:
        np.savez_compressed(
            fh,
            pixels=ds.images(np.float32) if n else np.zeros((0, h, w), np.float32),
            labels=ds.labels(),
            ids=np.array(ds.ids, dtype=str),
            groups=np.array([it.group or "" for it in ds.items], dtype=str),
            synthetic=np.array([it.synthetic for it in ds.items], dtype=bool),
            provenance=np.array([json.dumps(it.provenance, sort_keys=True) for it in ds.items], dtype=str),
            classes=np.array(ds.classes, dtype=str),
            domain=np.array(ds.domain),
        )
    return path


def load_dataset(path) -> DomainDataset:
    with np.load(Path(path), allow_pickle=False) as z:
        classes = tuple(str(c) for c in z["classes"])
        domain = str(z["domain"])
        items = [
            LabeledImage(
                pixels=z["pixels"][i],
                label=z["labels"][i],
                domain=domain,
                group=str(z["groups"][i]) or None,
                id=str(z["ids"][i]),
                synthetic=bool(z["synthetic"][i]),
                provenance=json.loads(str(z["provenance"][i])),
            )
            for i in range(len(z["ids"]))
        ]
    return DomainDataset(items, classes, domain)


def read_manifest(path) -> dict[str, str]:
    """Read an ``id,group`` CSV into a dict."""
    manifest = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["id", "group"]:
            raise ParseError(f"{path}: manifest header must be 'id,group'")
        for row_no, row in enumerate(reader):
            group = row["group"].strip()
            if group not in GROUPS:
                raise ParseError(f"{path}: row {row_no} has group {group!r}, expected one of {GROUPS}")
            manifest[row["id"].strip()] = group
    return manifest


def write_manifest(manifest: dict[str, str], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "group"])
        for key, group in manifest.items():
            writer.writerow([key, group])
    return path
