"""Diagnostic figures: real/synthetic embedding scatter and confusion-matrix heatmaps."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from sklearn.manifold import TSNE  # noqa: E402

from .errors import ParameterError  # noqa: E402


def _flatten(real, fake):
    x_real = np.stack([it.pixels.ravel() for it in real]).astype(np.float64) if len(real) else None
    x_fake = np.stack([np.asarray(f.image).ravel() for f in fake]).astype(np.float64) if len(fake) else None
    parts = [p for p in (x_real, x_fake) if p is not None]
    x = np.concatenate(parts)
    y_real = [int(it.hard_label) for it in real]
    y_fake = [int(np.argmax(f.label)) for f in fake]
    is_fake = np.array([False] * len(real) + [True] * len(fake))
    return x, np.array(y_real + y_fake), is_fake


def embed_points(x, perplexity: float = 30.0, seed: int = 0) -> np.ndarray:
    n = len(x)
    if n < 2:
        raise ParameterError(f"need at least 2 points to embed, got {n}")
    if perplexity >= n:
        raise ParameterError(f"perplexity {perplexity} is too large for {n} points; try perplexity={max(1.0, (n - 1) / 3):.1f}")
    return TSNE(n_components=2, perplexity=perplexity, random_state=seed, init="pca").fit_transform(x)


def emit_embedding_plot(real, fake, out, perplexity: float = 30.0, seed: int = 0, classes=None) -> dict:
    """Two-dimensional t-SNE of flattened real and synthetic images, one figure per class.

    Synthetic items are assigned to the class of their largest label component.
    Returns {"coords", "labels", "is_fake", "files", "perplexity", "seed"}.
    """
    fake = list(fake)
    if len(real) + len(fake) < 2:
        raise ParameterError("need at least 2 items in total to embed")
    x, labels, is_fake = _flatten(real, fake)
    coords = embed_points(x, perplexity, seed)
    classes = tuple(classes or getattr(real, "classes", None) or range(int(labels.max()) + 1))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for k, name in enumerate(classes):
        sel = labels == k
        if not sel.any():
            continue
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        r, f = sel & ~is_fake, sel & is_fake
        ax.scatter(coords[r, 0], coords[r, 1], s=12, marker="o", label="real")
        ax.scatter(coords[f, 0], coords[f, 1], s=12, marker="x", label="synthetic")
        ax.set_title(f"{name}  (perplexity {perplexity:g}, seed {seed})")
        ax.legend(loc="best")
        path = out / f"embedding_{name}.png"
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        files.append(path)
    return {"coords": coords, "labels": labels, "is_fake": is_fake, "files": files,
            "perplexity": perplexity, "seed": seed}


def emit_confusion_heatmaps(aggregates, out, classes=("ship", "iceberg")) -> dict:
    """One annotated heatmap per (split, condition); returns {path: annotation strings}."""
    aggregates = list(aggregates or [])
    out = Path(out)
    written = {}
    for agg in aggregates:
        for split, report in zip(agg.splits, agg.reports):
            if report.confusion is None:
                continue
            cm = np.asarray(report.confusion)
            out.mkdir(parents=True, exist_ok=True)
            fig, ax = plt.subplots(figsize=(3.2, 3.0))
            ax.imshow(cm, cmap="Blues")
            texts = []
            for i in range(cm.shape[0]):
                for j in range(cm.shape[1]):
                    t = ax.text(j, i, str(int(cm[i, j])), ha="center", va="center")
                    texts.append(t.get_text())
            ax.set_xticks(range(len(classes)), classes)
            ax.set_yticks(range(len(classes)), classes)
            ax.set_xlabel("predicted")
            ax.set_ylabel("actual")
            ax.set_title(f"{agg.condition} / {split}")
            path = out / f"confusion_{split}_{agg.condition}.png"
            fig.savefig(path, dpi=100, bbox_inches="tight")
            plt.close(fig)
            written[path] = texts
    return written
