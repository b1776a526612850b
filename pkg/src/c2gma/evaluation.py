"""Downstream classifier training, metrics and cross-split aggregation."""

from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .baselines import mixup_arrays, rot_augment
from .datasets import DomainDataset
from .errors import ConfigurationError, EmptyDatasetError, InsufficientDataError, ParameterError, ShapeError
from .mixing import augment_union, synthesize, synthesize_mixcg
from .utils import seeded, set_strict_determinism

CONDITIONS = ("BL", "ROT", "MIXUP", "MIXCG", "C2GMA")
METRICS = ("accuracy", "precision", "recall", "f1")
TABLE_HEADS = {"accuracy": "A", "precision": "P", "recall": "R", "f1": "F1"}


@dataclass
class ClassifierConfig:
    arch: str = "compact5"
    lr: float = 0.02
    epochs: int = 200
    batch_size: int = 512
    momentum: float = 0.9
    width: int = 16
    seed: int = 0
    strict_determinism: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ParameterError("lr must be > 0")
        if self.epochs < 0:
            raise ParameterError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.arch not in ARCHITECTURES:
            raise ParameterError(f"unknown architecture {self.arch!r}; known: {sorted(ARCHITECTURES)}")

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown classifier keys: {sorted(unknown)}")
        return cls(**d)


class Compact5(nn.Module):
    """Five convolutions, global pooling, two dense layers."""

    def __init__(self, n_classes: int = 2, width: int = 16):
        super().__init__()
        w = width

        def block(cin, cout, stride):
            return [nn.Conv2d(cin, cout, 3, stride, 1), nn.BatchNorm2d(cout), nn.ReLU()]

        self.features = nn.Sequential(
            *block(1, w, 1), *block(w, w, 2),
            *block(w, 2 * w, 1), *block(2 * w, 2 * w, 2),
            *block(2 * w, 4 * w, 1),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
        )
        self.head = nn.Sequential(nn.Linear(4 * w, 64), nn.ReLU(), nn.Linear(64, n_classes))

    def forward(self, x):
        return self.head(self.features(x))


ARCHITECTURES = {"compact5": Compact5}


class Classifier:
    """Trained network plus the roster it predicts over."""

    def __init__(self, net: nn.Module, classes, config: ClassifierConfig):
        self.net = net
        self.classes = tuple(classes)
        self.config = config
        self.loss_history: list[float] = []

    @torch.no_grad()
    def predict_proba(self, images) -> np.ndarray:
        self.net.eval()
        x = torch.as_tensor(np.asarray(images), dtype=torch.float32)
        if x.dim() == 2:
            x = x.unsqueeze(0)
        out = []
        for start in range(0, len(x), 1024):
            out.append(F.softmax(self.net(x[start:start + 1024].unsqueeze(1)), dim=1).double().numpy())
        return np.concatenate(out)

    def predict(self, image) -> np.ndarray:
        """Class-probability vector for one image."""
        return self.predict_proba(np.asarray(image)[None])[0]

    def predict_classes(self, images) -> np.ndarray:
        return self.predict_proba(images).argmax(axis=1)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({"state": self.net.state_dict(), "classes": list(self.classes), "config": asdict(self.config)}, path)
        return path

    @classmethod
    def load(cls, path) -> "Classifier":
        blob = torch.load(path, weights_only=True)
        config = ClassifierConfig.from_dict(blob["config"])
        net = ARCHITECTURES[config.arch](len(blob["classes"]), config.width)
        net.load_state_dict(blob["state"])
        net.eval()
        return cls(net, blob["classes"], config)


def soft_cross_entropy(logits, targets):
    return -(targets * F.log_softmax(logits, dim=1)).sum(dim=1).mean()


def train_classifier(ds: DomainDataset, config: ClassifierConfig, mixup_alpha: float | None = None) -> Classifier:
    """SGD on soft-target cross-entropy. ``mixup_alpha`` mixes every minibatch."""
    if len(ds) == 0:
        raise EmptyDatasetError("cannot train a classifier on an empty dataset")
    if config.strict_determinism:
        set_strict_determinism(True)
    x_all = ds.images(np.float32)
    y_all = ds.labels()
    rng = np.random.default_rng(config.seed)
    with seeded(config.seed):
        net = ARCHITECTURES[config.arch](len(ds.classes), config.width)
    opt = torch.optim.SGD(net.parameters(), lr=config.lr, momentum=config.momentum)
    clf = Classifier(net, ds.classes, config)
    n = len(ds)
    for _ in range(config.epochs):
        net.train()
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2 and n >= 2:
                continue  # batch norm needs more than one sample
            xb, yb = x_all[idx], y_all[idx]
            if mixup_alpha is not None:
                xb, yb, _, _ = mixup_arrays(xb, yb, mixup_alpha, rng)
            logits = net(torch.as_tensor(xb, dtype=torch.float32).unsqueeze(1))
            loss = soft_cross_entropy(logits, torch.as_tensor(yb, dtype=torch.float32))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            clf.loss_history.append(loss.item())
    net.eval()
    return clf


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: list | None = None  # rows = actual, columns = predicted
    positive: int = 0
    degenerate: bool = False
    notes: list = field(default_factory=list)
    macro: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def metric(self, name: str) -> float:
        return float(getattr(self, name))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def _binary_prf(tp, fp, fn):
    notes = []
    if tp + fp == 0:
        notes.append("precision undefined (no positive predictions)")
        p = 0.0
    else:
        p = tp / (tp + fp)
    if tp + fn == 0:
        notes.append("recall undefined (no positive samples)")
        r = 0.0
    else:
        r = tp / (tp + fn)
    if p + r > 0:
        f1 = 2 * p * r / (p + r)
    else:
        notes.append("f1 undefined (precision + recall = 0)")
        f1 = 0.0
    return p, r, f1, notes


def compute_metrics(predictions, actuals, positive: int = 0, n_classes: int = 2) -> MetricsReport:
    """Accuracy plus single-positive-class precision/recall/F1 and macro averages."""
    pred = np.asarray(predictions, dtype=np.int64).ravel()
    act = np.asarray(actuals, dtype=np.int64).ravel()
    if pred.shape != act.shape:
        raise ShapeError(f"{pred.size} predictions vs {act.size} actuals")
    if pred.size == 0:
        raise EmptyDatasetError("no predictions to score")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (act, pred), 1)
    tp = int(cm[positive, positive])
    fp = int(cm[:, positive].sum() - tp)
    fn = int(cm[positive, :].sum() - tp)
    p, r, f1, notes = _binary_prf(tp, fp, fn)
    per_class = []
    for c in range(n_classes):
        tc = int(cm[c, c])
        per_class.append(_binary_prf(tc, int(cm[:, c].sum() - tc), int(cm[c, :].sum() - tc))[:3])
    macro = {name: float(np.mean([pc[k] for pc in per_class])) for k, name in enumerate(("precision", "recall", "f1"))}
    return MetricsReport(
        accuracy=float(np.trace(cm) / cm.sum()),
        precision=float(p),
        recall=float(r),
        f1=float(f1),
        confusion=cm.tolist(),
        positive=positive,
        degenerate=bool(notes),
        notes=notes,
        macro=macro,
    )


@dataclass
class AggregateReport:
    reports: list
    mean: dict
    std: dict
    condition: str = ""
    splits: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"condition": self.condition, "splits": list(self.splits), "mean": self.mean, "std": self.std,
                "reports": [r.to_dict() for r in self.reports]}

    @classmethod
    def from_dict(cls, d: dict) -> "AggregateReport":
        return cls([MetricsReport.from_dict(r) for r in d["reports"]], d["mean"], d["std"],
                   d.get("condition", ""), d.get("splits", []))


def aggregate(reports, condition: str = "", splits=None) -> AggregateReport:
    """Mean and sample standard deviation (n - 1) of each metric across splits."""
    reports = list(reports)
    if len(reports) < 2:
        raise InsufficientDataError(f"need at least 2 reports to aggregate, got {len(reports)}")
    mean, std = {}, {}
    for name in METRICS:
        # exact rational arithmetic, so identical inputs give a std of exactly 0
        vals = [r.metric(name) for r in reports]
        mean[name] = float(statistics.mean(vals))
        std[name] = float(statistics.stdev(vals))
    splits = list(splits) if splits is not None else [f"split{i + 1}" for i in range(len(reports))]
    return AggregateReport(reports, mean, std, condition, splits)


def build_training_set(condition: str, train: DomainDataset, *, source=None, bundle=None, mixcg_bundle=None,
                       fakes=None, synth_count: int = 3000, alpha: float = 0.2, seed: int = 0):
    """Training set for one condition, plus the Mixup alpha to apply per batch (or None)."""
    if condition not in CONDITIONS:
        raise ConfigurationError(f"unknown condition {condition!r}; expected one of {CONDITIONS}")
    if condition == "BL":
        return train, None
    if condition == "ROT":
        return rot_augment(train), None
    if condition == "MIXUP":
        return train, alpha
    if fakes is None:
        model = bundle if condition == "C2GMA" else mixcg_bundle
        if model is None or source is None:
            raise ConfigurationError(f"condition {condition} needs a trained transfer model and a source dataset")
        expected = "c2gma" if condition == "C2GMA" else "mixcg"
        if model.config.mode != expected:
            raise ConfigurationError(f"condition {condition} needs a {expected!r} model, got {model.config.mode!r}")
        synth = synthesize if condition == "C2GMA" else synthesize_mixcg
        fakes = synth(model, source, synth_count, alpha, np.random.default_rng(seed))
    return augment_union(train, fakes), None


def run_condition(condition: str, train: DomainDataset, test: DomainDataset, config: ClassifierConfig,
                  seed: int | None = None, *, positive: str | int = "ship", **prereqs) -> MetricsReport:
    """Assemble the condition's training set, train, and score on ``test``.

    ``prereqs`` are forwarded to ``build_training_set`` (source, bundle,
    mixcg_bundle, fakes, synth_count, alpha).
    """
    if seed is not None:
        config = ClassifierConfig(**{**asdict(config), "seed": seed})
    train_set, mix_alpha = build_training_set(condition, train, seed=config.seed, **prereqs)
    clf = train_classifier(train_set, config, mixup_alpha=mix_alpha)
    pos = test.classes.index(positive) if isinstance(positive, str) else int(positive)
    report = compute_metrics(clf.predict_classes(test.images()), test.hard_labels(), pos, len(test.classes))
    report.provenance = {
        "condition": condition,
        "train_size": len(train_set),
        "synthetic": int(sum(it.synthetic for it in train_set)),
        "test_size": len(test),
        "seed": config.seed,
        "positive_class": test.classes[pos],
        "classifier": asdict(config),
        "mixup_alpha": mix_alpha,
    }
    return report


# --- serialisation ---------------------------------------------------------

def write_table_csv(aggregates, path) -> Path:
    """Results-table layout: one block per split, then an Average block of mean ± std."""
    aggregates = list(aggregates)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    heads = [TABLE_HEADS[m] for m in METRICS]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block", "condition", *heads])
        splits = aggregates[0].splits if aggregates else []
        for k, split in enumerate(splits):
            for agg in aggregates:
                r = agg.reports[k]
                writer.writerow([split, agg.condition, *[f"{r.metric(m):.3f}" for m in METRICS]])
        for agg in aggregates:
            writer.writerow(["Average", agg.condition,
                             *[f"{agg.mean[m]:.3f} ± {agg.std[m]:.3f}" for m in METRICS]])
    return path


def write_report_json(aggregates, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([a.to_dict() for a in aggregates], indent=2, sort_keys=True))
    return path


def read_report_json(path) -> list[AggregateReport]:
    return [AggregateReport.from_dict(d) for d in json.loads(Path(path).read_text())]


def median_accuracy(reports) -> float:
    return float(np.median([r.accuracy for r in reports]))


def is_close(a: float, b: float, tol: float) -> bool:
    return math.isclose(a, b, rel_tol=0.0, abs_tol=tol)
