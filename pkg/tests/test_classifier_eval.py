import csv
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from c2gma.datasets import DomainDataset, LabeledImage, one_hot
from c2gma.errors import ConfigurationError, EmptyDatasetError, InsufficientDataError, ParameterError, ShapeError
from c2gma.evaluation import (
    Classifier,
    ClassifierConfig,
    MetricsReport,
    aggregate,
    compute_metrics,
    read_report_json,
    run_condition,
    train_classifier,
    write_report_json,
    write_table_csv,
)


def brute_force_metrics(pred, act, positive):
    """Counting oracle written from the textbook definitions."""
    tp = fp = fn = tn = 0
    for p, a in zip(pred, act):
        if p == positive and a == positive:
            tp += 1
        elif p == positive:
            fp += 1
        elif a == positive:
            fn += 1
        else:
            tn += 1
    acc = sum(1 for p, a in zip(pred, act) if p == a) / len(pred)
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return acc, prec, rec, f1


def _report(acc, f1=0.5):
    return MetricsReport(accuracy=acc, precision=0.5, recall=0.5, f1=f1)


def _blob_dataset(n, size=8, seed=0):
    """Linearly separable toy set: bright top half vs bright bottom half."""
    g = np.random.default_rng(seed)
    items = []
    for i in range(n):
        c = i % 2
        img = g.uniform(0, 0.2, size=(size, size))
        if c == 0:
            img[: size // 2] += 0.7
        else:
            img[size // 2:] += 0.7
        items.append(LabeledImage(pixels=img.astype(np.float32), label=one_hot(c, 2), domain="target", id=f"b{i}"))
    return DomainDataset(items, ("ship", "iceberg"), "target")


# --- compute_metrics ----------------------------------------------------------------

def test_perfect_classifier():
    r = compute_metrics([0, 1, 1, 0, 1], [0, 1, 1, 0, 1])
    assert (r.accuracy, r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0, 1.0)
    assert r.confusion[0][1] == 0 and r.confusion[1][0] == 0
    assert not r.degenerate


def test_confusion_counts_example():
    # TP=3, FP=1, FN=2, TN=4 with positive class 0
    act = [0] * 3 + [1] + [0] * 2 + [1] * 4
    pred = [0] * 3 + [0] + [1] * 2 + [1] * 4
    r = compute_metrics(pred, act, positive=0)
    assert abs(r.accuracy - 0.7) < 1e-12
    assert abs(r.precision - 0.75) < 1e-12
    assert abs(r.recall - 0.6) < 1e-12
    assert abs(r.f1 - 0.6667) <= 1e-4
    assert r.confusion == [[3, 2], [1, 4]]
    assert sum(map(sum, r.confusion)) == 10


def test_all_negative_predictions_degenerate():
    r = compute_metrics([1, 1, 1, 1], [0, 1, 0, 1], positive=0)
    assert r.recall == 0.0 and r.precision == 0.0 and r.degenerate
    assert any("precision" in n for n in r.notes)


def test_metrics_errors():
    with pytest.raises(ShapeError):
        compute_metrics([0, 1], [0])
    with pytest.raises(EmptyDatasetError):
        compute_metrics([], [])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 200), st.integers(0, 2**31 - 1), st.integers(0, 1))
def test_metrics_match_counting_oracle(n, seed, positive):
    g = np.random.default_rng(seed)
    pred, act = g.integers(0, 2, n).tolist(), g.integers(0, 2, n).tolist()
    r = compute_metrics(pred, act, positive=positive)
    assert (r.accuracy, r.precision, r.recall, r.f1) == brute_force_metrics(pred, act, positive)
    assert sum(map(sum, r.confusion)) == n


def test_macro_averages_reported():
    r = compute_metrics([0, 1, 1, 0], [0, 1, 0, 0])
    assert set(r.macro) == {"precision", "recall", "f1"}
    assert abs(r.macro["precision"] - (1.0 + 0.5) / 2) < 1e-12


# --- aggregate ------------------------------------------------------------------------

def test_aggregate_reference_values():
    agg = aggregate([_report(a, f) for a, f in ((0.800, 0.806), (0.771, 0.787), (0.691, 0.716))])
    assert abs(agg.mean["accuracy"] - 0.754) <= 0.001 and abs(agg.std["accuracy"] - 0.056) <= 0.001
    assert abs(agg.mean["f1"] - 0.769) <= 0.001 and abs(agg.std["f1"] - 0.047) <= 0.001


def test_aggregate_identical_and_errors():
    agg = aggregate([_report(0.8)] * 3)
    assert agg.std["accuracy"] == 0.0 and agg.mean["accuracy"] == 0.8
    with pytest.raises(InsufficientDataError):
        aggregate([_report(0.8)])
    with pytest.raises(InsufficientDataError):
        aggregate([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=10))
def test_aggregate_two_pass_oracle(values):
    agg = aggregate([_report(v) for v in values])
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    assert abs(agg.mean["accuracy"] - mean) <= 1e-12
    assert abs(agg.std["accuracy"] - math.sqrt(var)) <= 1e-12
    assert min(values) - 1e-12 <= agg.mean["accuracy"] <= max(values) + 1e-12


# --- classifier -----------------------------------------------------------------------

def test_config_defaults_and_validation():
    c = ClassifierConfig()
    assert (c.lr, c.epochs, c.batch_size) == (0.02, 200, 512)
    for bad in (dict(lr=0), dict(epochs=-1), dict(batch_size=0), dict(arch="alexnet")):
        with pytest.raises(ParameterError):
            ClassifierConfig(**bad)
    with pytest.raises(ConfigurationError):
        ClassifierConfig.from_dict({"learning_rate": 0.1})


def test_zero_epochs_returns_initial_weights():
    ds = _blob_dataset(8)
    a = train_classifier(ds, ClassifierConfig(epochs=0, width=4, seed=3))
    b = train_classifier(ds, ClassifierConfig(epochs=0, width=4, seed=3))
    assert a.loss_history == []
    for x, y in zip(a.net.state_dict().values(), b.net.state_dict().values()):
        assert torch.equal(x, y)


def test_empty_dataset_rejected():
    with pytest.raises(EmptyDatasetError):
        train_classifier(DomainDataset([], ("ship", "iceberg"), "target"), ClassifierConfig(epochs=1))


def test_separable_set_learned():
    ds = _blob_dataset(200)
    clf = train_classifier(ds, ClassifierConfig(epochs=50, batch_size=32, lr=0.02, width=4))
    acc = (clf.predict_classes(ds.images()) == ds.hard_labels()).mean()
    assert acc >= 0.95


def test_predict_contract_and_roundtrip(tmp_path):
    ds = _blob_dataset(16)
    clf = train_classifier(ds, ClassifierConfig(epochs=2, batch_size=8, width=4))
    p = clf.predict(ds[0].pixels)
    assert p.shape == (2,) and abs(p.sum() - 1) < 1e-6
    back = Classifier.load(clf.save(tmp_path / "clf.pt"))
    assert np.allclose(back.predict_proba(ds.images()), clf.predict_proba(ds.images()))
    assert back.classes == clf.classes


def test_training_deterministic():
    ds = _blob_dataset(32)
    cfg = ClassifierConfig(epochs=3, batch_size=8, width=4, seed=5, strict_determinism=True)
    a, b = train_classifier(ds, cfg), train_classifier(ds, cfg)
    assert a.loss_history == b.loss_history


# --- run_condition --------------------------------------------------------------------

CFG = ClassifierConfig(epochs=1, batch_size=64, width=4)


def test_bl_accounting():
    train, test = _blob_dataset(20), _blob_dataset(30, seed=1)
    r = run_condition("BL", train, test, CFG, seed=0)
    assert sum(map(sum, r.confusion)) == 30
    prov = r.provenance
    assert prov["condition"] == "BL" and prov["train_size"] == 20 and prov["positive_class"] == "ship"


def test_rot_quadruples_training_set():
    r = run_condition("ROT", _blob_dataset(128), _blob_dataset(10, seed=1), CFG)
    assert r.provenance["train_size"] == 512


def test_mixup_records_alpha():
    r = run_condition("MIXUP", _blob_dataset(16), _blob_dataset(10, seed=1), CFG, alpha=0.2)
    assert r.provenance["mixup_alpha"] == 0.2


def test_generative_conditions_need_model():
    for cond in ("C2GMA", "MIXCG"):
        with pytest.raises(ConfigurationError):
            run_condition(cond, _blob_dataset(8), _blob_dataset(8), CFG)
    with pytest.raises(ConfigurationError):
        run_condition("SMOTE", _blob_dataset(8), _blob_dataset(8), CFG)


def test_run_condition_deterministic():
    train, test = _blob_dataset(24), _blob_dataset(20, seed=1)
    cfg = ClassifierConfig(epochs=2, batch_size=8, width=4, strict_determinism=True)
    assert run_condition("BL", train, test, cfg, seed=1) == run_condition("BL", train, test, cfg, seed=1)


# --- serialisation --------------------------------------------------------------------

def _aggregates():
    out = []
    for cond, accs in (("BL", (0.6, 0.7, 0.65)), ("C2GMA", (0.8, 0.771, 0.691))):
        reports = [compute_metrics([0, 1, 1], [0, 1, 0]) for _ in accs]
        for r, a in zip(reports, accs):
            r.accuracy = a
        out.append(aggregate(reports, cond, ["Train #1", "Train #2", "Train #3"]))
    return out


def test_table_csv_layout(tmp_path):
    rows = list(csv.reader(open(write_table_csv(_aggregates(), tmp_path / "t.csv"), encoding="utf-8")))
    assert rows[0] == ["block", "condition", "A", "P", "R", "F1"]
    assert [r[0] for r in rows[1:7]] == ["Train #1"] * 2 + ["Train #2"] * 2 + ["Train #3"] * 2
    avg = [r for r in rows if r[0] == "Average"]
    assert [r[1] for r in avg] == ["BL", "C2GMA"]
    assert avg[1][2] == "0.754 ± 0.056"


def test_report_json_roundtrip(tmp_path):
    aggs = _aggregates()
    back = read_report_json(write_report_json(aggs, tmp_path / "r.json"))
    assert [b.to_dict() for b in back] == [a.to_dict() for a in aggs]
