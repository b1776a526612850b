import math
import warnings

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from c2gma.curation import (
    LatentStats,
    curate,
    filter_half,
    latent_stats,
    mahalanobis,
    mahalanobis_batch,
    score_dataset,
    train_vae,
)
from c2gma.datasets import DomainDataset, LabeledImage, one_hot
from c2gma.errors import EmptyDatasetError, InsufficientDataError, ShapeError
from c2gma.toy_bench import ToySpec, generate_source


def _feature_dataset(features, labels=None):
    """Images that carry their own feature vector, paired with a flattening encoder."""
    features = np.asarray(features, dtype=np.float64)
    labels = labels if labels is not None else [0] * len(features)
    items = [LabeledImage(pixels=f.reshape(1, -1), label=one_hot(c, 2), domain="source", id=f"f{i}")
             for i, (f, c) in enumerate(zip(features, labels))]
    return DomainDataset(items, ("ship", "iceberg"), "source")


def flatten(images):
    return np.asarray(images, dtype=np.float64).reshape(len(images), -1)


# --- latent statistics ------------------------------------------------------------

def test_latent_stats_three_point_example():
    s = latent_stats([(0, 0), (2, 0), (0, 2)])
    assert s.median.tolist() == [0, 0]
    assert np.allclose(s.covariance, [[4 / 3, 0], [0, 4 / 3]], atol=1e-12)


def test_latent_stats_degenerate_cluster():
    s = latent_stats([(1.5, -2.0)] * 4, eps=1e-6)
    assert s.median.tolist() == [1.5, -2.0]
    assert np.allclose(s.regularized, 1e-6 * np.eye(2), atol=0)


def test_latent_stats_componentwise_median():
    assert latent_stats([(1, 1), (1, 1), (3, 1)]).median.tolist() == [1, 1]


def test_latent_stats_needs_two():
    with pytest.raises(InsufficientDataError):
        latent_stats([(1.0, 2.0)])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_covariance_symmetric(n, d, seed):
    f = np.random.default_rng(seed).normal(size=(n, d))
    cov = latent_stats(f).covariance
    assert np.max(np.abs(cov - cov.T)) <= 1e-12


# --- mahalanobis ------------------------------------------------------------------

def test_mahalanobis_examples():
    stats = LatentStats(np.zeros(2), np.diag([2.0, 1.0]), eps=0.0)
    assert mahalanobis(np.zeros(2), stats) == 0.0
    assert abs(mahalanobis(np.array([1.0, 2.0]), stats) - math.sqrt(4.5)) < 1e-12
    with pytest.raises(ShapeError):
        mahalanobis(np.zeros(3), stats)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1), st.floats(0.1, 10))
def test_mahalanobis_scaling_and_identity(d, seed, k):
    g = np.random.default_rng(seed)
    med = g.normal(size=d)
    a = g.normal(size=(d, d))
    stats = LatentStats(med, a @ a.T + np.eye(d))
    delta = g.normal(size=d)
    base = mahalanobis(med + delta, stats)
    assert base >= 0
    assert math.isclose(mahalanobis(med + 2 * delta, stats), 2 * base, rel_tol=1e-9, abs_tol=1e-12)
    ident = LatentStats(med, np.eye(d), eps=0.0)
    assert abs(mahalanobis(med + k * delta, ident) - np.linalg.norm(k * delta)) <= 1e-9
    assert np.allclose(mahalanobis_batch([med + delta], stats), [base])


# --- filter_half ------------------------------------------------------------------

def test_filter_half_drops_outliers(rng):
    near = rng.normal(0, 0.1, size=(20, 2))
    far = np.array([(8.0, 8.0), (-9.0, 7.0), (10.0, -6.0), (-7.0, -9.0)])
    ds = _feature_dataset(np.concatenate([near, far]))
    kept = filter_half(ds, flatten)
    assert len(kept) == 12
    assert not {f"f{i}" for i in range(20, 24)} & set(kept.ids)


def test_filter_half_two_items_tie_keeps_first():
    # with two items the componentwise median is their midpoint, so both are equidistant
    ds = _feature_dataset([(0.0, 0.0), (2.0, 2.0)])
    assert filter_half(ds, flatten).ids == ["f0"]


def test_filter_half_singleton_class_warns():
    ds = _feature_dataset([(0, 0), (1, 1), (5, 5), (3, 3)], labels=[0, 0, 0, 1])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        kept = filter_half(ds, flatten)
    assert any("kept unfiltered" in str(w.message) for w in caught)
    assert "f3" in kept.ids


def test_filter_half_empty():
    with pytest.raises(EmptyDatasetError):
        filter_half(DomainDataset([], ("ship", "iceberg"), "source"), flatten)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_filter_half_ceil_and_ordering(seed):
    g = np.random.default_rng(seed)
    n0, n1, d = int(g.integers(2, 25)), int(g.integers(2, 25)), int(g.integers(1, 5))
    feats = g.normal(size=(n0 + n1, d)) * g.uniform(0.1, 5, size=d)
    labels = [0] * n0 + [1] * n1
    ds = _feature_dataset(feats, labels)
    rows = score_dataset(ds, flatten)
    for c, n in ((0, n0), (1, n1)):
        mine = [r for r, lab in zip(rows, labels) if lab == c]
        kept = [r["distance"] for r in mine if r["kept"]]
        dropped = [r["distance"] for r in mine if not r["kept"]]
        assert len(kept) == math.ceil(n / 2)
        if dropped:
            assert max(kept) <= min(dropped)
    out = filter_half(ds, flatten)
    assert set(out.ids) <= set(ds.ids)


# --- VAE --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_images():
    return generate_source(ToySpec(seed=0, image_size=32, source_per_class=50)).items


def test_vae_latent_shape(toy_images):
    model = train_vae(toy_images[:4], latent_dim=32, steps=2)
    z = model.encode(np.stack([it.pixels for it in toy_images[:3]]))
    assert z.shape == (3, 32)


def test_vae_loss_decreases(toy_images):
    model = train_vae(toy_images, latent_dim=32, steps=500, seed=0)
    h = model.loss_history
    assert len(h) == 500
    assert h[-1] < h[0]


def test_vae_deterministic(toy_images):
    a = train_vae(toy_images[:20], steps=20, seed=4)
    b = train_vae(toy_images[:20], steps=20, seed=4)
    for pa, pb in zip(a.state_dict().values(), b.state_dict().values()):
        assert torch.equal(pa, pb)


def test_vae_errors(toy_images):
    with pytest.raises(EmptyDatasetError):
        train_vae([])
    with pytest.raises(InsufficientDataError):
        train_vae(toy_images[:1])


def test_curate_per_class_and_joint(toy_images):
    ds = DomainDataset(toy_images[:10] + toy_images[50:59], ("ship", "iceberg"), "source")
    kept, rows, enc = curate(ds, latent_dim=4, steps=5, width=4)
    assert len(kept) == 5 + 5
    assert set(enc) == {0, 1}
    kept_j, _, enc_j = curate(ds, latent_dim=4, steps=5, width=4, joint=True)
    assert len(kept_j) == 10 and not isinstance(enc_j, dict)
