"""Desk-scale toy experiments: transfer training sanity and the five-condition comparison."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .evaluation import CONDITIONS, ClassifierConfig, run_condition
from .gan import TrainConfig, mean_cycle_loss, train_domain_transfer
from .mixing import synthesize, synthesize_mixcg
from .toy_bench import ToySpec, generate_benchmark

# Small networks, 32 px images and a few hundred iterations keep one seed of
# the five-condition run within a few minutes on a single CPU core.
TOY_GAN = dict(
    batch_size=16, gen_width=8, disc_width=8, n_res=3, disc_layers=3, embed_dim=16,
    lr=2e-4, lambda_cyc=10.0, non_saturating=True, gen_skip=True,
)
TOY_CLASSIFIER = dict(epochs=40, batch_size=32, lr=0.01, width=8)
TOY_DATA = dict(image_size=32, source_per_class=500, train_counts="train3")


@dataclass
class ToyRun:
    seed: int
    reports: dict  # condition -> MetricsReport
    timings: dict = field(default_factory=dict)
    gan_histories: dict = field(default_factory=dict)

    def accuracy(self, condition: str) -> float:
        return self.reports[condition].accuracy


def toy_train_config(seed: int, iterations: int, mode: str = "c2gma", strict: bool = False, **overrides) -> TrainConfig:
    return TrainConfig(**{**TOY_GAN, "iterations": iterations, "seed": seed, "mode": mode,
                          "strict_determinism": strict, **overrides})


def training_sanity(seed: int = 0, iterations: int = 2000, strict: bool = False, window: int = 100, **overrides):
    """Train on the toy benchmark; returns (bundle, first-window mean, last-window mean) of the cycle loss."""
    spec = ToySpec.from_dict({**TOY_DATA, "seed": seed})
    source, train, _, _ = generate_benchmark(spec)
    bundle = train_domain_transfer(toy_train_config(seed, iterations, strict=strict, **overrides), source, train)
    return bundle, mean_cycle_loss(bundle.history, True, window), mean_cycle_loss(bundle.history, False, window)


def run_toy_conditions(seed: int, conditions=CONDITIONS, gan_iterations: int = 600, synth_count: int = 500,
                       alpha: float = 0.2, strict: bool = False, data: dict | None = None,
                       classifier: dict | None = None, gan: dict | None = None) -> ToyRun:
    """Generate one seed's benchmark, train whatever transfer models the conditions need, score each condition."""
    timings = {}
    t0 = time.perf_counter()
    spec = ToySpec.from_dict({**TOY_DATA, **(data or {}), "seed": seed})
    source, train, test, _ = generate_benchmark(spec)
    timings["data"] = time.perf_counter() - t0
    clf_config = ClassifierConfig(**{**TOY_CLASSIFIER, **(classifier or {}), "seed": seed,
                                     "strict_determinism": strict})
    histories, fakes = {}, {}
    for cond, mode, synth in (("C2GMA", "c2gma", synthesize), ("MIXCG", "mixcg", synthesize_mixcg)):
        if cond not in conditions:
            continue
        t0 = time.perf_counter()
        bundle = train_domain_transfer(toy_train_config(seed, gan_iterations, mode, strict, **(gan or {})),
                                       source, train)
        fakes[cond] = synth(bundle, source, synth_count, alpha, np.random.default_rng(seed))
        histories[cond] = bundle.history
        timings[f"gan_{mode}"] = time.perf_counter() - t0
    reports = {}
    for cond in conditions:
        t0 = time.perf_counter()
        reports[cond] = run_condition(cond, train, test, clf_config, fakes=fakes.get(cond), alpha=alpha)
        timings[f"classifier_{cond}"] = time.perf_counter() - t0
    return ToyRun(seed, reports, timings, histories)


def median_accuracies(runs) -> dict:
    conditions = runs[0].reports.keys()
    return {c: float(np.median([r.accuracy(c) for r in runs])) for c in conditions}


def run_summary(run: ToyRun) -> dict:
    """Plain-data view of a run, suitable for equality checks and JSON."""
    return {
        "seed": run.seed,
        "reports": {c: r.to_dict() for c, r in run.reports.items()},
        "losses": {c: [list(row.values()) for row in h] for c, h in run.gan_histories.items()},
    }
