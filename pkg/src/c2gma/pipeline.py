"""Stage orchestration with a YAML config, content-digest caching and a run manifest.

Layout under the output directory:

    data/        source.npz, <split>_train.npz, test.npz, manifest.csv
    curated/     source.npz, scores.csv
    models/      <split>/<c2gma|mixcg>/ (bundle.pt, config.json, losses.csv)
    synth/       <split>/<c2gma|mixcg>.npz and matching provenance csv
    classifiers/ <split>/<condition>.pt
    reports/     <split>/<condition>.json
    report/      table.csv, report.json, confusion/*.png, embedding/*.png
    manifest.json   written last, also after a failure
"""

from __future__ import annotations

import json
import os
import platform
import time
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .curation import curate
from .data_ingest import load_visible_directory, parse_statoil, split_dataset
from .datasets import load_dataset, read_manifest, save_dataset, write_manifest
from .errors import C2GMAError, ConfigurationError
from .evaluation import (CONDITIONS, METRICS, TABLE_HEADS, AggregateReport, Classifier, ClassifierConfig,
                         MetricsReport, aggregate, build_training_set, compute_metrics, train_classifier,
                         write_report_json, write_table_csv)
from .gan import TrainConfig, load_bundle, train_domain_transfer
from .mixing import dataset_to_fakes, fakes_to_dataset, synthesize, synthesize_mixcg, write_provenance
from .plots import emit_confusion_heatmaps, emit_embedding_plot
from .toy_bench import ToySpec, generate_benchmark
from .utils import bytes_digest, path_digest

STAGES = ("ingest", "toy-bench", "curate", "train-gan", "synthesize", "train-classifier", "evaluate", "report")
OUT_ENV = "C2GMA_OUT"
GAN_MODES = {"C2GMA": "c2gma", "MIXCG": "mixcg"}


class PipelineError(C2GMAError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunConfig:
    """Every key is documented in the README; CLI flags override ``seed``, ``out``, ``stages`` and
    ``strict_determinism``."""

    stages: list = field(default_factory=lambda: ["toy-bench", "train-gan", "synthesize", "train-classifier",
                                                  "evaluate", "report"])
    out: str | None = None
    seed: int = 0
    splits: list = field(default_factory=lambda: ["train1", "train2", "train3"])
    data: dict = field(default_factory=dict)  # statoil, manifest, visible_images, visible_labels
    toy: dict = field(default_factory=dict)  # ToySpec overrides
    curate: dict = field(default_factory=dict)  # latent_dim, steps, joint, width
    gan: dict = field(default_factory=dict)  # TrainConfig overrides
    classifier: dict = field(default_factory=dict)  # ClassifierConfig overrides
    conditions: list = field(default_factory=lambda: list(CONDITIONS))
    synth_count: int = 3000
    alpha: float = 0.2
    cache: bool = True
    strict_determinism: bool = False
    plots: bool = True
    perplexity: float = 30.0

    def __post_init__(self):
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ConfigurationError(f"unknown stages {unknown}; known: {list(STAGES)}")
        bad = [c for c in self.conditions if c not in CONDITIONS]
        if bad:
            raise ConfigurationError(f"unknown conditions {bad}; known: {list(CONDITIONS)}")
        if self.synth_count < 0:
            raise ConfigurationError("synth_count must be >= 0")
        # fail early on bad nested keys
        TrainConfig.from_dict(self.gan)
        ClassifierConfig.from_dict(self.classifier)

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_yaml(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        return cls.from_dict(yaml.safe_load(path.read_text()) or {})

    def to_dict(self) -> dict:
        return asdict(self)

    def out_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUT_ENV) or "c2gma_out")

    def ordered_stages(self) -> list:
        return [s for s in STAGES if s in self.stages]


@dataclass
class StageRecord:
    name: str
    status: str  # "ok", "cached" or "failed"
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    seconds: float = 0.0
    error: str | None = None


@dataclass
class RunManifest:
    config: dict
    tool_version: str = __version__
    python: str = platform.python_version()
    seeds: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    failed_stage: str | None = None
    started: float = 0.0
    finished: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str))
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        d["stages"] = [StageRecord(**s) for s in d["stages"]]
        return cls(**d)

    def stage(self, name: str) -> StageRecord | None:
        return next((s for s in self.stages if s.name == name), None)


class _Context:
    def __init__(self, config: RunConfig):
        self.config = config
        self.out = config.out_dir()

    def p(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    # artifacts --------------------------------------------------------------
    def source_path(self) -> Path:
        curated = self.p("curated", "source.npz")
        return curated if curated.exists() else self.p("data", "source.npz")

    def train_path(self, split) -> Path:
        return self.p("data", f"{split}_train.npz")

    def test_path(self) -> Path:
        return self.p("data", "test.npz")

    def gan_modes(self) -> list:
        return [GAN_MODES[c] for c in self.config.conditions if c in GAN_MODES]

    def train_config(self, split: str, mode: str) -> TrainConfig:
        return TrainConfig.from_dict({**self.config.gan, "seed": self.config.seed, "mode": mode,
                                      "strict_determinism": self.config.strict_determinism})

    def classifier_config(self) -> ClassifierConfig:
        return ClassifierConfig.from_dict({**self.config.classifier, "seed": self.config.seed,
                                           "strict_determinism": self.config.strict_determinism})


# --- stages ------------------------------------------------------------------
# Each stage returns (inputs, outputs, run) where run() produces the outputs.

def _require(paths):
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        raise ConfigurationError(f"missing input(s): {', '.join(missing)}")


def _stage_ingest(ctx: _Context):
    d = ctx.config.data
    for key in ("statoil", "manifest", "visible_images", "visible_labels"):
        if key not in d:
            raise ConfigurationError(f"ingest needs data.{key} in the config")
    inputs = [Path(d[k]) for k in ("statoil", "manifest", "visible_images", "visible_labels")]
    outputs = [ctx.p("data", "source.npz"), ctx.test_path(), ctx.p("data", "manifest.csv")]
    outputs += [ctx.train_path(s) for s in ctx.config.splits]

    def run():
        records = parse_statoil(d["statoil"])
        manifest = read_manifest(d["manifest"])
        test = None
        for split in ctx.config.splits:
            train, test = split_dataset(records, manifest, split, seed=ctx.config.seed)
            save_dataset(train, ctx.train_path(split))
        save_dataset(test, ctx.test_path())
        write_manifest(manifest, ctx.p("data", "manifest.csv"))
        save_dataset(load_visible_directory(d["visible_images"], d["visible_labels"]), ctx.p("data", "source.npz"))

    return inputs, outputs, run


def _stage_toy(ctx: _Context):
    outputs = [ctx.p("data", "source.npz"), ctx.test_path(), ctx.p("data", "manifest.csv")]
    outputs += [ctx.train_path(s) for s in ctx.config.splits]

    def run():
        manifest = {}
        for split in ctx.config.splits:
            spec = ToySpec.from_dict({**ctx.config.toy, "seed": ctx.config.seed, "train_counts": split})
            source, train, test, m = generate_benchmark(spec)
            save_dataset(train, ctx.train_path(split))
            manifest.update(m)
        # source, test and the per-item streams do not depend on the split
        save_dataset(source, ctx.p("data", "source.npz"))
        save_dataset(test, ctx.test_path())
        write_manifest(manifest, ctx.p("data", "manifest.csv"))

    return [], outputs, run


def _stage_curate(ctx: _Context):
    inputs = [ctx.p("data", "source.npz")]
    outputs = [ctx.p("curated", "source.npz"), ctx.p("curated", "scores.csv")]

    def run():
        opts = {"seed": ctx.config.seed, **ctx.config.curate}
        kept, rows, _ = curate(load_dataset(inputs[0]), **opts)
        save_dataset(kept, outputs[0])
        with open(outputs[1], "w") as fh:
            fh.write("id,class,distance,kept\n")
            for r in rows:
                fh.write(f"{r['id']},{r['class']},{r['distance']!r},{int(r['kept'])}\n")

    return inputs, outputs, run


def _stage_train_gan(ctx: _Context):
    inputs = [ctx.source_path()] + [ctx.train_path(s) for s in ctx.config.splits]
    outputs = [ctx.p("models", s, m) for s in ctx.config.splits for m in ctx.gan_modes()]

    def run():
        source = load_dataset(ctx.source_path())
        for split in ctx.config.splits:
            target = load_dataset(ctx.train_path(split))
            for mode in ctx.gan_modes():
                train_domain_transfer(ctx.train_config(split, mode), source, target, out_dir=ctx.p("models", split, mode))

    return inputs, outputs, run


def _stage_synthesize(ctx: _Context):
    inputs = [ctx.source_path()] + [ctx.p("models", s, m) for s in ctx.config.splits for m in ctx.gan_modes()]
    outputs = [ctx.p("synth", s, f"{m}{ext}") for s in ctx.config.splits for m in ctx.gan_modes()
               for ext in (".npz", "_provenance.csv")]

    def run():
        source = load_dataset(ctx.source_path())
        for split in ctx.config.splits:
            for mode in ctx.gan_modes():
                bundle = load_bundle(ctx.p("models", split, mode))
                synth = synthesize if mode == "c2gma" else synthesize_mixcg
                fakes = synth(bundle, source, ctx.config.synth_count, ctx.config.alpha,
                              np.random.default_rng(ctx.config.seed))
                save_dataset(fakes_to_dataset(fakes, source.classes), ctx.p("synth", split, f"{mode}.npz"))
                write_provenance(fakes, ctx.p("synth", split, f"{mode}_provenance.csv"))

    return inputs, outputs, run


def _stage_train_classifier(ctx: _Context):
    inputs = [ctx.train_path(s) for s in ctx.config.splits]
    inputs += [ctx.p("synth", s, f"{m}.npz") for s in ctx.config.splits for m in ctx.gan_modes()]
    outputs = [ctx.p("classifiers", s, f"{c}.pt") for s in ctx.config.splits for c in ctx.config.conditions]

    def run():
        cfg = ctx.classifier_config()
        for split in ctx.config.splits:
            train = load_dataset(ctx.train_path(split))
            for cond in ctx.config.conditions:
                fakes = None
                if cond in GAN_MODES:
                    fakes = dataset_to_fakes(load_dataset(ctx.p("synth", split, f"{GAN_MODES[cond]}.npz")))
                train_set, mix = build_training_set(cond, train, fakes=fakes, alpha=ctx.config.alpha,
                                                    seed=ctx.config.seed)
                clf = train_classifier(train_set, cfg, mixup_alpha=mix)
                clf.save(ctx.p("classifiers", split, f"{cond}.pt"))
                sidecar = {"train_size": len(train_set), "synthetic": int(sum(it.synthetic for it in train_set)),
                           "mixup_alpha": mix}
                ctx.p("classifiers", split, f"{cond}.json").write_text(json.dumps(sidecar, sort_keys=True))

    return inputs, outputs, run


def _stage_evaluate(ctx: _Context):
    inputs = [ctx.test_path()] + [ctx.p("classifiers", s, f"{c}.pt") for s in ctx.config.splits
                                  for c in ctx.config.conditions]
    outputs = [ctx.p("reports", s, f"{c}.json") for s in ctx.config.splits for c in ctx.config.conditions]

    def run():
        test = load_dataset(ctx.test_path())
        pos = test.classes.index("ship") if "ship" in test.classes else 0
        for split in ctx.config.splits:
            for cond in ctx.config.conditions:
                clf = Classifier.load(ctx.p("classifiers", split, f"{cond}.pt"))
                report = compute_metrics(clf.predict_classes(test.images()), test.hard_labels(), pos,
                                         len(test.classes))
                sidecar = ctx.p("classifiers", split, f"{cond}.json")
                extra = json.loads(sidecar.read_text()) if sidecar.exists() else {}
                report.provenance = {"condition": cond, "split": split, "test_size": len(test),
                                     "positive_class": test.classes[pos], "seed": ctx.config.seed,
                                     "classifier": asdict(clf.config), **extra}
                path = ctx.p("reports", split, f"{cond}.json")
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))

    return inputs, outputs, run


def _stage_report(ctx: _Context):
    inputs = [ctx.p("reports", s, f"{c}.json") for s in ctx.config.splits for c in ctx.config.conditions]
    outputs = [ctx.p("report", "table.csv"), ctx.p("report", "report.json")]

    def run():
        aggs = []
        for cond in ctx.config.conditions:
            reports = [MetricsReport.from_dict(json.loads(ctx.p("reports", s, f"{cond}.json").read_text()))
                       for s in ctx.config.splits]
            if len(reports) >= 2:
                aggs.append(aggregate(reports, cond, ctx.config.splits))
            else:
                aggs.append(AggregateReport(reports, {}, {}, cond, list(ctx.config.splits)))
        if all(a.mean for a in aggs):
            write_table_csv(aggs, outputs[0])
        else:
            _write_single_split_table(aggs, outputs[0])
        write_report_json(aggs, outputs[1])
        if ctx.config.plots:
            emit_confusion_heatmaps(aggs, ctx.p("report", "confusion"))
            synth = ctx.p("synth", ctx.config.splits[0], "c2gma.npz")
            if synth.exists():
                real = load_dataset(ctx.test_path())
                fakes = dataset_to_fakes(load_dataset(synth))[: len(real)]
                n = len(real) + len(fakes)
                perplexity = min(ctx.config.perplexity, max(1.0, (n - 1) / 3))
                emit_embedding_plot(real, fakes, ctx.p("report", "embedding"), perplexity, ctx.config.seed)

    return inputs, outputs, run


def _write_single_split_table(aggs, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(["block", "condition", *[TABLE_HEADS[m] for m in METRICS]]) + "\n")
        for agg in aggs:
            for split, r in zip(agg.splits, agg.reports):
                fh.write(",".join([split, agg.condition, *[f"{r.metric(m):.3f}" for m in METRICS]]) + "\n")


STAGE_FUNCS = {
    "ingest": _stage_ingest,
    "toy-bench": _stage_toy,
    "curate": _stage_curate,
    "train-gan": _stage_train_gan,
    "synthesize": _stage_synthesize,
    "train-classifier": _stage_train_classifier,
    "evaluate": _stage_evaluate,
    "report": _stage_report,
}

# config keys that influence each stage's outputs
STAGE_KEYS = {
    "ingest": ("seed", "splits", "data"),
    "toy-bench": ("seed", "splits", "toy"),
    "curate": ("seed", "curate"),
    "train-gan": ("seed", "splits", "gan", "conditions", "strict_determinism"),
    "synthesize": ("seed", "splits", "conditions", "synth_count", "alpha"),
    "train-classifier": ("seed", "splits", "classifier", "conditions", "alpha", "strict_determinism"),
    "evaluate": ("seed", "splits", "conditions"),
    "report": ("splits", "conditions", "plots", "perplexity", "seed"),
}


def _digests(paths) -> dict:
    return {str(p): path_digest(p) for p in paths if Path(p).exists()}


def _cache_key(name: str, config: RunConfig, inputs: dict) -> str:
    slice_ = {k: getattr(config, k) for k in STAGE_KEYS[name]}
    blob = json.dumps({"stage": name, "config": slice_, "inputs": inputs, "version": __version__},
                      sort_keys=True, default=str)
    return bytes_digest(blob.encode())


def run_pipeline(config: RunConfig, progress=print) -> RunManifest:
    """Run the selected stages in order. Raises PipelineError after writing the manifest on failure."""
    ctx = _Context(config)
    ctx.out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config=config.to_dict(), started=time.time(),
                           seeds={"seed": config.seed, "gan": config.seed, "classifier": config.seed,
                                  "synthesis": config.seed})
    cache_dir = ctx.p(".cache")
    try:
        for name in config.ordered_stages():
            t0 = time.perf_counter()
            record = StageRecord(name, "ok")
            manifest.stages.append(record)
            try:
                inputs, outputs, run = STAGE_FUNCS[name](ctx)
                _require(inputs)
                record.inputs = _digests(inputs)
                key = _cache_key(name, config, record.inputs)
                cache_file = cache_dir / f"{name}.json"
                cached = json.loads(cache_file.read_text()) if cache_file.exists() else None
                if (config.cache and cached and cached["key"] == key
                        and all(Path(p).exists() for p in cached["outputs"])
                        and _digests(cached["outputs"]) == cached["outputs"]):
                    record.status = "cached"
                    record.outputs = cached["outputs"]
                else:
                    run()
                    _require(outputs)
                    record.outputs = _digests(outputs)
                    cache_dir.mkdir(parents=True, exist_ok=True)
                    cache_file.write_text(json.dumps({"key": key, "outputs": record.outputs}, sort_keys=True))
            except Exception as exc:  # recorded, then re-raised with the stage name
                record.status = "failed"
                record.error = "".join(traceback.format_exception_only(type(exc), exc)).strip()
                manifest.failed_stage = name
                raise PipelineError(name, exc) from exc
            finally:
                record.seconds = time.perf_counter() - t0
            if progress is not None:
                progress(f"[{record.status}] {name} ({record.seconds:.1f}s)")
    finally:
        manifest.finished = time.time()
        manifest.write(ctx.p("manifest.json"))
    return manifest
