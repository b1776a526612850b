import csv
import json

import numpy as np
import pytest
import yaml

from c2gma.cli import main
from c2gma.datasets import DomainDataset, LabeledImage, one_hot
from c2gma.errors import ConfigurationError, ParameterError
from c2gma.evaluation import aggregate, compute_metrics
from c2gma.mixing import SynthesizedSample
from c2gma.pipeline import OUT_ENV, PipelineError, RunConfig, RunManifest, run_pipeline
from c2gma.plots import emit_confusion_heatmaps, emit_embedding_plot

TINY_RUN = {
    "toy": {"image_size": 16, "source_per_class": 20,
            "test_counts": {"ship": [4, 4, 4], "iceberg": [4, 4, 4]}},
    "gan": {"iterations": 3, "batch_size": 4, "gen_width": 4, "disc_width": 4, "n_res": 1,
            "disc_layers": 2, "embed_dim": 8},
    "classifier": {"epochs": 1, "batch_size": 64, "width": 4},
    "synth_count": 20,
    "perplexity": 5.0,
}


def _quiet(_msg):
    pass


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    config = RunConfig.from_dict({**TINY_RUN, "out": str(out)})
    first = run_pipeline(config, progress=_quiet)
    second = run_pipeline(config, progress=_quiet)
    return out, config, first, second


# --- run_pipeline ---------------------------------------------------------------------

def test_empty_stage_list(tmp_path):
    manifest = run_pipeline(RunConfig(stages=[], out=str(tmp_path)), progress=_quiet)
    assert manifest.stages == [] and manifest.failed_stage is None
    assert RunManifest.read(tmp_path / "manifest.json").stages == []


def test_toy_end_to_end_table(toy_run):
    out, config, first, _ = toy_run
    assert [s.name for s in first.stages] == config.ordered_stages()
    assert all(s.status == "ok" for s in first.stages)
    rows = list(csv.reader(open(out / "report" / "table.csv", encoding="utf-8")))
    assert rows[0] == ["block", "condition", "A", "P", "R", "F1"]
    assert len(rows) == 1 + 3 * 5 + 5
    assert [r[1] for r in rows if r[0] == "Average"] == ["BL", "ROT", "MIXUP", "MIXCG", "C2GMA"]
    assert len(list((out / "report" / "confusion").glob("*.png"))) == 15
    assert (out / "synth" / "train1" / "c2gma_provenance.csv").exists()


def test_manifest_records_digests(toy_run):
    out, _, first, _ = toy_run
    on_disk = RunManifest.read(out / "manifest.json")
    evaluate = on_disk.stage("evaluate")
    assert evaluate.inputs and evaluate.outputs
    assert all(len(d) == 64 for d in evaluate.outputs.values())
    assert on_disk.tool_version and on_disk.seeds["seed"] == 0


def test_rerun_fully_cached(toy_run):
    _, _, first, second = toy_run
    assert all(s.status == "cached" for s in second.stages)
    assert second.stage("report").outputs == first.stage("report").outputs


def test_ingest_failure_names_stage(tmp_path):
    data = {k: str(tmp_path / f"missing_{k}") for k in ("statoil", "manifest", "visible_images", "visible_labels")}
    config = RunConfig(stages=["ingest"], out=str(tmp_path / "o"), data=data)
    with pytest.raises(PipelineError) as info:
        run_pipeline(config, progress=_quiet)
    assert info.value.stage == "ingest"
    manifest = RunManifest.read(tmp_path / "o" / "manifest.json")
    assert manifest.failed_stage == "ingest" and manifest.stage("ingest").status == "failed"


def test_config_validation(tmp_path):
    with pytest.raises(ConfigurationError):
        RunConfig(stages=["deploy"])
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict({"epochs": 3})
    with pytest.raises(ConfigurationError):
        RunConfig(gan={"learning_rate": 1})
    with pytest.raises(ConfigurationError):
        RunConfig.from_yaml(tmp_path / "absent.yaml")


# --- CLI ------------------------------------------------------------------------------

def test_cli_success_and_env_default(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env_out"))
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(TINY_RUN))
    assert main(["toy-bench", "--config", str(cfg), "--seed", "7"]) == 0
    assert "done: 1 stage(s)" in capsys.readouterr().out
    manifest = RunManifest.read(tmp_path / "env_out" / "manifest.json")
    assert [s.name for s in manifest.stages] == ["toy-bench"] and manifest.config["seed"] == 7


def test_cli_stage_list_and_out_flag(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(TINY_RUN))
    out = tmp_path / "flag_out"
    assert main(["run", "--config", str(cfg), "--out", str(out), "--stages", "toy-bench,curate",
                 "--strict-determinism"]) == 0
    manifest = RunManifest.read(out / "manifest.json")
    assert [s.name for s in manifest.stages] == ["toy-bench", "curate"]
    assert manifest.config["strict_determinism"] is True


def test_cli_failure_exit_code(tmp_path, capsys):
    assert main(["train-gan", "--out", str(tmp_path)]) == 1
    assert "stage 'train-gan' failed" in capsys.readouterr().err
    assert main(["run", "--stages", "bogus", "--out", str(tmp_path)]) == 2


# --- plots ------------------------------------------------------------------------------

def _clusters(n_each, seed=0, size=6):
    g = np.random.default_rng(seed)
    real = DomainDataset([LabeledImage(pixels=g.normal(0, 0.05, (size, size)), label=one_hot(0, 2), id=f"r{i}")
                          for i in range(n_each)], ("ship", "iceberg"), "target")
    fake = [SynthesizedSample(g.normal(3, 0.05, (size, size)), np.array([1.0, 0.0])) for _ in range(n_each)]
    return real, fake


def test_embedding_cardinality_and_files(tmp_path):
    real, fake = _clusters(10)
    res = emit_embedding_plot(real, fake, tmp_path, perplexity=5, seed=0)
    assert res["coords"].shape == (20, 2) and res["is_fake"].sum() == 10
    assert all(p.exists() for p in res["files"]) and len(res["files"]) == 1


def test_embedding_deterministic(tmp_path):
    real, fake = _clusters(10)
    a = emit_embedding_plot(real, fake, tmp_path / "a", perplexity=5, seed=3)
    b = emit_embedding_plot(real, fake, tmp_path / "b", perplexity=5, seed=3)
    assert np.array_equal(a["coords"], b["coords"])


def test_embedding_separates_clusters(tmp_path):
    real, fake = _clusters(15)
    res = emit_embedding_plot(real, fake, tmp_path, perplexity=5, seed=0)
    c, f = res["coords"], res["is_fake"]
    between = np.linalg.norm(c[f].mean(axis=0) - c[~f].mean(axis=0))
    within = np.mean([np.linalg.norm(c[m] - c[m].mean(axis=0), axis=1).mean() for m in (f, ~f)])
    assert between > within


def test_embedding_perplexity_error(tmp_path):
    real, fake = _clusters(3)
    with pytest.raises(ParameterError, match="try perplexity"):
        emit_embedding_plot(real, fake, tmp_path, perplexity=30)
    with pytest.raises(ParameterError):
        emit_embedding_plot(real.subset([0]), [], tmp_path)


def test_confusion_heatmaps(tmp_path):
    g = np.random.default_rng(0)
    aggs = []
    for cond in ("BL", "ROT", "MIXUP", "MIXCG", "C2GMA"):
        reports = [compute_metrics(g.integers(0, 2, 30), g.integers(0, 2, 30)) for _ in range(3)]
        aggs.append(aggregate(reports, cond, ["train1", "train2", "train3"]))
    written = emit_confusion_heatmaps(aggs, tmp_path)
    assert len(written) == 15 and all(p.exists() for p in written)
    for agg in aggs:
        for split, r in zip(agg.splits, agg.reports):
            texts = written[tmp_path / f"confusion_{split}_{agg.condition}.png"]
            assert texts == [str(v) for row in r.confusion for v in row]
    assert emit_confusion_heatmaps([], tmp_path / "none") == {}
    assert not (tmp_path / "none").exists()


def test_report_json_written(toy_run):
    out = toy_run[0]
    data = json.loads((out / "report" / "report.json").read_text())
    assert {d["condition"] for d in data} == {"BL", "ROT", "MIXUP", "MIXCG", "C2GMA"}
    assert all(len(d["reports"]) == 3 for d in data)
