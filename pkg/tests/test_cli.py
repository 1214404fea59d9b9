import hashlib
import os

import numpy as np
import pytest

from plausifill.cli import main
from plausifill.ensemble import read_predictions_tsv


def run(*argv):
    return main(list(argv))


def dir_digest(path):
    out = {}
    for root, _, files in os.walk(path):
        for name in files:
            full = os.path.join(root, name)
            rel = os.path.relpath(full, path)
            with open(full, "rb") as fh:
                out[rel] = hashlib.sha256(fh.read()).hexdigest()
    return out


GEN_ARGS = ["--seed", "3", "--train-instances", "40", "--dev-instances", "16",
            "--test-instances", "16", "--corpus-sentences", "80"]

PRETRAIN_ARGS = ["--steps", "12", "--batch-size", "8", "--d-model", "32",
                 "--n-layers", "1", "--n-heads", "2", "--d-ff", "64",
                 "--max-seq-len", "48", "--vocab-size", "256"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    data = base / "data"
    assert run("gen-synth", "--out", str(data), *GEN_ARGS) == 0
    pre = base / "pre"
    assert run("pretrain", "--data", str(data), "--out", str(pre), *PRETRAIN_ARGS) == 0
    ft = base / "ft"
    assert run("finetune", "--data", str(data), "--checkpoint", str(pre / "pretrained.ckpt"),
               "--out", str(ft), "--task", "classification", "--learning-rate", "3e-4",
               "--batch-size", "16", "--epochs", "1", "--seed", "1") == 0
    preds = base / "preds"
    assert run("predict", "--checkpoint", str(ft / "finetuned.ckpt"),
               "--instances", str(data / "dev_instances.tsv"),
               "--vocab", str(data / "vocab.tsv"), "--out", str(preds),
               "--model-id", "m0") == 0
    return base


class TestGenSynth:
    def test_outputs_and_manifest(self, pipeline):
        data = pipeline / "data"
        for name in ("vocab.tsv", "corpus.txt", "train_instances.tsv", "dev_labels.tsv",
                     "test_scores.tsv", "manifest.json", "effective_config.txt"):
            assert (data / name).exists()
        import json
        manifest = json.loads((data / "manifest.json").read_text())
        assert manifest["counts"]["train_instances"] == 40
        assert manifest["counts"]["train_examples"] == 200

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("gen-synth", "--out", str(a), *GEN_ARGS) == 0
        assert run("gen-synth", "--out", str(b), *GEN_ARGS) == 0
        assert dir_digest(a) == dir_digest(b)

    def test_refuses_nonempty_without_force(self, tmp_path):
        out = tmp_path / "data"
        assert run("gen-synth", "--out", str(out), *GEN_ARGS) == 0
        assert run("gen-synth", "--out", str(out), *GEN_ARGS) == 1

    def test_force_overwrites(self, tmp_path):
        out = tmp_path / "data"
        assert run("gen-synth", "--out", str(out), *GEN_ARGS) == 0
        first = dir_digest(out)
        assert run("gen-synth", "--out", str(out), "--force", *GEN_ARGS) == 0
        assert dir_digest(out) == first


class TestConfigFile:
    def test_config_file_used_and_flags_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 3\ntrain_instances = 40\ndev_instances = 16\n"
                       "test_instances = 16\ncorpus_sentences = 80  # small\n")
        out = tmp_path / "data"
        assert run("gen-synth", "--config", str(cfg), "--out", str(out)) == 0
        effective = (out / "effective_config.txt").read_text()
        assert "train_instances = 40" in effective
        out2 = tmp_path / "data2"
        assert run("gen-synth", "--config", str(cfg), "--out", str(out2),
                   "--train-instances", "44") == 0
        assert "train_instances = 44" in (out2 / "effective_config.txt").read_text()

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("not_a_real_option = 1\n")
        assert run("gen-synth", "--config", str(cfg), "--out", str(tmp_path / "x")) == 1

    def test_missing_required_option(self, tmp_path):
        assert run("pretrain", "--out", str(tmp_path / "x")) == 1


class TestDeterminism:
    def test_pretrain_rerun_byte_identical(self, pipeline, tmp_path):
        data = pipeline / "data"
        a, b = tmp_path / "p1", tmp_path / "p2"
        for out in (a, b):
            assert run("pretrain", "--data", str(data), "--out", str(out),
                       *PRETRAIN_ARGS) == 0
        assert dir_digest(a) == dir_digest(b)

    def test_finetune_rerun_byte_identical(self, pipeline, tmp_path):
        data = pipeline / "data"
        ckpt = pipeline / "pre" / "pretrained.ckpt"
        a, b = tmp_path / "f1", tmp_path / "f2"
        for out in (a, b):
            assert run("finetune", "--data", str(data), "--checkpoint", str(ckpt),
                       "--out", str(out), "--task", "regression", "--learning-rate", "3e-4",
                       "--batch-size", "16", "--epochs", "1", "--seed", "2") == 0
        assert dir_digest(a) == dir_digest(b)

    def test_predict_rerun_byte_identical(self, pipeline, tmp_path):
        data = pipeline / "data"
        ckpt = pipeline / "ft" / "finetuned.ckpt"
        a, b = tmp_path / "q1", tmp_path / "q2"
        for out in (a, b):
            assert run("predict", "--checkpoint", str(ckpt),
                       "--instances", str(data / "dev_instances.tsv"),
                       "--vocab", str(data / "vocab.tsv"), "--out", str(out),
                       "--model-id", "m0") == 0
        assert dir_digest(a) == dir_digest(b)


class TestEvaluate:
    def test_all_gold_labels_give_accuracy_one(self, pipeline, tmp_path, capsys):
        data = pipeline / "data"
        out = tmp_path / "eval"
        assert run("evaluate", "--pred", str(data / "dev_labels.tsv"),
                   "--gold", str(data / "dev_labels.tsv"),
                   "--instances", str(data / "dev_instances.tsv"),
                   "--out", str(out)) == 0
        assert "overall 1.0000" in capsys.readouterr().out
        assert (out / "report.tsv").read_text().splitlines()[1].startswith("overall\t80\t1.0")
        assert (out / "label_distribution.tsv").exists()

    def test_regression_gold_evaluates_spearman(self, pipeline, tmp_path, capsys):
        data = pipeline / "data"
        out = tmp_path / "eval"
        assert run("evaluate", "--pred", str(data / "dev_scores.tsv"),
                   "--gold", str(data / "dev_scores.tsv"),
                   "--instances", str(data / "dev_instances.tsv"),
                   "--out", str(out)) == 0
        assert "spearman" in capsys.readouterr().out
        assert "fractional average ranks" in (out / "report.txt").read_text()

    def test_missing_file_is_input_error(self, pipeline, tmp_path):
        assert run("evaluate", "--pred", "nope.tsv",
                   "--gold", str(pipeline / "data" / "dev_labels.tsv"),
                   "--instances", str(pipeline / "data" / "dev_instances.tsv"),
                   "--out", str(tmp_path / "x")) == 1


class TestEnsembleCommand:
    def test_single_model_standard_is_identity(self, pipeline, tmp_path):
        preds = pipeline / "preds" / "m0.tsv"
        out = tmp_path / "ens"
        assert run("ensemble", "--mode", "standard", "--test-pred", str(preds),
                   "--test-instances", str(pipeline / "data" / "dev_instances.tsv"),
                   "--out", str(out)) == 0
        original = read_predictions_tsv(preds)
        combined = read_predictions_tsv(out / "ensembled.tsv")
        for eid in original.entries:
            assert np.allclose(combined.entries[eid], original.entries[eid], atol=1e-12)

    def test_pattern_aware_writes_audit(self, pipeline, tmp_path):
        data = pipeline / "data"
        preds = str(pipeline / "preds" / "m0.tsv")
        out = tmp_path / "ens"
        assert run("ensemble", "--mode", "select_top1",
                   "--dev-pred", preds, "--dev-gold", str(data / "dev_labels.tsv"),
                   "--dev-instances", str(data / "dev_instances.tsv"),
                   "--test-pred", preds,
                   "--test-instances", str(data / "dev_instances.tsv"),
                   "--out", str(out)) == 0
        audit = (out / "pattern_ensemble_audit.txt").read_text()
        assert "FUSED HEAD" in audit and "dev accuracy" in audit

    def test_pattern_aware_without_dev_inputs_fails(self, pipeline, tmp_path):
        preds = str(pipeline / "preds" / "m0.tsv")
        assert run("ensemble", "--mode", "select_top1", "--test-pred", preds,
                   "--test-instances", str(pipeline / "data" / "dev_instances.tsv"),
                   "--out", str(tmp_path / "x")) == 1


class TestGrid:
    def test_grid_expands_runs(self, pipeline, tmp_path):
        data = pipeline / "data"
        ckpt = pipeline / "pre" / "pretrained.ckpt"
        out = tmp_path / "grid"
        assert run("finetune", "--data", str(data), "--checkpoint", str(ckpt),
                   "--out", str(out), "--task", "classification",
                   "--grid", "--grid-learning-rates", "3e-4,5e-4",
                   "--grid-batch-sizes", "16", "--epochs", "1", "--seed", "4") == 0
        manifest = (out / "grid_manifest.tsv").read_text().splitlines()
        assert manifest[0] == "model_id\trun_dir\tbest_dev"
        assert len(manifest) == 3
        assert (out / "lr0.0003_bsz16" / "finetuned.ckpt").exists()
        assert (out / "lr0.0005_bsz16" / "finetuned.ckpt").exists()

    def test_grid_parallel_workers_match_sequential(self, pipeline, tmp_path):
        data = pipeline / "data"
        ckpt = pipeline / "pre" / "pretrained.ckpt"
        outs = {}
        for jobs, name in ((1, "seq"), (2, "par")):
            out = tmp_path / name
            assert run("finetune", "--data", str(data), "--checkpoint", str(ckpt),
                       "--out", str(out), "--task", "regression",
                       "--grid", "--grid-learning-rates", "5e-4",
                       "--grid-batch-sizes", "16,24", "--epochs", "1",
                       "--seed", "6", "--jobs", str(jobs)) == 0
            outs[name] = dir_digest(out)
        assert outs["seq"] == outs["par"]
