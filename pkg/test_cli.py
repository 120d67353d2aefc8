#!/usr/bin/env python3
"""End-to-end tests for the command line: gen, train, eval, attn and ablate."""

import json

import numpy.testing as npt
import pytest

from glance_focus.cli import main
from glance_focus.episodes import read_annotations, read_dataset
from glance_focus.focus import read_attention
from glance_focus.trainer import Trainer, build_samples, evaluate, load_checkpoint, write_checkpoint

GEN_FLAGS = ["--episodes", "20", "--frames", "16", "--dim", "8", "--classes", "3",
             "--events-min", "2", "--events-max", "3", "--min-width", "0.1", "--max-width", "0.2"]
MODEL_FLAGS = ["--memories", "4", "--model-dim", "16", "--heads", "2", "--layers", "1",
               "--epochs", "1", "--batch-size", "8", "--heldout-fraction", "0.3"]


def run(capsys, *argv):
    """Run the CLI; returns (exit code, {metric: value}, config dict or None)."""
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    metrics, config = {}, None
    for line in out.splitlines():
        key, _, value = line.partition("\t")
        if key == "config":
            config = json.loads(value)
        else:
            metrics[key] = value
    return code, metrics, config


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def dataset(tmp_path, capsys):
    data = tmp_path / "data"
    code, _, _ = run(capsys, "gen", "--out", data, *GEN_FLAGS)
    assert code == 0
    return data


@pytest.fixture
def checkpoint(tmp_path, dataset, capsys):
    ckpt = tmp_path / "model.ckpt"
    code, metrics, _ = run(capsys, "train", "--data", dataset, "--out", ckpt, *MODEL_FLAGS)
    assert code == 0
    return ckpt, metrics


class TestGen:
    def test_deterministic(self, tmp_path, capsys):
        run(capsys, "gen", "--out", tmp_path / "a", *GEN_FLAGS)
        run(capsys, "gen", "--out", tmp_path / "b", *GEN_FLAGS)
        assert tree(tmp_path / "a") == tree(tmp_path / "b")

    def test_summary_matches_files(self, tmp_path, capsys):
        code, metrics, config = run(capsys, "gen", "--out", tmp_path / "d", *GEN_FLAGS)
        assert code == 0
        assert config["frames"] == 16
        episodes = read_annotations(tmp_path / "d" / "annotations.jsonl")
        assert int(metrics["episodes"]) == len(episodes) == len(list((tmp_path / "d" / "features").iterdir()))
        assert int(metrics["questions"]) == sum(len(e.qas) for e in episodes)
        per_type = {k: int(v) for k, v in metrics.items() if k.startswith("questions/")}
        assert sum(per_type.values()) == int(metrics["questions"])

    @pytest.mark.parametrize("flags", [
        ["--events-min", "5", "--events-max", "3"],
        ["--episodes", "0"],
        ["--min-width", "0.01"],
    ])
    def test_invalid_ranges(self, tmp_path, capsys, flags):
        code, _, _ = run(capsys, "gen", "--out", tmp_path / "d", *GEN_FLAGS, *flags)
        assert code == 2

    def test_unknown_flag(self, tmp_path, capsys):
        assert run(capsys, "gen", "--out", tmp_path / "d", "--bogus")[0] == 2

    def test_unwritable_output(self, tmp_path, capsys):
        (tmp_path / "d").mkdir()
        (tmp_path / "d" / "features").write_text("not a directory")
        assert run(capsys, "gen", "--out", tmp_path / "d", *GEN_FLAGS)[0] == 2


class TestTrainEval:
    def test_eval_reproduces_heldout_accuracy(self, dataset, checkpoint, capsys):
        ckpt, trained = checkpoint
        code, metrics, config = run(capsys, "eval", "--data", dataset, "--ckpt", ckpt, "--per-type")
        assert code == 0
        assert metrics["accuracy"] == trained["heldout/accuracy"]
        assert metrics["count"] == trained["heldout/count"]
        assert config["model_dim"] == 16
        assert any(k.startswith("accuracy/") for k in metrics)

    def test_supervised_needs_labels(self, tmp_path, capsys):
        run(capsys, "gen", "--out", tmp_path / "d", *GEN_FLAGS, "--no-labels")
        code, _, _ = run(capsys, "train", "--data", tmp_path / "d", "--out", tmp_path / "c.ckpt",
                         "--mode", "sup", *MODEL_FLAGS)
        assert code == 2

    def test_supervised_reports_event_metrics(self, tmp_path, dataset, capsys):
        ckpt = tmp_path / "sup.ckpt"
        assert run(capsys, "train", "--data", dataset, "--out", ckpt, "--mode", "sup", *MODEL_FLAGS)[0] == 0
        code, metrics, _ = run(capsys, "eval", "--data", dataset, "--ckpt", ckpt)
        assert code == 0
        assert 0.0 <= float(metrics["event_accuracy"]) <= 1.0
        assert float(metrics["temporal_l1"]) >= 0.0

    def test_corrupt_checkpoint(self, tmp_path, dataset, capsys):
        (tmp_path / "bad.ckpt").write_bytes(b"definitely not a checkpoint")
        assert run(capsys, "eval", "--data", dataset, "--ckpt", tmp_path / "bad.ckpt")[0] == 2

    def test_missing_dataset(self, tmp_path, capsys):
        code, _, _ = run(capsys, "train", "--data", tmp_path / "nowhere", "--out", tmp_path / "c.ckpt", *MODEL_FLAGS)
        assert code == 2

    def test_checkpoint_without_generator_state(self, tmp_path, dataset, checkpoint, capsys):
        ckpt, _ = checkpoint
        stored = load_checkpoint(ckpt)
        header = {k: v for k, v in stored.header.items() if k != "rng_state"}
        write_checkpoint(tmp_path / "bad.ckpt", header, list(stored.tensors.items()))
        assert run(capsys, "eval", "--data", dataset, "--ckpt", tmp_path / "bad.ckpt")[0] == 2


class TestAttn:
    def test_export_is_parseable_and_repeatable(self, tmp_path, dataset, checkpoint, capsys):
        ckpt, _ = checkpoint
        args = ["attn", "--data", dataset, "--ckpt", ckpt, "--episode", "ep00000", "--question", "0"]
        code, metrics, _ = run(capsys, *args, "--out", tmp_path / "a.txt")
        assert code == 0
        run(capsys, *args, "--out", tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

        maps = read_attention(tmp_path / "a.txt")
        assert maps.memory.shape[0] == 2 and maps.memory.shape[2] == 4
        assert maps.frame.shape[2] == 16
        assert sorted(maps.sort_order.tolist()) == [0, 1, 2, 3]
        assert metrics["order"] == " ".join(str(i) for i in maps.sort_order)
        assert {"question", "predicted", "oracle", "spans"} <= set(metrics)

        heads, length = maps.memory.shape[:2]
        assert maps.memory.size + maps.frame.size == heads * length * (4 + 16)
        npt.assert_allclose(maps.memory.sum(axis=-1), 1.0, atol=1e-8)
        npt.assert_allclose(maps.frame.sum(axis=-1), 1.0, atol=1e-8)

    def test_predicted_answer_matches_evaluate(self, tmp_path, dataset, checkpoint, capsys):
        ckpt, _ = checkpoint
        code, metrics, _ = run(capsys, "attn", "--data", dataset, "--ckpt", ckpt, "--episode", "ep00000",
                               "--question", "0", "--out", tmp_path / "a.txt")
        assert code == 0
        data = read_dataset(dataset)
        model = Trainer.from_checkpoint(ckpt).model
        seen = []

        class Recorder:
            def predict(self, batch):
                answers = model.predict(batch)
                seen.extend(int(a) for a in answers)
                return answers

        samples = build_samples(data.episodes)
        evaluate(samples, Recorder())
        index = next(i for i, s in enumerate(samples) if s.episode.id == "ep00000")
        assert metrics["predicted"] == data.vocabulary.answers[seen[index]]

    def test_unknown_episode(self, tmp_path, dataset, checkpoint, capsys):
        ckpt, _ = checkpoint
        code, _, _ = run(capsys, "attn", "--data", dataset, "--ckpt", ckpt, "--episode", "missing",
                         "--question", "0", "--out", tmp_path / "a.txt")
        assert code == 2

    def test_question_out_of_range(self, tmp_path, dataset, checkpoint, capsys):
        ckpt, _ = checkpoint
        code, _, _ = run(capsys, "attn", "--data", dataset, "--ckpt", ckpt, "--episode", "ep00000",
                         "--question", "99", "--out", tmp_path / "a.txt")
        assert code == 2


class TestAblate:
    def test_reports_every_seed(self, dataset, capsys):
        code, metrics, _ = run(capsys, "ablate", "--data", dataset, *MODEL_FLAGS, "--seeds", "2")
        assert code == 0
        for seed in (0, 1):
            assert f"ordering_accuracy/glance_focus/seed{seed}" in metrics
            assert f"margin/seed{seed}" in metrics
        assert 0 <= int(metrics["positive_margins"]) <= 2
