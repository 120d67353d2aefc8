#!/usr/bin/env python3
"""Tests for the synthetic episode generator, question templates and file formats."""

import numpy as np
import numpy.testing as npt
import pytest
from pydantic import ValidationError

from glance_focus.episodes import (
    FEATURE_HEADER_SIZE,
    QUESTION_TYPES,
    Episode,
    QASample,
    Vocabulary,
    _sample_spans,
    class_prototypes,
    class_token,
    frame_in_span,
    generate_episode,
    generate_episodes,
    generate_qa,
    nearest_prototype_accuracy,
    oracle_answer,
    read_annotations,
    read_dataset,
    read_features,
    split_heldout,
    write_annotations,
    write_dataset,
    write_features,
)
from glance_focus.errors import ContractError, FormatError, GenerationError
from glance_focus.models import GeneratorConfig
from glance_focus.set_matching import GroundTruthEvent, Span

CONFIG = GeneratorConfig(frames=40, dim=32, classes=5, events_min=2, events_max=4, noise=0.05, seed=0)


def episode_with(labels, centers=None) -> Episode:
    centers = centers or list(np.linspace(0.15, 0.85, len(labels)))
    events = [GroundTruthEvent(c, Span(x, 0.1)) for c, x in zip(labels, centers)]
    return Episode(id="fixture", frames=40, events=events)


def ask(episode, vocab, qtype, arg=None):
    tokens = [qtype] + ([arg] if arg else [])
    return oracle_answer(episode.events, vocab.encode(tokens), vocab)


class TestGenerator:
    def test_fixed_event_count(self):
        config = CONFIG.model_copy(update={"events_min": 3, "events_max": 3})
        for seed in range(20):
            episode = generate_episode(config, seed)
            assert len(episode.events) == 3
            assert all(0 <= e.label < 5 for e in episode.events)
            intervals = [e.span.interval() for e in episode.events]
            assert all(a[1] <= b[0] for a, b in zip(intervals, intervals[1:]))

    def test_events_sorted_by_center(self):
        episode = generate_episode(CONFIG, 4)
        centers = [e.span.center for e in episode.events]
        assert centers == sorted(centers)

    def test_deterministic(self):
        a, b = generate_episode(CONFIG, 11), generate_episode(CONFIG, 11)
        npt.assert_array_equal(a.features, b.features)
        assert a.events == b.events and a.qas == b.qas

    def test_independent_of_generation_order(self):
        batch = generate_episodes(CONFIG, 5)
        npt.assert_array_equal(batch[3].features, generate_episode(CONFIG, 3).features)

    def test_noiseless_frames_equal_prototypes(self):
        config = CONFIG.model_copy(update={"noise": 0.0})
        protos = class_prototypes(config)
        episode = generate_episode(config, 2)
        inside = np.zeros(config.frames, dtype=bool)
        for event in episode.events:
            for t in range(config.frames):
                if frame_in_span(t, config.frames, event.span):
                    npt.assert_array_equal(episode.features[t], protos[event.label])
                    inside[t] = True
        for t in np.flatnonzero(~inside):
            npt.assert_array_equal(episode.features[t], protos[config.classes])

    def test_every_event_covers_a_frame(self):
        for seed in range(30):
            episode = generate_episode(CONFIG, seed)
            for event in episode.events:
                assert any(frame_in_span(t, 40, event.span) for t in range(40))

    def test_values_are_float32_representable(self):
        features = generate_episode(CONFIG, 0).features
        npt.assert_array_equal(features.astype(np.float32).astype(np.float64), features)

    def test_prototypes_are_separable(self):
        config = CONFIG.model_copy(update={"noise": 0.1, "dim": 16})
        assert nearest_prototype_accuracy(generate_episodes(config, 30), config) >= 0.99

    @pytest.mark.parametrize("update", [
        {"events_min": 5, "events_max": 3},
        {"events_max": 20, "frames": 10, "min_width": 0.1},
        {"min_width": 0.01},
        {"noise": -0.1},
    ])
    def test_invalid_configs(self, update):
        with pytest.raises(ValidationError):
            GeneratorConfig(**{**CONFIG.model_dump(), **update})

    def test_spans_that_cannot_fit(self):
        # 12 spans of width >= 0.1 never fit in [0, 1]
        with pytest.raises(GenerationError, match="12 disjoint spans"):
            _sample_spans(np.random.default_rng(0), 12, CONFIG)


class TestQuestions:
    def setup_method(self):
        self.vocab = Vocabulary.build(CONFIG)

    def test_ordering_examples(self):
        episode = episode_with([2, 0, 4])
        assert ask(episode, self.vocab, "what-after", "class_2") == self.vocab.answer_id("class_0")
        assert ask(episode, self.vocab, "what-before", "class_4") == self.vocab.answer_id("class_0")
        assert ask(episode, self.vocab, "first-event") == self.vocab.answer_id("class_2")
        assert ask(episode, self.vocab, "last-event") == self.vocab.answer_id("class_4")
        assert ask(episode, self.vocab, "count-events") == self.vocab.answer_id("count_3")

    def test_single_event_has_no_ordering_questions(self):
        qas = generate_qa(episode_with([1], [0.5]), self.vocab)
        assert {qa.qtype for qa in qas}.isdisjoint({"what-after", "what-before"})
        assert {"first-event", "last-event", "count-events"} <= {qa.qtype for qa in qas}

    def test_duplicate_anchor_is_ambiguous(self):
        episode = episode_with([3, 1, 3])
        assert ask(episode, self.vocab, "what-after", "class_3") is None
        qas = generate_qa(episode, self.vocab, templates=["what-after"])
        assert [self.vocab.decode(qa.question) for qa in qas] == [["what-after", "class_1"]]

    def test_what_at(self):
        episode = episode_with([4], [0.375])
        # bucket 1 of 4 is centered on 0.375
        assert ask(episode, self.vocab, "what-at", "time_1") == self.vocab.answer_id("class_4")
        assert ask(episode, self.vocab, "what-at", "time_3") is None

    def test_no_events(self):
        with pytest.raises(ContractError):
            generate_qa(Episode(id="x", frames=4, events=[]), self.vocab)

    def test_generator_and_oracle_agree(self):
        for episode in generate_episodes(CONFIG, 40):
            for qa in episode.qas:
                assert oracle_answer(episode.events, qa.question, self.vocab) == qa.answer
                assert qa.qtype in QUESTION_TYPES
                assert len(qa.question) <= 4

    def test_vocabulary_round_trip(self):
        assert Vocabulary.from_dict(self.vocab.to_dict()) == self.vocab
        assert self.vocab.tokens[0] == "<pad>"
        assert class_token(2) in self.vocab.answers


class TestFeatureFiles:
    def test_round_trip(self, tmp_path):
        features = generate_episode(CONFIG, 0).features
        write_features(tmp_path / "x.gfv", features)
        npt.assert_array_equal(read_features(tmp_path / "x.gfv"), features)

    def test_payload_length(self, tmp_path):
        write_features(tmp_path / "x.gfv", np.zeros((40, 32)))
        assert (tmp_path / "x.gfv").stat().st_size == FEATURE_HEADER_SIZE + 40 * 32 * 4
        assert FEATURE_HEADER_SIZE == 12

    def test_bad_magic(self, tmp_path):
        write_features(tmp_path / "x.gfv", np.ones((2, 2)))
        data = bytearray((tmp_path / "x.gfv").read_bytes())
        data[0:4] = b"XXXX"
        (tmp_path / "x.gfv").write_bytes(bytes(data))
        with pytest.raises(FormatError, match="byte offset 0"):
            read_features(tmp_path / "x.gfv")

    def test_truncated_payload(self, tmp_path):
        write_features(tmp_path / "x.gfv", np.ones((3, 2)))
        (tmp_path / "x.gfv").write_bytes((tmp_path / "x.gfv").read_bytes()[:-4])
        with pytest.raises(FormatError, match="byte offset 32"):
            read_features(tmp_path / "x.gfv")


class TestAnnotations:
    def test_round_trip(self, tmp_path):
        episodes = generate_episodes(CONFIG, 5)
        write_annotations(tmp_path / "a.jsonl", episodes)
        back = read_annotations(tmp_path / "a.jsonl")
        for a, b in zip(episodes, back):
            assert (a.id, a.frames, a.qas) == (b.id, b.frames, b.qas)
            assert [e.label for e in a.events] == [e.label for e in b.events]
            for ea, eb in zip(a.events, b.events):
                assert eb.span.center == pytest.approx(ea.span.center, abs=1e-7)
                assert eb.span.width == pytest.approx(ea.span.width, abs=1e-7)

    def test_empty(self, tmp_path):
        write_annotations(tmp_path / "a.jsonl", [])
        assert (tmp_path / "a.jsonl").read_text() == ""
        assert read_annotations(tmp_path / "a.jsonl") == []

    def test_malformed_line(self, tmp_path):
        write_annotations(tmp_path / "a.jsonl", generate_episodes(CONFIG, 10))
        lines = (tmp_path / "a.jsonl").read_text().splitlines()
        lines[6] = '{"id": "broken", "T": 40'
        (tmp_path / "a.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError, match="line 7"):
            read_annotations(tmp_path / "a.jsonl")

    def test_unlabeled(self, tmp_path):
        write_annotations(tmp_path / "a.jsonl", generate_episodes(CONFIG, 2), labels=False)
        assert all(e.events is None for e in read_annotations(tmp_path / "a.jsonl"))


class TestDataset:
    def test_round_trip(self, tmp_path):
        episodes = generate_episodes(CONFIG, 4)
        write_dataset(tmp_path, episodes, Vocabulary.build(CONFIG), CONFIG)
        dataset = read_dataset(tmp_path)
        assert dataset.generator == CONFIG
        assert dataset.labeled
        npt.assert_array_equal(dataset.episode("ep00002").features, episodes[2].features)

    def test_unknown_episode(self, tmp_path):
        write_dataset(tmp_path, generate_episodes(CONFIG, 1), Vocabulary.build(CONFIG), CONFIG)
        with pytest.raises(ContractError):
            read_dataset(tmp_path).episode("nope")

    def test_split_is_stable_and_disjoint(self):
        episodes = [Episode(id=f"ep{i:05d}", frames=1) for i in range(200)]
        train, heldout = split_heldout(episodes, 0.1)
        again_train, again_heldout = split_heldout(list(reversed(episodes)), 0.1)
        assert {e.id for e in heldout} == {e.id for e in again_heldout}
        assert {e.id for e in train}.isdisjoint({e.id for e in heldout})
        assert len(train) + len(heldout) == 200
        assert 5 <= len(heldout) <= 40

    def test_split_keeps_both_sides(self):
        train, heldout = split_heldout([Episode(id="a", frames=1), Episode(id="b", frames=1)], 0.1)
        assert len(train) == 1 and len(heldout) == 1
