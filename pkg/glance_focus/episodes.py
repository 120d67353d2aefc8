"""
Synthetic multi-event episodes.

Each episode is a [T x D] feature sequence built from class prototypes
with planted, disjoint events of known class and span, plus templated
event-centric questions whose answers follow from the event list alone.
The module also owns the on-disk dataset layout.
"""

import hashlib
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from glance_focus.errors import ContractError, FormatError, GenerationError
from glance_focus.models import GeneratorConfig
from glance_focus.set_matching import GroundTruthEvent, Span

logger = logging.getLogger(__name__)

QUESTION_TYPES = ("what-at", "what-after", "what-before", "first-event", "last-event", "count-events")
ORDERING_TYPES = ("what-after", "what-before")
PAD_TOKEN = "<pad>"
MAX_SPAN_ATTEMPTS = 1000

FEATURE_MAGIC = b"GFV1"
FEATURE_HEADER = struct.Struct("<II")
FEATURE_HEADER_SIZE = len(FEATURE_MAGIC) + FEATURE_HEADER.size

PathLike = Union[str, Path]


def class_token(c: int) -> str:
    return f"class_{c}"


def bucket_token(b: int) -> str:
    return f"time_{b}"


def count_answer(k: int) -> str:
    return f"count_{k}"


class Vocabulary:
    """Bijective string <-> id maps for question tokens and answers."""

    def __init__(self, tokens: Sequence[str], answers: Sequence[str]):
        self.tokens = list(tokens)
        self.answers = list(answers)
        self._token_ids = {t: i for i, t in enumerate(self.tokens)}
        self._answer_ids = {a: i for i, a in enumerate(self.answers)}
        if len(self._token_ids) != len(self.tokens) or len(self._answer_ids) != len(self.answers):
            raise ContractError("vocabulary entries must be unique")
        if not self.tokens or self.tokens[0] != PAD_TOKEN:
            raise ContractError(f"token 0 must be {PAD_TOKEN}")

    @classmethod
    def build(cls, config: GeneratorConfig) -> "Vocabulary":
        tokens = [PAD_TOKEN, *QUESTION_TYPES]
        tokens += [class_token(c) for c in range(config.classes)]
        tokens += [bucket_token(b) for b in range(config.time_buckets)]
        answers = [class_token(c) for c in range(config.classes)]
        answers += [count_answer(k) for k in range(1, config.events_max + 1)]
        return cls(tokens, answers)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def answer_count(self) -> int:
        return len(self.answers)

    def token_id(self, token: str) -> int:
        try:
            return self._token_ids[token]
        except KeyError:
            raise ContractError(f"unknown question token '{token}'") from None

    def answer_id(self, answer: str) -> int:
        try:
            return self._answer_ids[answer]
        except KeyError:
            raise ContractError(f"unknown answer '{answer}'") from None

    def encode(self, tokens: Sequence[str]) -> Tuple[int, ...]:
        return tuple(self.token_id(t) for t in tokens)

    def decode(self, ids: Sequence[int]) -> List[str]:
        if any(not 0 <= i < self.size for i in ids):
            raise ContractError(f"token id outside [0, {self.size})")
        return [self.tokens[i] for i in ids]

    def to_dict(self) -> Dict[str, List[str]]:
        return {"tokens": self.tokens, "answers": self.answers}

    @classmethod
    def from_dict(cls, data: Dict[str, List[str]]) -> "Vocabulary":
        return cls(data["tokens"], data["answers"])

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.to_dict() == other.to_dict()


@dataclass(frozen=True)
class QASample:
    question: Tuple[int, ...]
    answer: int
    qtype: str


@dataclass
class Episode:
    """
    One synthetic video.

    Attributes:
        id: stable identifier, also the feature file stem
        frames: T
        features: [T x D] float64 holding float32-representable values, or None if not loaded
        events: ground-truth events sorted by center, or None for unlabeled data
        qas: templated questions with their answers
    """
    id: str
    frames: int
    features: Optional[np.ndarray] = None
    events: Optional[List[GroundTruthEvent]] = None
    qas: List[QASample] = field(default_factory=list)

    @property
    def labeled(self) -> bool:
        return self.events is not None


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def class_prototypes(config: GeneratorConfig) -> np.ndarray:
    """[C+1 x D] unit-scale prototypes; row C is the background."""
    rng = np.random.default_rng([config.seed, 0x9E37])
    protos = rng.standard_normal((config.classes + 1, config.dim))
    return protos.astype(np.float32).astype(np.float64)


def frame_in_span(t: int, frames: int, span: Span) -> bool:
    """A frame belongs to a span when its center (t + 1/2) / T lies in [start, end)."""
    center = (t + 0.5) / frames
    return span.start <= center < span.end


def _sample_spans(rng: np.random.Generator, k: int, config: GeneratorConfig) -> List[Span]:
    for _ in range(MAX_SPAN_ATTEMPTS):
        widths = rng.uniform(config.min_width, config.max_width, size=k)
        free = 1.0 - widths.sum()
        if free < 0:
            continue
        gaps = rng.dirichlet(np.ones(k + 1)) * free
        spans, cursor = [], 0.0
        for width, gap in zip(widths, gaps[:k]):
            start = cursor + gap
            spans.append(Span(center=min(1.0, start + width / 2.0), width=float(width)))
            cursor = start + width
        return spans
    raise GenerationError(
        f"could not place {k} disjoint spans of width [{config.min_width}, {config.max_width}] "
        f"in {MAX_SPAN_ATTEMPTS} attempts"
    )


def render_features(config: GeneratorConfig, events: Sequence[GroundTruthEvent],
                    rng: np.random.Generator, prototypes: Optional[np.ndarray] = None) -> np.ndarray:
    protos = class_prototypes(config) if prototypes is None else prototypes
    labels = np.full(config.frames, config.classes)
    for event in events:
        for t in range(config.frames):
            if frame_in_span(t, config.frames, event.span):
                labels[t] = event.label
    base = protos[labels]
    if config.noise > 0:
        base = base + rng.normal(scale=config.noise, size=base.shape)
    return base.astype(np.float32).astype(np.float64)


def generate_episode(config: GeneratorConfig, episode_seed: int,
                     episode_id: Optional[str] = None, vocabulary: Optional[Vocabulary] = None) -> Episode:
    """Deterministic in (config, episode_seed); independent of generation order."""
    rng = np.random.default_rng([config.seed, episode_seed])
    k = int(rng.integers(config.events_min, config.events_max + 1))
    spans = _sample_spans(rng, k, config)
    labels = rng.integers(0, config.classes, size=k)
    events = [GroundTruthEvent(label=int(c), span=s) for c, s in zip(labels, spans)]
    events.sort(key=lambda e: e.span.center)

    episode = Episode(
        id=episode_id or f"ep{episode_seed:05d}",
        frames=config.frames,
        features=render_features(config, events, rng),
        events=events,
    )
    vocabulary = vocabulary or Vocabulary.build(config)
    episode.qas = generate_qa(episode, vocabulary, qa_seed=(config.seed, episode_seed, 1))
    return episode


def generate_episodes(config: GeneratorConfig, count: int) -> List[Episode]:
    vocabulary = Vocabulary.build(config)
    episodes = [generate_episode(config, i, vocabulary=vocabulary) for i in range(count)]
    logger.info(f"✅ Generated {len(episodes)} episodes ({sum(len(e.qas) for e in episodes)} questions)")
    return episodes


# ---------------------------------------------------------------------------
# questions
# ---------------------------------------------------------------------------

def _unique_anchors(labels: Sequence[int]) -> List[int]:
    return [k for k, c in enumerate(labels) if list(labels).count(c) == 1]


def _bucket_event(events: Sequence[GroundTruthEvent], bucket: int, buckets: int) -> Optional[GroundTruthEvent]:
    t = (bucket + 0.5) / buckets
    for event in events:
        if event.span.start <= t < event.span.end:
            return event
    return None


def _instantiations(qtype: str, events: Sequence[GroundTruthEvent], buckets: int) -> List[Tuple[List[str], str]]:
    labels = [e.label for e in events]
    if qtype == "what-after":
        return [([qtype, class_token(labels[k])], class_token(labels[k + 1]))
                for k in _unique_anchors(labels) if k + 1 < len(labels)]
    if qtype == "what-before":
        return [([qtype, class_token(labels[k])], class_token(labels[k - 1]))
                for k in _unique_anchors(labels) if k > 0]
    if qtype == "first-event":
        return [([qtype], class_token(labels[0]))]
    if qtype == "last-event":
        return [([qtype], class_token(labels[-1]))]
    if qtype == "count-events":
        return [([qtype], count_answer(len(labels)))]
    if qtype == "what-at":
        found = []
        for b in range(buckets):
            event = _bucket_event(events, b, buckets)
            if event is not None:
                found.append(([qtype, bucket_token(b)], class_token(event.label)))
        return found
    raise ContractError(f"unknown question template '{qtype}'")


def _bucket_count(vocabulary: Vocabulary) -> int:
    return sum(1 for t in vocabulary.tokens if t.startswith("time_"))


def generate_qa(episode: Episode, vocabulary: Vocabulary, templates: Sequence[str] = QUESTION_TYPES,
                qa_seed=0) -> List[QASample]:
    """
    One question per applicable template, the anchor drawn with ``qa_seed``.
    Templates with no unambiguous instantiation are skipped.
    """
    if not episode.events:
        raise ContractError(f"episode {episode.id} needs at least one event to ask about")
    rng = np.random.default_rng(qa_seed)
    buckets = _bucket_count(vocabulary)
    samples = []
    for qtype in templates:
        candidates = _instantiations(qtype, episode.events, buckets)
        if not candidates:
            continue
        tokens, answer = candidates[int(rng.integers(len(candidates)))]
        samples.append(QASample(question=vocabulary.encode(tokens), answer=vocabulary.answer_id(answer), qtype=qtype))
    return samples


def oracle_answer(events: Sequence[GroundTruthEvent], question: Sequence[int],
                  vocabulary: Vocabulary) -> Optional[int]:
    """Solve a tokenized question directly from an event list; None when undefined or ambiguous."""
    words = [w for w in vocabulary.decode(question) if w != PAD_TOKEN]
    if not words or not events:
        return None
    qtype, args = words[0], words[1:]
    ordered = sorted(events, key=lambda e: e.span.center)

    answer: Optional[str] = None
    if qtype in ORDERING_TYPES and len(args) == 1:
        positions = [k for k, e in enumerate(ordered) if class_token(e.label) == args[0]]
        if len(positions) == 1:
            neighbour = positions[0] + (1 if qtype == "what-after" else -1)
            if 0 <= neighbour < len(ordered):
                answer = class_token(ordered[neighbour].label)
    elif qtype == "first-event" and not args:
        answer = class_token(ordered[0].label)
    elif qtype == "last-event" and not args:
        answer = class_token(ordered[-1].label)
    elif qtype == "count-events" and not args:
        answer = count_answer(len(ordered))
    elif qtype == "what-at" and len(args) == 1 and args[0].startswith("time_"):
        bucket = int(args[0].split("_", 1)[1])
        t = (bucket + 0.5) / _bucket_count(vocabulary)
        covering = [e for e in ordered if e.span.start <= t < e.span.end]
        if len(covering) == 1:
            answer = class_token(covering[0].label)

    if answer is None or answer not in vocabulary.answers:
        return None
    return vocabulary.answer_id(answer)


def nearest_prototype_accuracy(episodes: Sequence[Episode], config: GeneratorConfig) -> float:
    """Share of in-span frames whose nearest class prototype is their event's class."""
    protos = class_prototypes(config)[: config.classes]
    hits = total = 0
    for episode in episodes:
        if episode.features is None or not episode.events:
            continue
        for event in episode.events:
            for t in range(episode.frames):
                if frame_in_span(t, episode.frames, event.span):
                    distances = np.linalg.norm(protos - episode.features[t], axis=1)
                    hits += int(np.argmin(distances) == event.label)
                    total += 1
    if total == 0:
        raise ContractError("no labeled in-span frames to classify")
    return hits / total


def split_heldout(episodes: Sequence[Episode], fraction: float) -> Tuple[List[Episode], List[Episode]]:
    """
    Deterministic train/held-out split by SHA-256 of the episode id.
    Both sides are kept non-empty when there are at least two episodes.
    """
    if not 0.0 < fraction < 1.0:
        raise ContractError(f"held-out fraction must lie in (0, 1), got {fraction}")

    def score(episode: Episode) -> float:
        digest = hashlib.sha256(episode.id.encode("utf-8")).hexdigest()
        return int(digest[:8], 16) / 2 ** 32

    scored = [(score(e), e) for e in episodes]
    heldout = [e for s, e in scored if s < fraction]
    train = [e for s, e in scored if s >= fraction]
    if len(scored) >= 2 and not heldout:
        pick = min(scored, key=lambda se: se[0])[1]
        heldout, train = [pick], [e for e in train if e is not pick]
    elif len(scored) >= 2 and not train:
        pick = max(scored, key=lambda se: se[0])[1]
        train, heldout = [pick], [e for e in heldout if e is not pick]
    return train, heldout


# ---------------------------------------------------------------------------
# feature files
# ---------------------------------------------------------------------------

def write_features(path: PathLike, features: np.ndarray) -> None:
    """GFV1 magic, little-endian uint32 T and D, then T*D little-endian float32 values."""
    array = np.asarray(features)
    if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
        raise ContractError(f"feature tensors must be non-empty [T x D], got {array.shape}")
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    Path(path).write_bytes(FEATURE_MAGIC + FEATURE_HEADER.pack(*array.shape) + payload)


def read_features(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[: len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise FormatError("bad feature file magic", path=str(path), offset=0)
    if len(data) < FEATURE_HEADER_SIZE:
        raise FormatError("truncated feature header", path=str(path), offset=len(data))
    frames, dim = FEATURE_HEADER.unpack_from(data, len(FEATURE_MAGIC))
    if frames == 0 or dim == 0:
        raise FormatError(f"zero extent in header ({frames} x {dim})", path=str(path), offset=len(FEATURE_MAGIC))
    expected = frames * dim * 4
    available = len(data) - FEATURE_HEADER_SIZE
    if expected > available:
        raise FormatError(f"payload truncated: header declares {frames} x {dim} ({expected} bytes), "
                          f"{available} present", path=str(path), offset=len(data))
    if expected < available:
        raise FormatError(f"{available - expected} trailing bytes after payload",
                          path=str(path), offset=FEATURE_HEADER_SIZE + expected)
    values = np.frombuffer(data, dtype="<f4", count=frames * dim, offset=FEATURE_HEADER_SIZE)
    return values.astype(np.float64).reshape(frames, dim)


# ---------------------------------------------------------------------------
# annotation files
# ---------------------------------------------------------------------------

def _round9(x: float) -> float:
    return float(format(float(x), ".9g"))


def episode_record(episode: Episode, labels: bool = True) -> dict:
    record = {
        "id": episode.id,
        "T": episode.frames,
        "qas": [{"q": list(qa.question), "a": qa.answer, "type": qa.qtype} for qa in episode.qas],
    }
    if labels and episode.events is not None:
        record["events"] = [{"c": e.label, "center": _round9(e.span.center), "width": _round9(e.span.width)}
                            for e in episode.events]
    return record


def _parse_record(record: dict) -> Episode:
    events = None
    if record.get("events") is not None:
        events = [GroundTruthEvent(label=int(e["c"]), span=Span(float(e["center"]), float(e["width"])))
                  for e in record["events"]]
    qas = [QASample(question=tuple(int(t) for t in qa["q"]), answer=int(qa["a"]), qtype=str(qa["type"]))
           for qa in record["qas"]]
    for qa in qas:
        if qa.qtype not in QUESTION_TYPES:
            raise ValueError(f"unknown question type '{qa.qtype}'")
    frames = int(record["T"])
    if frames < 1:
        raise ValueError("T must be positive")
    return Episode(id=str(record["id"]), frames=frames, events=events, qas=qas)


def write_annotations(path: PathLike, episodes: Sequence[Episode], labels: bool = True) -> None:
    lines = [json.dumps(episode_record(e, labels), sort_keys=True, separators=(",", ":")) for e in episodes]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_annotations(path: PathLike) -> List[Episode]:
    episodes = []
    text = Path(path).read_text(encoding="utf-8")
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            episodes.append(_parse_record(json.loads(line)))
        except (ValueError, KeyError, TypeError, ContractError) as exc:
            raise FormatError(f"malformed annotation: {exc}", path=str(path), line=number) from None
    return episodes


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    episodes: List[Episode]
    vocabulary: Vocabulary
    generator: GeneratorConfig

    @property
    def labeled(self) -> bool:
        return bool(self.episodes) and all(e.labeled for e in self.episodes)

    @property
    def feature_dim(self) -> int:
        return self.generator.dim

    def episode(self, episode_id: str) -> Episode:
        for episode in self.episodes:
            if episode.id == episode_id:
                return episode
        raise ContractError(f"no episode with id '{episode_id}'")


def write_dataset(directory: PathLike, episodes: Sequence[Episode], vocabulary: Vocabulary,
                  config: GeneratorConfig, labels: bool = True) -> None:
    """features/<id>.gfv, annotations.jsonl, vocab.json and generator.json under ``directory``."""
    root = Path(directory)
    (root / "features").mkdir(parents=True, exist_ok=True)
    for episode in episodes:
        write_features(root / "features" / f"{episode.id}.gfv", episode.features)
    write_annotations(root / "annotations.jsonl", episodes, labels=labels)
    (root / "vocab.json").write_text(json.dumps(vocabulary.to_dict(), indent=2) + "\n", encoding="utf-8")
    (root / "generator.json").write_text(config.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"✅ Wrote {len(episodes)} episodes to {root}")


def read_dataset(directory: PathLike) -> Dataset:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    generator = GeneratorConfig.model_validate_json((root / "generator.json").read_text(encoding="utf-8"))
    try:
        vocabulary = Vocabulary.from_dict(json.loads((root / "vocab.json").read_text(encoding="utf-8")))
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed vocabulary: {exc}", path=str(root / "vocab.json")) from None
    episodes = read_annotations(root / "annotations.jsonl")
    for episode in episodes:
        features = read_features(root / "features" / f"{episode.id}.gfv")
        if features.shape != (episode.frames, generator.dim):
            raise FormatError(f"features {features.shape} disagree with T={episode.frames}, D={generator.dim}",
                              path=str(root / "features" / f"{episode.id}.gfv"))
        episode.features = features
    logger.info(f"🎯 Loaded {len(episodes)} episodes from {root} ({'labeled' if episodes and all(e.labeled for e in episodes) else 'unlabeled'})")
    return Dataset(episodes=episodes, vocabulary=vocabulary, generator=generator)
