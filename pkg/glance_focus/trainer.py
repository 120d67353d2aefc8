"""
Training and evaluation engine.

Batches are lists of (episode, question) samples padded to the batch's
longest video and question. A Trainer owns the model parameters, the Adam
state and the dropout generator, and checkpoints all of them so a resumed
run continues exactly where the interrupted one stopped.
"""

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from glance_focus import numerics as nx
from glance_focus.episodes import ORDERING_TYPES, Episode, QASample
from glance_focus.errors import (
    CheckpointMismatchError,
    ContractError,
    FormatError,
    TrainingDivergedError,
)
from glance_focus.glance import MemoryBank, loss_certainty, loss_semantic_diversity, loss_temporal_overlap
from glance_focus.model import GlanceFocusModel
from glance_focus.models import TrainConfig
from glance_focus.numerics import Parameter, Tensor
from glance_focus.set_matching import (
    Assignment,
    GroundTruthEvent,
    hungarian,
    matching_cost_matrix,
    pad_events,
    supervised_losses,
)

logger = logging.getLogger(__name__)

DROPOUT_STREAM = 0xD20F
SHUFFLE_STREAM = 0x5F1E
EVAL_BATCH_SIZE = 64


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    episode: Episode
    qa: QASample


def build_samples(episodes: Iterable[Episode]) -> List[Sample]:
    return [Sample(episode, qa) for episode in episodes for qa in episode.qas]


@dataclass
class Batch:
    features: Tensor
    frame_mask: np.ndarray
    questions: np.ndarray
    question_mask: np.ndarray
    answers: np.ndarray
    qtypes: List[str]
    episode_ids: List[str]
    events: Optional[List[List[GroundTruthEvent]]] = None

    @property
    def size(self) -> int:
        return len(self.answers)


def pad_features(episodes: Sequence[Episode]) -> Tuple[Tensor, np.ndarray]:
    """Stack episode features into [B x T_max x F] with a [B x T_max] validity mask."""
    if not episodes:
        raise ContractError("cannot pad an empty list of episodes")
    for episode in episodes:
        if episode.features is None:
            raise ContractError(f"episode {episode.id} has no features loaded")
    t_max = max(e.features.shape[0] for e in episodes)
    dim = episodes[0].features.shape[1]
    features = np.zeros((len(episodes), t_max, dim))
    mask = np.zeros((len(episodes), t_max), dtype=bool)
    for b, episode in enumerate(episodes):
        frames = episode.features.shape[0]
        features[b, :frames] = episode.features
        mask[b, :frames] = True
    return Tensor(features), mask


def collate(samples: Sequence[Sample]) -> Batch:
    if not samples:
        raise ContractError("cannot collate an empty batch")
    features, frame_mask = pad_features([s.episode for s in samples])
    l_max = max(len(s.qa.question) for s in samples)
    questions = np.zeros((len(samples), l_max), dtype=np.int64)
    question_mask = np.zeros((len(samples), l_max), dtype=bool)
    for b, sample in enumerate(samples):
        questions[b, :len(sample.qa.question)] = sample.qa.question
        question_mask[b, :len(sample.qa.question)] = True
    labeled = all(s.episode.events is not None for s in samples)
    return Batch(
        features=features,
        frame_mask=frame_mask,
        questions=questions,
        question_mask=question_mask,
        answers=np.array([s.qa.answer for s in samples], dtype=np.int64),
        qtypes=[s.qa.qtype for s in samples],
        episode_ids=[s.episode.id for s in samples],
        events=[list(s.episode.events) for s in samples] if labeled else None,
    )


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, Parameter], grads: Dict[str, Optional[np.ndarray]], state: AdamState,
              lr: float, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """Bias-corrected Adam update in place; a missing gradient counts as zero."""
    for name, param in params.items():
        grad = grads.get(name)
        if grad is not None and grad.shape != param.shape:
            raise ContractError(f"gradient for {name} has shape {grad.shape}, parameter has {param.shape}")
    state.step += 1
    beta1, beta2 = betas
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.values)
        m = state.m.setdefault(name, np.zeros_like(param.values))
        v = state.v.setdefault(name, np.zeros_like(param.values))
        m[...] = beta1 * m + (1.0 - beta1) * grad
        v[...] = beta2 * v + (1.0 - beta2) * grad * grad
        param.values -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)


def clip_gradients(grads: Dict[str, Optional[np.ndarray]], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values() if g is not None)))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for name, g in grads.items():
            if g is not None:
                grads[name] = g * factor
    return total


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

@dataclass
class LossRecord:
    """Scalar loss components of one step; unused terms stay 0."""
    total: float
    qa: float
    cert: float = 0.0
    div_cls: float = 0.0
    iou: float = 0.0
    cls: float = 0.0
    l1: float = 0.0

    def components(self) -> Dict[str, float]:
        return asdict(self)

    def recombined(self, config: TrainConfig) -> float:
        if config.mode == "supervised":
            return self.qa + config.lambda_cls * self.cls + config.lambda_l1 * self.l1
        return self.qa + config.lambda_cert * self.cert + config.lambda_cls * self.div_cls + config.lambda_iou * self.iou

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in self.components().values())

    def describe(self) -> str:
        return " ".join(f"{k}={v:.6f}" for k, v in self.components().items())


def match_batch(events: Sequence[Sequence[GroundTruthEvent]], bank: MemoryBank,
                lambda_cls: float, lambda_l1: float) -> Tuple[List[List[GroundTruthEvent]], List[Assignment]]:
    """One Hungarian assignment per sample; nothing here is recorded on the tape."""
    gts, assignments = [], []
    with nx.no_grad():
        for b, sample_events in enumerate(events):
            gt = pad_events(sample_events, bank.num_memories)
            single = bank.sample(b) if bank.batched else bank
            assignments.append(hungarian(matching_cost_matrix(gt, single, lambda_cls, lambda_l1)))
            gts.append(gt)
    return gts, assignments


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

class Predictor(Protocol):
    def predict(self, batch: Batch) -> np.ndarray: ...


@dataclass
class EvalMetrics:
    accuracy: float
    count: int
    per_type: Dict[str, float]
    per_type_counts: Dict[str, int]
    majority_baseline: float
    event_accuracy: Optional[float] = None
    temporal_l1: Optional[float] = None

    def lines(self, per_type: bool = True) -> List[Tuple[str, float]]:
        rows: List[Tuple[str, float]] = [
            ("accuracy", self.accuracy), ("count", float(self.count)), ("majority_baseline", self.majority_baseline),
        ]
        if per_type:
            for qtype in sorted(self.per_type):
                rows.append((f"accuracy/{qtype}", self.per_type[qtype]))
                rows.append((f"count/{qtype}", float(self.per_type_counts[qtype])))
        if self.event_accuracy is not None:
            rows.append(("event_accuracy", self.event_accuracy))
            rows.append(("temporal_l1", self.temporal_l1))
        return rows


def evaluate(samples: Sequence[Sample], predictor: Predictor, batch_size: int = EVAL_BATCH_SIZE) -> EvalMetrics:
    """
    Overall and per-question-type accuracy of ``predictor`` on ``samples``, next to
    the accuracy of always answering the most frequent answer among them.
    """
    if not samples:
        raise ContractError("cannot evaluate on an empty dataset")
    predictions = []
    for start in range(0, len(samples), batch_size):
        predictions.extend(np.asarray(predictor.predict(collate(samples[start:start + batch_size]))).tolist())
    frame = pd.DataFrame({
        "qtype": [s.qa.qtype for s in samples],
        "answer": [s.qa.answer for s in samples],
        "correct": np.asarray(predictions) == np.array([s.qa.answer for s in samples]),
    })
    grouped = frame.groupby("qtype")["correct"].agg(["mean", "count"])
    return EvalMetrics(
        accuracy=float(frame["correct"].mean()),
        count=len(frame),
        per_type={str(k): float(v) for k, v in grouped["mean"].items()},
        per_type_counts={str(k): int(v) for k, v in grouped["count"].items()},
        majority_baseline=float(frame["answer"].value_counts(normalize=True).iloc[0]),
    )


def evaluate_events(episodes: Sequence[Episode], model: GlanceFocusModel,
                    batch_size: int = EVAL_BATCH_SIZE) -> Tuple[float, float]:
    """
    Matched-event classification accuracy and mean temporal L1 of a supervised glance stage.

    Returns:
        (accuracy over matched real events, mean |center| + |width| error)
    """
    labeled = [e for e in episodes if e.events]
    if not labeled:
        raise ContractError("event metrics need labeled episodes")
    config = model.config
    hits, errors = [], []
    was_training = model.training
    model.eval()
    try:
        for start in range(0, len(labeled), batch_size):
            chunk = labeled[start:start + batch_size]
            features, mask = pad_features(chunk)
            with nx.no_grad():
                bank = model.memory_bank(features, mask)
            gts, assignments = match_batch([e.events for e in chunk], bank, config.lambda_cls, config.lambda_l1)
            for b, (gt, assignment) in enumerate(zip(gts, assignments)):
                logits = bank.class_logits.values[b]
                spans = bank.spans.values[b]
                for i, event in enumerate(gt):
                    if event.is_empty:
                        continue
                    j = assignment.permutation[i]
                    hits.append(int(np.argmax(logits[j]) == event.label))
                    errors.append(abs(spans[j, 0] - event.span.center) + abs(spans[j, 1] - event.span.width))
    finally:
        model.train(was_training)
    return float(np.mean(hits)), float(np.mean(errors))


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"GFCK1"
CHECKPOINT_VERSION = 1
_LENGTH = struct.Struct("<I")


@dataclass
class Checkpoint:
    config: TrainConfig
    header: dict
    tensors: Dict[str, np.ndarray]


def write_checkpoint(path: Union[str, Path], header: dict, tensors: Sequence[Tuple[str, np.ndarray]]) -> None:
    header = dict(header, version=CHECKPOINT_VERSION,
                  tensors=[{"name": name, "shape": list(array.shape)} for name, array in tensors])
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(_LENGTH.pack(len(blob)))
        f.write(blob)
        for _, array in tensors:
            f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointMismatchError(f"not a checkpoint: expected magic {CHECKPOINT_MAGIC.decode()}",
                                      path=str(path), offset=0)
    offset = len(CHECKPOINT_MAGIC)
    if len(data) < offset + _LENGTH.size:
        raise FormatError("truncated checkpoint header", path=str(path), offset=len(data))
    (length,) = _LENGTH.unpack_from(data, offset)
    offset += _LENGTH.size
    if len(data) < offset + length:
        raise FormatError("truncated checkpoint header", path=str(path), offset=len(data))
    try:
        header = json.loads(data[offset:offset + length].decode("utf-8"))
        config = TrainConfig.model_validate(header["config"])
        layout = [(t["name"], tuple(int(s) for s in t["shape"])) for t in header["tensors"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"malformed checkpoint header: {exc}", path=str(path), offset=offset) from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointMismatchError(f"unsupported checkpoint version {header.get('version')}", path=str(path))
    offset += length

    tensors = {}
    for name, shape in layout:
        size = int(np.prod(shape)) * 8
        if len(data) < offset + size:
            raise FormatError(f"tensor {name} truncated", path=str(path), offset=len(data))
        tensors[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=offset).astype(np.float64).reshape(shape)
        offset += size
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after the last tensor", path=str(path), offset=offset)
    return Checkpoint(config=config, header=header, tensors=tensors)


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

@dataclass
class EpochSummary:
    epoch: int
    losses: Dict[str, float]
    heldout_accuracy: Optional[float]


class Trainer:
    def __init__(self, config: TrainConfig, model: GlanceFocusModel):
        self.config = config
        self.model = model
        self.params: Dict[str, Parameter] = dict(model.named_parameters())
        self.adam = AdamState()
        self.rng = np.random.default_rng([config.seed, DROPOUT_STREAM])
        self.epoch = 0
        self.batch_cursor = 0
        self.global_step = 0
        model.set_rng(self.rng)
        model.train()

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path]) -> "Trainer":
        checkpoint = load_checkpoint(path)
        dims = checkpoint.header.get("model", {})
        try:
            model = GlanceFocusModel(checkpoint.config, int(dims["feature_dim"]), int(dims["vocab_size"]),
                                     int(dims["answer_count"]))
        except (KeyError, TypeError, ValueError):
            raise FormatError("checkpoint header lacks model dimensions", path=str(path)) from None
        trainer = cls(checkpoint.config, model)
        trainer.restore(checkpoint)
        logger.info(f"✅ Resumed from {path} at epoch {trainer.epoch}, batch {trainer.batch_cursor}")
        return trainer

    # -- state -------------------------------------------------------------

    def save_checkpoint(self, path: Union[str, Path]) -> None:
        tensors = [(f"param/{name}", p.values) for name, p in self.params.items()]
        tensors += [(f"adam.m/{name}", self.adam.m[name]) for name in self.params if name in self.adam.m]
        tensors += [(f"adam.v/{name}", self.adam.v[name]) for name in self.params if name in self.adam.v]
        header = {
            "config": json.loads(self.config.model_dump_json()),
            "model": {"feature_dim": self.model.feature_dim, "vocab_size": self.model.vocab_size,
                      "answer_count": self.model.answer_count},
            "epoch": self.epoch,
            "batch_cursor": self.batch_cursor,
            "global_step": self.global_step,
            "adam_step": self.adam.step,
            "rng_state": self.rng.bit_generator.state,
        }
        write_checkpoint(path, header, tensors)
        logger.info(f"✅ Checkpoint written to {path} (step {self.global_step})")

    def restore(self, checkpoint: Checkpoint) -> None:
        """Load parameters, Adam moments, counters and the dropout generator; shapes must match exactly."""
        for name, param in self.params.items():
            key = f"param/{name}"
            if key not in checkpoint.tensors:
                raise CheckpointMismatchError(f"checkpoint has no tensor {key}")
            stored = checkpoint.tensors[key]
            if stored.shape != param.shape:
                raise CheckpointMismatchError(f"tensor {key} has shape {stored.shape}, model expects {param.shape}")
        expected = {f"param/{n}" for n in self.params}
        extra = [k for k in checkpoint.tensors if k.startswith("param/") and k not in expected]
        if extra:
            raise CheckpointMismatchError(f"checkpoint has tensors the model lacks: {extra[:3]}")
        try:
            self.rng.bit_generator.state = checkpoint.header["rng_state"]
        except (KeyError, TypeError, ValueError):
            raise CheckpointMismatchError("checkpoint header has no usable dropout generator state") from None

        for name, param in self.params.items():
            param.values[...] = checkpoint.tensors[f"param/{name}"]
            param.grad = None
        self.adam = AdamState(step=int(checkpoint.header.get("adam_step", 0)))
        for name in self.params:
            if f"adam.m/{name}" in checkpoint.tensors:
                self.adam.m[name] = checkpoint.tensors[f"adam.m/{name}"].copy()
                self.adam.v[name] = checkpoint.tensors[f"adam.v/{name}"].copy()
        self.epoch = int(checkpoint.header.get("epoch", 0))
        self.batch_cursor = int(checkpoint.header.get("batch_cursor", 0))
        self.global_step = int(checkpoint.header.get("global_step", 0))
        self.model.set_rng(self.rng)

    # -- steps -------------------------------------------------------------

    def _raise_if_diverged(self, record: LossRecord) -> None:
        if not record.is_finite():
            logger.error(f"❌ Non-finite loss at step {self.global_step}: {record.describe()}")
            raise TrainingDivergedError(f"non-finite loss at step {self.global_step}", record.components())

    def _apply_gradients(self) -> None:
        grads = {name: p.grad for name, p in self.params.items()}
        clip_gradients(grads, self.config.clip_norm)
        adam_step(self.params, grads, self.adam, self.config.learning_rate,
                  tuple(self.config.adam_betas), self.config.adam_eps)
        self.global_step += 1

    def train_step(self, batch: Batch) -> LossRecord:
        if self.config.mode == "supervised":
            return self.train_step_supervised(batch)
        return self.train_step_unsupervised(batch)

    def train_step_unsupervised(self, batch: Batch) -> LossRecord:
        """QA cross-entropy plus weighted certainty, semantic diversity and temporal overlap."""
        cfg = self.config
        if cfg.mode != "unsupervised":
            raise ContractError("train_step_unsupervised called in supervised mode")
        self.model.train()
        self.model.zero_grad()
        with nx.recording():
            out = self.model.forward_batch(batch)
            qa = nx.cross_entropy_from_logits(out.answer_logits, batch.answers)
            total = qa
            cert = div_cls = iou = None
            if out.bank is not None:
                cert = loss_certainty(out.bank)
                div_cls = loss_semantic_diversity(out.bank)
                total = total + nx.scale(cert, cfg.lambda_cert) + nx.scale(div_cls, cfg.lambda_cls)
                if out.bank.num_memories >= 2:
                    iou = loss_temporal_overlap(out.bank)
                    total = total + nx.scale(iou, cfg.lambda_iou)
            record = LossRecord(
                total=total.item(), qa=qa.item(),
                cert=cert.item() if cert is not None else 0.0,
                div_cls=div_cls.item() if div_cls is not None else 0.0,
                iou=iou.item() if iou is not None else 0.0,
            )
            self._raise_if_diverged(record)
            nx.backward(total)
        self._apply_gradients()
        return record

    def train_step_supervised(self, batch: Batch) -> LossRecord:
        """QA cross-entropy plus matched event classification and span L1."""
        cfg = self.config
        if cfg.mode != "supervised":
            raise ContractError("train_step_supervised called in unsupervised mode")
        if batch.events is None:
            raise ContractError("supervised training needs event labels for every sample")
        self.model.train()
        self.model.zero_grad()
        with nx.recording():
            out = self.model.forward_batch(batch)
            qa = nx.cross_entropy_from_logits(out.answer_logits, batch.answers)
            gts, assignments = match_batch(batch.events, out.bank, cfg.lambda_cls, cfg.lambda_l1)
            l_cls, l_l1 = supervised_losses(gts, out.bank, assignments, cfg.no_event_weight)
            total = qa + nx.scale(l_cls, cfg.lambda_cls) + nx.scale(l_l1, cfg.lambda_l1)
            record = LossRecord(total=total.item(), qa=qa.item(), cls=l_cls.item(), l1=l_l1.item())
            self._raise_if_diverged(record)
            nx.backward(total)
        self._apply_gradients()
        return record

    # -- loops -------------------------------------------------------------

    def epoch_batches(self, samples: Sequence[Sample], epoch: int) -> List[List[Sample]]:
        order = np.random.default_rng([self.config.seed, SHUFFLE_STREAM, epoch]).permutation(len(samples))
        size = self.config.batch_size
        return [[samples[i] for i in order[s:s + size]] for s in range(0, len(order), size)]

    def _check_samples(self, samples: Sequence[Sample]) -> None:
        if not samples:
            raise ContractError("no training samples")
        if self.config.mode == "supervised":
            if any(s.episode.events is None for s in samples):
                raise ContractError("supervised mode requires event labels on every episode")
            most = max(len(s.episode.events) for s in samples)
            if most > self.config.num_memories:
                raise ContractError(f"episodes hold up to {most} events but only {self.config.num_memories} memories")

    def train_steps(self, samples: Sequence[Sample], steps: int) -> List[LossRecord]:
        """Run ``steps`` optimizer steps, continuing from the current epoch and batch cursor."""
        self._check_samples(samples)
        records: List[LossRecord] = []
        while len(records) < steps:
            batches = self.epoch_batches(samples, self.epoch)
            if self.batch_cursor >= len(batches):
                self.epoch += 1
                self.batch_cursor = 0
                continue
            records.append(self.train_step(collate(batches[self.batch_cursor])))
            self.batch_cursor += 1
        return records

    def fit(self, train_samples: Sequence[Sample], heldout_samples: Sequence[Sample] = (),
            epochs: Optional[int] = None, checkpoint_path: Optional[Union[str, Path]] = None) -> List[EpochSummary]:
        self._check_samples(train_samples)
        epochs = self.config.epochs if epochs is None else epochs
        summaries = []
        while self.epoch < epochs:
            batches = self.epoch_batches(train_samples, self.epoch)
            records = []
            while self.batch_cursor < len(batches):
                records.append(self.train_step(collate(batches[self.batch_cursor])))
                self.batch_cursor += 1
            losses = {k: float(np.mean([r.components()[k] for r in records])) for k in records[0].components()} if records else {}
            accuracy = evaluate(heldout_samples, self.model).accuracy if heldout_samples else None
            shown = " ".join(f"{k}={v:.4f}" for k, v in losses.items())
            logger.info(f"🎯 Epoch {self.epoch + 1}/{epochs} {shown}"
                        + (f" heldout_acc={accuracy:.4f}" if accuracy is not None else ""))
            summaries.append(EpochSummary(epoch=self.epoch, losses=losses, heldout_accuracy=accuracy))
            self.epoch += 1
            self.batch_cursor = 0
            if checkpoint_path is not None:
                self.save_checkpoint(checkpoint_path)
        return summaries


# ---------------------------------------------------------------------------
# module ablation
# ---------------------------------------------------------------------------

def ordering_accuracy(metrics: EvalMetrics) -> float:
    """Count-weighted accuracy over the ordering-sensitive question types."""
    counts = {t: metrics.per_type_counts.get(t, 0) for t in ORDERING_TYPES}
    total = sum(counts.values())
    if total == 0:
        raise ContractError("no ordering questions in the evaluation set")
    return sum(metrics.per_type[t] * c for t, c in counts.items() if c) / total


def run_module_ablation(config: TrainConfig, train_samples: Sequence[Sample], heldout_samples: Sequence[Sample],
                        feature_dim: int, vocab_size: int, answer_count: int,
                        seeds: Sequence[int]) -> pd.DataFrame:
    """
    Train the full cascade and the standard cross-attention variant on each
    seed; report ordering-question accuracy per run and the per-seed margin.
    """
    rows = []
    for seed in seeds:
        accuracies = {}
        for architecture in ("glance_focus", "glance_only"):
            run_config = config.model_copy(update={"architecture": architecture, "seed": seed})
            model = GlanceFocusModel(run_config, feature_dim, vocab_size, answer_count)
            trainer = Trainer(run_config, model)
            trainer.fit(train_samples)
            accuracies[architecture] = ordering_accuracy(evaluate(heldout_samples, model))
            logger.info(f"🎯 Ablation seed {seed} {architecture}: ordering accuracy {accuracies[architecture]:.4f}")
        rows.append({"seed": seed, **accuracies, "margin": accuracies["glance_focus"] - accuracies["glance_only"]})
    return pd.DataFrame(rows, columns=["seed", "glance_focus", "glance_only", "margin"])
