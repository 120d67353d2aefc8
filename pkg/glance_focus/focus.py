"""
Focus stage: jointly encode frames, time-ordered event memories and the
question, then decode answer queries through the multi-level cross-attention
cascade (question -> memories -> frames -> answer) and read out an answer.

Also holds the plain-text attention export used for interpretability.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from glance_focus import numerics as nx
from glance_focus.errors import ContractError, DimensionError, FormatError
from glance_focus.glance import MemoryBank
from glance_focus.models import AttentionConfig
from glance_focus.numerics import Parameter, Tensor
from glance_focus.transformer import (
    CrossAttention,
    Decoder,
    Encoder,
    Linear,
    Module,
    MultiHeadAttention,
    batch_broadcast,
    key_padding_mask,
    sinusoidal_pe,
)

logger = logging.getLogger(__name__)

SEGMENT_FRAME, SEGMENT_MEMORY, SEGMENT_QUESTION = 0, 1, 2


@dataclass
class MemoryPrompt:
    """Event memories reordered by predicted center, with their positional table."""
    memories: Tensor
    positions: Tensor
    sort_order: np.ndarray

    def embeddings(self) -> Tensor:
        return self.memories + self.positions


def build_memory_prompt(bank: MemoryBank) -> MemoryPrompt:
    """
    Sort memories by ascending predicted center; equal centers keep their
    original order. The sort order carries no gradient, the gathered memories do.
    """
    centers = bank.spans.values[..., 0]
    order = np.argsort(centers, axis=-1, kind="stable")
    if bank.batched:
        rows = np.arange(order.shape[0])[:, None]
        memories = bank.memories[(rows, order)]
    else:
        memories = bank.memories[order]
    positions = sinusoidal_pe(bank.num_memories, bank.memories.shape[-1])
    return MemoryPrompt(memories=memories, positions=positions, sort_order=order)


class QuestionEncoder(Module):
    """Token embedding table followed by the learned projector into the shared space."""

    def __init__(self, vocab_size: int, dim: int):
        if vocab_size < 1:
            raise ContractError("question vocabulary is empty")
        self.embedding = Parameter((vocab_size, dim))
        self.projector = Linear(dim, dim)

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    def forward(self, tokens) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim not in (1, 2) or tokens.shape[-1] < 1:
            raise ContractError(f"question tokens must be a non-empty [L] or [B x L] array, got {tokens.shape}")
        if tokens.min() < 0 or tokens.max() >= self.vocab_size:
            raise ContractError(f"question token outside the {self.vocab_size}-token vocabulary")
        return self.projector(self.embedding[tokens])


def focus_on_memory(attn: MultiHeadAttention, question: Tensor, memories: Tensor) -> Tuple[Tensor, Tensor]:
    """Question positions attend over the encoded event memories."""
    return attn(question, memories, memories)


def focus_on_frame(attn: MultiHeadAttention, memory_focus: Tensor, frames: Tensor,
                   frame_mask: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
    """Memory-focused question states attend over the encoded frames."""
    return attn(memory_focus, frames, frames, frame_mask)


@dataclass
class FocusContext:
    """Everything a focus decoder layer may attend to."""
    frames: Tensor
    memories: Optional[Tensor]
    question: Tensor
    frame_mask: Optional[np.ndarray] = None
    question_mask: Optional[np.ndarray] = None
    # the full joint encoding, used by the standard cross-attention variant
    memory: Optional[Tensor] = None
    memory_mask: Optional[np.ndarray] = None


@dataclass
class CascadeWeights:
    memory: Tensor
    frame: Tensor
    answer: Tensor


class FocusCascade(Module):
    """
    Cross block of one focus decoder layer: question->memories, then the
    result over frames, then the answer states over that frame focus.
    """

    def __init__(self, attention: AttentionConfig):
        self.memory_attn = MultiHeadAttention(attention)
        self.frame_attn = MultiHeadAttention(attention)
        self.answer_attn = MultiHeadAttention(attention)

    def forward(self, h: Tensor, context: FocusContext) -> Tuple[Tensor, CascadeWeights]:
        if context.memories is None:
            raise ContractError("the focus cascade needs encoded event memories")
        memory_focus, w_memory = focus_on_memory(self.memory_attn, context.question, context.memories)
        frame_focus, w_frame = focus_on_frame(self.frame_attn, memory_focus, context.frames, context.frame_mask)
        answer, w_answer = self.answer_attn(h, frame_focus, frame_focus, context.question_mask)
        return answer, CascadeWeights(memory=w_memory, frame=w_frame, answer=w_answer)


def predict_answer(answer_states: Tensor, answer_head: Linear) -> Tuple[Tensor, np.ndarray]:
    """
    Read the answer from the last decoded answer query.

    Returns:
        logits [A] or [B x A] and the argmax index (lowest index on ties)
    """
    last = answer_head(answer_states[..., -1:, :])
    logits = last.reshape(last.shape[:-2] + last.shape[-1:])
    return logits, np.argmax(logits.values, axis=-1)


@dataclass
class FocusOutput:
    answer_logits: Tensor
    answers: np.ndarray
    answer_states: Tensor
    cross_weights: List[object] = field(default_factory=list)


class FocusStage(Module):
    def __init__(self, attention: AttentionConfig, num_queries: int, answer_count: int,
                 cascade: bool = True, use_memory: bool = True):
        if answer_count < 1:
            raise ContractError("answer vocabulary is empty")
        if cascade and not use_memory:
            raise ContractError("the focus cascade cannot run without event memories")
        dim = attention.model_dim
        self.model_dim = dim
        self.cascade = cascade
        self.use_memory = use_memory
        self.encoder = Encoder(attention)
        self.segments = Parameter((3, dim))
        self.answer_queries = Parameter((num_queries, dim))
        if cascade:
            self.decoder = Decoder(attention, lambda: FocusCascade(attention))
        else:
            self.decoder = Decoder(attention, lambda: CrossAttention(attention))
        self.answer_head = Linear(dim, answer_count)

    def focus_encode(self, video: Tensor, prompt: Optional[MemoryPrompt], question: Tensor,
                     frame_mask: Optional[np.ndarray] = None,
                     question_mask: Optional[np.ndarray] = None):
        """
        Encode [frames; memories; question] jointly and split the result.

        Returns:
            (frames, memories or None, question, joint encoding, joint key mask)
        """
        for name, t in (("video", video), ("question", question)):
            if t.shape[-1] != self.model_dim:
                raise DimensionError(f"{name} width {t.shape[-1]} != model dim {self.model_dim}")
        if self.use_memory and prompt is None:
            raise ContractError("this focus stage expects a memory prompt")
        frames, length = video.shape[-2], question.shape[-2]
        if frames < 1 or length < 1:
            raise ContractError("focus encoding needs at least one frame and one question token")

        parts = [video + sinusoidal_pe(frames, self.model_dim) + self.segments[SEGMENT_FRAME]]
        n = 0
        if self.use_memory:
            n = prompt.memories.shape[-2]
            if prompt.memories.shape[-1] != self.model_dim:
                raise DimensionError(f"memory width {prompt.memories.shape[-1]} != model dim {self.model_dim}")
            parts.append(prompt.embeddings() + self.segments[SEGMENT_MEMORY])
        parts.append(question + sinusoidal_pe(length, self.model_dim) + self.segments[SEGMENT_QUESTION])
        joint = nx.concat(parts, axis=-2)

        joint_mask = None
        if frame_mask is not None or question_mask is not None:
            lead = video.shape[:-2]
            valid = [np.ones(lead + (frames,), bool) if frame_mask is None else np.asarray(frame_mask, bool),
                     np.ones(lead + (n,), bool),
                     np.ones(lead + (length,), bool) if question_mask is None else np.asarray(question_mask, bool)]
            joint_mask = key_padding_mask(np.concatenate(valid, axis=-1))

        encoded = self.encoder(joint, joint_mask)
        x_enc = encoded[..., :frames, :]
        m_enc = encoded[..., frames:frames + n, :] if self.use_memory else None
        l_enc = encoded[..., frames + n:, :]
        return x_enc, m_enc, l_enc, encoded, joint_mask

    def forward(self, video: Tensor, prompt: Optional[MemoryPrompt], question: Tensor,
                frame_mask: Optional[np.ndarray] = None,
                question_mask: Optional[np.ndarray] = None) -> FocusOutput:
        x_enc, m_enc, l_enc, joint, joint_mask = self.focus_encode(
            video, prompt, question, frame_mask, question_mask)
        context = FocusContext(
            frames=x_enc,
            memories=m_enc,
            question=l_enc,
            frame_mask=key_padding_mask(frame_mask) if frame_mask is not None else None,
            question_mask=key_padding_mask(question_mask) if question_mask is not None else None,
            memory=joint,
            memory_mask=joint_mask,
        )
        states, weights = self.decoder(batch_broadcast(self.answer_queries, video), context)
        logits, answers = predict_answer(states, self.answer_head)
        return FocusOutput(answer_logits=logits, answers=answers, answer_states=states, cross_weights=weights)


# ---------------------------------------------------------------------------
# attention export
# ---------------------------------------------------------------------------

ATTENTION_MAGIC = "GF-ATTN"
ATTENTION_VERSION = "v1"


@dataclass
class AttentionMaps:
    """
    Cascade weights of one QA sample from the last focus decoder layer.

    Attributes:
        memory: [h x L x N] question-to-memory weights
        frame: [h x L x T] memory-focus-to-frame weights
        sort_order: [N] memory index at each time-ordered position
        spans: [N x 2] predicted (center, width) per memory, original order
    """
    memory: np.ndarray
    frame: np.ndarray
    sort_order: np.ndarray
    spans: np.ndarray


def _fmt(values) -> str:
    return " ".join(format(float(v), ".9g") for v in values)


def export_attention(path: Union[str, Path], maps: AttentionMaps) -> None:
    """
    Write the cascade weights as plain text: a header line, h*L rows of
    memory-level weights, h*L rows of frame-level weights, the sort order and
    the flattened spans. Numbers use 9 significant digits.
    """
    if maps.memory.ndim != 3 or maps.frame.ndim != 3 or maps.memory.shape[:2] != maps.frame.shape[:2]:
        raise DimensionError(f"attention maps {maps.memory.shape} and {maps.frame.shape} disagree")
    heads, length, n = maps.memory.shape
    frames = maps.frame.shape[2]
    lines = [f"{ATTENTION_MAGIC} {ATTENTION_VERSION} {heads} {length} {n} {frames}"]
    lines += [_fmt(row) for row in maps.memory.reshape(heads * length, n)]
    lines += [_fmt(row) for row in maps.frame.reshape(heads * length, frames)]
    lines.append("order " + " ".join(str(int(i)) for i in maps.sort_order))
    lines.append("spans " + _fmt(np.asarray(maps.spans).reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"✅ Attention export written to {path}")


def _parse_row(text: str, expected: int, path, line: int) -> np.ndarray:
    fields = text.split()
    if len(fields) != expected:
        raise FormatError(f"expected {expected} values, found {len(fields)}", path=str(path), line=line)
    try:
        return np.array([float(f) for f in fields])
    except ValueError:
        raise FormatError("non-numeric attention weight", path=str(path), line=line) from None


def read_attention(path: Union[str, Path]) -> AttentionMaps:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError("empty attention export", path=str(path), line=1)
    header = lines[0].split()
    if len(header) != 6 or header[0] != ATTENTION_MAGIC or header[1] != ATTENTION_VERSION:
        raise FormatError(f"bad attention export header '{lines[0]}'", path=str(path), line=1)
    try:
        heads, length, n, frames = (int(v) for v in header[2:])
    except ValueError:
        raise FormatError("non-integer extent in header", path=str(path), line=1) from None
    rows = heads * length
    expected_lines = 1 + 2 * rows + 2
    if len(lines) != expected_lines:
        raise FormatError(f"expected {expected_lines} lines, found {len(lines)}", path=str(path),
                          line=min(len(lines), expected_lines))

    memory = np.stack([_parse_row(lines[1 + r], n, path, 2 + r) for r in range(rows)]) if rows else np.zeros((0, n))
    frame = np.stack([_parse_row(lines[1 + rows + r], frames, path, 2 + rows + r) for r in range(rows)]) if rows else np.zeros((0, frames))

    order_line, spans_line = lines[-2].split(), lines[-1].split()
    if not order_line or order_line[0] != "order" or len(order_line) != n + 1:
        raise FormatError("malformed order line", path=str(path), line=len(lines) - 1)
    if not spans_line or spans_line[0] != "spans" or len(spans_line) != 2 * n + 1:
        raise FormatError("malformed spans line", path=str(path), line=len(lines))
    try:
        order = np.array([int(v) for v in order_line[1:]], dtype=np.int64)
    except ValueError:
        raise FormatError("non-integer sort index", path=str(path), line=len(lines) - 1) from None
    spans = _parse_row(" ".join(spans_line[1:]), 2 * n, path, len(lines)).reshape(n, 2)
    return AttentionMaps(memory=memory.reshape(heads, length, n), frame=frame.reshape(heads, length, frames),
                         sort_order=order, spans=spans)
