"""
Glance stage: summarize a whole video into N event memories, each carrying
class logits and a normalized (center, width) span, plus the unsupervised
information-maximization losses that shape them.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from glance_focus import numerics as nx
from glance_focus.errors import ContractError, DimensionError
from glance_focus.models import AttentionConfig
from glance_focus.numerics import Parameter, Tensor
from glance_focus.set_matching import IOU_EPS, Span
from glance_focus.transformer import (
    CrossAttention,
    Decoder,
    DecoderContext,
    Encoder,
    Linear,
    Module,
    batch_broadcast,
    key_padding_mask,
    sinusoidal_pe,
)

logger = logging.getLogger(__name__)


@dataclass
class MemoryBank:
    """
    Output of the glance stage.

    Attributes:
        memories: [N x D] or [B x N x D] event memory states
        class_logits: [N x C'] or [B x N x C'] event classifier logits
        spans: [N x 2] or [B x N x 2] (center, width), each in [0, 1]
    """
    memories: Tensor
    class_logits: Tensor
    spans: Tensor

    @property
    def batched(self) -> bool:
        return self.memories.ndim == 3

    @property
    def num_memories(self) -> int:
        return self.memories.shape[-2]

    def class_probs(self) -> Tensor:
        return nx.softmax(self.class_logits, axis=-1)

    def sample(self, b: int) -> "MemoryBank":
        if not self.batched:
            raise ContractError("sample() selects from a batched memory bank")
        return MemoryBank(self.memories[b], self.class_logits[b], self.spans[b])

    def span_list(self) -> List[Span]:
        if self.batched:
            raise ContractError("span_list() needs an unbatched memory bank")
        return [Span(float(c), float(w)) for c, w in np.clip(self.spans.values, 0.0, 1.0)]


class GlanceStage(Module):
    """Encoder over frames, then N learned memory queries decoded against it."""

    def __init__(self, attention: AttentionConfig, num_memories: int, class_outputs: int):
        if num_memories < 1:
            raise ContractError("the glance stage needs at least one event memory")
        dim = attention.model_dim
        self.model_dim = dim
        self.encoder = Encoder(attention)
        self.queries = Parameter((num_memories, dim))
        self.decoder = Decoder(attention, lambda: CrossAttention(attention))
        self.class_head = Linear(dim, class_outputs)
        self.span_head = [Linear(dim, dim), Linear(dim, dim), Linear(dim, 2)]

    @property
    def num_memories(self) -> int:
        return self.queries.shape[0]

    def forward(self, video: Tensor, frame_mask: Optional[np.ndarray] = None) -> MemoryBank:
        """
        Args:
            video: [T x D] or [B x T x D] projected frame features
            frame_mask: [T] or [B x T] flags of real (non-padding) frames

        Returns:
            MemoryBank for the input
        """
        if video.ndim not in (2, 3) or video.shape[-1] != self.model_dim:
            raise DimensionError(f"glance expects [.. x T x {self.model_dim}] frames, got {video.shape}")
        frames = video.shape[-2]
        if frames < 1:
            raise ContractError("the glance stage needs at least one frame")

        x = video + sinusoidal_pe(frames, self.model_dim)
        mask = key_padding_mask(frame_mask) if frame_mask is not None else None
        encoded = self.encoder(x, mask)
        memories, _ = self.decoder(batch_broadcast(self.queries, video), DecoderContext(encoded, mask))

        logits = self.class_head(memories)
        h = nx.relu(self.span_head[0](memories))
        h = nx.relu(self.span_head[1](h))
        spans = nx.sigmoid(self.span_head[2](h))
        return MemoryBank(memories=memories, class_logits=logits, spans=spans)


def loss_certainty(bank: MemoryBank) -> Tensor:
    """Mean entropy of each memory's class distribution."""
    p = bank.class_probs()
    entropy = -(p * nx.log(p)).sum(axis=-1)
    return nx.mean(entropy)


def loss_semantic_diversity(bank: MemoryBank) -> Tensor:
    """Negative entropy of the memory-averaged class distribution, averaged over the batch."""
    p = bank.class_probs()
    p_bar = nx.mean(p, axis=-2)
    return nx.mean((p_bar * nx.log(p_bar)).sum(axis=-1))


def soft_temporal_iou(spans: Tensor) -> Tensor:
    """[.. x N x 2] spans -> [.. x N x N] differentiable pairwise IoU."""
    n = spans.shape[-2]
    lead = spans.shape[:-2]
    center, width = spans[..., 0], spans[..., 1]
    start = nx.maximum(center - nx.scale(width, 0.5), 0.0)
    end = nx.minimum(center + nx.scale(width, 0.5), 1.0)

    def rows(t: Tensor) -> Tensor:
        return t.reshape(lead + (n, 1))

    def cols(t: Tensor) -> Tensor:
        return t.reshape(lead + (1, n))

    inter = nx.relu(nx.minimum(rows(end), cols(end)) - nx.maximum(rows(start), cols(start)))
    length = end - start
    union = rows(length) + cols(length) - inter
    return inter / (union + IOU_EPS)


def loss_temporal_overlap(bank: MemoryBank) -> Tensor:
    """Mean pairwise IoU between distinct memories' spans."""
    n = bank.num_memories
    if n < 2:
        raise ContractError("temporal overlap is undefined for fewer than two memories")
    off_diagonal = Tensor(1.0 - np.eye(n))
    iou = soft_temporal_iou(bank.spans) * off_diagonal
    per_sample = nx.scale(iou.sum(axis=(-2, -1)), 1.0 / (n * (n - 1)))
    return nx.mean(per_sample)


def loss_diversity(bank: MemoryBank, lambda_cls: float = 1.0, lambda_iou: float = 1.0) -> Tensor:
    if lambda_cls < 0 or lambda_iou < 0:
        raise ContractError(f"diversity weights must be non-negative, got {lambda_cls}, {lambda_iou}")
    return (nx.scale(loss_semantic_diversity(bank), lambda_cls)
            + nx.scale(loss_temporal_overlap(bank), lambda_iou))
