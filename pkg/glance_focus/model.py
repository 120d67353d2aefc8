"""
The end-to-end question answering model: input projection, optional glance
stage, question encoder and focus stage.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from glance_focus import numerics as nx
from glance_focus.errors import ContractError, DimensionError
from glance_focus.focus import FocusStage, MemoryPrompt, QuestionEncoder, build_memory_prompt
from glance_focus.glance import GlanceStage, MemoryBank
from glance_focus.models import TrainConfig
from glance_focus.numerics import Tensor
from glance_focus.transformer import Linear, Module

logger = logging.getLogger(__name__)


@dataclass
class ModelOutput:
    answer_logits: Tensor
    answers: np.ndarray
    answer_states: Tensor
    bank: Optional[MemoryBank] = None
    prompt: Optional[MemoryPrompt] = None
    cross_weights: List[object] = field(default_factory=list)


class GlanceFocusModel(Module):
    """
    Args:
        config: training configuration; mode, architecture and sizes are read from it
        feature_dim: width of the raw frame features
        vocab_size: question token vocabulary size
        answer_count: number of candidate answers
    """

    def __init__(self, config: TrainConfig, feature_dim: int, vocab_size: int, answer_count: int):
        if feature_dim < 1:
            raise ContractError("feature dimension must be positive")
        attention = config.attention
        self.config = config
        self.feature_dim = feature_dim
        self.vocab_size = vocab_size
        self.answer_count = answer_count
        self.input_proj = Linear(feature_dim, attention.model_dim)
        use_memory = config.architecture != "no_memory"
        self.glance = GlanceStage(attention, config.num_memories, config.class_outputs) if use_memory else None
        self.question_encoder = QuestionEncoder(vocab_size, attention.model_dim)
        self.focus = FocusStage(attention, config.num_memories, answer_count,
                                cascade=config.architecture == "glance_focus", use_memory=use_memory)
        self.reset_parameters(config.seed)
        logger.info(f"🔧 Built {config.architecture} model ({config.mode}): "
                    f"{sum(p.size for p in self.parameters())} parameters")

    def memory_bank(self, features: Tensor, frame_mask: Optional[np.ndarray] = None) -> MemoryBank:
        if self.glance is None:
            raise ContractError(f"architecture '{self.config.architecture}' has no glance stage")
        return self.glance(self._project(features), frame_mask)

    def _project(self, features: Tensor) -> Tensor:
        if features.shape[-1] != self.feature_dim:
            raise DimensionError(f"features of width {features.shape[-1]}, model expects {self.feature_dim}")
        return self.input_proj(features)

    def forward(self, features: Tensor, questions, frame_mask: Optional[np.ndarray] = None,
                question_mask: Optional[np.ndarray] = None) -> ModelOutput:
        """
        Args:
            features: [T x F] or [B x T x F] frame features
            questions: [L] or [B x L] token ids
        """
        video = self._project(features)
        bank = prompt = None
        if self.glance is not None:
            bank = self.glance(video, frame_mask)
            prompt = build_memory_prompt(bank)
        question = self.question_encoder(questions)
        out = self.focus(video, prompt, question, frame_mask, question_mask)
        return ModelOutput(answer_logits=out.answer_logits, answers=out.answers, answer_states=out.answer_states,
                           bank=bank, prompt=prompt, cross_weights=out.cross_weights)

    def forward_batch(self, batch) -> ModelOutput:
        return self.forward(batch.features, batch.questions, batch.frame_mask, batch.question_mask)

    def predict(self, batch) -> np.ndarray:
        """Deterministic answers for a collated batch; dropout is off and nothing is recorded."""
        was_training = self.training
        self.eval()
        try:
            with nx.no_grad():
                return self.forward_batch(batch).answers
        finally:
            self.train(was_training)
