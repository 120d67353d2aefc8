from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class AttentionConfig(BaseModel):
    """
    Shape of one transformer stack (encoder or decoder).
    """
    model_config = ConfigDict(extra="forbid")

    model_dim: int = Field(default=64, gt=0, description="Hidden size D shared by every sublayer.")
    heads: int = Field(default=4, gt=0, description="Number of attention heads h.")
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0, description="Dropout rate on attention weights and sublayer outputs.")
    layers: int = Field(default=2, gt=0, description="Number of stacked layers.")

    @model_validator(mode="after")
    def _check_heads(self):
        if self.model_dim % self.heads != 0:
            raise ValueError(f"model_dim {self.model_dim} is not divisible by heads {self.heads}")
        if self.model_dim % 2 != 0:
            raise ValueError(f"model_dim {self.model_dim} must be even for sinusoidal positions")
        return self

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


class GeneratorConfig(BaseModel):
    """
    Parameters of the synthetic multi-event episode generator.
    """
    model_config = ConfigDict(extra="forbid")

    frames: int = Field(default=40, gt=0, description="Frames T per episode.")
    dim: int = Field(default=32, gt=0, description="Feature dimension of every frame.")
    classes: int = Field(default=5, gt=0, description="Number of event classes C.")
    events_min: int = Field(default=2, gt=0, description="Fewest events planted in one episode.")
    events_max: int = Field(default=4, gt=0, description="Most events planted in one episode.")
    noise: float = Field(default=0.05, ge=0.0, description="Standard deviation of Gaussian frame noise.")
    seed: int = Field(default=0, ge=0, description="Master seed; fixes the class prototypes.")
    min_width: float = Field(default=0.1, gt=0.0, le=1.0, description="Narrowest normalized event span.")
    max_width: float = Field(default=0.25, gt=0.0, le=1.0, description="Widest normalized event span.")
    time_buckets: int = Field(default=4, gt=0, description="Resolution of the what-at question template.")

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.events_min > self.events_max:
            raise ValueError(f"events_min {self.events_min} exceeds events_max {self.events_max}")
        if self.min_width > self.max_width:
            raise ValueError(f"min_width {self.min_width} exceeds max_width {self.max_width}")
        if self.events_max * self.min_width > 1.0:
            raise ValueError(
                f"{self.events_max} disjoint spans of width >= {self.min_width} cannot fit in [0, 1]"
            )
        if self.min_width < 1.0 / self.frames:
            raise ValueError(f"min_width {self.min_width} is narrower than one of {self.frames} frames")
        return self


class TrainConfig(BaseModel):
    """
    Every hyperparameter of a training run. Serialized in full into each checkpoint.
    """
    model_config = ConfigDict(extra="forbid")

    mode: Literal["unsupervised", "supervised"] = Field(default="unsupervised", description="Glance-stage supervision.")
    architecture: Literal["glance_focus", "glance_only", "no_memory"] = Field(
        default="glance_focus", description="Full model, cascade replaced by standard cross-attention, or no glance stage."
    )
    num_memories: int = Field(default=8, gt=0, description="Event memories N (also the answer-query count).")
    num_classes: int = Field(default=100, gt=0, description="Event classes C; 100 when unknown.")
    model_dim: int = Field(default=64, gt=0, description="Hidden size D.")
    layers: int = Field(default=2, gt=0, description="Layers per encoder/decoder stack.")
    heads: int = Field(default=4, gt=0, description="Attention heads.")
    dropout: float = Field(default=0.1, ge=0.0, lt=1.0, description="Dropout rate.")

    lambda_cert: float = Field(default=1.0, ge=0.0, description="Weight of the individual certainty loss.")
    lambda_cls: float = Field(default=1.0, ge=0.0, description="Weight of semantic diversity (uns) or event classification (sup).")
    lambda_iou: float = Field(default=1.0, ge=0.0, description="Weight of the temporal overlap loss.")
    lambda_l1: float = Field(default=5.0, ge=0.0, description="Weight of the temporal span L1 loss and matching term.")
    no_event_weight: float = Field(default=1.0, ge=0.0, description="Weight of the no-event class in event classification.")

    learning_rate: float = Field(default=1e-3, gt=0.0, description="Adam learning rate.")
    adam_betas: Tuple[float, float] = Field(default=(0.9, 0.999), description="Adam moment decay rates.")
    adam_eps: float = Field(default=1e-8, gt=0.0, description="Adam denominator epsilon.")
    clip_norm: float = Field(default=1.0, ge=0.0, description="Global gradient-norm clip; 0 disables.")
    epochs: int = Field(default=30, ge=0, description="Training epochs.")
    batch_size: int = Field(default=32, gt=0, description="QA samples per optimizer step.")
    seed: int = Field(default=0, ge=0, description="Master seed for initialization, shuffling and dropout.")
    heldout_fraction: float = Field(default=0.1, gt=0.0, lt=1.0, description="Share of episodes held out for evaluation.")

    data_dir: Optional[str] = Field(default=None, description="Dataset directory written by `gen`.")
    checkpoint_path: Optional[str] = Field(default=None, description="Where checkpoints are written.")

    @field_validator("adam_betas")
    @classmethod
    def _check_betas(cls, value):
        if not all(0.0 <= b < 1.0 for b in value):
            raise ValueError(f"adam betas must lie in [0, 1): {value}")
        return value

    @model_validator(mode="after")
    def _check_consistency(self):
        AttentionConfig(model_dim=self.model_dim, heads=self.heads, dropout=self.dropout, layers=self.layers)
        if self.mode == "supervised" and self.architecture == "no_memory":
            raise ValueError("supervised mode needs a glance stage; architecture 'no_memory' has none")
        return self

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(model_dim=self.model_dim, heads=self.heads, dropout=self.dropout, layers=self.layers)

    @property
    def class_outputs(self) -> int:
        """Width of the event classifier: C, or C+1 with the no-event class when supervised."""
        return self.num_classes + 1 if self.mode == "supervised" else self.num_classes
