"""
Transformer building blocks shared by the glance and focus stages.

Layers use the pre-norm residual layout. Inputs are either unbatched
[L x D] or batched [B x L x D]; masks mark *allowed* attention entries.
"""

import logging
import zlib
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from glance_focus import numerics as nx
from glance_focus.errors import ContractError, DimensionError
from glance_focus.models import AttentionConfig
from glance_focus.numerics import Parameter, Tensor

logger = logging.getLogger(__name__)


class Module:
    """Minimal parameter container; sub-modules and Parameters are discovered from attributes."""

    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Module, Parameter)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Parameter)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in self._children():
            if isinstance(value, Parameter):
                yield f"{prefix}{name}", value
            else:
                yield from value.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def reset_parameters(self, seed: int) -> None:
        """Initialize every parameter from a generator seeded by (seed, parameter name)."""
        for name, p in self.named_parameters():
            p.reset(np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))]))

    def set_rng(self, rng: Optional[np.random.Generator]) -> None:
        for module in self.modules():
            if isinstance(module, Dropout):
                module.rng = rng


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, bias: bool = True):
        self.weight = Parameter((in_dim, out_dim), init="xavier")
        self.bias = Parameter((out_dim,), init="zeros") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = nx.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter((dim,), init="ones")
        self.bias = Parameter((dim,), init="zeros")

    def forward(self, x: Tensor) -> Tensor:
        return nx.layernorm(x, self.gain, self.bias)


class Dropout(Module):
    def __init__(self, rate: float):
        self.rate = rate
        self.rng: Optional[np.random.Generator] = None

    def forward(self, x: Tensor) -> Tensor:
        if not self.training:
            return x
        return nx.dropout(x, self.rate, self.rng)


class FeedForward(Module):
    """D -> 4D -> D with ReLU."""

    def __init__(self, dim: int, hidden: Optional[int] = None):
        hidden = hidden or 4 * dim
        self.inner = Linear(dim, hidden)
        self.outer = Linear(hidden, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.outer(nx.relu(self.inner(x)))


def key_padding_mask(valid: np.ndarray) -> np.ndarray:
    """[B x Lk] validity flags -> [B x 1 x Lk] attention mask."""
    return np.asarray(valid, dtype=bool)[..., None, :]


class MultiHeadAttention(Module):
    """
    Scaled dot-product attention over ``heads`` heads with scale 1/sqrt(D/h).

    Returns the projected output and the (pre-dropout) attention weights,
    shaped [h x Lq x Lk] for unbatched inputs or [B x h x Lq x Lk] for batches.
    """

    def __init__(self, config: AttentionConfig):
        self.heads = config.heads
        self.head_dim = config.head_dim
        self.model_dim = config.model_dim
        self.w_q = Linear(config.model_dim, config.model_dim)
        self.w_k = Linear(config.model_dim, config.model_dim)
        self.w_v = Linear(config.model_dim, config.model_dim)
        self.w_o = Linear(config.model_dim, config.model_dim)
        self.attn_dropout = Dropout(config.dropout)

    def _check_shapes(self, q: Tensor, k: Tensor, v: Tensor) -> None:
        d = self.model_dim
        if q.ndim not in (2, 3) or k.ndim != q.ndim or v.ndim != q.ndim:
            raise DimensionError(f"attention needs matching rank-2 or rank-3 inputs, got {q.shape}, {k.shape}, {v.shape}")
        if q.shape[-1] != d or k.shape[-1] != d or v.shape[-1] != d:
            raise DimensionError(f"attention expects model dim {d}, got q {q.shape}, k {k.shape}, v {v.shape}")
        if k.shape != v.shape:
            raise DimensionError(f"keys {k.shape} and values {v.shape} differ")
        if q.ndim == 3 and q.shape[0] != k.shape[0]:
            raise DimensionError(f"query batch {q.shape} and key batch {k.shape} differ")

    def forward(self, q: Tensor, k: Tensor, v: Tensor,
                mask: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
        self._check_shapes(q, k, v)
        unbatched = q.ndim == 2
        if unbatched:
            q, k, v = (t.reshape((1,) + t.shape) for t in (q, k, v))
            if mask is not None:
                mask = np.asarray(mask, dtype=bool)[None]

        batch, len_q, dim = q.shape
        len_k = k.shape[1]
        h, dh = self.heads, self.head_dim

        def split(t: Tensor, length: int) -> Tensor:
            return t.reshape((batch, length, h, dh)).transpose((0, 2, 1, 3))

        qh = split(self.w_q(q), len_q)
        kh = split(self.w_k(k), len_k)
        vh = split(self.w_v(v), len_k)
        scores = nx.scale(nx.matmul(qh, kh.transpose((0, 1, 3, 2))), 1.0 / np.sqrt(dh))

        allowed = None
        if mask is not None:
            try:
                allowed = np.broadcast_to(np.asarray(mask, dtype=bool)[:, None], scores.shape)
            except ValueError:
                raise DimensionError(f"mask {np.shape(mask)} does not fit attention scores {scores.shape}") from None
            if not allowed.any(axis=-1).all():
                raise ContractError("attention mask leaves a query row with no admissible key")

        weights = nx.softmax(scores, axis=-1, mask=allowed)
        attended = nx.matmul(self.attn_dropout(weights), vh)
        out = self.w_o(attended.transpose((0, 2, 1, 3)).reshape((batch, len_q, dim)))
        if unbatched:
            return out.reshape((len_q, dim)), weights.reshape((h, len_q, len_k))
        return out, weights


class EncoderLayer(Module):
    def __init__(self, config: AttentionConfig):
        self.norm_attn = LayerNorm(config.model_dim)
        self.self_attn = MultiHeadAttention(config)
        self.drop_attn = Dropout(config.dropout)
        self.norm_ffn = LayerNorm(config.model_dim)
        self.ffn = FeedForward(config.model_dim)
        self.drop_ffn = Dropout(config.dropout)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        h = self.norm_attn(x)
        attended, _ = self.self_attn(h, h, h, mask)
        x = x + self.drop_attn(attended)
        return x + self.drop_ffn(self.ffn(self.norm_ffn(x)))


class Encoder(Module):
    """Stack of self-attention layers followed by a final layernorm; shape-preserving."""

    def __init__(self, config: AttentionConfig):
        self.layers = [EncoderLayer(config) for _ in range(config.layers)]
        self.final_norm = LayerNorm(config.model_dim)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        for layer in self.layers:
            x = layer(x, mask)
        return self.final_norm(x)


@dataclass
class DecoderContext:
    """What a standard cross-attention block attends to."""
    memory: Tensor
    memory_mask: Optional[np.ndarray] = None


class CrossAttention(Module):
    """Standard cross-attention: decoder states attend over ``context.memory``."""

    def __init__(self, config: AttentionConfig):
        self.attn = MultiHeadAttention(config)

    def forward(self, h: Tensor, context: DecoderContext):
        return self.attn(h, context.memory, context.memory, context.memory_mask)


class DecoderLayer(Module):
    """Self-attention, a pluggable cross block, feed-forward."""

    def __init__(self, config: AttentionConfig, cross: Module):
        self.norm_self = LayerNorm(config.model_dim)
        self.self_attn = MultiHeadAttention(config)
        self.drop_self = Dropout(config.dropout)
        self.norm_cross = LayerNorm(config.model_dim)
        self.cross = cross
        self.drop_cross = Dropout(config.dropout)
        self.norm_ffn = LayerNorm(config.model_dim)
        self.ffn = FeedForward(config.model_dim)
        self.drop_ffn = Dropout(config.dropout)

    def forward(self, tgt: Tensor, context) -> Tuple[Tensor, object]:
        h = self.norm_self(tgt)
        attended, _ = self.self_attn(h, h, h)
        tgt = tgt + self.drop_self(attended)
        crossed, cross_weights = self.cross(self.norm_cross(tgt), context)
        tgt = tgt + self.drop_cross(crossed)
        tgt = tgt + self.drop_ffn(self.ffn(self.norm_ffn(tgt)))
        return tgt, cross_weights


class Decoder(Module):
    def __init__(self, config: AttentionConfig, cross_factory: Callable[[], Module]):
        self.layers = [DecoderLayer(config, cross_factory()) for _ in range(config.layers)]
        self.final_norm = LayerNorm(config.model_dim)

    def forward(self, tgt: Tensor, context) -> Tuple[Tensor, List[object]]:
        cross_weights = []
        for layer in self.layers:
            tgt, weights = layer(tgt, context)
            cross_weights.append(weights)
        return self.final_norm(tgt), cross_weights


def sinusoidal_pe(positions: int, dim: int) -> Tensor:
    """
    Fixed table with sin on even and cos on odd coordinates.

    Args:
        positions: number of rows n
        dim: embedding width D (must be even)

    Returns:
        constant Tensor [n x D]
    """
    if dim % 2 != 0:
        raise ContractError(f"sinusoidal positions need an even dimension, got {dim}")
    pos = np.arange(positions, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.zeros((positions, dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return Tensor(table)


def batch_broadcast(x: Tensor, like: Tensor) -> Tensor:
    """Give an unbatched [L x D] parameter the leading batch axis of ``like``."""
    if like.ndim == 3 and x.ndim == 2:
        return nx.broadcast_to(x, (like.shape[0],) + x.shape)
    return x
