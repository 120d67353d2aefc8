"""
Supervised glance training: temporal spans, bipartite matching between
predicted event memories and ground-truth events, and the matched losses.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from glance_focus import numerics as nx
from glance_focus.errors import ContractError, DimensionError
from glance_focus.numerics import Tensor

if TYPE_CHECKING:
    from glance_focus.glance import MemoryBank

logger = logging.getLogger(__name__)

IOU_EPS = 1e-8


@dataclass(frozen=True)
class Span:
    """Normalized (center, width) of an event; both coordinates in [0, 1]."""
    center: float
    width: float

    def __post_init__(self):
        for name, value in (("center", self.center), ("width", self.width)):
            if not np.isfinite(value) or not 0.0 <= value <= 1.0:
                raise ContractError(f"span {name} {value} outside [0, 1]")

    @property
    def start(self) -> float:
        return max(0.0, self.center - self.width / 2.0)

    @property
    def end(self) -> float:
        return min(1.0, self.center + self.width / 2.0)

    def interval(self) -> Tuple[float, float]:
        return self.start, self.end


@dataclass(frozen=True)
class GroundTruthEvent:
    """An event label with its span; ``label is None`` is the no-event padding entry."""
    label: Optional[int]
    span: Optional[Span] = None

    def __post_init__(self):
        if self.label is not None and self.span is None:
            raise ContractError(f"event of class {self.label} has no span")

    @property
    def is_empty(self) -> bool:
        return self.label is None

    @classmethod
    def empty(cls) -> "GroundTruthEvent":
        return cls(label=None, span=None)


@dataclass(frozen=True)
class Assignment:
    """``permutation[i]`` is the prediction matched to ground-truth slot i."""
    permutation: Tuple[int, ...]
    cost: float


def temporal_iou(a: Span, b: Span) -> float:
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = (a.end - a.start) + (b.end - b.start) - inter
    return inter / (union + IOU_EPS)


def pad_events(events: Sequence[GroundTruthEvent], n: int) -> List[GroundTruthEvent]:
    """Pad a ground-truth list with no-event entries to exactly ``n``."""
    if len(events) > n:
        raise ContractError(f"{len(events)} ground-truth events exceed the {n} event memories")
    return list(events) + [GroundTruthEvent.empty() for _ in range(n - len(events))]


def cost_from_predictions(gt: Sequence[GroundTruthEvent], probs: np.ndarray, spans: np.ndarray,
                          lambda_cls: float = 1.0, lambda_l1: float = 5.0) -> np.ndarray:
    """
    Matching cost between padded ground truth and N predictions.

    Args:
        gt: N ground-truth entries, no-event entries included
        probs: [N x C'] predicted class probabilities
        spans: [N x 2] predicted (center, width)

    Returns:
        [N x N] matrix; entry (i, j) scores ground truth i against prediction j
    """
    n = probs.shape[0]
    if len(gt) != n:
        raise ContractError(f"{len(gt)} ground-truth entries for {n} predictions; pad to N first")
    if spans.shape != (n, 2):
        raise DimensionError(f"spans of shape {spans.shape} for {n} predictions")
    cost = np.zeros((n, n))
    for i, event in enumerate(gt):
        if event.is_empty:
            continue
        if not 0 <= event.label < probs.shape[1]:
            raise ContractError(f"event class {event.label} outside the {probs.shape[1]} predicted classes")
        l1 = np.abs(event.span.center - spans[:, 0]) + np.abs(event.span.width - spans[:, 1])
        cost[i] = -lambda_cls * probs[:, event.label] + lambda_l1 * l1
    return cost


def matching_cost_matrix(gt: Sequence[GroundTruthEvent], bank: "MemoryBank",
                         lambda_cls: float = 1.0, lambda_l1: float = 5.0) -> np.ndarray:
    """Cost matrix for a single-sample memory bank."""
    if bank.class_logits.ndim != 2:
        raise ContractError("matching works on one sample at a time; select it from the batch first")
    logits = bank.class_logits.values
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    probs = shifted / shifted.sum(axis=-1, keepdims=True)
    return cost_from_predictions(gt, probs, bank.spans.values, lambda_cls, lambda_l1)


def _validate_square(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ContractError(f"assignment needs a square cost matrix, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ContractError("cost matrix has non-finite entries")
    return cost


def _row_order_cost(cost: np.ndarray, permutation: Sequence[int]) -> float:
    total = 0.0
    for i, j in enumerate(permutation):
        total += cost[i, j]
    return float(total)


def hungarian(cost) -> Assignment:
    """
    Exact minimum-cost perfect matching.

    Ties among optimal permutations go to the lexicographically smallest one:
    rows are fixed in order, each to the lowest column that still admits an
    optimal completion.
    """
    cost = _validate_square(cost)
    n = cost.shape[0]
    if n == 0:
        return Assignment(permutation=(), cost=0.0)

    rows, cols = linear_sum_assignment(cost)
    optimum = cost[rows, cols].sum()
    tol = 1e-9 * max(1.0, abs(optimum))

    permutation: List[int] = []
    free = list(range(n))
    prefix = 0.0
    for i in range(n):
        rest = list(range(i + 1, n))
        for j in free:
            remaining = [c for c in free if c != j]
            tail = 0.0
            if rest:
                sub = cost[np.ix_(rest, remaining)]
                r, c = linear_sum_assignment(sub)
                tail = sub[r, c].sum()
            if prefix + cost[i, j] + tail <= optimum + tol:
                permutation.append(j)
                free.remove(j)
                prefix += cost[i, j]
                break
    return Assignment(permutation=tuple(permutation), cost=_row_order_cost(cost, permutation))


def brute_force_assignment(cost) -> Assignment:
    """Enumerate all N! permutations in lexicographic order; keeps the first strict minimum."""
    cost = _validate_square(cost)
    n = cost.shape[0]
    if n == 0:
        return Assignment(permutation=(), cost=0.0)
    perms = np.array(list(itertools.permutations(range(n))))
    totals = cost[np.arange(n), perms].sum(axis=1)
    # argmin returns the first minimum, i.e. the lexicographically smallest
    best = tuple(int(j) for j in perms[int(np.argmin(totals))])
    return Assignment(permutation=best, cost=_row_order_cost(cost, best))


def _batched(t: Tensor) -> Tensor:
    return t if t.ndim == 3 else t.reshape((1,) + t.shape)


def supervised_losses(gt, bank: "MemoryBank", assignment,
                      no_event_weight: float = 1.0) -> Tuple[Tensor, Tensor]:
    """
    Event classification cross-entropy and span L1 over matched pairs.

    ``gt``/``assignment`` are one padded list and one Assignment for an
    unbatched bank, or one of each per sample for a batched bank. No-event
    slots target the last class index; the L1 mean runs over real events only.
    The assignment itself carries no gradient.
    Both terms come back unweighted; ``Trainer.train_step_supervised`` scales
    them by ``lambda_cls`` and ``lambda_l1``.
    """
    if bank.class_logits.ndim == 2:
        gts, assignments = [gt], [assignment]
    else:
        gts, assignments = list(gt), list(assignment)
    logits = _batched(bank.class_logits)
    spans = _batched(bank.spans)
    if len(gts) != logits.shape[0] or len(assignments) != logits.shape[0]:
        raise DimensionError(f"{len(gts)} ground-truth lists and {len(assignments)} assignments for batch {logits.shape[0]}")
    n, outputs = logits.shape[1], logits.shape[2]
    no_event = outputs - 1

    batch_idx, pred_idx, targets = [], [], []
    span_batch, span_pred, span_targets = [], [], []
    for b, (events, matched) in enumerate(zip(gts, assignments)):
        if len(events) != n or len(matched.permutation) != n:
            raise ContractError(f"sample {b}: expected {n} padded events and an N-permutation")
        for i, event in enumerate(events):
            j = matched.permutation[i]
            batch_idx.append(b)
            pred_idx.append(j)
            if event.is_empty:
                targets.append(no_event)
                continue
            if not 0 <= event.label < no_event:
                raise ContractError(f"event class {event.label} outside [0, {no_event})")
            targets.append(event.label)
            span_batch.append(b)
            span_pred.append(j)
            span_targets.append((event.span.center, event.span.width))

    weights = np.ones(outputs)
    weights[no_event] = no_event_weight
    matched_logits = logits[(np.asarray(batch_idx), np.asarray(pred_idx))]
    loss_cls = nx.cross_entropy_from_logits(matched_logits, targets, class_weights=weights)

    if span_targets:
        matched_spans = spans[(np.asarray(span_batch), np.asarray(span_pred))]
        diff = nx.abs_(matched_spans - Tensor(np.asarray(span_targets)))
        loss_l1 = nx.scale(diff.sum(), 1.0 / len(span_targets))
    else:
        loss_l1 = Tensor(0.0)
    return loss_cls, loss_l1
