"""
Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable operation records a Node on the active Tape and
``backward`` sweeps that tape once, in reverse creation order. Operations
executed outside a ``recording()`` block are not recorded, which is how
inference and finite-difference checks run.
"""

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from glance_focus.errors import ContractError, DimensionError, TargetIndexError

logger = logging.getLogger(__name__)

# 0 * log 0 is taken as 0: probabilities are clamped here before any log.
LOG_EPS = 1e-12
LAYERNORM_EPS = 1e-5

Scalar = Union[int, float]


class Tensor:
    """
    A dense array of float64 values that may take part in differentiation.

    Attributes:
        values: the numpy array (row-major) holding the data
        requires_grad: whether gradients flow into this tensor
        grad: accumulated gradient with the same shape as ``values``, or None
    """

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional["Tape"] = None

    @staticmethod
    def _wrap(values: np.ndarray) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.values = np.asarray(values, dtype=np.float64)
        out.requires_grad = False
        out.grad = None
        out._tape = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """
    A trainable leaf tensor with an initialization scheme (``xavier``, ``zeros`` or ``ones``).
    """

    def __init__(self, shape: Sequence[int], init: str = "xavier"):
        if init not in ("xavier", "zeros", "ones"):
            raise ContractError(f"unknown init scheme '{init}'")
        super().__init__(np.zeros(tuple(shape)), requires_grad=True)
        self.init = init

    def reset(self, rng: np.random.Generator) -> None:
        if self.init == "zeros":
            self.values[...] = 0.0
        elif self.init == "ones":
            self.values[...] = 1.0
        else:
            if self.ndim >= 2:
                fan_in, fan_out = self.shape[-2], self.shape[-1]
            else:
                fan_in = fan_out = self.shape[0]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.values[...] = rng.uniform(-bound, bound, size=self.shape)
        self.grad = None


@dataclass
class Node:
    """One recorded operation: its output, its inputs and the rule mapping output grad to input grads."""
    output: Tensor
    parents: Tuple[Tensor, ...]
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """
    Ordered record of the operations of one forward pass.

    Nodes are appended as operations execute, so the list is topologically
    ordered by construction.
    """

    def __init__(self):
        self.nodes: List[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("loss does not depend on any tensor that requires gradients")

        grads = {id(loss): np.ones_like(loss.values)}
        owners = {id(loss): loss}
        for node in reversed(self.nodes):
            key = id(node.output)
            grad = grads.pop(key, None)
            if grad is None:
                continue
            owners.pop(key)
            node.output._accumulate(grad)
            for parent, parent_grad in zip(node.parents, node.backward_fn(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = _unbroadcast(parent_grad, parent.shape)
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + parent_grad
                else:
                    grads[pid] = parent_grad
                    owners[pid] = parent

        # whatever is left belongs to leaves
        for key, grad in grads.items():
            owners[key]._accumulate(grad)


_local = threading.local()


def _tape_stack() -> List[Optional[Tape]]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def recording() -> Iterator[Tape]:
    """Open a fresh tape for one forward/backward pass on this thread."""
    tape = Tape()
    stack = _tape_stack()
    stack.append(tape)
    try:
        yield tape
    finally:
        stack.pop()


@contextmanager
def no_grad() -> Iterator[None]:
    stack = _tape_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(t) into ``t.grad`` for every requires_grad tensor reachable from ``loss``."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        if loss.requires_grad:
            loss._accumulate(np.ones_like(loss.values))
            return
        raise ContractError("loss was not produced on an active tape")
    loss._tape.backward(loss)


def _result(values: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor._wrap(values)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._tape = tape
        tape.record(Node(out, tuple(parents), backward_fn))
    return out


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor._wrap(np.asarray(value, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "add")
    return _result(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "sub")
    return _result(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.values, b.values
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "div")
    av, bv = a.values, b.values
    return _result(av / bv, (a, b), lambda g: (g / bv, -g * av / (bv * bv)))


def scale(a: Tensor, factor: Scalar) -> Tensor:
    factor = float(factor)
    return _result(a.values * factor, (a,), lambda g: (g * factor,))


def neg(a: Tensor) -> Tensor:
    return _result(-a.values, (a,), lambda g: (-g,))


def relu(a: Tensor) -> Tensor:
    positive = a.values > 0
    return _result(np.where(positive, a.values, 0.0), (a,), lambda g: (g * positive,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    z = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.values)
    return _result(y, (a,), lambda g: (g * y,))


def log(a: Tensor, eps: float = LOG_EPS) -> Tensor:
    """Natural log of ``max(a, eps)``; the clamped region has zero gradient."""
    clamped = np.maximum(a.values, eps)
    live = a.values > eps
    return _result(np.log(clamped), (a,), lambda g: (g * live / clamped,))


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.values)
    return _result(np.abs(a.values), (a,), lambda g: (g * sign,))


def maximum(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "maximum")
    av, bv = np.broadcast_arrays(a.values, b.values)
    pick_a = av >= bv
    return _result(np.where(pick_a, av, bv), (a, b), lambda g: (g * pick_a, g * ~pick_a))


def minimum(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "minimum")
    av, bv = np.broadcast_arrays(a.values, b.values)
    pick_a = av <= bv
    return _result(np.where(pick_a, av, bv), (a, b), lambda g: (g * pick_a, g * ~pick_a))


def dropout(a: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0 or no generator is supplied."""
    if rate <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _result(a.values * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# reductions and shape
# ---------------------------------------------------------------------------

def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    values = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(values, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    if count == 0:
        raise ContractError(f"mean over an empty extent of shape {a.shape}")
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        values = a.values.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from None
    return _result(values, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(a.values.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        values = np.broadcast_to(a.values, shape).copy()
    except ValueError:
        raise DimensionError(f"cannot broadcast {a.shape} to {shape}") from None
    return _result(values, (a,), lambda g: (g,))


def _is_basic_index(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(p is None or p is Ellipsis or isinstance(p, (int, np.integer, slice)) for p in parts)


def index(a: Tensor, key) -> Tensor:
    """``a[key]`` for basic slices and integer-array gathers; repeated indices accumulate."""
    values = a.values[key]
    basic = _is_basic_index(key)

    def backward(g):
        full = np.zeros_like(a.values)
        if basic:
            full[key] += g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _result(np.array(values), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    ax = axis % ndim
    reference = tensors[0].shape[:ax] + tensors[0].shape[ax + 1:]
    for t in tensors[1:]:
        if t.ndim != ndim or t.shape[:ax] + t.shape[ax + 1:] != reference:
            raise DimensionError(
                f"concat along axis {axis}: shapes {[t.shape for t in tensors]} disagree off-axis"
            )
    sizes = [t.shape[ax] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    values = np.concatenate([t.values for t in tensors], axis=ax)
    return _result(values, tensors, lambda g: tuple(np.split(g, cuts, axis=ax)))


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=0)


# ---------------------------------------------------------------------------
# linear algebra and normalization
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        values = np.matmul(a.values, b.values)
    except ValueError:
        raise DimensionError(f"matmul batch extents do not broadcast: {a.shape} x {b.shape}") from None
    av, bv = a.values, b.values

    def backward(g):
        return (np.matmul(g, np.swapaxes(bv, -1, -2)), np.matmul(np.swapaxes(av, -1, -2), g))

    return _result(values, (a, b), backward)


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Softmax with max subtraction. ``mask`` marks allowed entries; the rest get
    exactly zero weight. A slice with no allowed entry yields NaN, so callers
    must check their masks.
    """
    z = x.values
    if mask is not None:
        z = np.where(np.broadcast_to(np.asarray(mask, dtype=bool), z.shape), z, -np.inf)
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return _result(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def softmax_rows(x: Tensor) -> Tensor:
    return softmax(x, axis=-1)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.values
    shifted = z - z.max(axis=axis, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - log_norm
    probs = np.exp(y)
    return _result(y, (x,), lambda g: (g - probs * g.sum(axis=axis, keepdims=True),))


def cross_entropy_from_logits(logits: Tensor, targets, class_weights: Optional[Sequence[float]] = None) -> Tensor:
    """
    Mean of -log softmax(logits)[target] over the batch.

    With ``class_weights`` each row is weighted by its target's weight and the
    mean is taken over the total weight.
    """
    if logits.ndim != 2:
        raise DimensionError(f"cross entropy needs [batch x classes] logits, got {logits.shape}")
    batch, classes = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != batch:
        raise DimensionError(f"{targets.shape[0]} targets for logits of shape {logits.shape}")
    if batch == 0:
        raise ContractError("cross entropy over an empty batch")
    bad = (targets < 0) | (targets >= classes)
    if bad.any():
        raise TargetIndexError(f"target {int(targets[bad][0])} outside [0, {classes})")

    z = logits.values
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(batch)
    if class_weights is None:
        weights = np.ones(batch)
    else:
        weights = np.asarray(class_weights, dtype=np.float64)[targets]
    total_weight = weights.sum()
    if total_weight <= 0:
        raise ContractError("class weights sum to zero over this batch")
    loss = -(weights * log_probs[rows, targets]).sum() / total_weight

    def backward(g):
        probs = np.exp(log_probs)
        probs[rows, targets] -= 1.0
        return (g * probs * (weights / total_weight)[:, None],)

    return _result(np.asarray(loss), (logits,), backward)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYERNORM_EPS) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layernorm over last extent {d} got gain {gain.shape} and bias {bias.shape}")
    centered = x.values - x.values.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std
    gv = gain.values

    def backward(g):
        dn = g * gv
        dx = inv_std * (dn - dn.mean(axis=-1, keepdims=True)
                        - normed * (dn * normed).mean(axis=-1, keepdims=True))
        return (dx, g * normed, g)

    return _result(normed * gv + bias.values, (x, gain, bias), backward)


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------

def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-4) -> float:
    """
    Compare the tape gradient of scalar ``f`` at ``x`` with central differences.

    Returns:
        max over coordinates of |analytic - numeric| / max(1, |analytic|)
    """
    if step <= 0:
        raise ContractError(f"finite difference step must be positive, got {step}")
    point = Tensor(x.values, requires_grad=True)
    with recording():
        out = f(point)
        if out.requires_grad:
            backward(out)
    analytic = point.grad if point.grad is not None else np.zeros_like(point.values)

    base = np.array(x.values, dtype=np.float64)
    numeric = np.zeros_like(base)
    with no_grad():
        for idx in np.ndindex(base.shape):
            plus = base.copy()
            plus[idx] += step
            minus = base.copy()
            minus[idx] -= step
            numeric[idx] = (f(Tensor(plus)).item() - f(Tensor(minus)).item()) / (2.0 * step)
    if base.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
