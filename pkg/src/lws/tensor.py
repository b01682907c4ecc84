"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed inside an active :class:`Tape` context are recorded
together with a vector-Jacobian product closure; outside a tape they are
plain numpy computations. Tapes are thread-local, so independent tapes can
run on different threads without sharing state.

    >>> x = Parameter([3.0])
    >>> with Tape() as tape:
    ...     y = mul(x, x)
    >>> backward(tape, y)
    >>> float(x.grad[0])
    6.0
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, DimensionError, StateError

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "backward",
    "matmul",
    "add",
    "mul",
    "scale",
    "total",
    "relu",
    "conv2d",
    "maxpool2",
    "flatten",
    "softmax_cross_entropy_mean",
    "AdamState",
    "adam_step",
    "he_uniform_init",
]


class Tensor:
    """An n-dimensional array of 64-bit reals."""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.array(data, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ArgumentError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"{type(self).__name__}(shape={self.shape})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A leaf tensor whose gradient is accumulated by :func:`backward`."""

    __slots__ = ("grad", "id")

    def __init__(self, data, id: int = -1):
        super().__init__(data)
        self.grad = np.zeros_like(self.data)
        self.id = id

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_local = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive operations.

    Use as a context manager; every primitive evaluated inside the block
    whose inputs depend on a :class:`Parameter` is appended to
    ``records``.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def tracks(self, t: Tensor) -> bool:
        return isinstance(t, Parameter) or id(t) in self._produced

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], vjp) -> None:
        if not any(self.tracks(t) for t in inputs):
            return
        self.records.append(_Record(output, inputs, vjp))
        self._produced.add(id(output))

    def backward(self, loss: Tensor, seed: float = 1.0) -> None:
        backward(self, loss, seed)


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    tape = _active_tape()
    if tape is not None:
        tape.record(out, inputs, vjp)
    return out


def backward(tape: Tape, loss: Tensor, seed: float = 1.0) -> None:
    """Accumulate ``seed * d(loss)/d(p)`` into ``p.grad`` for every parameter on the tape.

    Gradients are added to whatever ``p.grad`` already holds; call
    ``Parameter.zero_grad`` to reset.
    """
    if loss.size != 1:
        raise ArgumentError(f"backward needs a scalar loss, got shape {loss.shape}")
    if isinstance(loss, Parameter):
        loss.grad += seed
        return
    adjoints: dict[int, np.ndarray] = {id(loss): np.full(loss.shape, float(seed))}
    for rec in reversed(tape.records):
        g = adjoints.pop(id(rec.output), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None:
                continue
            if isinstance(inp, Parameter):
                inp.grad += gi
            elif id(inp) in tape._produced:
                if id(inp) in adjoints:
                    adjoints[id(inp)] = adjoints[id(inp)] + gi
                else:
                    adjoints[id(inp)] = gi


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    return _emit(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    sa, sb = a.shape, b.shape
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None
    A, B = a.data, b.data
    return _emit(
        out, (a, b), lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape))
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def total(a: Tensor) -> Tensor:
    """Sum of all entries, as a scalar tensor."""
    shape = a.shape
    return _emit(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    shape = x.shape
    return _emit(x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),))


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {kernel.shape}")
    b, c, h, w = x.shape
    f, kc, kh, kw = kernel.shape
    if (kh, kw) != (3, 3):
        raise DimensionError(f"conv2d: kernel must be 3x3, got {kernel.shape}")
    if kc != c:
        raise DimensionError(f"conv2d: input has {c} channels but kernel {kernel.shape} expects {kc}")
    if bias.shape != (f,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {f} filters")
    K = kernel.data
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # b, c, h, w, 3, 3
    out = np.tensordot(win, K, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + bias.data[None, :, None, None]

    def vjp(g):
        dk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        db = g.sum(axis=(0, 2, 3))
        dxp = np.zeros_like(xp)
        for i in range(3):
            for j in range(3):
                dxp[:, :, i : i + h, j : j + w] += np.tensordot(g, K[:, :, i, j], axes=([1], [0])).transpose(
                    0, 3, 1, 2
                )
        return dxp[:, :, 1:-1, 1:-1], dk, db

    return _emit(np.ascontiguousarray(out), (x, kernel, bias), vjp)


def maxpool2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pooling.

    The gradient of each window goes to its first maximal element in
    row-major order.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"maxpool2: expected 4-d input, got {x.shape}")
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2: spatial dims must be even, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    win = x.data.reshape(b, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)
    idx = win.argmax(axis=-1)[..., None]
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def vjp(g):
        gw = np.zeros((b, c, h2, w2, 4))
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        return (gw.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w),)

    return _emit(out, (x,), vjp)


def softmax_cross_entropy_mean(logits: Tensor, labels) -> Tensor:
    """Batch mean of ``-log softmax(logits)[label]``."""
    z = logits.data
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise DimensionError(f"cross entropy: logits {z.shape} vs labels {labels.shape}")
    n, c = z.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ArgumentError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - shifted[rows, labels])

    def vjp(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _emit(np.array(loss), (logits,), vjp)


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    """Moment estimates keyed by parameter id.

    ``t`` counts calls to :func:`adam_step`; ``steps`` counts, per
    parameter, the updates it actually took part in and drives the bias
    correction for that parameter.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)
    steps: dict[int, int] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Sequence[Parameter], **kwargs) -> "AdamState":
        state = cls(**kwargs)
        for p in params:
            state.m[p.id] = np.zeros_like(p.data)
            state.v[p.id] = np.zeros_like(p.data)
            state.steps[p.id] = 0
        return state


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float) -> None:
    """One Adam update in place.

    Parameters whose gradient is identically zero are left alone, moments
    included, so candidates that no sampled assignment touched do not drift
    on stale momentum.
    """
    if lr <= 0:
        raise ArgumentError(f"learning rate must be positive, got {lr}")
    for p in params:
        if p.id not in state.m:
            raise StateError(f"no Adam state for parameter id {p.id}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for p in params:
        g = p.grad
        if not g.any():
            continue
        k = state.steps[p.id] + 1
        state.steps[p.id] = k
        m = state.m[p.id]
        v = state.v[p.id]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**k)
        v_hat = v / (1.0 - b2**k)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def he_uniform_init(shape, fan_in: int, rng: np.random.Generator) -> Tensor:
    """Draw i.i.d. entries from U(-sqrt(6/fan_in), sqrt(6/fan_in))."""
    if fan_in < 1:
        raise ArgumentError(f"fan_in must be >= 1, got {fan_in}")
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))
