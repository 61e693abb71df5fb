"""Dense float64 tensors with a reverse-mode automatic differentiation tape.

A Tensor wraps a numpy float64 array and is treated as immutable after
construction, except for gradient accumulation into ``grad`` (and in-place
optimizer updates on parameter leaves, which happen strictly between tapes).

Primitive operations executed while a Tape is active append records to that
tape; ``Tape.backward(loss)`` walks the records in reverse and accumulates
dLoss/dLeaf into every leaf tensor whose ``requires_grad`` flag is set.
Records keep enough context (dropout masks, split sizes, constants) that
``Tape.replay()`` can recompute every intermediate in the original order.
With no active tape the same functions run in plain inference mode and
record nothing.

Every stochastic choice in the package (parameter init, dropout masks, batch
shuffling, coalition sampling, fixture generation) draws from a named Philox
stream created by ``rng_stream``, so a single integer seed pins a whole run.
"""

from __future__ import annotations

import threading
import zlib
from typing import Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "Tape",
    "TensorError",
    "rng_stream",
    "matmul",
    "transpose",
    "add",
    "mul",
    "relu",
    "sigmoid",
    "tanh",
    "add_bias",
    "concat",
    "reshape",
    "sum_all",
    "scale",
    "pick",
    "dropout",
]


class TensorError(ValueError):
    """Shape mismatches and tape misuse."""


def rng_stream(seed: int, *stream: object) -> np.random.Generator:
    """Return a counter-based (Philox) generator for a named stream.

    The stream name parts are hashed with crc32 so the same (seed, names)
    pair yields the same generator on any platform or run.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    words += [zlib.crc32(repr(part).encode("utf-8")) for part in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


class Tensor:
    """A float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _result(arr: np.ndarray, requires_grad: bool) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.grad = None
    out.requires_grad = requires_grad
    return out


_ACTIVE = threading.local()


def _stack() -> list:
    stack = getattr(_ACTIVE, "stack", None)
    if stack is None:
        stack = []
        _ACTIVE.stack = stack
    return stack


def _record(op: str, inputs: tuple, out: Tensor, ctx: tuple = ()) -> None:
    stack = getattr(_ACTIVE, "stack", None)
    if stack:
        stack[-1].records.append((op, inputs, out, ctx))


class Tape:
    """Ordered record of primitive ops; topological by construction.

    Use as a context manager around the forward pass, then call
    ``backward(loss)`` exactly once. Tapes are single-threaded; independent
    tapes may run concurrently on separate threads.
    """

    __slots__ = ("records", "_spent")

    def __init__(self):
        self.records: list[tuple[str, tuple, Tensor, tuple]] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _stack().pop()
        if popped is not self:  # pragma: no cover
            raise TensorError("tape context stack corrupted")

    def backward(self, loss: Tensor) -> None:
        """Accumulate dLoss/dLeaf into every requires_grad leaf on this tape."""
        if self._spent:
            raise TensorError("backward already ran on this tape; build a new tape")
        if loss.data.shape != ():
            raise TensorError(f"loss must be scalar, got shape {loss.data.shape}")
        self._spent = True
        acc: dict[int, np.ndarray] = {id(loss): np.ones(())}
        for op, inputs, out, ctx in reversed(self.records):
            g = acc.pop(id(out), None)
            if g is None or not out.requires_grad:
                continue
            _BACKWARD[op](g, inputs, out, ctx, acc)
        produced = {id(rec[2]) for rec in self.records}
        seen: set[int] = set()
        for _, inputs, _, _ in self.records:
            for t in inputs:
                k = id(t)
                if not t.requires_grad or k in produced or k in seen:
                    continue
                seen.add(k)
                g = acc.get(k)
                if g is None:
                    g = np.zeros_like(t.data)  # leaf disconnected from the loss
                else:
                    g = np.asarray(g, dtype=np.float64).reshape(t.data.shape)
                t.grad = g if t.grad is None else t.grad + g

    def replay(self) -> None:
        """Recompute every record's output in order from current input data."""
        for op, inputs, out, ctx in self.records:
            out.data = _FORWARD[op](inputs, ctx)


def _acc(acc: dict, t: Tensor, g: np.ndarray) -> None:
    k = id(t)
    prev = acc.get(k)
    acc[k] = g if prev is None else prev + g


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise TensorError(f"matmul shape mismatch: {a.data.shape} x {b.data.shape}")
    out = _result(a.data @ b.data, a.requires_grad or b.requires_grad)
    _record("matmul", (a, b), out)
    return out


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise TensorError(f"transpose needs a matrix, got shape {x.data.shape}")
    out = _result(x.data.T.copy(), x.requires_grad)
    _record("transpose", (x,), out)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise TensorError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = _result(a.data + b.data, a.requires_grad or b.requires_grad)
    _record("add", (a, b), out)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise TensorError(f"mul shape mismatch: {a.data.shape} vs {b.data.shape}")
    out = _result(a.data * b.data, a.requires_grad or b.requires_grad)
    _record("mul", (a, b), out)
    return out


def relu(x: Tensor) -> Tensor:
    out = _result(np.maximum(x.data, 0.0), x.requires_grad)
    _record("relu", (x,), out)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out = _result(expit(x.data), x.requires_grad)
    _record("sigmoid", (x,), out)
    return out


def tanh(x: Tensor) -> Tensor:
    out = _result(np.tanh(x.data), x.requires_grad)
    _record("tanh", (x,), out)
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Broadcast a (n,) bias over the rows of a (B, n) matrix."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise TensorError(f"add_bias shape mismatch: {x.data.shape} + {b.data.shape}")
    out = _result(x.data + b.data, x.requires_grad or b.requires_grad)
    _record("add_bias", (x, b), out)
    return out


def concat(*tensors: Tensor) -> Tensor:
    """Concatenate along the last axis; all other axes must agree."""
    if not tensors:
        raise TensorError("concat of nothing")
    lead = tensors[0].data.shape[:-1]
    for t in tensors[1:]:
        if t.data.ndim != tensors[0].data.ndim or t.data.shape[:-1] != lead:
            raise TensorError(
                f"concat shape mismatch: {[t.data.shape for t in tensors]}"
            )
    widths = tuple(t.data.shape[-1] for t in tensors)
    out = _result(
        np.concatenate([t.data for t in tensors], axis=-1),
        any(t.requires_grad for t in tensors),
    )
    _record("concat", tensors, out, (widths,))
    return out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = _result(x.data.reshape(shape), x.requires_grad)
    _record("reshape", (x,), out, (x.data.shape, shape))
    return out


def sum_all(x: Tensor) -> Tensor:
    out = _result(x.data.sum(), x.requires_grad)
    _record("sum_all", (x,), out)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _result(x.data * c, x.requires_grad)
    _record("scale", (x,), out, (c,))
    return out


def pick(x: Tensor, index: int) -> Tensor:
    """Select one element by flat index, as a scalar tensor."""
    index = int(index)
    if not 0 <= index < x.data.size:
        raise TensorError(f"pick index {index} out of range for size {x.data.size}")
    out = _result(np.asarray(x.data.reshape(-1)[index]), x.requires_grad)
    _record("pick", (x,), out, (index,))
    return out


def dropout(
    x: Tensor,
    rate: float,
    training: bool,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Zero elements with probability ``rate``, scaling survivors by 1/(1-rate).

    Identity at rate 0 or in inference mode. The mask is a deterministic
    function of the generator state, so a seeded stream pins every mask.
    """
    if not 0.0 <= rate < 1.0:
        raise TensorError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise TensorError("dropout in training mode requires a generator")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = _result(x.data * mask, x.requires_grad)
    _record("dropout", (x,), out, (mask,))
    return out


# ---------------------------------------------------------------------------
# backward rules


def _bw_matmul(g, inputs, out, ctx, acc):
    a, b = inputs
    if a.requires_grad:
        _acc(acc, a, g @ b.data.T)
    if b.requires_grad:
        _acc(acc, b, a.data.T @ g)


def _bw_transpose(g, inputs, out, ctx, acc):
    (x,) = inputs
    if x.requires_grad:
        _acc(acc, x, g.T)


def _bw_add(g, inputs, out, ctx, acc):
    a, b = inputs
    if a.requires_grad:
        _acc(acc, a, g)
    if b.requires_grad:
        _acc(acc, b, g)


def _bw_mul(g, inputs, out, ctx, acc):
    a, b = inputs
    if a.requires_grad:
        _acc(acc, a, g * b.data)
    if b.requires_grad:
        _acc(acc, b, g * a.data)


def _bw_relu(g, inputs, out, ctx, acc):
    (x,) = inputs
    if x.requires_grad:
        # relu'(0) = 0 by the strict inequality
        _acc(acc, x, g * (x.data > 0.0))


def _bw_sigmoid(g, inputs, out, ctx, acc):
    (x,) = inputs
    if x.requires_grad:
        y = out.data
        _acc(acc, x, g * y * (1.0 - y))


def _bw_tanh(g, inputs, out, ctx, acc):
    (x,) = inputs
    if x.requires_grad:
        y = out.data
        _acc(acc, x, g * (1.0 - y * y))


def _bw_add_bias(g, inputs, out, ctx, acc):
    x, b = inputs
    if x.requires_grad:
        _acc(acc, x, g)
    if b.requires_grad:
        _acc(acc, b, g.sum(axis=0))


def _bw_concat(g, inputs, out, ctx, acc):
    (widths,) = ctx
    lo = 0
    for t, w in zip(inputs, widths):
        if t.requires_grad:
            _acc(acc, t, g[..., lo : lo + w])
        lo += w


def _bw_reshape(g, inputs, out, ctx, acc):
    (x,) = inputs
    if x.requires_grad:
        _acc(acc, x, np.asarray(g).reshape(ctx[0]))


def _bw_sum_all(g, inputs, out, ctx, acc):
    (x,) = inputs
    if x.requires_grad:
        _acc(acc, x, np.full(x.data.shape, float(g)))


def _bw_scale(g, inputs, out, ctx, acc):
    (x,) = inputs
    if x.requires_grad:
        _acc(acc, x, g * ctx[0])


def _bw_pick(g, inputs, out, ctx, acc):
    (x,) = inputs
    if x.requires_grad:
        z = np.zeros_like(x.data)
        z.reshape(-1)[ctx[0]] = float(g)
        _acc(acc, x, z)


def _bw_dropout(g, inputs, out, ctx, acc):
    (x,) = inputs
    if x.requires_grad:
        _acc(acc, x, g * ctx[0])


_BACKWARD = {
    "matmul": _bw_matmul,
    "transpose": _bw_transpose,
    "add": _bw_add,
    "mul": _bw_mul,
    "relu": _bw_relu,
    "sigmoid": _bw_sigmoid,
    "tanh": _bw_tanh,
    "add_bias": _bw_add_bias,
    "concat": _bw_concat,
    "reshape": _bw_reshape,
    "sum_all": _bw_sum_all,
    "scale": _bw_scale,
    "pick": _bw_pick,
    "dropout": _bw_dropout,
}

_FORWARD = {
    "matmul": lambda inp, ctx: inp[0].data @ inp[1].data,
    "transpose": lambda inp, ctx: inp[0].data.T.copy(),
    "add": lambda inp, ctx: inp[0].data + inp[1].data,
    "mul": lambda inp, ctx: inp[0].data * inp[1].data,
    "relu": lambda inp, ctx: np.maximum(inp[0].data, 0.0),
    "sigmoid": lambda inp, ctx: expit(inp[0].data),
    "tanh": lambda inp, ctx: np.tanh(inp[0].data),
    "add_bias": lambda inp, ctx: inp[0].data + inp[1].data,
    "concat": lambda inp, ctx: np.concatenate([t.data for t in inp], axis=-1),
    "reshape": lambda inp, ctx: inp[0].data.reshape(ctx[1]),
    "sum_all": lambda inp, ctx: inp[0].data.sum(),
    "scale": lambda inp, ctx: inp[0].data * ctx[0],
    "pick": lambda inp, ctx: np.asarray(inp[0].data.reshape(-1)[ctx[0]]),
    "dropout": lambda inp, ctx: inp[0].data * ctx[0],
}
