"""Layers (linear, bidirectional GRU, stacked bi-LSTM), Adam, checkpoints.

Recurrences run per direction from zero initial states on a shared batch
convention: sequence steps are (B, features) matrices and hidden states are
(B, h). Gate weights keep the documented [h x (input+h)] layout and inputs
are concatenated as [x_t; h_{t-1}].

GRU (per direction):
    z_t = sigmoid(W_z [x_t; h_{t-1}] + b_z)
    r_t = sigmoid(W_r [x_t; h_{t-1}] + b_r)
    c_t = tanh(W_c [x_t; r_t * h_{t-1}] + b_c)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t

LSTM (per direction):
    i, f, o = sigmoid(W_. [x_t; h_{t-1}] + b_.);  g = tanh(W_g [...] + b_g)
    c_t = f * c_{t-1} + i * g;  h_t = o * tanh(c_t)

Weights initialize uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) from the seeded
stream, biases zero except the LSTM forget gate at 1.0.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .tensor import (
    Tape,
    Tensor,
    TensorError,
    add,
    add_bias,
    concat,
    matmul,
    mul,
    reshape,
    scale,
    sigmoid,
    tanh,
    transpose,
)

CHECKPOINT_FORMAT = "iknet-checkpoint-v1"


def affine(x: Tensor, weight_t: Tensor, bias: Tensor) -> Tensor:
    """x @ W.T + b, with the weight transpose precomputed once per tape."""
    return add_bias(matmul(x, weight_t), bias)


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


@dataclass
class LinearLayer:
    weight: Tensor  # (out, in)
    bias: Tensor  # (out,)

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, out_dim: int) -> "LinearLayer":
        return cls(
            weight=_uniform_init(rng, (out_dim, in_dim), in_dim),
            bias=Tensor(np.zeros(out_dim), requires_grad=True),
        )

    def apply(self, x: Tensor) -> Tensor:
        return affine(x, transpose(self.weight), self.bias)

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


@dataclass
class GruDirection:
    w_update: Tensor  # (h, in+h)
    w_reset: Tensor
    w_cand: Tensor
    b_update: Tensor  # (h,)
    b_reset: Tensor
    b_cand: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden: int) -> "GruDirection":
        fan = input_size + hidden
        return cls(
            w_update=_uniform_init(rng, (hidden, fan), fan),
            w_reset=_uniform_init(rng, (hidden, fan), fan),
            w_cand=_uniform_init(rng, (hidden, fan), fan),
            b_update=Tensor(np.zeros(hidden), requires_grad=True),
            b_reset=Tensor(np.zeros(hidden), requires_grad=True),
            b_cand=Tensor(np.zeros(hidden), requires_grad=True),
        )

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}.w_update", self.w_update),
            (f"{prefix}.w_reset", self.w_reset),
            (f"{prefix}.w_cand", self.w_cand),
            (f"{prefix}.b_update", self.b_update),
            (f"{prefix}.b_reset", self.b_reset),
            (f"{prefix}.b_cand", self.b_cand),
        ]


@dataclass
class GruLayer:
    """One GRU layer; bidirectional unless backward_dir is None."""

    input_size: int
    hidden: int
    forward_dir: GruDirection
    backward_dir: GruDirection | None

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        input_size: int,
        hidden: int,
        bidirectional: bool = True,
    ) -> "GruLayer":
        return cls(
            input_size=input_size,
            hidden=hidden,
            forward_dir=GruDirection.init(rng, input_size, hidden),
            backward_dir=GruDirection.init(rng, input_size, hidden) if bidirectional else None,
        )

    @property
    def output_size(self) -> int:
        return self.hidden * (2 if self.backward_dir is not None else 1)

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = self.forward_dir.named(f"{prefix}.fwd")
        if self.backward_dir is not None:
            out += self.backward_dir.named(f"{prefix}.bwd")
        return out


def _gru_direction(xs: Sequence[Tensor], d: GruDirection) -> Tensor:
    wu, wr, wc = transpose(d.w_update), transpose(d.w_reset), transpose(d.w_cand)
    batch = xs[0].data.shape[0]
    h = Tensor(np.zeros((batch, d.b_update.data.shape[0])))
    for x in xs:
        xh = concat(x, h)
        z = sigmoid(affine(xh, wu, d.b_update))
        r = sigmoid(affine(xh, wr, d.b_reset))
        c = tanh(affine(concat(x, mul(r, h)), wc, d.b_cand))
        # h' = (1-z)*h + z*c, written as h + z*(c-h)
        h = add(h, mul(z, add(c, scale(h, -1.0))))
    return h


def _as_steps(inputs: Sequence[Tensor]) -> tuple[list[Tensor], bool]:
    """Promote a sequence of (d,) vectors to (1, d) rows; pass matrices through."""
    if len(inputs) == 0:
        raise TensorError("empty input sequence")
    if inputs[0].data.ndim == 1:
        return [reshape(x, (1, x.data.shape[0])) for x in inputs], True
    return list(inputs), False


def gru_forward(inputs: Sequence[Tensor], layer: GruLayer) -> Tensor:
    """Encode a sequence to the concatenated final states of each direction.

    Accepts (d,) vectors (returns a vector) or (B, d) matrices (returns a
    (B, out) matrix). Unidirectional layers return their single final state.
    """
    xs, was_vector = _as_steps(inputs)
    if xs[0].data.shape[-1] != layer.input_size:
        raise TensorError(
            f"gru input dim {xs[0].data.shape[-1]} != layer input {layer.input_size}"
        )
    final = _gru_direction(xs, layer.forward_dir)
    if layer.backward_dir is not None:
        final = concat(final, _gru_direction(xs[::-1], layer.backward_dir))
    if was_vector:
        return reshape(final, (final.data.shape[-1],))
    return final


@dataclass
class LstmDirection:
    w_input: Tensor  # (h, in+h)
    w_forget: Tensor
    w_cell: Tensor
    w_output: Tensor
    b_input: Tensor  # (h,)
    b_forget: Tensor
    b_cell: Tensor
    b_output: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden: int) -> "LstmDirection":
        fan = input_size + hidden
        return cls(
            w_input=_uniform_init(rng, (hidden, fan), fan),
            w_forget=_uniform_init(rng, (hidden, fan), fan),
            w_cell=_uniform_init(rng, (hidden, fan), fan),
            w_output=_uniform_init(rng, (hidden, fan), fan),
            b_input=Tensor(np.zeros(hidden), requires_grad=True),
            # forget bias 1.0 stabilizes early training
            b_forget=Tensor(np.ones(hidden), requires_grad=True),
            b_cell=Tensor(np.zeros(hidden), requires_grad=True),
            b_output=Tensor(np.zeros(hidden), requires_grad=True),
        )

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}.w_input", self.w_input),
            (f"{prefix}.w_forget", self.w_forget),
            (f"{prefix}.w_cell", self.w_cell),
            (f"{prefix}.w_output", self.w_output),
            (f"{prefix}.b_input", self.b_input),
            (f"{prefix}.b_forget", self.b_forget),
            (f"{prefix}.b_cell", self.b_cell),
            (f"{prefix}.b_output", self.b_output),
        ]


@dataclass
class BiLstmLayer:
    forward_dir: LstmDirection
    backward_dir: LstmDirection

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return self.forward_dir.named(f"{prefix}.fwd") + self.backward_dir.named(
            f"{prefix}.bwd"
        )


@dataclass
class BiLstmStack:
    """L stacked bidirectional LSTM layers; layer l>1 consumes 2h features."""

    input_size: int
    hidden: int
    layers: list[BiLstmLayer]

    @classmethod
    def init(
        cls, rng: np.random.Generator, input_size: int, hidden: int, n_layers: int
    ) -> "BiLstmStack":
        if n_layers < 1:
            raise ValidationError(f"lstm_layers must be >= 1, got {n_layers}")
        layers = []
        in_dim = input_size
        for _ in range(n_layers):
            layers.append(
                BiLstmLayer(
                    forward_dir=LstmDirection.init(rng, in_dim, hidden),
                    backward_dir=LstmDirection.init(rng, in_dim, hidden),
                )
            )
            in_dim = 2 * hidden
        return cls(input_size=input_size, hidden=hidden, layers=layers)

    @property
    def output_size(self) -> int:
        return 2 * self.hidden

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for i, layer in enumerate(self.layers):
            out += layer.named(f"{prefix}.layer{i}")
        return out


def _lstm_direction_states(xs: Sequence[Tensor], d: LstmDirection) -> list[Tensor]:
    wi, wf, wc, wo = (
        transpose(d.w_input),
        transpose(d.w_forget),
        transpose(d.w_cell),
        transpose(d.w_output),
    )
    batch = xs[0].data.shape[0]
    hidden = d.b_input.data.shape[0]
    h = Tensor(np.zeros((batch, hidden)))
    c = Tensor(np.zeros((batch, hidden)))
    states = []
    for x in xs:
        xh = concat(x, h)
        i = sigmoid(affine(xh, wi, d.b_input))
        f = sigmoid(affine(xh, wf, d.b_forget))
        g = tanh(affine(xh, wc, d.b_cell))
        o = sigmoid(affine(xh, wo, d.b_output))
        c = add(mul(f, c), mul(i, g))
        h = mul(o, tanh(c))
        states.append(h)
    return states


def bilstm_encode(inputs: Sequence[Tensor], stack: BiLstmStack) -> Tensor:
    """Mean over time of the final layer's per-step [fwd_t; bwd_t] states."""
    seq, was_vector = _as_steps(inputs)
    if seq[0].data.shape[-1] != stack.input_size:
        raise TensorError(
            f"lstm input dim {seq[0].data.shape[-1]} != stack input {stack.input_size}"
        )
    for layer in stack.layers:
        fwd = _lstm_direction_states(seq, layer.forward_dir)
        bwd = _lstm_direction_states(seq[::-1], layer.backward_dir)[::-1]
        seq = [concat(f, b) for f, b in zip(fwd, bwd)]
    pooled = seq[0]
    for s in seq[1:]:
        pooled = add(pooled, s)
    pooled = scale(pooled, 1.0 / len(seq))
    if was_vector:
        return reshape(pooled, (pooled.data.shape[-1],))
    return pooled


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """First/second moment buffers aligned with a fixed parameter list."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], lr: float = 0.01, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """Standard bias-corrected Adam update, in place; missing grads count as 0."""
    if len(params) != len(state.m):
        raise ValidationError(
            f"adam state holds {len(state.m)} buffers for {len(params)} params"
        )
    for p, m in zip(params, state.m):
        if p.data.shape != m.shape:
            raise ValidationError(
                f"adam buffer shape {m.shape} != param shape {p.data.shape}"
            )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad if p.grad is not None else 0.0
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(
    path: str | os.PathLike,
    named_tensors: Iterable[tuple[str, Tensor]],
    config: dict,
) -> None:
    """Write a versioned JSON container; f64 values round-trip bit-exactly."""
    tensors = {}
    for name, t in named_tensors:
        if name in tensors:
            raise ValidationError(f"duplicate tensor name in checkpoint: {name}")
        tensors[name] = {
            "shape": list(t.data.shape),
            "data": [float(x) for x in t.data.reshape(-1)],
        }
    payload = {"format": CHECKPOINT_FORMAT, "config": config, "tensors": tensors}
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, allow_nan=False, separators=(",", ":"), sort_keys=True)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(
            f"unsupported checkpoint format {payload.get('format')!r} in {path}"
        )
    tensors = {}
    for name, spec in payload["tensors"].items():
        shape = tuple(spec["shape"])
        data = np.array(spec["data"], dtype=np.float64)
        if data.size != int(np.prod(shape, dtype=np.int64)):
            raise ValidationError(f"checkpoint tensor {name}: data does not fill {shape}")
        tensors[name] = data.reshape(shape)
    return tensors, payload["config"]
