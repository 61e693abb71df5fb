"""The fused price model: keyword GRU branch + indicator Bi-LSTM branch.

Per sample, each of the n keyword embeddings (saliency-descending) is
projected d->h through a shared ReLU linear layer with dropout, the
projected sequence runs through the GRU to h_news (2h), the scaled T-day
indicator window runs through the Bi-LSTM stack to h_price (2h), and the
concatenation feeds a ReLU+dropout fusion layer (4h->2h) and a two-layer
regression head (2h->2h->1) trained with MSE on z-scored targets.

Ablations keep the full 4h fusion input and substitute zeros for the
missing branch, so one architecture serves every variant and SHAP grouping
stays uniform.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import Sample, Scaler
from .errors import NumericError, ValidationError
from .evaluate import ForecastSeries
from .nn import (
    AdamState,
    BiLstmStack,
    GruLayer,
    LinearLayer,
    adam_step,
    bilstm_encode,
    gru_forward,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import (
    Tape,
    Tensor,
    add,
    concat,
    dropout,
    mul,
    relu,
    rng_stream,
    scale,
    sum_all,
)

VARIANTS = ("full", "tech_only", "keyword_only")
GRU_MODES = ("bidirectional", "unidirectional-2h")


@dataclass(frozen=True)
class ModelDims:
    d: int  # keyword embedding width
    f: int  # indicator count
    h: int  # hidden units per direction
    n: int  # keyword slots
    T: int  # window length
    lstm_layers: int = 2
    gru_mode: str = "bidirectional"

    def __post_init__(self):
        if min(self.d, self.f, self.h, self.n, self.T, self.lstm_layers) < 1:
            raise ValidationError(f"all model dims must be >= 1: {self}")
        if self.gru_mode not in GRU_MODES:
            raise ValidationError(f"gru_mode must be one of {GRU_MODES}")

    def to_dict(self) -> dict:
        return {
            "d": self.d, "f": self.f, "h": self.h, "n": self.n, "T": self.T,
            "lstm_layers": self.lstm_layers, "gru_mode": self.gru_mode,
        }


@dataclass
class TrainConfig:
    seed: int
    lr: float = 0.01
    batch_size: int = 32
    epochs: int = 200
    dropout: float = 0.1
    hidden: int = 256
    n_keywords: int = 17
    window: int = 10
    lstm_layers: int = 2
    gru_mode: str = "bidirectional"
    variant: str = "full"
    patience: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}")
        if self.gru_mode not in GRU_MODES:
            raise ValidationError(f"gru_mode must be one of {GRU_MODES}")
        positive = {
            "lr": self.lr, "batch_size": self.batch_size, "epochs": self.epochs,
            "hidden": self.hidden, "n_keywords": self.n_keywords,
            "window": self.window, "lstm_layers": self.lstm_layers,
        }
        for name, v in positive.items():
            if v <= 0:
                raise ValidationError(f"{name} must be positive, got {v}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass
class IknetParams:
    dims: ModelDims
    variant: str
    proj: LinearLayer
    gru: GruLayer
    lstm: BiLstmStack
    fusion: LinearLayer
    head1: LinearLayer
    head2: LinearLayer
    fingerprint: str = ""

    def named(self) -> list[tuple[str, Tensor]]:
        return (
            self.proj.named("proj")
            + self.gru.named("gru")
            + self.lstm.named("lstm")
            + self.fusion.named("fusion")
            + self.head1.named("head1")
            + self.head2.named("head2")
        )

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named()]


def init_params(dims: ModelDims, variant: str, seed: int, fingerprint: str = "") -> IknetParams:
    if variant not in VARIANTS:
        raise ValidationError(f"variant must be one of {VARIANTS}")
    rng = rng_stream(seed, "init")
    bidirectional = dims.gru_mode == "bidirectional"
    gru_hidden = dims.h if bidirectional else 2 * dims.h
    return IknetParams(
        dims=dims,
        variant=variant,
        proj=LinearLayer.init(rng, dims.d, dims.h),
        gru=GruLayer.init(rng, dims.h, gru_hidden, bidirectional=bidirectional),
        lstm=BiLstmStack.init(rng, dims.f, dims.h, dims.lstm_layers),
        fusion=LinearLayer.init(rng, 4 * dims.h, 2 * dims.h),
        head1=LinearLayer.init(rng, 2 * dims.h, 2 * dims.h),
        head2=LinearLayer.init(rng, 2 * dims.h, 1),
        fingerprint=fingerprint,
    )


def scaler_fingerprint(scaler: Scaler, dims: ModelDims, variant: str) -> str:
    payload = json.dumps(
        {"scaler": scaler.to_dict(), "dims": dims.to_dict(), "variant": variant},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def forward_batch(
    params: IknetParams,
    k_steps: list[Tensor],
    x_steps: list[Tensor],
    training: bool = False,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """(B,d) keyword slots + (B,f) window steps -> (B,1) scaled prediction."""
    if k_steps[0].data.shape[-1] != params.dims.d:
        raise ValidationError(
            f"keyword dim {k_steps[0].data.shape[-1]} != model d={params.dims.d}"
        )
    if x_steps[0].data.shape[-1] != params.dims.f:
        raise ValidationError(
            f"indicator dim {x_steps[0].data.shape[-1]} != model f={params.dims.f}"
        )
    batch = k_steps[0].data.shape[0]
    two_h = 2 * params.dims.h

    if params.variant == "tech_only":
        h_news = Tensor(np.zeros((batch, two_h)))
    else:
        projected = [
            dropout(relu(params.proj.apply(k)), dropout_rate, training, rng)
            for k in k_steps
        ]
        h_news = gru_forward(projected, params.gru)

    if params.variant == "keyword_only":
        h_price = Tensor(np.zeros((batch, two_h)))
    else:
        h_price = bilstm_encode(x_steps, params.lstm)

    combined = concat(h_news, h_price)
    fused = dropout(relu(params.fusion.apply(combined)), dropout_rate, training, rng)
    return params.head2.apply(relu(params.head1.apply(fused)))


def _batch_tensors(K: np.ndarray, X: np.ndarray, idx: np.ndarray) -> tuple[list[Tensor], list[Tensor]]:
    k_steps = [Tensor(np.ascontiguousarray(K[idx, i, :])) for i in range(K.shape[1])]
    x_steps = [Tensor(np.ascontiguousarray(X[idx, t, :])) for t in range(X.shape[1])]
    return k_steps, x_steps


def _stack_inputs(samples: list[Sample], scaler: Scaler) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    K = np.stack([s.keywords.embeddings for s in samples])
    X = np.stack([scaler.apply_window(s.x_tech) for s in samples])
    y = scaler.apply_target(np.array([s.y for s in samples]))
    return K, X, y


def _check_uniform(samples: list[Sample], window: int) -> None:
    first = samples[0]
    T, f = first.x_tech.shape
    if T != window:
        raise ValidationError(f"sample window {T} != configured window {window}")
    n, d = first.keywords.embeddings.shape
    for s in samples:
        if s.x_tech.shape != (T, f) or s.keywords.embeddings.shape != (n, d):
            raise ValidationError(f"ragged sample shapes at {s.anchor_date}")


def train(
    samples: list[Sample], config: TrainConfig, scaler: Scaler
) -> tuple[IknetParams, list[float]]:
    """Adam on minibatch MSE; per-epoch shuffles and dropout draws are seeded."""
    if not samples:
        raise ValidationError("cannot train on an empty sample list")
    _check_uniform(samples, config.window)
    n, d = samples[0].keywords.embeddings.shape
    f = samples[0].x_tech.shape[1]
    dims = ModelDims(
        d=d, f=f, h=config.hidden, n=n, T=config.window,
        lstm_layers=config.lstm_layers, gru_mode=config.gru_mode,
    )
    fingerprint = scaler_fingerprint(scaler, dims, config.variant)
    params = init_params(dims, config.variant, config.seed, fingerprint)
    opt = AdamState.for_params(params.parameters(), lr=config.lr)
    drop_rng = rng_stream(config.seed, "dropout")

    K, X, y = _stack_inputs(samples, scaler)
    S = len(samples)
    losses: list[float] = []
    for epoch in range(config.epochs):
        perm = rng_stream(config.seed, "shuffle", epoch).permutation(S)
        sq_err_total = 0.0
        for start in range(0, S, config.batch_size):
            idx = perm[start : start + config.batch_size]
            k_steps, x_steps = _batch_tensors(K, X, idx)
            target = Tensor(y[idx].reshape(-1, 1))
            for p in params.parameters():
                p.zero_grad()
            with Tape() as tape:
                pred = forward_batch(
                    params, k_steps, x_steps,
                    training=True, dropout_rate=config.dropout, rng=drop_rng,
                )
                diff = add(pred, scale(target, -1.0))
                loss = scale(sum_all(mul(diff, diff)), 1.0 / len(idx))
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}: check learning "
                    f"rate ({config.lr}) and input scaling"
                )
            tape.backward(loss)
            adam_step(params.parameters(), opt)
            sq_err_total += value * len(idx)
        losses.append(sq_err_total / S)
        if config.patience is not None and len(losses) > config.patience:
            best = min(range(len(losses)), key=losses.__getitem__)
            if len(losses) - 1 - best >= config.patience:
                break
    return params, losses


def predict(
    samples: list[Sample],
    params: IknetParams,
    scaler: Scaler,
    batch_size: int = 256,
) -> ForecastSeries:
    """Inference in index points; refuses a scaler the params weren't fit on."""
    expected = scaler_fingerprint(scaler, params.dims, params.variant)
    if params.fingerprint and params.fingerprint != expected:
        raise ValidationError(
            "scaler/config fingerprint mismatch: params were trained under a "
            "different fold or scaling"
        )
    if not samples:
        return ForecastSeries(
            dates=[], y_hat=np.zeros(0), y_true=np.zeros(0), anchor_close=np.zeros(0)
        )
    _check_uniform(samples, params.dims.T)
    K, X, _ = _stack_inputs(samples, scaler)
    outputs = []
    for start in range(0, len(samples), batch_size):
        idx = np.arange(start, min(start + batch_size, len(samples)))
        k_steps, x_steps = _batch_tensors(K, X, idx)
        pred = forward_batch(params, k_steps, x_steps, training=False)
        outputs.append(pred.data[:, 0])
    y_hat = scaler.invert_target(np.concatenate(outputs))
    if not np.isfinite(y_hat).all():
        raise NumericError("non-finite prediction; checkpoint or scaler corrupt")
    return ForecastSeries(
        dates=[s.target_date for s in samples],
        y_hat=y_hat,
        y_true=np.array([s.y for s in samples]),
        anchor_close=np.array([s.anchor_close for s in samples]),
    )


def save_params(path: str | os.PathLike, params: IknetParams, extra: dict | None = None) -> None:
    config = {
        "dims": params.dims.to_dict(),
        "variant": params.variant,
        "fingerprint": params.fingerprint,
    }
    if extra:
        config["extra"] = extra
    save_checkpoint(path, params.named(), config)


def load_params(path: str | os.PathLike) -> IknetParams:
    tensors, config = load_checkpoint(path)
    dims = ModelDims(**config["dims"])
    params = init_params(dims, config["variant"], seed=0, fingerprint=config["fingerprint"])
    for name, t in params.named():
        if name not in tensors:
            raise ValidationError(f"checkpoint missing tensor {name}")
        if tensors[name].shape != t.data.shape:
            raise ValidationError(
                f"checkpoint tensor {name} has shape {tensors[name].shape}, "
                f"expected {t.data.shape}"
            )
        t.data = tensors[name]
    extra_names = set(tensors) - {name for name, _ in params.named()}
    if extra_names:
        raise ValidationError(f"checkpoint holds unknown tensors: {sorted(extra_names)}")
    return params
