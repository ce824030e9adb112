"""Snapshot-transformer DOA estimator.

Each received snapshot (one column of Y) becomes a token: real and imaginary
parts stacked into a 2m vector, affinely embedded to d_model.  A stack of
single-head self-attention blocks with residuals and column-wise layer norm
is followed by global mean pooling over tokens and a two-layer head emitting
k_max angle slots; the first k are the estimate.  No positional encoding and
symmetric pooling make the map invariant to snapshot order and agnostic to
the number of snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn_core
from .errors import DataModelMismatchError
from .nn_core import Tape, Tensor
from .sigsim import Dataset, derive_seed
from .subspace import DoaEstimate

# Forward/backward passes are chunked to bound tape memory; grouping is fixed
# so results do not depend on available memory.
_CHUNK = 512


@dataclass(frozen=True)
class SnapTfConfig:
    """Architecture hyperparameters.

    Defaults target modulated symbols on the 5-antenna MRA: 3 layers capture
    up to eighth-order interactions; use layers=2 for Gaussian sources.
    """

    layers: int = 3
    d_model: int = 96
    d_attn: int = 96
    d_ff: int = 384
    hidden_out: int = 200
    k_max: int = 9
    m: int = 5
    loss_mask: bool = False  # exclude zero-padded label slots from the loss

    def __post_init__(self):
        for name in ("layers", "d_model", "d_attn", "d_ff", "hidden_out", "k_max", "m"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class SnapTfModel:
    config: SnapTfConfig
    params: dict[str, Tensor]

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())


def _param_shapes(cfg: SnapTfConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter order; also the checkpoint blob order."""
    shapes: dict[str, tuple[int, ...]] = {
        "embed.w": (cfg.d_model, 2 * cfg.m),
        "embed.b": (cfg.d_model, 1),
    }
    for i in range(cfg.layers):
        shapes[f"layer{i}.wq"] = (cfg.d_attn, cfg.d_model)
        shapes[f"layer{i}.wk"] = (cfg.d_attn, cfg.d_model)
        shapes[f"layer{i}.wv"] = (cfg.d_model, cfg.d_model)
        shapes[f"layer{i}.ln1.g"] = (cfg.d_model, 1)
        shapes[f"layer{i}.ln1.b"] = (cfg.d_model, 1)
        shapes[f"layer{i}.ff.w1"] = (cfg.d_ff, cfg.d_model)
        shapes[f"layer{i}.ff.b1"] = (cfg.d_ff, 1)
        shapes[f"layer{i}.ff.w2"] = (cfg.d_model, cfg.d_ff)
        shapes[f"layer{i}.ff.b2"] = (cfg.d_model, 1)
        shapes[f"layer{i}.ln2.g"] = (cfg.d_model, 1)
        shapes[f"layer{i}.ln2.b"] = (cfg.d_model, 1)
    shapes["head.w1"] = (cfg.hidden_out, cfg.d_model)
    shapes["head.b1"] = (cfg.hidden_out, 1)
    shapes["head.w2"] = (cfg.k_max, cfg.hidden_out)
    shapes["head.b2"] = (cfg.k_max, 1)
    return shapes


def init_model(cfg: SnapTfConfig, rng: np.random.Generator) -> SnapTfModel:
    """Glorot-uniform weights, zero biases, unit layer-norm gains."""
    params: dict[str, Tensor] = {}
    for name, shape in _param_shapes(cfg).items():
        if name.endswith(".g"):
            data = np.ones(shape)
        elif len(shape) == 2 and shape[1] == 1:
            data = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[1] + shape[0]))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return SnapTfModel(config=cfg, params=params)


def stack_snapshots(y: np.ndarray) -> np.ndarray:
    """[Re(Y); Im(Y)] along the feature axis, float64."""
    y = np.asarray(y)
    return np.concatenate([y.real, y.imag], axis=-2).astype(np.float64)


def _graph(tape: Tape, model: SnapTfModel, s0: Tensor) -> Tensor:
    """(B, 2m, T) tokens -> (B, k_max, 1) raw angle slots."""
    p = model.params
    cfg = model.config
    x = tape.add(tape.matmul(p["embed.w"], s0), p["embed.b"])
    inv_sqrt = 1.0 / np.sqrt(cfg.d_attn)
    for i in range(cfg.layers):
        q = tape.matmul(p[f"layer{i}.wq"], x)
        k = tape.matmul(p[f"layer{i}.wk"], x)
        v = tape.matmul(p[f"layer{i}.wv"], x)
        attn = tape.softmax_cols(tape.scale(tape.matmul(k, q, transpose_a=True), inv_sqrt))
        z = tape.layernorm_cols(tape.add(x, tape.matmul(v, attn)),
                                p[f"layer{i}.ln1.g"], p[f"layer{i}.ln1.b"])
        h = tape.relu(tape.add(tape.matmul(p[f"layer{i}.ff.w1"], z), p[f"layer{i}.ff.b1"]))
        f = tape.add(tape.matmul(p[f"layer{i}.ff.w2"], h), p[f"layer{i}.ff.b2"])
        x = tape.layernorm_cols(tape.add(z, f),
                                p[f"layer{i}.ln2.g"], p[f"layer{i}.ln2.b"])
    pooled = tape.mean_cols(x)
    h = tape.relu(tape.add(tape.matmul(p["head.w1"], pooled), p["head.b1"]))
    return tape.add(tape.matmul(p["head.w2"], h), p["head.b2"])


def predict_raw(model: SnapTfModel, y: np.ndarray) -> np.ndarray:
    """Raw k_max-slot outputs for a batch of snapshot matrices (B, m, T)."""
    y = np.asarray(y)
    if y.ndim != 3:
        raise ValueError("expected a (batch, m, t) array")
    if y.shape[1] != model.config.m:
        raise DataModelMismatchError(
            f"model expects m={model.config.m} antennas, data has {y.shape[1]}")
    outs = []
    for lo in range(0, y.shape[0], _CHUNK):
        s0 = Tensor(stack_snapshots(y[lo:lo + _CHUNK]))
        out = _graph(Tape(record=False), model, s0)
        outs.append(out.data[:, :, 0])
    return np.concatenate(outs, axis=0)


def forward(model: SnapTfModel, y: np.ndarray, k: int) -> DoaEstimate:
    """Estimate k DOAs from one m x T snapshot matrix."""
    if not 1 <= k <= model.config.k_max:
        raise ValueError(f"k must be in 1..{model.config.k_max}, got {k}")
    y = np.asarray(y)
    if y.ndim != 2 or y.shape[1] < 1:
        raise ValueError("expected an m x T matrix with T >= 1")
    raw = predict_raw(model, y[None])[0, :k]
    return DoaEstimate(thetas=np.clip(raw, 0.0, np.pi), method="snap_tf")


def loss(pred: np.ndarray, label: np.ndarray) -> float:
    """Mean squared error over all k_max slots (padded zeros included)."""
    pred = np.asarray(pred, dtype=float)
    label = np.asarray(label, dtype=float)
    if pred.shape != label.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {label.shape}")
    return float(np.mean((pred - label) ** 2))


def make_labels(doas: np.ndarray, k: np.ndarray, k_max: int) -> np.ndarray:
    """Sorted, zero-padded angle labels; sortedness is asserted on every batch."""
    out = np.zeros((len(k), k_max))
    out[:, :doas.shape[1]] = doas[:, :k_max]
    for i, ki in enumerate(k):
        live = out[i, :ki]
        assert np.all(np.diff(live) >= 0), "labels must be sorted ascending"
        out[i, ki:] = 0.0
    return out


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4096
    epochs: int = 100
    lr_max: float = 0.001
    seed: int = 0
    val_fraction: float = 0.05


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


def _loss_weight(cfg: SnapTfConfig, labels: np.ndarray, k: np.ndarray):
    """Optional per-slot weight that restricts the MSE to live label slots."""
    if not cfg.loss_mask:
        return None
    mask = np.zeros_like(labels)
    for i, ki in enumerate(k):
        mask[i, :ki] = 1.0
    return mask * (mask.size / max(mask.sum(), 1.0))


def _batch_loss_and_grads(model: SnapTfModel, y: np.ndarray, labels: np.ndarray,
                          weight) -> float:
    """Accumulate parameter gradients of the mean loss over one batch.

    The batch is processed in fixed-size chunks whose losses are scaled by
    their share of the batch, an ordered reduction equivalent to one pass.
    """
    total = len(y)
    loss_value = 0.0
    for lo in range(0, total, _CHUNK):
        hi = min(lo + _CHUNK, total)
        tape = Tape()
        s0 = Tensor(stack_snapshots(y[lo:hi]))
        out = _graph(tape, model, s0)
        target = Tensor(labels[lo:hi, :, None])
        w = None if weight is None else weight[lo:hi, :, None]
        chunk = tape.mse(out, target, weight=w)
        scaled = tape.scale(chunk, (hi - lo) / total)
        tape.backward(scaled)
        loss_value += float(scaled.data)
    return loss_value


def _eval_loss(model: SnapTfModel, y: np.ndarray, labels: np.ndarray, weight) -> float:
    total = len(y)
    if total == 0:
        return float("nan")
    acc = 0.0
    for lo in range(0, total, _CHUNK):
        hi = min(lo + _CHUNK, total)
        out = predict_raw(model, y[lo:hi])
        diff = (out - labels[lo:hi]) ** 2
        if weight is not None:
            diff = diff * weight[lo:hi]
        acc += diff.mean() * (hi - lo)
    return acc / total


def train(model: SnapTfModel, dataset: Dataset, cfg: TrainConfig,
          start_epoch: int = 0) -> tuple[SnapTfModel, list[EpochStats]]:
    """Minibatch SGD with the one-cycle schedule.

    Deterministic given (dataset, cfg): the train/val split and each epoch's
    shuffle derive from (seed, epoch) alone, so training can resume from any
    epoch boundary and reproduce the uninterrupted run exactly.
    """
    if dataset.records == 0:
        raise ValueError("empty dataset")
    if dataset.m != model.config.m:
        raise DataModelMismatchError(
            f"model expects m={model.config.m}, dataset has m={dataset.m}")
    if int(dataset.k.max()) > model.config.k_max:
        raise DataModelMismatchError(
            f"dataset has k up to {int(dataset.k.max())} > model k_max={model.config.k_max}")

    labels = make_labels(dataset.doas, dataset.k, model.config.k_max)
    weight = _loss_weight(model.config, labels, dataset.k)
    perm = np.random.default_rng(derive_seed(cfg.seed, 0xA11)).permutation(dataset.records)
    n_val = int(round(dataset.records * cfg.val_fraction))
    n_val = min(n_val, dataset.records - 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    steps_per_epoch = -(-len(train_idx) // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch

    history: list[EpochStats] = []
    for epoch in range(start_epoch, cfg.epochs):
        order = train_idx[np.random.default_rng(
            derive_seed(cfg.seed, 0xE60, epoch)).permutation(len(train_idx))]
        epoch_loss = 0.0
        lr = 0.0
        for step in range(steps_per_epoch):
            idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            lr = nn_core.onecycle_lr(epoch * steps_per_epoch + step, total_steps, cfg.lr_max)
            batch_loss = _batch_loss_and_grads(
                model, dataset.y[idx], labels[idx],
                None if weight is None else weight[idx])
            nn_core.sgd_step(model.parameters(), lr)
            epoch_loss += batch_loss * len(idx)
        train_loss = epoch_loss / len(train_idx)
        val_loss = _eval_loss(model, dataset.y[val_idx], labels[val_idx],
                              None if weight is None else weight[val_idx])
        history.append(EpochStats(epoch=epoch, train_loss=train_loss,
                                  val_loss=val_loss, lr=lr))
    return model, history


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_model(path, model: SnapTfModel) -> None:
    cfg = model.config
    nn_core.save_checkpoint(path, {
        "layers": cfg.layers, "d_model": cfg.d_model, "d_attn": cfg.d_attn,
        "d_ff": cfg.d_ff, "hidden_out": cfg.hidden_out, "k_max": cfg.k_max,
        "m": cfg.m,
    }, model.params)


def load_model(path) -> SnapTfModel:
    raw_cfg, arrays = nn_core.load_checkpoint(path)
    cfg = SnapTfConfig(**raw_cfg)
    expected = _param_shapes(cfg)
    if list(arrays) != list(expected):
        raise ValueError("checkpoint parameter names do not match architecture")
    params = {}
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise ValueError(f"checkpoint parameter {name} has shape "
                             f"{arrays[name].shape}, expected {shape}")
        params[name] = Tensor(arrays[name], requires_grad=True)
    return SnapTfModel(config=cfg, params=params)
