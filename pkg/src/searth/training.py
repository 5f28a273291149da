"""Latitude-weighted MAE training: pretraining, AR and relay-AR fine-tuning.

Fine-tuning modes differ only in where the tape is cut. ``finetune_ar``
keeps an ``n``-step rollout on one graph; ``finetune_rar`` splits a
``M*k``-step rollout into ``M`` stages of ``k`` steps, updating after each
stage and relaying the last two predicted states, detached, into the next.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import Checkpoint, OptimizerState
from .data import Dataset
from .errors import ConfigError, NumericError, ShapeError
from .model import ModelConfig, forward_step, init_params
from .rng import stream

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    mode: str = "pretrain"
    batch_size: int = 2
    iterations: int = 2000
    lr_initial: float = 1e-3
    lr_final: float = 1e-7
    schedule: str = "cosine"
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 0.1
    eps: float = 1e-8
    rollout_steps: int = 4
    k: int = 4
    stages: int = 1
    update_per_stage: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @classmethod
    def paper_pretrain(cls, **kw) -> "TrainConfig":
        base = dict(mode="pretrain", batch_size=32, iterations=100_000, lr_initial=2.5e-4,
                    lr_final=1e-7, schedule="cosine")
        base.update(kw)
        return cls(**base)

    @classmethod
    def paper_finetune(cls, **kw) -> "TrainConfig":
        base = dict(mode="rar", batch_size=1, iterations=1000, lr_initial=1e-7, lr_final=1e-7,
                    schedule="constant", k=4, stages=15)
        base.update(kw)
        return cls(**base)

    def validate(self) -> None:
        if self.mode not in ("pretrain", "ar", "rar"):
            raise ConfigError(f"mode must be pretrain, ar or rar, got {self.mode!r}")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"schedule must be cosine or constant, got {self.schedule!r}")
        if self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("batch_size must be >= 1 and iterations >= 0")
        if self.k < 1 or self.stages < 1 or self.rollout_steps < 1:
            raise ConfigError("k, stages and rollout_steps must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def weighted_mae_loss(predictions, targets, lat_weights) -> Tensor:
    """Mean over batch, lead, channel and grid of ``L_i * |pred - target|``.

    ``predictions`` and ``targets`` are equally long sequences (one entry per
    lead) of ``[B, C, H, W]`` tensors or arrays.
    """
    if isinstance(predictions, Tensor):
        predictions, targets = [predictions], [targets]
    T = len(predictions)
    if T == 0:
        raise ShapeError("weighted_mae_loss: no forecast steps")
    if len(targets) != T:
        raise ShapeError(f"weighted_mae_loss: {T} predictions but {len(targets)} targets")
    total = None
    for pred, tgt in zip(predictions, targets):
        pred = ad.as_tensor(pred)
        tgt_data = tgt.data if isinstance(tgt, Tensor) else np.asarray(tgt)
        if pred.shape != tgt_data.shape or pred.ndim != 4:
            raise ShapeError(f"weighted_mae_loss: shapes {pred.shape} and {tgt_data.shape}")
        if len(lat_weights) != pred.shape[2]:
            raise ShapeError(f"weighted_mae_loss: {len(lat_weights)} weights for {pred.shape[2]} rows")
        w = np.asarray(lat_weights, dtype=pred.dtype).reshape(1, 1, -1, 1)
        term = ad.tsum(ad.mul(ad.absolute(pred - tgt_data.astype(pred.dtype, copy=False)), w))
        total = term if total is None else total + term
    B, C, H, W = predictions[0].shape
    return total * (1.0 / (B * T * C * H * W))


def cosine_lr(iteration: int, total: int, lr0: float, lr_min: float) -> float:
    if total <= 0:
        return lr0
    frac = min(max(iteration / total, 0.0), 1.0)
    return lr_min + 0.5 * (lr0 - lr_min) * (1 + math.cos(math.pi * frac))


def learning_rate(cfg: TrainConfig, iteration: int) -> float:
    if cfg.schedule == "constant":
        return cfg.lr_initial
    return cosine_lr(iteration, cfg.iterations, cfg.lr_initial, cfg.lr_final)


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState, lr: float,
               beta1: float = 0.9, beta2: float = 0.95, weight_decay: float = 0.1, eps: float = 1e-8) -> None:
    """In-place AdamW update with decoupled, multiplicative weight decay."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for name, g in grads.items():
        p = params[name].data
        if p.shape != g.shape:
            raise ShapeError(f"adamw_step: {name} has shape {p.shape}, gradient {g.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if weight_decay:
            p -= lr * weight_decay * p
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ------------------------------------------------------------------ helpers

def tensor_params(ckpt: Checkpoint) -> dict[str, Tensor]:
    dtype = ckpt.model.precision
    return {k: Tensor(v.copy(), requires_grad=True, name=k, dtype=dtype) for k, v in ckpt.params.items()}


def new_checkpoint(model: ModelConfig, dataset: Dataset, seed: int) -> Checkpoint:
    params = {k: t.data for k, t in init_params(model, seed).items()}
    return Checkpoint(model, params, OptimizerState.zeros_like(params), dataset.mean.copy(),
                      dataset.std.copy(), 0, seed)


def epoch_indices(n: int, batch: int, iteration: int, seed: int, name: str) -> np.ndarray:
    """Rows of a per-epoch shuffled sample order, cycling through epochs."""
    if n <= 0:
        raise ConfigError(f"{name}: dataset too short for the requested samples")
    out = np.empty(batch, dtype=np.int64)
    perms = {}
    for b in range(batch):
        pos = iteration * batch + b
        epoch, offset = divmod(pos, n)
        if epoch not in perms:
            perms[epoch] = stream(seed, name, epoch).permutation(n)
        out[b] = perms[epoch][offset]
    return out


def sequences(norm_states: np.ndarray, starts: np.ndarray, length: int) -> np.ndarray:
    """``[length, B, C, H, W]`` windows starting at ``starts``."""
    return np.stack([norm_states[s:s + length] for s in starts], axis=1)


def _check_loss(loss: Tensor, where: str) -> float:
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(f"{where}: loss is {value}")
    return value


def _dtype_of(model: ModelConfig):
    return np.dtype(model.precision)


# ------------------------------------------------------------------ pretraining

def pretrain(model: ModelConfig, cfg: TrainConfig, dataset: Dataset, ckpt: Checkpoint | None = None,
             stop_at: int | None = None, on_log: Callable | None = None) -> tuple[Checkpoint, list]:
    """Single-step training under a cosine schedule.

    Starts from ``ckpt`` (resuming at its iteration) or a fresh
    initialisation, and runs until ``cfg.iterations`` or ``stop_at``.
    Returns the new checkpoint and ``(iter, lr, loss)`` log rows.
    """
    ckpt = ckpt.copy() if ckpt is not None else new_checkpoint(model, dataset, cfg.seed)
    params = tensor_params(ckpt)
    opt = ckpt.optimizer
    weights = dataset.grid.weights()
    norm = dataset.normalized("train").astype(_dtype_of(ckpt.model))
    n_samples = norm.shape[0] - 2
    end = cfg.iterations if stop_at is None else min(stop_at, cfg.iterations)
    rows = []
    for it in range(ckpt.iteration, end):
        starts = epoch_indices(n_samples, cfg.batch_size, it, cfg.seed, "pretrain-order")
        seq = sequences(norm, starts, 3)
        lr = learning_rate(cfg, it)
        pred = forward_step(params, ckpt.model, Tensor(seq[0]), Tensor(seq[1]),
                            stream(cfg.seed, "droppath", it, 0), training=True)
        loss = weighted_mae_loss(pred, seq[2], weights)
        value = _check_loss(loss, f"pretrain iteration {it}")
        grads = ad.backward(loss, params)
        adamw_step(params, grads, opt, lr, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.eps)
        rows.append((it, lr, value))
        if on_log is not None:
            on_log(it, lr, value)
    ckpt.params = {k: t.data for k, t in params.items()}
    ckpt.iteration = max(ckpt.iteration, end)
    ckpt.seed = cfg.seed
    ckpt.train = cfg.to_dict()
    return ckpt, rows


# ------------------------------------------------------------------ fine-tuning

def rollout_stage(params, model: ModelConfig, x_prev: Tensor, x_curr: Tensor, targets: np.ndarray,
                  weights: np.ndarray, seed: int, iteration: int, first_step: int):
    """Roll ``len(targets)`` steps on one graph; returns loss and the last two states."""
    preds = []
    a, b = x_prev, x_curr
    for t in range(len(targets)):
        y = forward_step(params, model, a, b, stream(seed, "droppath", iteration, first_step + t), training=True)
        preds.append(y)
        a, b = b, y
    return weighted_mae_loss(preds, list(targets), weights), a, b


def _finetune(ckpt: Checkpoint, cfg: TrainConfig, dataset: Dataset, mode: str, k: int, stages: int,
              update_per_stage: bool, order_name: str, stop_at: int | None,
              on_log: Callable | None, probe: Callable | None):
    ckpt = ckpt.copy()
    params = tensor_params(ckpt)
    opt = ckpt.optimizer
    weights = dataset.grid.weights()
    norm = dataset.normalized("train").astype(_dtype_of(ckpt.model))
    length = stages * k + 2
    n_samples = norm.shape[0] - length + 1
    end = cfg.iterations if stop_at is None else min(stop_at, cfg.iterations)
    rows = []
    start = ckpt.iteration
    for it in range(start, end):
        starts = epoch_indices(n_samples, cfg.batch_size, it, cfg.seed, order_name)
        seq = sequences(norm, starts, length)
        lr = learning_rate(cfg, it)
        x_prev, x_curr = Tensor(seq[0]), Tensor(seq[1])
        pending = None
        for s in range(stages):
            targets = seq[2 + s * k: 2 + (s + 1) * k]
            loss, a, b = rollout_stage(params, ckpt.model, x_prev, x_curr, targets, weights, cfg.seed, it, s * k)
            value = _check_loss(loss, f"fine-tune iteration {it} stage {s}")
            if probe is not None:
                probe(it, s, loss, params, x_prev, x_curr, a, b)
            grads = ad.backward(loss, params)
            del loss
            if update_per_stage:
                adamw_step(params, grads, opt, lr, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.eps)
            else:
                pending = grads if pending is None else {n: pending[n] + grads[n] for n in grads}
            rows.append((it * stages + s, lr, value))
            if on_log is not None:
                on_log(it * stages + s, lr, value)
            x_prev, x_curr = ad.detach(a), ad.detach(b)
            del a, b
        if pending is not None:
            adamw_step(params, pending, opt, lr, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.eps)
    ckpt.params = {k_: t.data for k_, t in params.items()}
    ckpt.iteration = max(start, end)
    ckpt.train = dict(cfg.to_dict(), mode=mode)
    return ckpt, rows


def finetune_ar(ckpt: Checkpoint, cfg: TrainConfig, dataset: Dataset, n_steps: int | None = None,
                stop_at: int | None = None, on_log: Callable | None = None,
                probe: Callable | None = None) -> tuple[Checkpoint, list]:
    """Classical autoregressive fine-tuning: one ``n``-step graph per sample."""
    n = cfg.rollout_steps if n_steps is None else n_steps
    start = _reset_iteration(ckpt, "ar")
    out, rows = _finetune(start, cfg, dataset, "ar", n, 1, True, "finetune-order", stop_at, on_log, probe)
    out.history = start.history + [{"phase": "ar", "n": n, "iterations": out.iteration}]
    return out, rows


def finetune_rar(ckpt: Checkpoint, cfg: TrainConfig, dataset: Dataset, k: int | None = None,
                 stages: int | None = None, stop_at: int | None = None, on_log: Callable | None = None,
                 probe: Callable | None = None) -> tuple[Checkpoint, list]:
    """Relay fine-tuning over ``stages`` sub-stages of ``k`` steps."""
    k = cfg.k if k is None else k
    stages = cfg.stages if stages is None else stages
    start = _reset_iteration(ckpt, "rar")
    out, rows = _finetune(start, cfg, dataset, "rar", k, stages, cfg.update_per_stage, "finetune-order",
                          stop_at, on_log, probe)
    out.history = start.history + [{"phase": "rar", "k": k, "stages": stages, "iterations": out.iteration}]
    return out, rows


def _reset_iteration(ckpt: Checkpoint, mode: str) -> Checkpoint:
    # fine-tuning restarts its iteration counter unless resuming the same phase
    phase = ckpt.train.get("mode") if ckpt.train else None
    if phase == mode:
        return ckpt
    out = ckpt.copy()
    out.history = out.history + [{"phase": phase or "init", "iterations": ckpt.iteration}]
    out.iteration = 0
    return out


def one_step_loss(params_or_ckpt, model: ModelConfig, dataset: Dataset, split: str = "val",
                  batch: int = 64) -> float:
    """Mean one-step weighted MAE over every triple in ``split`` (normalised units)."""
    params = tensor_params(params_or_ckpt) if isinstance(params_or_ckpt, Checkpoint) else params_or_ckpt
    norm = dataset.normalized(split).astype(np.dtype(model.precision))
    weights = dataset.grid.weights()
    total, count = 0.0, 0
    with ad.no_grad():
        for s in range(0, norm.shape[0] - 2, batch):
            idx = np.arange(s, min(s + batch, norm.shape[0] - 2))
            seq = sequences(norm, idx, 3)
            pred = forward_step(params, model, Tensor(seq[0]), Tensor(seq[1]))
            total += float(weighted_mae_loss(pred, seq[2], weights).data) * len(idx)
            count += len(idx)
    return total / count


def persistence_loss(dataset: Dataset, split: str = "val") -> float:
    """One-step weighted MAE of the forecast ``X_{t+1} = X_t``."""
    norm = dataset.normalized(split)
    weights = dataset.grid.weights()
    return float(np.mean(np.abs(norm[2:] - norm[1:-1]) * weights[None, None, :, None]))


def gradcheck_params(model: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Parameters at fan-in scale so every path carries a resolvable gradient.

    The training initialisation keeps attention nearly uniform, which leaves
    query/key gradients below what central differences can resolve.
    """
    out = {}
    for name, t in init_params(model, seed).items():
        rng = stream(seed, "gradcheck-init", *name.encode())
        shape = t.shape
        if name.endswith(".gain"):
            arr = 1.0 + 0.1 * rng.standard_normal(shape)
        elif len(shape) == 1 or name.endswith("rel_bias"):
            arr = 0.1 * rng.standard_normal(shape)
        else:
            fan_in = int(np.prod(shape)) // shape[-1] if len(shape) == 2 else int(np.prod(shape[1:]))
            arr = rng.standard_normal(shape) / np.sqrt(fan_in)
        out[name] = Tensor(arr, requires_grad=True, name=name, dtype=model.precision)
    return out


def loss_grad_check(model: ModelConfig, seed: int = 0, coords_per_tensor: int = 2, batch: int = 1,
                    eps: float = 1e-5, training: bool = False) -> dict[str, float]:
    """Central-difference check of ``forward_step`` plus the weighted MAE.

    Every parameter tensor and both input states are probed at
    ``coords_per_tensor`` random flat indices. With ``training`` the same
    drop-path draw is replayed on every evaluation. Returns the max relative
    error per tensor name; requires a 64-bit model.
    """
    if model.precision != "float64":
        raise NumericError("loss_grad_check requires a float64 model")
    params = gradcheck_params(model, seed)
    rng = stream(seed, "gradcheck")
    shape = (batch, model.n_channels, model.n_lat, model.n_lon)
    x_prev = rng.standard_normal(shape)
    x_curr = rng.standard_normal(shape)
    target = rng.standard_normal(shape)
    weights = np.cos(np.deg2rad(np.linspace(-80, 80, model.n_lat)))
    weights = weights * model.n_lat / weights.sum()
    inputs = {"input.prev": x_prev, "input.curr": x_curr}
    out = {}
    for name in list(inputs) + list(params):
        base = inputs[name] if name in inputs else params[name].data

        def fn(leaf, name=name):
            p = dict(params)
            a, b = Tensor(x_prev), Tensor(x_curr)
            if name == "input.prev":
                a = leaf
            elif name == "input.curr":
                b = leaf
            else:
                p[name] = leaf
            rng_dp = stream(seed, "gradcheck-droppath") if training else None
            return weighted_mae_loss(forward_step(p, model, a, b, rng_dp, training), target, weights)

        coords = rng.choice(base.size, size=min(coords_per_tensor, base.size), replace=False)
        out[name] = ad.grad_check(fn, Tensor(base), eps=eps, coords=coords)
    return out
