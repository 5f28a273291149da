"""Checkpoints: a GT1 archive of tensors plus a JSON sidecar."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointMismatchError, IOFormatError, MissingFileError
from .gt1 import gt1_read, gt1_write
from .model import ModelConfig, param_shapes


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)

    def copy(self) -> "OptimizerState":
        return OptimizerState({k: a.copy() for k, a in self.m.items()},
                              {k: a.copy() for k, a in self.v.items()}, self.step)


@dataclass
class Checkpoint:
    model: ModelConfig
    params: dict[str, np.ndarray]
    optimizer: OptimizerState
    norm_mean: np.ndarray
    norm_std: np.ndarray
    iteration: int = 0
    seed: int = 0
    train: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.model, {k: p.copy() for k, p in self.params.items()}, self.optimizer.copy(),
                          self.norm_mean.copy(), self.norm_std.copy(), self.iteration, self.seed,
                          dict(self.train), list(self.history))


def sidecar_path(path) -> str:
    return f"{path}.json"


def checkpoint_save(path, ckpt: Checkpoint) -> None:
    tensors = {}
    for name, p in ckpt.params.items():
        tensors[f"param/{name}"] = p
    for name in ckpt.params:
        tensors[f"adam_m/{name}"] = ckpt.optimizer.m[name]
        tensors[f"adam_v/{name}"] = ckpt.optimizer.v[name]
    tensors["norm/mean"] = np.asarray(ckpt.norm_mean, dtype=np.float64)
    tensors["norm/std"] = np.asarray(ckpt.norm_std, dtype=np.float64)
    gt1_write(path, tensors)
    side = {
        "format": "searth-checkpoint/1",
        "model": ckpt.model.to_dict(),
        "train": ckpt.train,
        "iteration": ckpt.iteration,
        "adam_step": ckpt.optimizer.step,
        "seed": ckpt.seed,
        "history": ckpt.history,
    }
    with open(sidecar_path(path), "w") as fh:
        json.dump(side, fh, indent=1, sort_keys=True)


def checkpoint_load(path, expect: ModelConfig | None = None) -> Checkpoint:
    """Load and validate a checkpoint.

    Every stored parameter must match the sidecar config's shape table, and
    the config must agree with ``expect`` when one is given.
    """
    if not os.path.exists(sidecar_path(path)):
        raise MissingFileError(f"no checkpoint sidecar at {sidecar_path(path)}")
    with open(sidecar_path(path)) as fh:
        try:
            side = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IOFormatError(f"{sidecar_path(path)}: {exc}") from None
    model = ModelConfig.from_dict(side["model"])
    tensors = gt1_read(path)
    if not isinstance(tensors, dict):
        raise IOFormatError(f"{path}: expected a named archive")
    shapes = param_shapes(model)
    if expect is not None:
        want = param_shapes(expect)
        for name, shape in want.items():
            if shapes.get(name) != shape:
                raise CheckpointMismatchError(
                    f"tensor {name}: checkpoint has {shapes.get(name)}, config expects {shape}")
        extra = set(shapes) - set(want)
        if extra:
            raise CheckpointMismatchError(f"tensor {sorted(extra)[0]}: not part of the expected config")
    params, m, v = {}, {}, {}
    for name, shape in shapes.items():
        for prefix, dest in (("param", params), ("adam_m", m), ("adam_v", v)):
            key = f"{prefix}/{name}"
            if key not in tensors:
                raise CheckpointMismatchError(f"tensor {key}: missing from archive")
            if tensors[key].shape != tuple(shape):
                raise CheckpointMismatchError(
                    f"tensor {key}: archive has {tensors[key].shape}, config expects {tuple(shape)}")
            dest[name] = tensors[key]
    return Checkpoint(model, params, OptimizerState(m, v, side["adam_step"]),
                      tensors["norm/mean"], tensors["norm/std"], side["iteration"], side["seed"],
                      side.get("train", {}), side.get("history", []))
