"""Encoder-core-decoder forecaster built from Searth block pairs.

One forward step maps two consecutive normalised states ``[B, C, H, W]`` to
the next one. The network predicts a tendency that is added to the most
recent input state, so a network with all-zero weights is a persistence
forecast.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import block_pair_shapes, searth_block_pair
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .rng import stream


@dataclass
class ModelConfig:
    n_channels: int = 4
    n_lat: int = 16
    n_lon: int = 32
    embed_dim: int = 32
    window: tuple[int, int] = (2, 2)
    heads: tuple[int, int, int] = (2, 4, 2)
    encoder_blocks: int = 2
    core_blocks: int = 4
    decoder_blocks: int = 2
    droppath: float = 0.2
    mask_mode: str = "earth"
    precision: str = "float32"
    mlp_ratio: int = 4
    unembed_dim: int | None = None
    shift: tuple[int, int] | None = None

    def __post_init__(self):
        self.window = tuple(self.window)
        self.heads = tuple(self.heads)
        if self.shift is not None:
            self.shift = tuple(self.shift)
        self.validate()

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def paper(cls, **overrides) -> "ModelConfig":
        base = dict(n_channels=69, n_lat=180, n_lon=360, embed_dim=768, window=(9, 9),
                    heads=(8, 16, 8), encoder_blocks=6, core_blocks=20, decoder_blocks=6,
                    droppath=0.2, precision="float32")
        base.update(overrides)
        return cls(**base)

    @property
    def shift_amount(self) -> tuple[int, int]:
        if self.shift is not None:
            return self.shift
        return (self.window[0] // 2, self.window[1] // 2)

    @property
    def d_unembed(self) -> int:
        return self.unembed_dim if self.unembed_dim is not None else max(1, self.embed_dim // 2)

    @property
    def latent_shape(self) -> tuple[int, int]:
        return self.n_lat // 2, self.n_lon // 2

    @property
    def core_shape(self) -> tuple[int, int]:
        return self.n_lat // 4, self.n_lon // 4

    def validate(self) -> None:
        wh, ww = self.window
        if min(self.n_channels, self.n_lat, self.n_lon, self.embed_dim, wh, ww) <= 0:
            raise ConfigError("extents, embed_dim and window must be positive")
        if self.n_lat % 4 or self.n_lon % 4:
            raise ConfigError(f"grid ({self.n_lat}, {self.n_lon}) must be divisible by 4")
        for name, (h, w) in (("latent", self.latent_shape), ("core", self.core_shape)):
            if h % wh or w % ww:
                raise ConfigError(f"window {self.window} does not tile the {name} grid ({h}, {w})")
        for name in ("encoder_blocks", "core_blocks", "decoder_blocks"):
            n = getattr(self, name)
            if n < 0 or n % 2:
                raise ConfigError(f"{name} must be a non-negative even count, got {n}")
        if len(self.heads) != 3:
            raise ConfigError("heads must list encoder, core and decoder head counts")
        dims = (self.embed_dim, 2 * self.embed_dim, self.embed_dim)
        for stage, nh, dim in zip(("encoder", "core", "decoder"), self.heads, dims):
            if nh <= 0 or dim % nh:
                raise ConfigError(f"{stage} heads {nh} do not divide dimension {dim}")
        sh, sw = self.shift_amount
        if not (0 <= sh < wh and 0 <= sw < ww):
            raise ConfigError(f"shift {self.shift_amount} must be smaller than window {self.window}")
        if not 0 <= self.droppath < 1:
            raise ConfigError(f"droppath must be in [0, 1), got {self.droppath}")
        if self.mask_mode not in ("earth", "planar"):
            raise ConfigError(f"mask_mode must be earth or planar, got {self.mask_mode!r}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _stages(cfg: ModelConfig):
    d = cfg.embed_dim
    return (("encoder", cfg.encoder_blocks // 2, d, cfg.heads[0]),
            ("core", cfg.core_blocks // 2, 2 * d, cfg.heads[1]),
            ("decoder", cfg.decoder_blocks // 2, d, cfg.heads[2]))


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Ordered name -> shape table of every learnable tensor."""
    C, d, du = cfg.n_channels, cfg.embed_dim, cfg.d_unembed
    shapes = {"embed.weight": (d, C, 2, 2, 2), "embed.bias": (d,)}
    for stage, pairs, dim, nh in _stages(cfg):
        for i in range(pairs):
            shapes.update(block_pair_shapes(f"{stage}.{i}", dim, nh, cfg.window, cfg.mlp_ratio))
        if stage == "encoder":
            shapes.update({"merge.weight": (4 * d, 2 * d), "merge.bias": (2 * d,)})
        elif stage == "core":
            shapes.update({"expand.weight": (2 * d, 4 * d), "expand.bias": (4 * d,)})
    shapes.update({
        "unembed.deconv.weight": (d, du, 2, 2),
        "unembed.deconv.bias": (du,),
        "unembed.fc.weight": (du, C),
        "unembed.fc.bias": (C,),
    })
    return shapes


def count_parameters(cfg: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def _init_array(name: str, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "gain":
        return np.ones(shape)
    if leaf == "bias":
        return np.zeros(shape)
    if leaf == "rel_bias":
        return np.clip(rng.normal(0.0, 0.02, shape), -0.04, 0.04)
    if name.startswith("embed."):
        fan_in = int(np.prod(shape[1:]))
        return rng.normal(0.0, fan_in ** -0.5, shape)
    if name == "unembed.deconv.weight":
        return rng.normal(0.0, shape[0] ** -0.5, shape)
    return np.clip(rng.normal(0.0, 0.02, shape), -0.04, 0.04)


def init_params(cfg: ModelConfig, seed: int = 0, names=None) -> dict[str, Tensor]:
    """Fresh parameters; ``names`` limits allocation to a subset.

    Each tensor draws from its own named stream, so any subset is identical
    to the corresponding entries of the full set.
    """
    dtype = cfg.precision
    out = {}
    for name, shape in param_shapes(cfg).items():
        if names is not None and name not in names:
            continue
        arr = _init_array(name, shape, stream(seed, "init", *name.encode()))
        out[name] = Tensor(arr, requires_grad=True, name=name, dtype=dtype)
    return out


def zero_params(cfg: ModelConfig) -> dict[str, Tensor]:
    """All weights zero, layer-norm gains one."""
    out = {}
    for name, shape in param_shapes(cfg).items():
        fill = np.ones(shape) if name.endswith(".gain") else np.zeros(shape)
        out[name] = Tensor(fill, requires_grad=True, name=name, dtype=cfg.precision)
    return out


def drop_path_schedule(cfg: ModelConfig) -> list[float]:
    """Stochastic-depth rate per sub-block, rising linearly to ``cfg.droppath``."""
    n = cfg.encoder_blocks + cfg.core_blocks + cfg.decoder_blocks
    if n <= 1:
        return [cfg.droppath] * n
    return [cfg.droppath * i / (n - 1) for i in range(n)]


def embed(params, x_prev: Tensor, x_curr: Tensor) -> Tensor:
    """Two states ``[B, C, H, W]`` to latent tokens ``[B, H/2, W/2, d]``."""
    if x_prev.shape != x_curr.shape or x_prev.ndim != 4:
        raise ShapeError(f"embed: state shapes {x_prev.shape} and {x_curr.shape} must match as [B, C, H, W]")
    B, C, H, W = x_curr.shape
    w = params["embed.weight"]
    if w.shape[1] != C:
        raise ShapeError(f"embed: {C} input channels, weights expect {w.shape[1]}")
    pair = ad.concat([x_prev.reshape(B, C, 1, H, W), x_curr.reshape(B, C, 1, H, W)], axis=2)
    z = ad.conv3d(pair, w, params["embed.bias"], (2, 2, 2))
    d = w.shape[0]
    return z.reshape(B, d, H // 2, W // 2).permute(0, 2, 3, 1)


def patch_merge(params, x: Tensor) -> Tensor:
    """``[B, h, w, d]`` to ``[B, h/2, w/2, 2d]`` via a learned map of each 2x2 patch."""
    B, h, w, d = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"patch_merge: odd extents ({h}, {w})")
    t = x.reshape(B, h // 2, 2, w // 2, 2, d).permute(0, 1, 3, 2, 4, 5).reshape(B, h // 2, w // 2, 4 * d)
    return ad.linear(t, params["merge.weight"], params["merge.bias"])


def patch_expand(params, x: Tensor) -> Tensor:
    """``[B, h, w, 2d]`` to ``[B, 2h, 2w, d]``."""
    B, h, w, d2 = x.shape
    if d2 % 2:
        raise ShapeError(f"patch_expand: odd channel count {d2}")
    d = d2 // 2
    t = ad.linear(x, params["expand.weight"], params["expand.bias"])
    return t.reshape(B, h, w, 2, 2, d).permute(0, 1, 3, 2, 4, 5).reshape(B, 2 * h, 2 * w, d)


def unembed(params, x: Tensor) -> Tensor:
    """Latent ``[B, H/2, W/2, d]`` to tendency ``[B, C, H, W]``."""
    w = params["unembed.deconv.weight"]
    if x.ndim != 4 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"unembed: latent {x.shape} does not match deconv weight {w.shape}")
    z = ad.conv_transpose2d(x.permute(0, 3, 1, 2), w, params["unembed.deconv.bias"], (2, 2))
    z = ad.linear(z.permute(0, 2, 3, 1), params["unembed.fc.weight"], params["unembed.fc.bias"])
    return z.permute(0, 3, 1, 2)


def forward_step(params, cfg: ModelConfig, x_prev: Tensor, x_curr: Tensor,
                 rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    """Next normalised state from the previous two."""
    B, C, H, W = x_curr.shape
    if (C, H, W) != (cfg.n_channels, cfg.n_lat, cfg.n_lon):
        raise ShapeError(f"forward_step: state shape {(C, H, W)} does not match config "
                         f"{(cfg.n_channels, cfg.n_lat, cfg.n_lon)}")
    if training and cfg.droppath > 0 and rng is None:
        raise ValueError("forward_step: training with drop path needs an rng")
    rates = iter(drop_path_schedule(cfg))
    shift = cfg.shift_amount

    def run(stage, pairs, h, nh):
        for i in range(pairs):
            h = searth_block_pair(h, params, f"{stage}.{i}", nh, cfg.window, shift, cfg.mask_mode,
                                  (next(rates), next(rates)), rng, training)
        return h

    (enc, ne, _, he), (core, nc, _, hc), (dec, nd, _, hd) = _stages(cfg)
    h = run(enc, ne, embed(params, x_prev, x_curr), he)
    skip = h
    h = run(core, nc, patch_merge(params, h), hc)
    h = patch_expand(params, h) + skip
    h = run(dec, nd, h, hd)
    return x_curr + unembed(params, h)
