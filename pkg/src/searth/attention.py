"""Windowed multi-head self-attention and the paired Searth transformer block.

Feature maps are ``[B, H, W, C]`` tensors. Parameters live in a flat
``dict[str, Tensor]`` and each function reads the entries under a name
prefix, so a whole network is one namespace.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError
from .geometry import earth_attention_mask

Params = dict


@lru_cache(maxsize=None)
def relative_position_index(win_h: int, win_w: int) -> np.ndarray:
    """Flat ``[T*T]`` index into the ``[(2wh-1)(2ww-1), heads]`` bias table."""
    coords = np.stack(np.meshgrid(np.arange(win_h), np.arange(win_w), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    dy = rel[0] + win_h - 1
    dx = rel[1] + win_w - 1
    return (dy * (2 * win_w - 1) + dx).reshape(-1)


@lru_cache(maxsize=None)
def cached_mask(H, W, win_h, win_w, shift_h, shift_w, mode) -> np.ndarray:
    m = earth_attention_mask(H, W, win_h, win_w, shift_h, shift_w, mode)
    m.setflags(write=False)
    return m


def msa_shapes(prefix: str, dim: int, n_heads: int, window: tuple[int, int]) -> dict:
    wh, ww = window
    return {
        f"{prefix}.qkv.weight": (dim, 3 * dim),
        f"{prefix}.qkv.bias": (3 * dim,),
        f"{prefix}.proj.weight": (dim, dim),
        f"{prefix}.proj.bias": (dim,),
        f"{prefix}.rel_bias": ((2 * wh - 1) * (2 * ww - 1), n_heads),
    }


def block_shapes(prefix: str, dim: int, n_heads: int, window: tuple[int, int], mlp_ratio: int = 4) -> dict:
    hidden = mlp_ratio * dim
    shapes = {f"{prefix}.norm1.gain": (dim,), f"{prefix}.norm1.bias": (dim,)}
    shapes.update(msa_shapes(f"{prefix}.attn", dim, n_heads, window))
    shapes.update({
        f"{prefix}.norm2.gain": (dim,),
        f"{prefix}.norm2.bias": (dim,),
        f"{prefix}.mlp.fc1.weight": (dim, hidden),
        f"{prefix}.mlp.fc1.bias": (hidden,),
        f"{prefix}.mlp.fc2.weight": (hidden, dim),
        f"{prefix}.mlp.fc2.bias": (dim,),
    })
    return shapes


def block_pair_shapes(prefix: str, dim: int, n_heads: int, window: tuple[int, int], mlp_ratio: int = 4) -> dict:
    shapes = block_shapes(f"{prefix}.emsa", dim, n_heads, window, mlp_ratio)
    shapes.update(block_shapes(f"{prefix}.semsa", dim, n_heads, window, mlp_ratio))
    return shapes


def window_msa(x: Tensor, p: Params, prefix: str, n_heads: int, window: tuple[int, int],
               mask: np.ndarray | None = None) -> Tensor:
    """Multi-head attention inside each non-overlapping window of ``x``.

    ``mask`` is the additive ``[num_windows, T, T]`` array from
    :func:`earth_attention_mask`, or ``None`` for unmasked windows.
    """
    B, H, W, C = x.shape
    wh, ww = window
    if H % wh or W % ww:
        raise ShapeError(f"window_msa: window {window} does not tile ({H}, {W})")
    if C % n_heads:
        raise ShapeError(f"window_msa: {n_heads} heads do not divide {C} channels")
    nh, nw_ = H // wh, W // ww
    nw, T, hd = nh * nw_, wh * ww, C // n_heads
    if mask is not None and mask.shape != (nw, T, T):
        raise ShapeError(f"window_msa: mask {mask.shape} does not match {nw} windows of {T} tokens")

    t = x.reshape(B, nh, wh, nw_, ww, C).permute(0, 1, 3, 2, 4, 5).reshape(B * nw, T, C)
    qkv = ad.linear(t, p[f"{prefix}.qkv.weight"], p[f"{prefix}.qkv.bias"])
    qkv = qkv.reshape(B * nw, T, 3, n_heads, hd).permute(2, 0, 3, 1, 4)
    q, k, v = (part.reshape(B * nw, n_heads, T, hd) for part in ad.split(qkv, 3, axis=0))

    scores = ad.matmul(q * (hd ** -0.5), k.permute(0, 1, 3, 2))
    table = p[f"{prefix}.rel_bias"]
    bias = ad.take(table, relative_position_index(wh, ww), axis=0).reshape(T, T, n_heads).permute(2, 0, 1)
    scores = scores + bias
    if mask is not None:
        scores = scores.reshape(B, nw, n_heads, T, T) + mask.astype(x.dtype)[None, :, None]
        scores = scores.reshape(B * nw, n_heads, T, T)
    attn = ad.softmax(scores, axis=-1)
    out = ad.matmul(attn, v).permute(0, 2, 1, 3).reshape(B * nw, T, C)
    out = ad.linear(out, p[f"{prefix}.proj.weight"], p[f"{prefix}.proj.bias"])
    return out.reshape(B, nh, nw_, wh, ww, C).permute(0, 1, 3, 2, 4, 5).reshape(B, H, W, C)


def drop_path(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Per-sample stochastic depth on a residual branch."""
    if not 0 <= rate < 1:
        raise ValueError(f"drop path rate must be in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    keep = rng.random(x.shape[0]) >= rate
    scale = keep.astype(x.dtype) / (1.0 - rate)
    return ad.mul(x, scale.reshape((-1,) + (1,) * (x.ndim - 1)))


def mlp(x: Tensor, p: Params, prefix: str) -> Tensor:
    h = ad.gelu(ad.linear(x, p[f"{prefix}.fc1.weight"], p[f"{prefix}.fc1.bias"]))
    return ad.linear(h, p[f"{prefix}.fc2.weight"], p[f"{prefix}.fc2.bias"])


def transformer_block(x: Tensor, p: Params, prefix: str, n_heads: int, window: tuple[int, int],
                      shift: tuple[int, int] = (0, 0), mode: str = "earth", drop_rate: float = 0.0,
                      rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    """Pre-norm attention + MLP sub-block; shifted when ``shift`` is non-zero."""
    _, H, W, _ = x.shape
    sh, sw = shift
    h = ad.layer_norm(x, p[f"{prefix}.norm1.gain"], p[f"{prefix}.norm1.bias"])
    if sh or sw:
        h = ad.roll(ad.roll(h, -sh, axis=1), -sw, axis=2)
        mask = cached_mask(H, W, window[0], window[1], sh, sw, mode)
        h = window_msa(h, p, f"{prefix}.attn", n_heads, window, mask)
        h = ad.roll(ad.roll(h, sh, axis=1), sw, axis=2)
    else:
        h = window_msa(h, p, f"{prefix}.attn", n_heads, window, None)
    x = x + drop_path(h, drop_rate, rng, training)
    h = mlp(ad.layer_norm(x, p[f"{prefix}.norm2.gain"], p[f"{prefix}.norm2.bias"]), p, f"{prefix}.mlp")
    return x + drop_path(h, drop_rate, rng, training)


def searth_block_pair(x: Tensor, p: Params, prefix: str, n_heads: int, window: tuple[int, int],
                      shift: tuple[int, int] | None = None, mode: str = "earth",
                      drop_rates: tuple[float, float] = (0.0, 0.0),
                      rng: np.random.Generator | None = None, training: bool = False) -> Tensor:
    """Unshifted window block followed by the shifted Earth-masked block."""
    if shift is None:
        shift = (window[0] // 2, window[1] // 2)
    x = transformer_block(x, p, f"{prefix}.emsa", n_heads, window, (0, 0), mode,
                          drop_rates[0], rng, training)
    return transformer_block(x, p, f"{prefix}.semsa", n_heads, window, shift, mode,
                             drop_rates[1], rng, training)
