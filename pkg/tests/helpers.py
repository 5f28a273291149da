"""Shared fixtures-as-functions: gradient-check cases and reference oracles."""

from __future__ import annotations

import numpy as np

from searth import autodiff as ad
from searth.autodiff import Tensor


def _rng(seed=0):
    return np.random.default_rng(seed)


def _project(out: Tensor, seed: int = 99) -> Tensor:
    # random linear functional so no gradient vanishes by symmetry
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return ad.tsum(ad.mul(out, r))


def primitive_cases() -> list[tuple[str, callable, np.ndarray]]:
    """``(name, fn, x0)``: ``fn`` maps a float64 leaf to a scalar."""
    g = _rng(1)
    A = g.standard_normal((3, 1, 4))
    B = g.standard_normal((2, 4))
    M1 = g.standard_normal((2, 3, 4))
    M2 = g.standard_normal((2, 4, 5))
    W = g.standard_normal((4, 6))
    bias = g.standard_normal(6)
    gain = 1 + 0.1 * g.standard_normal(4)
    mask = np.where(g.random((3, 4)) < 0.3, -1e9, 0.0)
    x3 = g.standard_normal((1, 2, 4, 6, 6))
    w3 = g.standard_normal((3, 2, 2, 3, 3))
    w3p = g.standard_normal((3, 2, 2, 2, 2))
    b3 = g.standard_normal(3)
    x2 = g.standard_normal((1, 3, 3, 4))
    wt = g.standard_normal((3, 2, 3, 2))
    wtp = g.standard_normal((3, 2, 2, 2))
    b2 = g.standard_normal(2)
    away = g.uniform(0.3, 2.0, (3, 4)) * g.choice([-1, 1], (3, 4))

    T = Tensor
    return [
        ("add.lhs", lambda x: _project(ad.add(x, T(B))), A),
        ("add.rhs_broadcast", lambda x: _project(ad.add(T(A), x)), B),
        ("sub.lhs", lambda x: _project(ad.sub(x, T(B))), A),
        ("sub.rhs", lambda x: _project(ad.sub(T(A), x)), B),
        ("mul.lhs", lambda x: _project(ad.mul(x, T(B))), A),
        ("mul.rhs", lambda x: _project(ad.mul(T(A), x)), B),
        ("scale", lambda x: _project(ad.scale(x, -1.7)), B),
        ("absolute", lambda x: _project(ad.absolute(x)), away),
        ("gelu", lambda x: _project(ad.gelu(x)), 2 * M1),
        ("matmul.lhs", lambda x: _project(ad.matmul(x, T(M2))), M1),
        ("matmul.rhs", lambda x: _project(ad.matmul(T(M1), x)), M2),
        ("linear.x", lambda x: _project(ad.linear(x, T(W), T(bias))), M1),
        ("linear.weight", lambda x: _project(ad.linear(T(M1), x, T(bias))), W),
        ("linear.bias", lambda x: _project(ad.linear(T(M1), T(W), x)), bias),
        ("softmax", lambda x: _project(ad.softmax(x, axis=-1)), M1),
        ("mask_broadcast", lambda x: _project(ad.softmax(ad.add(x, mask[None]), axis=-1)), M1),
        ("layer_norm.x", lambda x: _project(ad.layer_norm(x, T(gain), T(gain - 1))), M1),
        ("layer_norm.gain", lambda x: _project(ad.layer_norm(T(M1), x, T(gain - 1))), gain),
        ("layer_norm.bias", lambda x: _project(ad.layer_norm(T(M1), T(gain), x)), gain - 1),
        ("reshape", lambda x: _project(ad.reshape(x, (4, 6))), M1),
        ("permute", lambda x: _project(ad.permute(x, (2, 0, 1))), M1),
        ("concat", lambda x: _project(ad.concat([x, T(M1), x], axis=1)), M1),
        ("split", lambda x: _project(ad.mul(*ad.split(x, 2, axis=2))), M1),
        ("take", lambda x: _project(ad.take(x, np.array([2, 0, 2, 1]), axis=0)), W),
        ("roll.lat", lambda x: _project(ad.roll(x, -2, axis=1)), M1),
        ("roll.lon", lambda x: _project(ad.roll(x, 3, axis=2)), M1),
        ("sum.axis", lambda x: _project(ad.tsum(x, axis=1)), M1),
        ("mean", lambda x: ad.mean(ad.mul(x, x)), M1),
        ("conv3d.x", lambda x: _project(ad.conv3d(x, T(w3), T(b3), (2, 1, 2))), x3),
        ("conv3d.weight", lambda x: _project(ad.conv3d(T(x3), x, T(b3), (2, 1, 2))), w3),
        ("conv3d.bias", lambda x: _project(ad.conv3d(T(x3), T(w3), x, (2, 1, 2))), b3),
        ("conv3d_patch.x", lambda x: _project(ad.conv3d(x, T(w3p), T(b3), (2, 2, 2))), x3),
        ("conv3d_patch.weight", lambda x: _project(ad.conv3d(T(x3), x, T(b3), (2, 2, 2))), w3p),
        ("conv_transpose2d.x", lambda x: _project(ad.conv_transpose2d(x, T(wt), T(b2), (2, 2))), x2),
        ("conv_transpose2d.weight", lambda x: _project(ad.conv_transpose2d(T(x2), x, T(b2), (2, 2))), wt),
        ("conv_transpose2d.bias", lambda x: _project(ad.conv_transpose2d(T(x2), T(wt), x, (2, 2))), b2),
        ("conv_transpose2d_patch.x", lambda x: _project(ad.conv_transpose2d(x, T(wtp), T(b2), (2, 2))), x2),
        ("conv_transpose2d_patch.weight",
         lambda x: _project(ad.conv_transpose2d(T(x2), x, T(b2), (2, 2))), wtp),
    ]


def reference_window_attention(x, qkv_w, qkv_b, proj_w, proj_b, rel_bias, n_heads, window, mask):
    """Scalar-loop masked window attention on ``[H, W, C]`` (single sample)."""
    H, W, C = x.shape
    wh, ww = window
    hd = C // n_heads
    out = np.zeros_like(x)
    nww = W // ww
    for win in range((H // wh) * nww):
        r0, c0 = (win // nww) * wh, (win % nww) * ww
        toks = [(r0 + a // ww, c0 + a % ww) for a in range(wh * ww)]
        T = len(toks)
        feats = np.array([x[i, j] for i, j in toks])
        qkv = feats @ qkv_w + qkv_b
        merged = np.zeros((T, C))
        for h in range(n_heads):
            q = qkv[:, h * hd:(h + 1) * hd]
            k = qkv[:, C + h * hd:C + (h + 1) * hd]
            v = qkv[:, 2 * C + h * hd:2 * C + (h + 1) * hd]
            for a in range(T):
                logits = np.empty(T)
                for b in range(T):
                    dy = (a // ww) - (b // ww) + wh - 1
                    dx = (a % ww) - (b % ww) + ww - 1
                    s = sum(q[a, e] * k[b, e] for e in range(hd)) / np.sqrt(hd)
                    s += rel_bias[dy * (2 * ww - 1) + dx, h]
                    if mask is not None:
                        s += mask[win, a, b]
                    logits[b] = s
                p = np.exp(logits - logits.max())
                p /= p.sum()
                for e in range(hd):
                    merged[a, h * hd + e] = sum(p[b] * v[b, e] for b in range(T))
        proj = merged @ proj_w + proj_b
        for a, (i, j) in enumerate(toks):
            out[i, j] = proj[a]
    return out


def random_msa_params(rng, dim, n_heads, window, prefix="attn"):
    wh, ww = window
    return {
        f"{prefix}.qkv.weight": rng.standard_normal((dim, 3 * dim)) / np.sqrt(dim),
        f"{prefix}.qkv.bias": 0.1 * rng.standard_normal(3 * dim),
        f"{prefix}.proj.weight": rng.standard_normal((dim, dim)) / np.sqrt(dim),
        f"{prefix}.proj.bias": 0.1 * rng.standard_normal(dim),
        f"{prefix}.rel_bias": rng.standard_normal(((2 * wh - 1) * (2 * ww - 1), n_heads)),
    }
