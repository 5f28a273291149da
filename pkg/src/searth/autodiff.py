"""Dense tensors with taped reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record a :class:`Node` holding the parents and a closure that maps
the output cotangent to parent cotangents. Nodes never reference their
outputs, so the tape is acyclic and CPython frees a discarded subgraph as
soon as the last tensor pointing into it goes away. The global
:class:`DiffGraph` counts nodes that are alive, which is the memory proxy
used to compare training strategies.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf

from .errors import NumericError, ShapeError

_DTYPES = {"float32": np.float32, "float64": np.float64}
_default_dtype = np.float64
_grad_enabled = True


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    _default_dtype = _resolve_dtype(dtype)


def _resolve_dtype(dtype):
    if isinstance(dtype, str):
        try:
            return _DTYPES[dtype]
        except KeyError:
            raise ValueError(f"unsupported precision {dtype!r}; use float32 or float64") from None
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported precision {dtype}")
    return dtype


@contextlib.contextmanager
def default_dtype(dtype):
    global _default_dtype
    prev = _default_dtype
    _default_dtype = _resolve_dtype(dtype)
    try:
        yield
    finally:
        _default_dtype = prev


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class DiffGraph:
    """Live/peak node gauges for the process-wide tape."""

    def __init__(self):
        self.live_node_count = 0
        self.peak_live_node_count = 0
        self.created = 0

    def reset_peak(self) -> None:
        self.peak_live_node_count = self.live_node_count

    def _acquire(self) -> None:
        self.created += 1
        self.live_node_count += 1
        if self.live_node_count > self.peak_live_node_count:
            self.peak_live_node_count = self.live_node_count

    def _release(self) -> None:
        self.live_node_count -= 1


graph = DiffGraph()
_node_ids = itertools.count(1)


class Node:
    __slots__ = ("id", "op", "parents", "backward_fn", "released")

    def __init__(self, op: str, parents: tuple, backward_fn: Callable):
        self.id = next(_node_ids)
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.released = False
        graph._acquire()

    def release(self) -> None:
        if not self.released:
            self.released = True
            self.parents = ()
            self.backward_fn = None
            graph._release()

    def __del__(self):
        try:
            self.release()
        except Exception:  # interpreter teardown
            pass


class Tensor:
    __slots__ = ("data", "requires_grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        target = _resolve_dtype(dtype) if dtype is not None else None
        if target is None and not np.issubdtype(arr.dtype, np.floating):
            target = _default_dtype
        if target is not None and arr.dtype != target:
            arr = arr.astype(target)
        if arr.ndim and 0 in arr.shape:
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def node_id(self) -> int | None:
        return None if self.node is None else self.node.id

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / other)
        raise TypeError("only division by a scalar is supported")

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __abs__(self):
        return absolute(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, np.ndarray) and np.issubdtype(x.dtype, np.floating):
        return Tensor(x)
    return Tensor(np.asarray(x, dtype=_default_dtype))


def detach(x: Tensor) -> Tensor:
    """Copy of ``x`` with no tape linkage; gradients stop here."""
    out = Tensor(x.data.copy())
    out.name = x.name
    return out


def _result(data: np.ndarray, op: str, parents: tuple, backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.node = None
    out.requires_grad = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(op, parents, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, "mul", (a, b), backward)


def scale(x: Tensor, s: float) -> Tensor:
    x = as_tensor(x)
    s = x.data.dtype.type(s)
    return _result(x.data * s, "scale", (x,), lambda g: (g * s,))


def absolute(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return _result(np.abs(x.data), "abs", (x,), lambda g: (g * sign,))


_SQRT_HALF = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _SQRT_HALF))

    def backward(g):
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        return (g * (cdf + xd * pdf),)

    return _result(xd * cdf, "gelu", (x,), backward)


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes, batch axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(ad @ bd, "matmul", (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis; ``weight`` is ``[in, out]``."""
    if x.shape[-1] != weight.shape[0] or weight.ndim != 2:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    xd, wd = x.data, weight.data
    lead = xd.shape[:-1]
    flat_x = xd.reshape(-1, xd.shape[-1])
    out = flat_x @ wd
    if bias is not None:
        if bias.shape != (wd.shape[1],):
            raise ShapeError(f"linear: bias shape {bias.shape} does not match {wd.shape}")
        out += bias.data
    out = out.reshape(lead + (wd.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = flat_x.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, "linear", parents, backward)


# ---------------------------------------------------------------- normalisation

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, "softmax", (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm: parameter shapes {gain.shape}, {bias.shape} for input {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    red = tuple(range(xd.ndim - 1))

    def backward(g):
        gxhat = g * gd
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return _result(xhat * gd + bias.data, "layer_norm", (x, gain, bias), backward)


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {shape}") from None
    return _result(out, "reshape", (x,), lambda g: (g.reshape(src),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permute: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _result(out, "permute", (x,), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, "concat", tuple(tensors), backward)


def split(x: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    """Split into ``sections`` equal parts along ``axis``."""
    n = x.shape[axis]
    if n % sections:
        raise ShapeError(f"split: extent {n} of shape {x.shape} not divisible by {sections}")
    step = n // sections
    parts = []
    for k in range(sections):
        index = [slice(None)] * x.ndim
        index[axis] = slice(k * step, (k + 1) * step)
        parts.append(_slice(x, tuple(index)))
    return parts


def _slice(x: Tensor, index: tuple) -> Tensor:
    src_shape, dtype = x.shape, x.dtype

    def backward(g):
        full = np.zeros(src_shape, dtype=dtype)
        full[index] = g
        return (full,)

    return _result(np.ascontiguousarray(x.data[index]), "slice", (x,), backward)


def take(x: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather ``x`` along ``axis`` with a 1-D integer index array."""
    indices = np.asarray(indices)
    if indices.ndim != 1:
        raise ShapeError(f"take: indices must be 1-D, got shape {indices.shape}")
    src_shape, dtype = x.shape, x.dtype
    axis = axis % x.ndim

    def backward(g):
        full = np.zeros(src_shape, dtype=dtype)
        np.add.at(np.moveaxis(full, axis, 0), indices, np.moveaxis(g, axis, 0))
        return (full,)

    return _result(np.take(x.data, indices, axis=axis), "take", (x,), backward)


def roll(x: Tensor, shift: int, axis: int) -> Tensor:
    """Cyclic shift: ``out[..., (j + shift) % n, ...] = x[..., j, ...]``."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"roll: axis {axis} out of range for shape {x.shape}")
    shift = int(shift) % x.shape[axis]
    if shift == 0:
        return _result(x.data.copy(), "roll", (x,), lambda g: (g,))
    return _result(np.roll(x.data, shift, axis=axis), "roll", (x,),
                   lambda g: (np.roll(g, -shift, axis=axis),))


# ---------------------------------------------------------------- reductions

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src_shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src_shape).copy(),)

    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))
    return _result(out, "sum", (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(tsum(x, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------- convolutions

def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None, stride) -> Tensor:
    """Unpadded strided 3-D convolution.

    ``x`` is ``[B, Cin, D, H, W]``, ``weight`` is ``[Cout, Cin, kd, kh, kw]``.
    """
    if x.ndim != 5 or weight.ndim != 5 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv3d: incompatible shapes {x.shape} and {weight.shape}")
    stride = tuple(stride)
    k = weight.shape[2:]
    spatial = x.shape[2:]
    if any(n < kk for n, kk in zip(spatial, k)):
        raise ShapeError(f"conv3d: kernel {k} larger than input {spatial}")
    out_sp = tuple((n - kk) // s + 1 for n, kk, s in zip(spatial, k, stride))
    xd, wd = x.data, weight.data
    if k == stride and all(n % kk == 0 for n, kk in zip(spatial, k)):
        return _patch_conv3d(x, weight, bias, out_sp)
    win = np.lib.stride_tricks.sliding_window_view(xd, k, axis=(2, 3, 4))
    win = win[:, :, ::stride[0], ::stride[1], ::stride[2]]
    # win: [B, Cin, oD, oH, oW, kd, kh, kw]
    out = np.einsum("bcdhwxyz,ocxyz->bodhw", win, wd, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None, None]

    def backward(g):
        gw = np.einsum("bodhw,bcdhwxyz->ocxyz", g, win, optimize=True)
        gx = np.zeros_like(xd)
        for a in range(k[0]):
            for b in range(k[1]):
                for c in range(k[2]):
                    contrib = np.einsum("bodhw,oc->bcdhw", g, wd[:, :, a, b, c])
                    gx[:, :,
                       a:a + stride[0] * out_sp[0]:stride[0],
                       b:b + stride[1] * out_sp[1]:stride[1],
                       c:c + stride[2] * out_sp[2]:stride[2]] += contrib
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3, 4))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, "conv3d", parents, backward)


def _patch_conv3d(x, weight, bias, out_sp):
    # kernel == stride: non-overlapping patches, one matrix product
    B, cin = x.shape[:2]
    cout, _, kd, kh, kw = weight.shape
    oD, oH, oW = out_sp
    patches = x.data.reshape(B, cin, oD, kd, oH, kh, oW, kw).transpose(0, 2, 4, 6, 1, 3, 5, 7)
    patches = patches.reshape(B * oD * oH * oW, cin * kd * kh * kw)
    wmat = weight.data.reshape(cout, -1)
    out = patches @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(B, oD, oH, oW, cout).transpose(0, 4, 1, 2, 3)
    xshape = x.shape

    def backward(g):
        g2 = g.transpose(0, 2, 3, 4, 1).reshape(-1, cout)
        gw = (g2.T @ patches).reshape(weight.shape)
        gp = (g2 @ wmat).reshape(B, oD, oH, oW, cin, kd, kh, kw)
        gx = gp.transpose(0, 4, 1, 5, 2, 6, 3, 7).reshape(xshape)
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(np.ascontiguousarray(out), "conv3d", parents, backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride) -> Tensor:
    """Unpadded strided 2-D transposed convolution.

    ``x`` is ``[B, Cin, H, W]``, ``weight`` is ``[Cin, Cout, kh, kw]``; the
    output is ``[B, Cout, (H-1)*sh + kh, (W-1)*sw + kw]``.
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"conv_transpose2d: incompatible shapes {x.shape} and {weight.shape}")
    sh, sw = stride
    B, _, H, W = x.shape
    cout, kh, kw = weight.shape[1:]
    xd, wd = x.data, weight.data
    if (kh, kw) == (sh, sw):
        return _patch_conv_transpose2d(x, weight, bias)
    out = np.zeros((B, cout, (H - 1) * sh + kh, (W - 1) * sw + kw), dtype=xd.dtype)
    for a in range(kh):
        for b in range(kw):
            out[:, :, a:a + sh * H:sh, b:b + sw * W:sw] += np.einsum("bchw,co->bohw", xd, wd[:, :, a, b])
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        gx = np.zeros_like(xd)
        gw = np.zeros_like(wd)
        for a in range(kh):
            for b in range(kw):
                ga = g[:, :, a:a + sh * H:sh, b:b + sw * W:sw]
                gx += np.einsum("bohw,co->bchw", ga, wd[:, :, a, b])
                gw[:, :, a, b] = np.einsum("bchw,bohw->co", xd, ga)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, "conv_transpose2d", parents, backward)


def _patch_conv_transpose2d(x, weight, bias):
    # kernel == stride: every input pixel paints its own output patch
    B, cin, H, W = x.shape
    cout, kh, kw = weight.shape[1:]
    pix = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    wmat = weight.data.reshape(cin, -1)
    out = (pix @ wmat).reshape(B, H, W, cout, kh, kw).transpose(0, 3, 1, 4, 2, 5)
    out = out.reshape(B, cout, H * kh, W * kw)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gp = g.reshape(B, cout, H, kh, W, kw).transpose(0, 2, 4, 1, 3, 5).reshape(-1, cout * kh * kw)
        gx = (gp @ wmat.T).reshape(B, H, W, cin).transpose(0, 3, 1, 2)
        gw = (pix.T @ gp).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(np.ascontiguousarray(out), "conv_transpose2d", parents, backward)


# ---------------------------------------------------------------- backward

def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    order.reverse()
    return order


def _backprop(loss: Tensor, release: bool = True) -> dict[int, np.ndarray]:
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    found = {}
    for t in order:
        g = grads.get(id(t))
        node = t.node
        if node is None or node.released:
            found[id(t)] = g
            continue
        if g is not None:
            parent_grads = node.backward_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.dtype != p.data.dtype:
                    pg = pg.astype(p.data.dtype)
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        found[id(t)] = g
        if release:
            node.release()
    return found


def grad(loss: Tensor, inputs: Sequence[Tensor], release: bool = True) -> list[np.ndarray]:
    """d(loss)/d(input) for each input; zeros where no path exists."""
    found = _backprop(loss, release=release)
    out = []
    for x in inputs:
        g = found.get(id(x))
        out.append(np.zeros_like(x.data) if g is None else g)
    return out


def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss keyed by parameter name.

    With ``params`` given, every listed name is returned (zeros when the loss
    does not depend on it). Otherwise all named leaves reached are returned.
    The recorded graph is released afterwards.
    """
    if params is not None:
        names = list(params)
        return dict(zip(names, grad(loss, [params[n] for n in names])))
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    order = _topo_order(loss)
    named = [t for t in order if t.node is None and t.name is not None]
    return dict(zip([t.name for t in named], grad(loss, named)))


def release_graph(root: Tensor) -> None:
    """Drop the tape behind ``root`` without computing gradients."""
    for t in _topo_order(root):
        if t.node is not None:
            t.node.release()


# ---------------------------------------------------------------- checking

def grad_check(fn: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
               coords: Iterable[int] | None = None) -> float:
    """Max relative error between the taped gradient and central differences.

    ``coords`` restricts the comparison to the listed flat indices of ``x``.
    Coordinates whose disagreement is at the roundoff level of the central
    difference count as exact.
    """
    if x.dtype != np.float64:
        raise NumericError("grad_check requires 64-bit precision")
    base = x.data.copy()
    leaf = Tensor(base.copy(), requires_grad=True)
    out = fn(leaf)
    if out.size != 1:
        raise ShapeError(f"grad_check: function must be scalar-valued, got shape {out.shape}")
    if not np.all(np.isfinite(out.data)):
        raise NumericError("grad_check: non-finite function value")
    (analytic,) = grad(out, [leaf])
    analytic = analytic.reshape(-1)
    indices = range(base.size) if coords is None else coords
    flat = base.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn(Tensor(base.copy())).data)
            flat[i] = orig - eps
            fm = float(fn(Tensor(base.copy())).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("grad_check: non-finite function value")
            numeric = (fp - fm) / (2 * eps)
            a = float(analytic[i])
            # differences within a few ulps of f are below what the stencil resolves
            noise = 2 * np.finfo(np.float64).eps * max(abs(fp), abs(fm)) / (2 * eps)
            if abs(a - numeric) <= noise:
                continue
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
