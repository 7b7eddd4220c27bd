"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations are recorded only while a :class:`Tape` is active and at least one
input requires a gradient, so inference code pays no bookkeeping cost.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels

_state = threading.local()
_debug = False


def set_debug(enabled: bool) -> None:
    """Raise FloatingPointError whenever an op produces NaN or Inf."""
    global _debug
    _debug = bool(enabled)


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Record:
    __slots__ = ("inputs", "output", "backward", "tape")

    def __init__(self, inputs, output, backward, tape):
        self.inputs = inputs
        self.output = output
        self.backward = backward
        self.tape = tape


class Tape:
    """Ordered list of recorded operations.

    Use as a context manager; every differentiable op executed inside the
    block is appended in execution order, which is a topological order.
    """

    def __init__(self):
        self.records: list[Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - mismatched nesting
            stack.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, inputs, output, backward) -> None:
        rec = Record(inputs, output, backward, self)
        output._record = rec
        self.records.append(rec)

    def backward(self, loss: "Tensor", retain: bool = False) -> None:
        if loss.data.size != 1 or loss.data.ndim != 0:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        rec = loss._record
        if rec is None or rec.tape is not self:
            raise ValueError("loss was not produced on this tape")
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for r in reversed(self.records):
            g = pending.pop(id(r.output), None)
            if g is None:
                continue
            r.output.grad = g
            in_grads = r.backward(g)
            for inp, ig in zip(r.inputs, in_grads):
                if ig is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                if inp._record is None:
                    _accumulate(inp, ig)
                else:
                    key = id(inp)
                    prev = pending.get(key)
                    pending[key] = ig if prev is None else prev + ig
        if not retain:
            for r in self.records:
                r.output._record = None
            self.records.clear()


def _accumulate(t: "Tensor", g: np.ndarray) -> None:
    if g.shape != t.data.shape:
        g = np.broadcast_to(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def backward(loss: "Tensor") -> None:
    """Backpropagate from a scalar loss through the tape that recorded it."""
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._record is None:
        raise ValueError("loss is not on a tape (was it computed inside `with Tape():`?)")
    loss._record.tape.backward(loss)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_record", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._record: Record | None = None

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- operators ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return mean(self, axis, keepdims)


ArrayLike = "Tensor | np.ndarray | float"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(*xs) -> Tape | None:
    tape = active_tape()
    if tape is None:
        return None
    for x in xs:
        if isinstance(x, Tensor) and x.requires_grad:
            return tape
    return None


def _make(data: np.ndarray, inputs: Sequence, backward: Callable) -> Tensor:
    if _debug and not np.isfinite(data).all():
        raise FloatingPointError(f"non-finite values produced (shape {data.shape})")
    tape = _needs_grad(*inputs)
    out = Tensor(data, requires_grad=tape is not None)
    if tape is not None:
        tape.record(tuple(inputs), out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


# -- elementwise -------------------------------------------------------------
def add(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def bw(g):
        return _unbroadcast(g, ad.shape), _unbroadcast(g, bd.shape)

    return _make(ad + bd, (a, b), bw)


def sub(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def bw(g):
        return _unbroadcast(g, ad.shape), -_unbroadcast(g, bd.shape)

    return _make(ad - bd, (a, b), bw)


def mul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)

    return _make(ad / bd, (a, b), bw)


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data

    def bw(g):
        return (g * exponent * ad ** (exponent - 1),)

    return _make(ad**exponent, (a,), bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def silu(a: Tensor) -> Tensor:
    ad = a.data
    s = 0.5 * (1.0 + np.tanh(0.5 * ad))
    return _make(ad * s, (a,), lambda g: (g * (s * (1.0 + ad * (1.0 - s))),))


def relu(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.maximum(ad, 0.0), (a,), lambda g: (g * (ad > 0),))


# -- reductions and shape ------------------------------------------------
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([shape[i] for i in axes]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return _make(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a: Tensor, axes) -> Tensor:
    """Always materialised in C order: numpy reductions and matmul sum in a
    stride-dependent order, so equal values must also share a layout."""
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def getitem(a: Tensor, idx) -> Tensor:
    shape = a.shape

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in parts)

    def bw(g):
        out = np.zeros(shape)
        if basic:  # views never alias, so plain assignment is exact
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    datas = [_data(t) for t in tensors]
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate(datas, axis=axis), tuple(tensors), bw)


def upsample_nearest2d(a: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes."""
    out = a.data.repeat(factor, axis=-2).repeat(factor, axis=-1)
    shape = a.shape

    def bw(g):
        g = g.reshape(*shape[:-2], shape[-2], factor, shape[-1], factor)
        return (g.sum(axis=(-3, -1)),)

    return _make(out, (a,), bw)


# -- linear algebra ------------------------------------------------------
def matmul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if bd.ndim > 1 else np.multiply.outer(g, bd)
        gb = np.swapaxes(ad, -1, -2) @ g if ad.ndim > 1 else np.multiply.outer(ad, g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis; weight has shape (d_in, d_out)."""
    x = as_tensor(x)
    xd, wd = x.data, weight.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd
    if bias is not None:
        out += bias.data

    def bw(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make(out.reshape(*lead, wd.shape[1]), inputs, bw)


# -- convolutions ----------------------------------------------------------
def _check_conv(xd, wd, kind):
    if xd.ndim != wd.ndim:
        raise ValueError(f"{kind}: input rank {xd.ndim} does not match weight rank {wd.ndim}")
    if xd.shape[1] != wd.shape[1]:
        raise ValueError(
            f"{kind}: input channel axis (axis 1) has {xd.shape[1]} but weight in-channel axis (axis 1) has {wd.shape[1]}"
        )


def _conv_core(x, weight, bias, kh, kw, sh, sw, ph, pw):
    """Shared conv over (N, C, H, W) with kernel (kh, kw)."""
    xd, wd = np.ascontiguousarray(x.data), weight.data
    n, c, h, w = xd.shape
    c_out = wd.shape[0]
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv: spatial axes {h}x{w} too small for kernel {kh}x{kw} with padding {ph},{pw}")
    pointwise = kh == kw == 1 and sh == sw == 1 and ph == pw == 0
    if pointwise:
        cols = xd.transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        cols = kernels.im2col(xd, kh, kw, sh, sw, ph, pw, ho, wo)
    wm = wd.reshape(c_out, -1)
    out = cols @ wm.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2))

    def bw(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gw = (gm.T @ cols).reshape(wd.shape)
        gb = gm.sum(axis=0) if bias is not None else None
        gx = None
        if isinstance(x, Tensor) and x.requires_grad:
            gcols = gm @ wm
            if pointwise:
                gx = np.ascontiguousarray(gcols.reshape(n, h, w, c).transpose(0, 3, 1, 2))
            else:
                gx = kernels.col2im(np.ascontiguousarray(gcols), n, c, h, w, kh, kw, sh, sw, ph, pw, ho, wo)
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, inputs, bw)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int | None = None) -> Tensor:
    """Cross-correlation of (N, c_in, H, W) with weight (c_out, c_in, k, k).

    ``padding=None`` selects same-size padding ``(k - 1) // 2``.
    """
    x = as_tensor(x)
    xd, wd = x.data, weight.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ValueError(f"conv2d: expected 4-D input and weight, got input {xd.shape} and weight {wd.shape}")
    _check_conv(xd, wd, "conv2d")
    k = wd.shape[2]
    if wd.shape[3] != k:
        raise ValueError(f"conv2d: kernel axes 2 and 3 differ ({wd.shape[2]} vs {wd.shape[3]})")
    if padding is None:
        if k % 2 == 0:
            raise ValueError(f"conv2d: same padding needs an odd kernel, got k={k}")
        padding = (k - 1) // 2
    return _conv_core(x, weight, bias, k, k, stride, stride, padding, padding)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding: int | None = None) -> Tensor:
    """Cross-correlation along the last axis of (N, c_in, L); weight (c_out, c_in, k)."""
    x = as_tensor(x)
    xd, wd = x.data, weight.data
    if xd.ndim != 3 or wd.ndim != 3:
        raise ValueError(f"conv1d: expected 3-D input and weight, got input {xd.shape} and weight {wd.shape}")
    _check_conv(xd, wd, "conv1d")
    k = wd.shape[2]
    if padding is None:
        if k % 2 == 0:
            raise ValueError(f"conv1d: same padding needs an odd kernel, got k={k}")
        padding = (k - 1) // 2
    x4 = reshape(x, (xd.shape[0], xd.shape[1], 1, xd.shape[2]))
    w4 = reshape(weight, (wd.shape[0], wd.shape[1], 1, k))
    out = _conv_core(x4, w4, bias, 1, k, 1, 1, 0, padding)
    return reshape(out, (out.shape[0], out.shape[1], out.shape[3]))


# -- attention and normalisation -----------------------------------------------
def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention, softmax over the key axis.

    Shapes: q (N, n_q, d), k (N, n_k, d), v (N, n_k, d_v).
    """
    qd, kd, vd = _data(q), _data(k), _data(v)
    if kd.shape[-2] == 0:
        raise ValueError("attention: key axis has length zero")
    d = qd.shape[-1]
    if d == 0:
        raise ValueError("attention: feature dimension must be positive")
    scale = 1.0 / np.sqrt(d)
    s = (qd @ np.swapaxes(kd, -1, -2)) * scale
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    out = p @ vd

    def bw(g):
        gv = np.swapaxes(p, -1, -2) @ g
        gp = g @ np.swapaxes(vd, -1, -2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ kd
        gk = np.swapaxes(gs, -1, -2) @ qd
        return gq, gk, gv

    return _make(out, (q, k, v), bw)


def attention_weights(q, k) -> np.ndarray:
    """Softmax weights of :func:`attention` (no gradient), for inspection."""
    qd, kd = _data(q), _data(k)
    s = (qd @ np.swapaxes(kd, -1, -2)) / np.sqrt(qd.shape[-1])
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    return p / p.sum(axis=-1, keepdims=True)


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalise to zero mean / unit variance along ``axis`` then apply the affine.

    ``gamma`` and ``beta`` are 1-D with the length of ``axis``.
    """
    xd = _data(x)
    axis = axis % xd.ndim
    n = xd.shape[axis]
    if n < 2:
        raise ValueError(f"layer_norm: axis {axis} has size {n}, need at least 2")
    mu = xd.mean(axis=axis, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    bshape = [1] * xd.ndim
    bshape[axis] = n
    out = xhat
    if gamma is not None:
        gd = gamma.data.reshape(bshape)
        out = out * gd
    if beta is not None:
        out = out + beta.data.reshape(bshape)
    other = tuple(i for i in range(xd.ndim) if i != axis)

    def bw(g):
        gh = g * gamma.data.reshape(bshape) if gamma is not None else g
        gx = inv * (gh - gh.mean(axis=axis, keepdims=True) - xhat * (gh * xhat).mean(axis=axis, keepdims=True))
        gg = (g * xhat).sum(axis=other) if gamma is not None else None
        gb = g.sum(axis=other) if beta is not None else None
        return gx, gg, gb

    inputs = [x]
    if gamma is not None:
        inputs.append(gamma)
    if beta is not None:
        inputs.append(beta)

    def bw_packed(g):
        gx, gg, gb = bw(g)
        res = [gx]
        if gamma is not None:
            res.append(gg)
        if beta is not None:
            res.append(gb)
        return tuple(res)

    return _make(out, tuple(inputs), bw_packed)


def mse(a, b) -> Tensor:
    d = sub(a, b)
    return mean(mul(d, d))


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.isfinite(p.data).all() for p in params)
