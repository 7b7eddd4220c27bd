"""Parameter containers and the layers shared by the VAE and the denoiser.

Video activations are 5-D, laid out (b, L, c, h, w). Spatial layers fold
L into the batch; temporal layers fold the spatial positions into the batch
and run along L.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)


class Module:
    training = False

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match parameter shape {p.data.shape}")
            p.data = arr.copy()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def _normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) / np.sqrt(fan_in)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True, zero: bool = False):
        self.weight = Parameter(np.zeros((d_in, d_out)) if zero else _normal(rng, (d_in, d_out), d_in))
        self.bias = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1, zero: bool = False):
        if k % 2 == 0:
            raise ValueError(f"Conv2d: kernel size must be odd, got {k}")
        shape = (c_out, c_in, k, k)
        self.weight = Parameter(np.zeros(shape) if zero else _normal(rng, shape, c_in * k * k))
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride)


def identity_temporal_weight(c: int, k: int) -> np.ndarray:
    """Weight (c, c, k) that is zero except ``w[i, i, (k - 1) // 2] = 1``."""
    if k % 2 == 0:
        raise ValueError(f"temporal kernel size must be odd so the centre tap exists, got k={k}")
    if c < 1:
        raise ValueError(f"channel count must be >= 1, got {c}")
    w = np.zeros((c, c, k))
    w[np.arange(c), np.arange(c), (k - 1) // 2] = 1.0
    return w


class TemporalConv(Module):
    """Conv1d along L with spatial positions folded into the batch; identity at init."""

    def __init__(self, c: int, k: int = 3):
        self.weight = Parameter(identity_temporal_weight(c, k))
        self.bias = Parameter(np.zeros(c))

    def forward(self, h: Tensor) -> Tensor:
        b, L, c, hh, ww = h.shape
        x = h.transpose(0, 3, 4, 2, 1).reshape(b * hh * ww, c, L)
        y = T.conv1d(x, self.weight, self.bias)
        return y.reshape(b, hh, ww, c, L).transpose(0, 4, 3, 1, 2)


class SpatialConv(Module):
    """Conv2d applied frame by frame to a (b, L, c, h, w) tensor."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1, zero: bool = False):
        self.conv = Conv2d(c_in, c_out, k, rng, stride=stride, zero=zero)

    def forward(self, h: Tensor) -> Tensor:
        b, L = h.shape[:2]
        y = self.conv(h.reshape(b * L, *h.shape[2:]))
        return y.reshape(b, L, *y.shape[1:])


class LayerNorm(Module):
    def __init__(self, c: int, axis: int = -1):
        self.gamma = Parameter(np.ones(c))
        self.beta = Parameter(np.zeros(c))
        self.axis = axis

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, axis=self.axis)


def spatial_tokens(h: Tensor) -> Tensor:
    """(b, L, c, h, w) -> (b*L, h*w, c)."""
    b, L, c, hh, ww = h.shape
    return h.reshape(b * L, c, hh * ww).transpose(0, 2, 1)


def from_spatial_tokens(x: Tensor, shape) -> Tensor:
    b, L, c, hh, ww = shape
    return x.transpose(0, 2, 1).reshape(b, L, c, hh, ww)


def temporal_tokens(h: Tensor) -> Tensor:
    """(b, L, c, h, w) -> (b*h*w, L, c)."""
    b, L, c, hh, ww = h.shape
    return h.transpose(0, 3, 4, 1, 2).reshape(b * hh * ww, L, c)


def from_temporal_tokens(x: Tensor, shape) -> Tensor:
    b, L, c, hh, ww = shape
    return x.reshape(b, hh, ww, L, c).transpose(0, 3, 4, 1, 2)


class Attention(Module):
    """Pre-norm residual attention over token tensors (N, n, c).

    With ``zero_out`` the output projection starts at zero so the block is
    the identity until trained.
    """

    def __init__(self, c: int, d_in: int, rng: np.random.Generator, d_ctx: int | None = None, zero_out: bool = False):
        self.norm = LayerNorm(c)
        self.to_q = Linear(c, d_in, rng, bias=False)
        self.to_k = Linear(d_ctx or c, d_in, rng, bias=False)
        self.to_v = Linear(d_ctx or c, d_in, rng, bias=False)
        self.to_out = Linear(d_in, c, rng, zero=zero_out)
        self.cross = d_ctx is not None

    def zero_output(self) -> None:
        self.to_out.weight.data[...] = 0.0
        self.to_out.bias.data[...] = 0.0

    def forward(self, x: Tensor, ctx: Tensor | None = None) -> Tensor:
        hn = self.norm(x)
        src = ctx if self.cross else hn
        a = T.attention(self.to_q(hn), self.to_k(src), self.to_v(src))
        return x + self.to_out(a)


class SpatialAttention(Attention):
    def forward(self, h: Tensor, ctx: Tensor | None = None) -> Tensor:
        shape = h.shape
        return from_spatial_tokens(super().forward(spatial_tokens(h)), shape)


class TemporalAttention(Attention):
    def __init__(self, c: int, d_in: int, rng: np.random.Generator):
        super().__init__(c, d_in, rng, zero_out=True)

    def forward(self, h: Tensor, ctx: Tensor | None = None) -> Tensor:
        shape = h.shape
        return from_temporal_tokens(super().forward(temporal_tokens(h)), shape)


class PromptAttention(Attention):
    """Cross-attention from spatial tokens to per-frame prompt tokens."""

    def __init__(self, c: int, d_in: int, d_p: int, rng: np.random.Generator):
        super().__init__(c, d_in, rng, d_ctx=d_p)

    def forward(self, h: Tensor, ctx: Tensor | None = None) -> Tensor:
        shape = h.shape
        b, L = shape[:2]
        p = ctx.reshape(b * L, ctx.shape[2], ctx.shape[3])
        return from_spatial_tokens(super().forward(spatial_tokens(h), p), shape)
