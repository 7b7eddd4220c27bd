"""Mask 3D-UNet: the noise predictor shared by global and local diffusion.

Two scales (8x8 at ``widths[0]``, 4x4 at ``widths[1]`` for 32x32 frames).
Each block runs, in order: skip concat, channel conv, timestep add, spatial
conv, temporal conv, condition scale/shift from x0c then from x0m, spatial
self-attention, prompt cross-attention, temporal self-attention and an
optional 2x upsample. The scale/shift convs start at zero so the visual
condition has no effect until trained.

``multi_scale`` (MI) injects at every scale rather than only the highest
resolution; ``symmetric`` (SI) injects in the down blocks as well as the up
blocks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import tensor as T
from ..core.nn import (
    LayerNorm,
    Linear,
    Module,
    PromptAttention,
    SpatialAttention,
    SpatialConv,
    TemporalAttention,
    TemporalConv,
)
from ..core.tensor import Tensor


@dataclass
class UNetConfig:
    latent_channels: int = 4
    widths: tuple = (32, 64)
    cond_channels: tuple = (4, 16)  # x0c pyramid channels per scale
    mask_channels: tuple = (1, 8)
    time_dim: int = 32
    attn_dim: int = 32
    prompt_dim: int = 16
    temporal_kernel: int = 3
    multi_scale: bool = True
    symmetric: bool = True
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(self.widths)
        self.cond_channels = tuple(self.cond_channels)
        self.mask_channels = tuple(self.mask_channels)
        if not (len(self.widths) == len(self.cond_channels) == len(self.mask_channels) == 2):
            raise ValueError("the toy UNet has exactly two scales")
        if self.cond_channels[0] != self.latent_channels or self.mask_channels[0] != 1:
            raise ValueError("scale-0 condition channels must match the latent and the 1-channel mask")


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding (b, dim) of integer timesteps."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def _upsample(h: Tensor) -> Tensor:
    b, L = h.shape[:2]
    y = T.upsample_nearest2d(h.reshape(b * L, *h.shape[2:]), 2)
    return y.reshape(b, L, *y.shape[1:])


def scale_shift(h: Tensor, conv: SpatialConv, cond: Tensor) -> Tensor:
    """h := w * h + b + h with (w, b) produced from ``cond`` by ``conv``."""
    if cond.shape[3:] != h.shape[3:]:
        raise ValueError(f"condition resolution {cond.shape[3:]} does not match block resolution {h.shape[3:]}")
    wb = conv(cond)
    c = h.shape[2]
    return wb[:, :, :c] * h + wb[:, :, c:] + h


class Block(Module):
    """One UNet block; down blocks have no skip input and no upsample."""

    def __init__(self, c_in, c, skip_c, cond_c, mask_c, cfg: UNetConfig, rng, inject: bool, upsample: bool):
        k = cfg.temporal_kernel
        self.channel = SpatialConv(c_in + skip_c, c, 1, rng)
        self.t_proj = Linear(cfg.time_dim, c, rng)
        self.norm = LayerNorm(c, axis=2)
        self.conv = SpatialConv(c, c, 3, rng)
        self.tconv = TemporalConv(c, k)
        self.inj_c = SpatialConv(cond_c, 2 * c, 3, rng, zero=True) if inject else None
        self.inj_m = SpatialConv(mask_c, 2 * c, 3, rng, zero=True) if inject else None
        self.sa = SpatialAttention(c, cfg.attn_dim, rng)
        self.pa = PromptAttention(c, cfg.attn_dim, cfg.prompt_dim, rng)
        self.ta = TemporalAttention(c, cfg.attn_dim, rng)
        self.skip_c = skip_c
        self.upsample = upsample

    @property
    def injects(self) -> bool:
        return self.inj_c is not None

    def forward(self, h, skip, temb, cc, cm, p):
        if self.skip_c:
            h = T.concat([skip, h], axis=2)
        h = self.channel(h)
        b, c = h.shape[0], h.shape[2]
        h = h + self.t_proj(temb).reshape(b, 1, c, 1, 1)
        h = h + self.conv(T.silu(self.norm(h)))
        h = self.tconv(h)
        if self.injects:
            h = scale_shift(h, self.inj_c, cc)
            h = scale_shift(h, self.inj_m, cm)
        h = self.sa(h)
        h = self.pa(h, p)
        h = self.ta(h)
        return _upsample(h) if self.upsample else h


class Mask3DUNet(Module):
    def __init__(self, config: UNetConfig | None = None):
        cfg = self.config = config or UNetConfig()
        rng = np.random.default_rng(cfg.seed)
        c0, c1 = cfg.widths
        lc = cfg.latent_channels
        self.time_mlp = Linear(cfg.time_dim, cfg.time_dim, rng)
        # condition pyramid; built unconditionally so the flags never change the
        # random draws of the shared parameters
        self.cond_down = SpatialConv(cfg.cond_channels[0], cfg.cond_channels[1], 3, rng, stride=2)
        self.mask_down = SpatialConv(cfg.mask_channels[0], cfg.mask_channels[1], 3, rng, stride=2)
        self.conv_in = SpatialConv(lc, c0, 3, rng)
        inj_down = (cfg.symmetric, cfg.symmetric and cfg.multi_scale)
        inj_up = (True, cfg.multi_scale)
        cc, cm = cfg.cond_channels, cfg.mask_channels
        self.down = [
            Block(c0, c0, 0, cc[0], cm[0], cfg, rng, inj_down[0], False),
            Block(c1, c1, 0, cc[1], cm[1], cfg, rng, inj_down[1], False),
        ]
        self.downsample = SpatialConv(c0, c1, 3, rng, stride=2)
        self.up = [
            Block(c1, c1, c1, cc[1], cm[1], cfg, rng, inj_up[1], True),
            Block(c1, c0, c0, cc[0], cm[0], cfg, rng, inj_up[0], False),
        ]
        self.norm_out = LayerNorm(c0, axis=2)
        self.conv_out = SpatialConv(c0, lc, 3, rng)

    def injection_parameters(self):
        return [p for n, p in self.named_parameters() if ".inj_" in n]

    def condition_pyramid(self, x0c, x0m):
        x0c, x0m = T.as_tensor(x0c), T.as_tensor(x0m)
        return [x0c, T.silu(self.cond_down(x0c))], [x0m, T.silu(self.mask_down(x0m))]

    def _check(self, x_t, p, t, x0c, x0m):
        if x_t.ndim != 5 or x_t.shape[2] != self.config.latent_channels:
            raise ValueError(f"x_t must be (b, L, {self.config.latent_channels}, h, w), got {x_t.shape}")
        b, L, _, h, w = x_t.shape
        if h % 2 or w % 2:
            raise ValueError(f"latent size {h}x{w} must be even")
        if p.ndim != 4 or p.shape[:2] != (b, L):
            raise ValueError(f"prompt must be (b={b}, L={L}, l_p, d_p), got {p.shape}")
        if p.shape[3] != self.config.prompt_dim:
            raise ValueError(f"prompt dim {p.shape[3]} does not match {self.config.prompt_dim}")
        if x0c.shape != x_t.shape:
            raise ValueError(f"x0c shape {x0c.shape} does not match x_t shape {x_t.shape}")
        if x0m.shape != (b, L, 1, h, w):
            raise ValueError(f"x0m must be {(b, L, 1, h, w)}, got {x0m.shape}")
        if np.shape(t) not in ((), (b,)):
            raise ValueError(f"t must be a scalar or have length {b}, got shape {np.shape(t)}")

    def forward(self, x_t, p, t, x0c, x0m) -> Tensor:
        x_t, p = T.as_tensor(x_t), T.as_tensor(p)
        x0c, x0m = T.as_tensor(x0c), T.as_tensor(x0m)
        self._check(x_t, p, t, x0c, x0m)
        b = x_t.shape[0]
        temb = timestep_embedding(np.broadcast_to(np.asarray(t), (b,)), self.config.time_dim)
        temb = T.silu(self.time_mlp(temb))
        cc, cm = self.condition_pyramid(x0c, x0m)
        h = self.conv_in(x_t)
        s0 = self.down[0](h, None, temb, cc[0], cm[0], p)
        s1 = self.down[1](self.downsample(s0), None, temb, cc[1], cm[1], p)
        h = self.up[0](s1, s1, temb, cc[1], cm[1], p)
        h = self.up[1](h, s0, temb, cc[0], cm[0], p)
        return self.conv_out(T.silu(self.norm_out(h)))
