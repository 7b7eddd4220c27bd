"""Temporal KL-VAE.

A per-frame convolutional VAE in which every spatial convolution is followed
by a temporal convolution initialised to the identity, and every spatial
attention by a temporal attention whose output projection starts at zero.
At initialisation the model therefore computes exactly what the per-frame
(spatial-only) VAE computes; ``temporal=False`` runs that per-frame model.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .core import nn
from .core import tensor as T
from .core.nn import Module, SpatialAttention, SpatialConv, TemporalAttention, TemporalConv, identity_temporal_weight
from .core.optim import Adam
from .core.serialize import load_checkpoint, save_checkpoint
from .core.tensor import Tape, Tensor


@dataclass
class VAEConfig:
    in_channels: int = 3
    base_channels: int = 16
    hidden_channels: int = 32
    latent_channels: int = 4
    temporal_kernel: int = 3
    attn_dim: int = 32
    seed: int = 0


def init_temporal_conv_identity(c: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Weight (c, c, k) with ``W[i, i, (k - 1) // 2] = 1`` and a zero bias."""
    return identity_temporal_weight(c, k), np.zeros(c)


def init_temporal_attention_zero(block: nn.Attention) -> None:
    """Zero the attention output projection; Q/K/V keep their random init."""
    block.zero_output()


class _ConvUnit(Module):
    """Spatial conv followed by its temporal conv."""

    def __init__(self, c_in, c_out, k, rng, tk, stride=1):
        self.conv = SpatialConv(c_in, c_out, k, rng, stride=stride)
        self.tconv = TemporalConv(c_out, tk)

    def forward(self, h, temporal=True):
        h = self.conv(h)
        return self.tconv(h) if temporal else h


class _AttnUnit(Module):
    def __init__(self, c, d, rng):
        self.attn = SpatialAttention(c, d, rng)
        self.tattn = TemporalAttention(c, d, rng)

    def forward(self, h, temporal=True):
        h = self.attn(h)
        return self.tattn(h) if temporal else h


def _upsample(h: Tensor) -> Tensor:
    b, L = h.shape[:2]
    y = T.upsample_nearest2d(h.reshape(b * L, *h.shape[2:]), 2)
    return y.reshape(b, L, *y.shape[1:])


class TKLVAE(Module):
    n_down = 2

    def __init__(self, config: VAEConfig | None = None):
        cfg = self.config = config or VAEConfig()
        rng = np.random.default_rng(cfg.seed)
        tk, cb, ch, cl = cfg.temporal_kernel, cfg.base_channels, cfg.hidden_channels, cfg.latent_channels
        self.enc_in = _ConvUnit(cfg.in_channels, cb, 3, rng, tk)
        self.enc_down = [_ConvUnit(cb, ch, 3, rng, tk, stride=2), _ConvUnit(ch, ch, 3, rng, tk, stride=2)]
        self.enc_res = _ConvUnit(ch, ch, 3, rng, tk)
        self.enc_attn = _AttnUnit(ch, cfg.attn_dim, rng)
        self.enc_head = _ConvUnit(ch, 2 * cl, 3, rng, tk)
        self.dec_in = _ConvUnit(cl, ch, 3, rng, tk)
        self.dec_attn = _AttnUnit(ch, cfg.attn_dim, rng)
        self.dec_res = _ConvUnit(ch, ch, 3, rng, tk)
        self.dec_up = [_ConvUnit(ch, ch, 3, rng, tk), _ConvUnit(ch, cb, 3, rng, tk)]
        self.dec_out = _ConvUnit(cb, cfg.in_channels, 3, rng, tk)
        self.latent_scale = 1.0

    # -- parameter groups ------------------------------------------------
    def temporal_parameters(self):
        return [p for n, p in self.named_parameters() if ".tconv." in n or ".tattn." in n]

    def spatial_parameters(self):
        return [p for n, p in self.named_parameters() if ".tconv." not in n and ".tattn." not in n]

    # -- model ------------------------------------------------------------
    def _check_video(self, v):
        if v.ndim != 5:
            raise ValueError(f"video must be (b, L, C, H, W), got shape {v.shape}")
        if v.shape[1] == 0:
            raise ValueError("video has zero frames (L == 0)")
        if v.shape[2] != self.config.in_channels:
            raise ValueError(f"video channel axis is {v.shape[2]}, expected {self.config.in_channels}")
        f = 2**self.n_down
        if v.shape[3] % f or v.shape[4] % f:
            raise ValueError(f"frame size {v.shape[3]}x{v.shape[4]} not divisible by {f}")

    def encode(self, v, temporal: bool = True) -> tuple[Tensor, Tensor]:
        v = T.as_tensor(v)
        self._check_video(v)
        h = T.silu(self.enc_in(v, temporal))
        for unit in self.enc_down:
            h = T.silu(unit(h, temporal))
        h = h + T.silu(self.enc_res(h, temporal))
        h = self.enc_attn(h, temporal)
        stats = self.enc_head(h, temporal)
        c = self.config.latent_channels
        return stats[:, :, :c], stats[:, :, c:]

    def decode(self, z, temporal: bool = True) -> Tensor:
        z = T.as_tensor(z)
        if z.ndim != 5 or z.shape[2] != self.config.latent_channels or z.shape[1] == 0:
            raise ValueError(f"latent must be (b, L, {self.config.latent_channels}, h, w) with L >= 1, got {z.shape}")
        h = T.silu(self.dec_in(z, temporal))
        h = self.dec_attn(h, temporal)
        h = h + T.silu(self.dec_res(h, temporal))
        for unit in self.dec_up:
            h = T.silu(unit(_upsample(h), temporal))
        return T.tanh(self.dec_out(h, temporal))

    def sample_posterior(self, mean: Tensor, log_var: Tensor, rng: np.random.Generator) -> Tensor:
        noise = rng.standard_normal(mean.shape)
        return mean + T.exp(log_var * 0.5) * noise

    def latents(self, v, temporal: bool = True) -> np.ndarray:
        """Scaled posterior means: the code the diffusion models operate on."""
        mean, _ = self.encode(v, temporal)
        return mean.data * self.latent_scale

    def pixels(self, z: np.ndarray, temporal: bool = True) -> np.ndarray:
        return self.decode(z / self.latent_scale, temporal).data

    # -- persistence -------------------------------------------------------
    def save(self, directory, extra: dict | None = None):
        manifest = {"kind": "tklvae", "config": asdict(self.config), "latent_scale": self.latent_scale, **(extra or {})}
        return save_checkpoint(directory, self.state_dict(), manifest)

    @classmethod
    def load(cls, directory) -> "TKLVAE":
        state, manifest = load_checkpoint(directory)
        if manifest.get("kind") != "tklvae":
            raise ValueError(f"{directory} is not a T-KLVAE checkpoint")
        model = cls(VAEConfig(**manifest["config"]))
        model.load_state_dict(state)
        model.latent_scale = float(manifest["latent_scale"])
        return model


def kl_to_standard_normal(mean, log_var) -> Tensor:
    """Per-element mean of KL(N(mean, exp(log_var)) || N(0, 1))."""
    mean, log_var = T.as_tensor(mean), T.as_tensor(log_var)
    return T.mean((mean * mean + T.exp(log_var) - log_var - 1.0) * 0.5)


def vae_loss_terms(v, recon, mean, log_var, kl_weight: float) -> tuple[Tensor, Tensor, Tensor]:
    if kl_weight < 0:
        raise ValueError(f"kl_weight must be >= 0, got {kl_weight}")
    rec = T.mse(recon, T.as_tensor(v))
    kl = kl_to_standard_normal(mean, log_var)
    return rec + kl * kl_weight, rec, kl


def vae_loss(v, model: TKLVAE, kl_weight: float, rng: np.random.Generator, temporal: bool = True) -> Tensor:
    mean, log_var = model.encode(v, temporal)
    z = model.sample_posterior(mean, log_var, rng)
    loss, _, _ = vae_loss_terms(v, model.decode(z, temporal), mean, log_var, kl_weight)
    return loss


def reconstruction_mse(model: TKLVAE, videos: np.ndarray, temporal: bool = True) -> float:
    mean, _ = model.encode(videos, temporal)
    return float(np.mean((model.decode(mean, temporal).data - videos) ** 2))


def train_stage(
    model: TKLVAE,
    batches,
    params,
    steps: int,
    lr: float,
    kl_weight: float,
    rng: np.random.Generator,
    temporal: bool,
    log=None,
    log_every: int = 100,
) -> list[float]:
    """Adam on ``params`` only; everything else stays fixed."""
    opt = Adam(params, lr=lr, clip_norm=1.0)
    frozen = [p for p in model.parameters() if all(p is not q for q in params)]
    for p in frozen:
        p.requires_grad = False
    losses = []
    try:
        for step in range(steps):
            v = batches(step)
            opt.zero_grad()
            with Tape():
                loss = vae_loss(v, model, kl_weight, rng, temporal)
            T.backward(loss)
            opt.step()
            losses.append(loss.item())
            if log is not None and (step % log_every == 0 or step == steps - 1):
                log(f"step {step:5d} loss {np.mean(losses[-log_every:]):.5f}")
    finally:
        for p in frozen:
            p.requires_grad = True
    return losses


def fit_latent_scale(model: TKLVAE, videos: np.ndarray) -> float:
    mean, _ = model.encode(videos)
    std = float(mean.data.std())
    return 1.0 / std if std > 0 else 1.0
