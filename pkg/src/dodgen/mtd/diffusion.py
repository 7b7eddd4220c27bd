"""MTD training and sampling on top of the Mask 3D-UNet.

One implementation serves global and local diffusion; the two differ only
in the visual condition handed to the denoiser.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import tensor as T
from ..core.optim import Adam
from ..core.serialize import load_checkpoint, save_checkpoint
from ..core.tensor import Tape, Tensor
from ..dataset import condition_rows, render_frames
from ..plan import depth_stride, span
from .condition import GLOBAL, LOCAL, VisualCondition, build_visual_condition, check_mode
from .schedule import DiffusionSchedule, ddpm_sample_step, make_schedule, q_sample
from .unet import Mask3DUNet, UNetConfig

DEFAULT_T = 50
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.2


@dataclass
class DiffusionConfig:
    T: int = DEFAULT_T
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    literal_variance: bool = False
    unet: UNetConfig = field(default_factory=UNetConfig)

    def schedule(self) -> DiffusionSchedule:
        return make_schedule(self.T, self.beta_start, self.beta_end)


class MTD:
    """A denoiser bound to its schedule, role and training state."""

    def __init__(self, config: DiffusionConfig | None = None, mode: str = GLOBAL, depth: int = 1):
        self.config = config or DiffusionConfig()
        if mode not in (GLOBAL, LOCAL):
            raise ValueError(f"mode must be 'global' or 'local', got {mode!r}")
        self.mode = mode
        self.depth = depth
        self.unet = Mask3DUNet(self.config.unet)
        self.sched = self.config.schedule()
        self.trained_steps = 0
        self.seed = self.config.unet.seed

    def eps(self, x_t, p, t, cond: VisualCondition) -> np.ndarray:
        return self.unet(x_t, p, t, cond.x0c, cond.x0m).data

    def save(self, directory, extra: dict | None = None):
        cfg = asdict(self.config)
        manifest = {
            "kind": "mtd",
            "mode": self.mode,
            "depth": self.depth,
            "config": cfg,
            "multi_scale": self.config.unet.multi_scale,
            "symmetric": self.config.unet.symmetric,
            "T": self.config.T,
            "beta_range": [self.config.beta_start, self.config.beta_end],
            "seed": self.seed,
            "trained_steps": self.trained_steps,
            **(extra or {}),
        }
        return save_checkpoint(directory, self.unet.state_dict(), manifest)

    @classmethod
    def load(cls, directory) -> "MTD":
        state, manifest = load_checkpoint(directory)
        if manifest.get("kind") != "mtd":
            raise ValueError(f"{directory} is not an MTD checkpoint")
        cfg = dict(manifest["config"])
        cfg["unet"] = UNetConfig(**cfg["unet"])
        model = cls(DiffusionConfig(**cfg), manifest["mode"], manifest["depth"])
        model.unet.load_state_dict(state)
        model.trained_steps = int(manifest["trained_steps"])
        model.seed = manifest["seed"]
        return model


# -- data ---------------------------------------------------------------------
@dataclass
class LatentPool:
    """Encoded training clips for one depth."""

    x0: np.ndarray  # (N, L, c, h, w)
    prompts: np.ndarray  # (N, L, l_p, d_p)
    x0c: np.ndarray
    x0m: np.ndarray

    def __len__(self) -> int:
        return self.x0.shape[0]

    def batch(self, idx):
        return self.x0[idx], self.prompts[idx], VisualCondition(self.x0c[idx], self.x0m[idx])


def build_pool(vae, episodes, depth: int, L: int, m: int, n_clips: int, rng: np.random.Generator, chunk: int = 8) -> LatentPool:
    """Random clips at the depth's stride, encoded with the T-KLVAE."""
    mode = GLOBAL if depth == 1 else LOCAL
    stride = depth_stride(L, m, depth)
    need = span(L, m, depth)
    videos, prompts = [], []
    for _ in range(n_clips):
        ep = episodes[int(rng.integers(len(episodes)))]
        start = int(rng.integers(0, ep.length - need + 1))
        idx = start + stride * np.arange(L)
        videos.append(render_frames(ep, idx))
        prompts.append(condition_rows(ep, idx))
    videos, prompts = np.stack(videos), np.stack(prompts)
    x0, x0c, x0m = [], [], []
    for s in range(0, n_clips, chunk):
        v = videos[s : s + chunk]
        x0.append(vae.latents(v))
        cond = build_visual_condition(v, mode, vae)
        x0c.append(cond.x0c)
        x0m.append(cond.x0m)
    return LatentPool(np.concatenate(x0), prompts, np.concatenate(x0c), np.concatenate(x0m))


# -- training -------------------------------------------------------------------
def training_loss(x0, p, cond: VisualCondition, model: MTD, t, eps) -> Tensor:
    """Mean squared error between the true and the predicted noise."""
    x_t = q_sample(x0, t, eps, model.sched)
    eps_hat = model.unet(x_t, p, t, cond.x0c, cond.x0m)
    return T.mse(eps_hat, Tensor(eps))


def sample_timesteps(rng: np.random.Generator, b: int, T_steps: int) -> np.ndarray:
    return rng.integers(1, T_steps + 1, size=b)


def eval_loss(model: MTD, pool: LatentPool, n: int = 16, seed: int = 1234) -> float:
    """Loss on a fixed subset with fixed timesteps and noise."""
    r = np.random.default_rng(seed)
    idx = np.arange(min(n, len(pool)))
    x0, p, cond = pool.batch(idx)
    t = sample_timesteps(r, len(idx), model.config.T)
    eps = r.standard_normal(x0.shape)
    return training_loss(x0, p, cond, model, t, eps).item()


def train(
    model: MTD,
    pool: LatentPool,
    steps: int,
    batch_size: int = 4,
    lr: float = 2e-3,
    rng: np.random.Generator | None = None,
    log=None,
    log_every: int = 100,
) -> list[float]:
    rng = rng or np.random.default_rng(0)
    opt = Adam(model.unet.parameters(), lr=lr, clip_norm=1.0)
    losses = []
    for step in range(steps):
        idx = rng.integers(len(pool), size=batch_size)
        x0, p, cond = pool.batch(idx)
        t = sample_timesteps(rng, batch_size, model.config.T)
        eps = rng.standard_normal(x0.shape)
        opt.zero_grad()
        with Tape():
            loss = training_loss(x0, p, cond, model, t, eps)
        T.backward(loss)
        opt.step()
        losses.append(loss.item())
        model.trained_steps += 1
        if log is not None and (step % log_every == 0 or step == steps - 1):
            log(f"step {step:5d} loss {np.mean(losses[-log_every:]):.5f}")
    return losses


# -- sampling -------------------------------------------------------------------
def sample_latents(model: MTD, p, cond: VisualCondition, seed, allow_untrained: bool = False) -> np.ndarray:
    if model.trained_steps == 0 and not allow_untrained:
        raise RuntimeError("MTD checkpoint is untrained; pass allow_untrained=True for a baseline")
    p = np.asarray(p, dtype=np.float64)
    rng = np.random.default_rng(seed)
    sched = model.sched
    x = rng.standard_normal(cond.x0c.shape)
    for t in range(sched.T, 0, -1):
        eps_hat = model.eps(x, p, t, cond)
        noise = rng.standard_normal(x.shape) if t > 1 else None
        x = ddpm_sample_step(x, t, eps_hat, sched, noise, model.config.literal_variance)
    return x


def sample(p, v0c, mode: str, model: MTD, vae, seed, allow_untrained: bool = False) -> np.ndarray:
    """Generate a (b, L, 3, H, W) video; local mode copies the two given frames into place."""
    if model is None or vae is None:
        raise RuntimeError("sampling needs both a diffusion and a T-KLVAE checkpoint")
    v0c = np.asarray(v0c, dtype=np.float64)
    check_mode(mode, v0c.shape[1])
    if mode != model.mode:
        raise ValueError(f"model was trained for {model.mode} diffusion, asked for {mode}")
    cond = build_visual_condition(v0c, mode, vae)
    z = sample_latents(model, p, cond, seed, allow_untrained)
    video = vae.pixels(z)
    if mode == LOCAL:
        video[:, 0] = v0c[:, 0]
        video[:, -1] = v0c[:, -1]
    return video
