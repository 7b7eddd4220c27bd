"""Staged training, checkpoint layout and evaluation driven by a RunConfig.

Run directory layout::

    <out>/vae/                 T-KLVAE checkpoint
    <out>/mtd-d<depth>/        one diffusion checkpoint per depth
    <out>/generate/            frames + manifest.json
    <out>/metrics.json, <out>/bench.json
"""
from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .core.serialize import load_checkpoint
from .dataset import EVAL_EPISODES, TRAIN_EPISODES, PromptSource, episodes, render_frames, sample_training_clip
from .hierarchy import LongVideo, MissingCheckpointError, Models, generate, plan_frames, truncate
from .metrics import FeatureExtractor, avg_fid, b_fvd_blocks
from .mtd.condition import GLOBAL, LOCAL
from .mtd.diffusion import MTD, DiffusionConfig, build_pool, eval_loss, sample, train
from .mtd.unet import UNetConfig
from .tklvae import TKLVAE, VAEConfig, fit_latent_scale, reconstruction_mse, train_stage

VAE_KEYS = (
    "L", "m", "frame_size", "episode_length", "train_episodes", "vae_base_channels", "vae_hidden_channels",
    "latent_channels", "temporal_kernel", "kl_weight", "vae_lr", "vae_stage1_steps", "vae_stage1_batch",
    "vae_stage2_steps", "vae_stage2_batch", "vae_freeze_spatial", "seed",
)
MTD_KEYS = VAE_KEYS + (
    "T", "beta_start", "beta_end", "literal_variance", "widths", "multi_scale", "symmetric",
    "diffusion_steps", "diffusion_batch", "diffusion_lr", "pool_clips",
)


def _log(log, msg):
    if log is not None:
        log(msg)


def train_ids(cfg: RunConfig):
    return range(TRAIN_EPISODES.start, TRAIN_EPISODES.start + cfg.train_episodes)


def eval_ids(cfg: RunConfig):
    return range(EVAL_EPISODES.start, EVAL_EPISODES.start + cfg.eval_episodes)


def train_set(cfg: RunConfig):
    return episodes(train_ids(cfg), cfg.episode_length, cfg.frame_size)


def eval_set(cfg: RunConfig):
    return episodes(eval_ids(cfg), cfg.episode_length, cfg.frame_size)


def heldout_clips(cfg: RunConfig, n: int = 8, seed: int = 4321) -> np.ndarray:
    """Fixed eval-episode clips at random depths; never seen in training."""
    r = np.random.default_rng(seed)
    eps = eval_set(cfg)
    return np.stack([sample_training_clip(eps[i % len(eps)], 1 + i % cfg.m, cfg.L, cfg.m, r)[0] for i in range(n)])


# -- T-KLVAE ------------------------------------------------------------------------
def vae_config(cfg: RunConfig) -> VAEConfig:
    return VAEConfig(
        base_channels=cfg.vae_base_channels,
        hidden_channels=cfg.vae_hidden_channels,
        latent_channels=cfg.latent_channels,
        temporal_kernel=cfg.temporal_kernel,
        seed=cfg.seed,
    )


def train_vae(cfg: RunConfig, log=None) -> tuple[TKLVAE, dict]:
    """Stage 1: spatial layers on shuffled single frames. Stage 2: temporal layers on clips."""
    vae = TKLVAE(vae_config(cfg))
    eps = train_set(cfg)
    held = heldout_clips(cfg)
    r = np.random.default_rng(np.random.SeedSequence([cfg.seed, 101]))
    mse0 = reconstruction_mse(vae, held)
    _log(log, f"init held-out mse {mse0:.5f}")
    t0 = time.perf_counter()

    def frames(step):
        picks = [eps[int(i)] for i in r.integers(len(eps), size=cfg.vae_stage1_batch)]
        return np.stack([render_frames(e, [int(r.integers(e.length))])[0] for e in picks])[None]

    train_stage(vae, frames, vae.spatial_parameters(), cfg.vae_stage1_steps, cfg.vae_lr, cfg.kl_weight, r, temporal=False, log=log)
    mse1 = reconstruction_mse(vae, held)
    _log(log, f"stage 1 held-out mse {mse1:.5f}")

    def clips(step):
        return np.stack(
            [sample_training_clip(eps[int(r.integers(len(eps)))], int(r.integers(1, cfg.m + 1)), cfg.L, cfg.m, r)[0] for _ in range(cfg.vae_stage2_batch)]
        )

    params = vae.temporal_parameters() if cfg.vae_freeze_spatial else vae.parameters()
    train_stage(vae, clips, params, cfg.vae_stage2_steps, cfg.vae_lr / 2, cfg.kl_weight, r, temporal=True, log=log)
    mse2 = reconstruction_mse(vae, held)
    _log(log, f"stage 2 held-out mse {mse2:.5f}")
    vae.latent_scale = fit_latent_scale(vae, heldout_clips(cfg, 8, seed=cfg.seed + 7))
    report = {
        "heldout_mse_init": mse0,
        "heldout_mse_stage1": mse1,
        "heldout_mse": mse2,
        "improvement": mse0 / mse2,
        "latent_scale": vae.latent_scale,
        "train_seconds": time.perf_counter() - t0,
    }
    return vae, report


# -- diffusion ----------------------------------------------------------------------
def diffusion_config(cfg: RunConfig, depth: int, multi_scale: bool | None = None, seed: int | None = None) -> DiffusionConfig:
    seed = cfg.seed if seed is None else seed
    return DiffusionConfig(
        T=cfg.T,
        beta_start=cfg.beta_start,
        beta_end=cfg.beta_end,
        literal_variance=cfg.literal_variance,
        unet=UNetConfig(
            latent_channels=cfg.latent_channels,
            widths=tuple(cfg.widths),
            cond_channels=(cfg.latent_channels, 16),
            temporal_kernel=cfg.temporal_kernel,
            multi_scale=cfg.multi_scale if multi_scale is None else multi_scale,
            symmetric=cfg.symmetric,
            seed=seed * 100 + depth,
        ),
    )


def diffusion_pools(cfg: RunConfig, vae: TKLVAE, depth: int, seed: int | None = None):
    """(training pool from train episodes, 32-clip held-out pool from eval episodes)."""
    seed = cfg.seed if seed is None else seed
    r = np.random.default_rng(np.random.SeedSequence([seed, 202, depth]))
    pool = build_pool(vae, train_set(cfg), depth, cfg.L, cfg.m, cfg.pool_clips, r)
    rh = np.random.default_rng(np.random.SeedSequence([9999, depth]))
    held = build_pool(vae, eval_set(cfg), depth, cfg.L, cfg.m, 32, rh)
    return pool, held


def train_diffusion(
    cfg: RunConfig, vae: TKLVAE, depth: int, log=None, multi_scale: bool | None = None, seed: int | None = None, steps: int | None = None
) -> tuple[MTD, dict]:
    if not 1 <= depth <= cfg.m:
        raise ValueError(f"depth must lie in [1, {cfg.m}], got {depth}")
    seed = cfg.seed if seed is None else seed
    steps = cfg.diffusion_steps if steps is None else steps
    model = MTD(diffusion_config(cfg, depth, multi_scale, seed), GLOBAL if depth == 1 else LOCAL, depth)
    pool, held = diffusion_pools(cfg, vae, depth, seed)
    before = eval_loss(model, held, n=32)
    _log(log, f"depth {depth} held-out loss before {before:.5f}")
    t0 = time.perf_counter()
    r = np.random.default_rng(np.random.SeedSequence([seed, 303, depth]))
    train(model, pool, steps, cfg.diffusion_batch, cfg.diffusion_lr, r, log=log)
    after = eval_loss(model, held, n=32)
    _log(log, f"depth {depth} held-out loss after {after:.5f}")
    report = {
        "depth": depth,
        "heldout_loss_init": before,
        "heldout_loss": after,
        "improvement": before / after,
        "steps": steps,
        "train_seconds": time.perf_counter() - t0,
    }
    return model, report


# -- checkpoints ----------------------------------------------------------------------
def vae_dir(out) -> Path:
    return Path(out) / "vae"


def mtd_dir(out, depth: int) -> Path:
    return Path(out) / f"mtd-d{depth}"


def load_vae(out) -> TKLVAE:
    d = vae_dir(out)
    if not (d / "manifest.json").is_file():
        raise MissingCheckpointError(f"missing T-KLVAE checkpoint: {d}")
    return TKLVAE.load(d)


def load_models(cfg: RunConfig, out) -> Models:
    vae = load_vae(out)
    nets = {}
    for d in range(1, cfg.m + 1):
        p = mtd_dir(out, d)
        if not (p / "manifest.json").is_file():
            raise MissingCheckpointError(f"missing diffusion checkpoint for depth {d}: {p}")
        nets[d] = MTD.load(p)
    return Models(vae, nets, frame_size=cfg.frame_size)


def cached_vae(cfg: RunConfig, cache, log=None) -> tuple[TKLVAE, dict]:
    """Load ``<cache>/vae-<digest>`` or train and store it; the report rides in the manifest."""
    d = Path(cache) / f"vae-{cfg.digest(VAE_KEYS)}"
    if (d / "manifest.json").is_file():
        _, manifest = load_checkpoint(d)
        return TKLVAE.load(d), manifest["report"]
    vae, report = train_vae(cfg, log)
    vae.save(d, {"report": report, "run_config": cfg.to_dict()})
    return vae, report


def cached_diffusion(
    cfg: RunConfig, vae: TKLVAE, depth: int, cache, log=None, multi_scale: bool | None = None, seed: int | None = None, steps: int | None = None
) -> tuple[MTD, dict]:
    ms = cfg.multi_scale if multi_scale is None else multi_scale
    seed = cfg.seed if seed is None else seed
    steps = cfg.diffusion_steps if steps is None else steps
    key = cfg.digest(MTD_KEYS) + f"-d{depth}-ms{int(ms)}-s{seed}-n{steps}"
    d = Path(cache) / f"mtd-{key}"
    if (d / "manifest.json").is_file():
        _, manifest = load_checkpoint(d)
        return MTD.load(d), manifest["report"]
    model, report = train_diffusion(cfg, vae, depth, log, ms, seed, steps)
    model.save(d, {"report": report, "run_config": cfg.to_dict()})
    return model, report


def untrained_models(cfg: RunConfig) -> Models:
    """Epoch-0 weights for every model: the baseline generation."""
    vae = TKLVAE(vae_config(cfg))
    nets = {d: MTD(diffusion_config(cfg, d), GLOBAL if d == 1 else LOCAL, d) for d in range(1, cfg.m + 1)}
    return Models(vae, nets, allow_untrained=True, frame_size=cfg.frame_size)


# -- generation and evaluation ----------------------------------------------------------
def generation_plan(cfg: RunConfig, seed: int | None = None):
    plan = plan_frames(cfg.L, cfg.m, cfg.seed if seed is None else seed)
    return truncate(plan, cfg.frames) if cfg.frames is not None else plan


def generate_eval_videos(cfg: RunConfig, models: Models, n_videos: int | None = None, workers: int | None = None, log=None) -> list[LongVideo]:
    """Video i follows the condition rows of eval episode i, with seed ``cfg.seed + i``."""
    n_videos = cfg.videos if n_videos is None else n_videos
    eps = eval_set(cfg)
    if n_videos > len(eps):
        raise ValueError(f"asked for {n_videos} videos but only {len(eps)} eval episodes exist")
    out = []
    for i in range(n_videos):
        plan = generation_plan(cfg, cfg.seed + i)
        t0 = time.perf_counter()
        out.append(generate(plan, models, PromptSource(eps[i]), workers or cfg.workers))
        _log(log, f"video {i}: {plan.n_frames} frames in {time.perf_counter() - t0:.1f}s")
    return out


def real_videos(cfg: RunConfig, n_frames: int, dtype=np.float64) -> np.ndarray:
    """First ``n_frames`` of every eval episode, (N, n, 3, H, W)."""
    return np.stack([render_frames(e, range(n_frames)).astype(dtype) for e in eval_set(cfg)])


def evaluate(cfg: RunConfig, gen, real=None, lengths=None) -> dict:
    """avg_fid and B-FVD at every requested prefix length of a generated population."""
    gen = np.asarray(gen)
    if gen.ndim == 4:
        gen = gen[None]
    n = gen.shape[1]
    real = real_videos(cfg, n, np.float32) if real is None else np.asarray(real)
    ext = FeatureExtractor(gen.shape[2:], seed=cfg.extractor_seed)
    lengths = sorted(set(lengths or [n]))
    blocks = b_fvd_blocks(real, gen, cfg.block, ext)
    res = {
        "avg_fid": avg_fid(real, gen, ext),
        f"b_fvd_{cfg.block}": float(np.mean(blocks)),
        "blocks": blocks,
        "extractor_seed": cfg.extractor_seed,
        "n_generated": int(gen.shape[0]),
        "n_real": int(real.shape[0]),
        "frames": n,
    }
    per_len = {}
    for k in lengths:
        nb = k // cfg.block
        if nb < 1 or k > n:
            raise ValueError(f"cannot measure a {k}-frame prefix of {n} frames with block {cfg.block}")
        per_len[str(k)] = float(np.mean(blocks[:nb]))
    res["b_fvd_by_length"] = per_len
    return res


def local_clip_eval(cfg: RunConfig, model: MTD, vae: TKLVAE, n_clips: int = 32, seed: int = 0, chunk: int = 16) -> dict:
    """B-FVD of in-filled eval clips: real endpoints in, L - 2 generated middle frames out."""
    if model.mode != LOCAL:
        raise ValueError("local_clip_eval needs a local model")
    r = np.random.default_rng(np.random.SeedSequence([5555, model.depth]))
    eps = eval_set(cfg)
    real, prompts = [], []
    for i in range(n_clips):
        v, p, _ = sample_training_clip(eps[i % len(eps)], model.depth, cfg.L, cfg.m, r)
        real.append(v)
        prompts.append(p)
    real, prompts = np.stack(real), np.stack(prompts)
    gen = []
    for s in range(0, n_clips, chunk):
        v0c = np.zeros_like(real[s : s + chunk])
        v0c[:, 0], v0c[:, -1] = real[s : s + chunk, 0], real[s : s + chunk, -1]
        gen.append(sample(prompts[s : s + chunk], v0c, LOCAL, model, vae, [seed, s], allow_untrained=True))
    gen = np.concatenate(gen)
    ext = FeatureExtractor(real.shape[2:], seed=cfg.extractor_seed)
    return {
        f"b_fvd_{cfg.L}": float(np.mean(b_fvd_blocks(real, gen, cfg.L, ext))),
        "middle_mse": float(np.mean((gen[:, 1:-1] - real[:, 1:-1]) ** 2)),
        "n_clips": n_clips,
    }
