"""Mask temporal diffusion: schedule, denoiser, conditions, training and sampling."""
from .condition import GLOBAL, LOCAL, VisualCondition, build_visual_condition
from .diffusion import MTD, DiffusionConfig, LatentPool, build_pool, eval_loss, sample, sample_latents, train, training_loss
from .schedule import DiffusionSchedule, ddpm_sample_step, make_schedule, posterior_variance, q_sample
from .unet import Mask3DUNet, UNetConfig, timestep_embedding

__all__ = [
    "GLOBAL",
    "LOCAL",
    "MTD",
    "DiffusionConfig",
    "DiffusionSchedule",
    "LatentPool",
    "Mask3DUNet",
    "UNetConfig",
    "VisualCondition",
    "build_pool",
    "build_visual_condition",
    "ddpm_sample_step",
    "eval_loss",
    "make_schedule",
    "posterior_variance",
    "q_sample",
    "sample",
    "sample_latents",
    "timestep_embedding",
    "train",
    "training_loss",
]
