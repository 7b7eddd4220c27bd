"""Visual conditions (x0c, x0m) for global and local diffusion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GLOBAL = "global"
LOCAL = "local"
MODES = (GLOBAL, LOCAL)


@dataclass(frozen=True)
class VisualCondition:
    x0c: np.ndarray  # (b, L, c, h, w) encoded condition frames, zero where not given
    x0m: np.ndarray  # (b, L, 1, h, w) 1 where a frame is given

    @property
    def mode(self) -> str:
        return LOCAL if self.x0m.any() else GLOBAL


def frame_mask(mode: str, b: int, L: int, h: int, w: int) -> np.ndarray:
    check_mode(mode, L)
    m = np.zeros((b, L, 1, h, w))
    if mode == LOCAL:
        m[:, 0] = 1.0
        m[:, -1] = 1.0
    return m


def check_mode(mode: str, L: int) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == LOCAL and L < 3:
        raise ValueError(f"local mode needs L >= 3 (two endpoints plus a middle), got L={L}")


def masked_video(v0: np.ndarray, mode: str) -> np.ndarray:
    """v0c: the middle L-2 frames zeroed (local) or everything zeroed (global)."""
    check_mode(mode, v0.shape[1])
    vc = np.zeros_like(v0)
    if mode == LOCAL:
        vc[:, 0] = v0[:, 0]
        vc[:, -1] = v0[:, -1]
    return vc


def build_visual_condition(v0: np.ndarray, mode: str, vae) -> VisualCondition:
    """Encode the masked video and zero the latents of frames that are not given.

    The T-KLVAE mixes neighbouring frames, so the encoder output at masked
    positions is generally nonzero; it is cleared so the denoiser never sees
    anything derived from the middle frames.
    """
    v0 = np.asarray(v0, dtype=np.float64)
    if v0.ndim != 5:
        raise ValueError(f"video must be (b, L, C, H, W), got {v0.shape}")
    b, L = v0.shape[:2]
    vc = masked_video(v0, mode)
    z = vae.latents(vc)
    m = frame_mask(mode, b, L, z.shape[3], z.shape[4])
    return VisualCondition(z * m, m)
