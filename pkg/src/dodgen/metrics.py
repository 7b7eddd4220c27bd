"""Frechet distances over fixed random-projection features.

``avg_fid`` compares the distribution of single-frame features. ``b_fvd``
splits long videos into non-overlapping X-frame blocks and, block position
by block position, compares clip features across a population of videos;
the per-block distances are averaged.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

FEATURE_DIM = 32
RIDGE = 1e-6


class FeatureExtractor:
    """Seeded projection of flattened frames (and clips) to ``dim`` features."""

    def __init__(self, frame_shape=(3, 32, 32), dim: int = FEATURE_DIM, seed: int = 0):
        self.frame_shape = tuple(frame_shape)
        self.dim = dim
        self.seed = seed
        d_in = int(np.prod(self.frame_shape))
        r = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        self._w_frame = r.standard_normal((d_in, dim)) / np.sqrt(d_in)
        self._w_diff = r.standard_normal((d_in, dim)) * (2.0 / np.sqrt(d_in))
        self._clip_proj: dict[int, np.ndarray] = {}

    def _flat(self, frames) -> np.ndarray:
        f = np.asarray(frames)
        if f.shape[-3:] != self.frame_shape:
            raise ValueError(f"frames must end in {self.frame_shape}, got {f.shape}")
        return f.reshape(*f.shape[:-3], -1)

    def frame_features(self, frames, chunk: int = 4096) -> np.ndarray:
        """(..., C, H, W) -> (..., dim); float64 in chunks so long videos stay cheap."""
        flat = self._flat(frames)
        rows = flat.reshape(-1, flat.shape[-1])
        out = np.empty((rows.shape[0], self.dim))
        for s in range(0, rows.shape[0], chunk):
            out[s : s + chunk] = np.tanh(rows[s : s + chunk].astype(np.float64) @ self._w_frame)
        return out.reshape(*flat.shape[:-1], self.dim)

    def _proj(self, X: int) -> np.ndarray:
        if X not in self._clip_proj:
            r = np.random.default_rng(np.random.SeedSequence([self.seed, 1, X]))
            d_in = (2 * X - 1) * self.dim
            self._clip_proj[X] = r.standard_normal((d_in, self.dim)) / np.sqrt(d_in)
        return self._clip_proj[X]

    def clip_features(self, clips) -> np.ndarray:
        """(..., X, C, H, W) -> (..., dim): frame features plus frame-difference features."""
        flat = self._flat(clips).astype(np.float64)
        X = flat.shape[-2]
        if X < 2:
            raise ValueError(f"clips need at least 2 frames, got {X}")
        f = np.tanh(flat @ self._w_frame)
        g = np.tanh(np.diff(flat, axis=-2) @ self._w_diff)
        z = np.concatenate([f.reshape(*f.shape[:-2], -1), g.reshape(*g.shape[:-2], -1)], axis=-1)
        return z @ self._proj(X)


@dataclass(frozen=True)
class FrechetStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int

    @classmethod
    def fit(cls, features, ridge: float = RIDGE) -> "FrechetStats":
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"features must be (n >= 1, d), got {x.shape}")
        n, d = x.shape
        cov = np.cov(x, rowvar=False).reshape(d, d) if n > 1 else np.zeros((d, d))
        return cls(x.mean(axis=0), cov + ridge * np.eye(d), n)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _sqrt_psd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_distance(a: FrechetStats, b: FrechetStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), never negative."""
    if a.dim != b.dim:
        raise ValueError(f"feature dimensions differ: {a.dim} vs {b.dim}")
    sa = _sqrt_psd(a.cov)
    m = sa @ b.cov @ sa  # same spectrum as S_a S_b, but symmetric
    w = np.linalg.eigvalsh((m + m.T) / 2)
    if w.min() < -1e-8:
        warnings.warn(f"clamping negative eigenvalue {w.min():.3e} in covariance product", RuntimeWarning, stacklevel=2)
    tr_sqrt = np.sum(np.sqrt(np.clip(w, 0, None)))
    diff = a.mean - b.mean
    fd = diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_sqrt
    return float(max(fd, 0.0))


def avg_fid(real_frames, gen_frames, extractor: FeatureExtractor) -> float:
    """Frechet distance between frame-feature fits; frames are pooled regardless of order."""
    need = extractor.dim + 1
    real = extractor.frame_features(real_frames).reshape(-1, extractor.dim)
    gen = extractor.frame_features(gen_frames).reshape(-1, extractor.dim)
    for name, f in (("real", real), ("generated", gen)):
        if f.shape[0] < need:
            raise ValueError(f"avg_fid needs at least {need} {name} frames, got {f.shape[0]}")
    return frechet_distance(FrechetStats.fit(real), FrechetStats.fit(gen))


def _as_population(videos) -> np.ndarray:
    v = np.asarray(videos)  # blocks are converted to float64 one at a time
    if v.ndim == 4:  # one video
        v = v[None]
    if v.ndim != 5:
        raise ValueError(f"videos must be (n, C, H, W) or (N, n, C, H, W), got {v.shape}")
    return v


def b_fvd_blocks(real, gen, X: int, extractor: FeatureExtractor) -> list[float]:
    """Per-block Frechet distances of clip features over non-overlapping X-frame blocks."""
    if X < 2:
        raise ValueError(f"block length X must be >= 2, got {X}")
    real, gen = _as_population(real), _as_population(gen)
    for name, v in (("real", real), ("generated", gen)):
        if v.shape[1] < X:
            raise ValueError(f"{name} video has {v.shape[1]} frames, shorter than the block length {X}")
    n_blocks = min(real.shape[1], gen.shape[1]) // X
    out = []
    for k in range(n_blocks):
        sl = slice(k * X, (k + 1) * X)
        fr = extractor.clip_features(real[:, sl])
        fg = extractor.clip_features(gen[:, sl])
        out.append(frechet_distance(FrechetStats.fit(fr), FrechetStats.fit(fg)))
    return out


def b_fvd(real, gen, X: int, extractor: FeatureExtractor) -> float:
    """Mean block Frechet distance; the trailing partial block is dropped."""
    return float(np.mean(b_fvd_blocks(real, gen, X, extractor)))
