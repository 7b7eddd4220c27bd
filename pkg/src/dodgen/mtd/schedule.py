"""Variance schedule, forward corruption and the ancestral reverse step.

Timesteps are 1-based: ``t`` runs over 1..T and ``alpha_bar[t - 1]`` is the
cumulative product up to step t. ``alpha_bar_prev`` at t = 1 is 1.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("every beta must lie in (0, 1)")
        object.__setattr__(self, "betas", b)

    @property
    def T(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    def alpha_bar(self, t) -> np.ndarray:
        self.check_t(t)
        return self.alpha_bars[np.asarray(t) - 1]

    def alpha_bar_prev(self, t) -> np.ndarray:
        self.check_t(t)
        ab = np.concatenate([[1.0], self.alpha_bars])
        return ab[np.asarray(t) - 1]

    def check_t(self, t) -> None:
        ta = np.asarray(t)
        if np.any(ta < 1) or np.any(ta > self.T):
            raise ValueError(f"timestep {t} outside [1, {self.T}]")

    def is_terminal_noisy(self, threshold: float = 0.01) -> bool:
        return bool(self.alpha_bars[-1] <= threshold)


def make_schedule(T: int, beta_start: float, beta_end: float) -> DiffusionSchedule:
    """Linear beta ramp from ``beta_start`` to ``beta_end`` over T steps."""
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return DiffusionSchedule(np.linspace(beta_start, beta_end, T))


def _bcast(v, ndim):
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (ndim - v.ndim))


def q_sample(x0: np.ndarray, t, eps: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.

    ``t`` is a scalar or one timestep per leading batch item.
    """
    if eps.shape != x0.shape:
        raise ValueError(f"noise shape {eps.shape} does not match x0 shape {x0.shape}")
    ab = _bcast(sched.alpha_bar(t), x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def posterior_variance(t, sched: DiffusionSchedule) -> np.ndarray:
    """(1 - alpha_bar_{t-1}) beta_t / (1 - alpha_bar_t); zero at t = 1."""
    ab = sched.alpha_bar(t)
    return (1.0 - sched.alpha_bar_prev(t)) * sched.betas[np.asarray(t) - 1] / (1.0 - ab)


def ddpm_sample_step(x_t: np.ndarray, t: int, eps_hat: np.ndarray, sched: DiffusionSchedule, noise: np.ndarray | None, literal_variance: bool = False) -> np.ndarray:
    """One ancestral step x_t -> x_{t-1}.

    The noise is scaled by the posterior standard deviation; with
    ``literal_variance`` it is scaled by the variance itself instead.
    No noise is added at t = 1.
    """
    sched.check_t(t)
    alpha = sched.alphas[t - 1]
    ab = sched.alpha_bars[t - 1]
    mean = (x_t - (1.0 - alpha) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
    if t == 1 or noise is None:
        return mean
    var = float(posterior_variance(t, sched))
    coef = var if literal_variance else np.sqrt(var)
    return mean + coef * noise
