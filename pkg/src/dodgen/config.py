"""Flat run configuration: one JSON file plus ``key=value`` overrides."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # hierarchy
    L: int = 16
    m: int = 3
    frames: int | None = None  # generate this many frames (truncated plan); None = all
    # data
    frame_size: int = 32
    episode_length: int = 3600
    train_episodes: int = 64
    eval_episodes: int = 16
    # T-KLVAE
    vae_base_channels: int = 16
    vae_hidden_channels: int = 32
    latent_channels: int = 4
    temporal_kernel: int = 3
    kl_weight: float = 1e-4
    vae_lr: float = 2e-3
    vae_stage1_steps: int = 800
    vae_stage1_batch: int = 16
    vae_stage2_steps: int = 150
    vae_stage2_batch: int = 2
    vae_freeze_spatial: bool = True
    # diffusion
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.2
    literal_variance: bool = False
    widths: list = field(default_factory=lambda: [32, 64])
    multi_scale: bool = True
    symmetric: bool = True
    diffusion_steps: int = 800
    diffusion_batch: int = 4
    diffusion_lr: float = 2e-3
    pool_clips: int = 200
    # run
    seed: int = 0
    workers: int = 1
    out: str = "runs/default"
    extractor_seed: int = 0
    videos: int = 1  # generated videos; video i follows eval episode i with seed + i
    block: int = 16
    bench_frames: int = 226
    bench_workers: int = 8
    bench_repeats: int = 3

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("frames",) and v is None:
                continue
            if f.type in ("int", "int | None"):
                need(isinstance(v, int) and not isinstance(v, bool), f"{f.name} must be an integer, got {v!r}")
            elif f.type == "float":
                need(isinstance(v, (int, float)) and not isinstance(v, bool), f"{f.name} must be a number, got {v!r}")
            elif f.type == "bool":
                need(isinstance(v, bool), f"{f.name} must be true or false, got {v!r}")
            elif f.type == "str":
                need(isinstance(v, str), f"{f.name} must be a string, got {v!r}")
        need(self.m >= 1, "m must be >= 1")
        need(self.L >= 3 or (self.L >= 2 and self.m == 1), "L must be >= 3 (or >= 2 with m == 1)")
        need(self.frame_size >= 4 and self.frame_size % 4 == 0, "frame_size must be a positive multiple of 4")
        need(self.T >= 2, "T must be >= 2")
        need(0 < self.beta_start <= self.beta_end < 1, "need 0 < beta_start <= beta_end < 1")
        need(self.kl_weight >= 0, "kl_weight must be >= 0")
        need(self.workers >= 1, "workers must be >= 1")
        need(isinstance(self.widths, list) and len(self.widths) == 2 and all(isinstance(w, int) and w > 0 for w in self.widths), "widths must be two positive integers")
        need(self.temporal_kernel % 2 == 1, "temporal_kernel must be odd")
        need(self.block >= 2, "block must be >= 2")
        need(self.eval_episodes >= 1 and self.train_episodes >= 1, "episode counts must be >= 1")
        need(1 <= self.videos <= self.eval_episodes, f"videos must lie in [1, eval_episodes={self.eval_episodes}]")
        need(self.bench_workers >= 1 and self.bench_repeats >= 1, "bench_workers and bench_repeats must be >= 1")
        from .plan import total_frames

        n = total_frames(self.L, self.m)
        need(self.episode_length >= n, f"episode_length {self.episode_length} is shorter than the {n}-frame plan")
        if self.frames is not None:
            need(self.L <= self.frames <= n, f"frames must lie in [{self.L}, {n}], got {self.frames}")
        need(self.L <= self.bench_frames <= n, f"bench_frames must lie in [{self.L}, {n}], got {self.bench_frames}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self, keys=None) -> str:
        d = self.to_dict()
        if keys is not None:
            d = {k: d[k] for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        if _FIELDS[name].type == "str":
            return raw
        raise ConfigError(f"cannot parse value {raw!r} for {name}") from None


def from_dict(d: dict) -> RunConfig:
    unknown = sorted(set(d) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    return RunConfig(**d).validate()


def load_config(path=None, overrides=()) -> RunConfig:
    """Read JSON (or start from defaults), apply ``key=value`` overrides, validate."""
    d = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        try:
            d = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {p} is not valid JSON: {e}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        k = k.strip()
        if k not in _FIELDS:
            raise ConfigError(f"unknown config key in override: {k}")
        d[k] = _parse_value(k, v)
    return from_dict(d)
