"""Synthetic long "cartoon" episodes with per-frame condition rows.

An episode is a script of shots. Each shot has a background palette and one
or two sprites moving with integer kinematics (positions in 1/16 pixel,
reflected at the frame borders). Rendering and condition rows are pure
functions of (episode, frame index) computed in integer arithmetic, so
episodes are reproducible everywhere from their id alone.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .plan import depth_stride, span

SUBPIXEL = 16
N_PALETTES = 6
N_KINDS = 4
PROMPT_TOKENS = 4
PROMPT_DIM = 16
TRAIN_EPISODES = range(0, 64)
EVAL_EPISODES = range(1000, 1016)

# (top RGB, bottom RGB) vertical gradients
PALETTES = (
    ((24, 40, 96), (88, 120, 200)),
    ((200, 176, 120), (120, 90, 40)),
    ((32, 96, 48), (150, 210, 120)),
    ((120, 24, 40), (240, 140, 110)),
    ((60, 60, 60), (190, 190, 200)),
    ((230, 220, 90), (90, 40, 120)),
)
SPRITE_COLORS = ((250, 250, 250), (20, 20, 20), (255, 60, 30), (40, 200, 255))


@dataclass(frozen=True)
class Sprite:
    kind: int  # 0 square, 1 disc, 2 diamond, 3 cross
    size: int  # pixels
    x0: int  # subpixel units
    y0: int
    vx: int  # subpixel units per frame
    vy: int


@dataclass(frozen=True)
class Shot:
    start: int
    end: int  # exclusive
    palette: int
    sprites: tuple


@dataclass(frozen=True)
class SyntheticEpisode:
    episode_id: int
    length: int
    height: int
    width: int
    shots: tuple = field(repr=False)

    @classmethod
    def from_id(cls, episode_id: int, length: int = 3600, size: int = 32) -> "SyntheticEpisode":
        r = np.random.default_rng(np.random.SeedSequence([0xD0D, int(episode_id)]))
        n_shots = int(r.integers(2, 7))
        min_len = max(16, length // (3 * n_shots))
        cuts = _shot_cuts(r, length, n_shots, min_len)
        shots = []
        prev_palette = -1
        for i in range(n_shots):
            palette = int(r.integers(N_PALETTES - 1))
            if palette >= prev_palette >= 0:
                palette += 1  # consecutive shots never share a background
            prev_palette = palette
            sprites = []
            for _ in range(int(r.integers(1, 3))):
                s = int(r.integers(6, 10))
                room = (size - s) * SUBPIXEL
                sprites.append(
                    Sprite(
                        kind=int(r.integers(N_KINDS)),
                        size=s,
                        x0=int(r.integers(room)),
                        y0=int(r.integers(room)),
                        vx=int(r.integers(1, 9)) * int(r.choice([-1, 1])),
                        vy=int(r.integers(0, 9)) * int(r.choice([-1, 1])),
                    )
                )
            shots.append(Shot(cuts[i], cuts[i + 1], palette, tuple(sprites)))
        return cls(int(episode_id), length, size, size, tuple(shots))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticEpisode":
        d = json.loads(text)
        shots = tuple(
            Shot(s["start"], s["end"], s["palette"], tuple(Sprite(**sp) for sp in s["sprites"])) for s in d["shots"]
        )
        return cls(d["episode_id"], d["length"], d["height"], d["width"], shots)

    def shot_index(self, index: int) -> int:
        self._check(index)
        for i, shot in enumerate(self.shots):
            if index < shot.end:
                return i
        raise AssertionError("unreachable")  # pragma: no cover

    def shot_boundaries(self) -> list[int]:
        return [s.start for s in self.shots[1:]]

    def _check(self, index: int) -> None:
        if not 0 <= index < self.length:
            raise IndexError(f"frame index {index} out of range for episode of length {self.length}")


def _shot_cuts(r, length, n_shots, min_len):
    free = length - n_shots * min_len
    w = r.integers(1, 1000, n_shots)
    extra = (free * w) // w.sum()
    lens = min_len + extra
    lens[-1] += length - lens.sum()
    return [0] + [int(c) for c in np.cumsum(lens)]


def _reflect(p: int, room: int) -> int:
    if room <= 0:
        return 0
    period = 2 * room
    q = p % period
    return q if q < room else period - q


def sprite_position(sprite: Sprite, t: int, height: int, width: int) -> tuple[int, int]:
    """Pixel (x, y) of the sprite's top-left corner ``t`` frames into its shot."""
    x = _reflect(sprite.x0 + sprite.vx * t, (width - sprite.size) * SUBPIXEL)
    y = _reflect(sprite.y0 + sprite.vy * t, (height - sprite.size) * SUBPIXEL)
    return x // SUBPIXEL, y // SUBPIXEL


def sprite_velocity_sign(sprite: Sprite, t: int, height: int, width: int) -> tuple[int, int]:
    def sign(p0, v, room):
        if room <= 0 or v == 0:
            return 0
        q = (p0 + v * t) % (2 * room)
        s = 1 if v > 0 else -1
        return s if q < room else -s

    return (
        sign(sprite.x0, sprite.vx, (width - sprite.size) * SUBPIXEL),
        sign(sprite.y0, sprite.vy, (height - sprite.size) * SUBPIXEL),
    )


def _sprite_mask(kind: int, s: int) -> np.ndarray:
    yy, xx = np.mgrid[0:s, 0:s]
    c2 = s - 1  # twice the centre coordinate
    dx, dy = np.abs(2 * xx - c2), np.abs(2 * yy - c2)
    if kind == 0:
        return np.ones((s, s), dtype=bool)
    if kind == 1:
        return dx * dx + dy * dy <= s * s
    if kind == 2:
        return dx + dy <= s
    return (dx <= s // 3) | (dy <= s // 3)


def render_frame_u8(episode: SyntheticEpisode, index: int) -> np.ndarray:
    shot = episode.shots[episode.shot_index(index)]
    h, w = episode.height, episode.width
    top, bottom = (np.array(c, dtype=np.int64) for c in PALETTES[shot.palette])
    rows = np.arange(h, dtype=np.int64)[:, None]
    grad = (top[None, :] * (h - 1 - rows) + bottom[None, :] * rows) // (h - 1)  # (h, 3)
    img = np.broadcast_to(grad[:, None, :], (h, w, 3)).copy()
    t = index - shot.start
    for sp in shot.sprites:
        x, y = sprite_position(sp, t, h, w)
        mask = _sprite_mask(sp.kind, sp.size)
        region = img[y : y + sp.size, x : x + sp.size]
        region[mask] = SPRITE_COLORS[sp.kind]
    return img.transpose(2, 0, 1).astype(np.uint8)


def render_frame(episode: SyntheticEpisode, index: int) -> np.ndarray:
    """(3, H, W) float64 frame with values in [-1, 1]."""
    return render_frame_u8(episode, index).astype(np.float64) / 127.5 - 1.0


def render_frames(episode: SyntheticEpisode, indices) -> np.ndarray:
    return np.stack([render_frame(episode, int(i)) for i in indices])


def condition_row(episode: SyntheticEpisode, index: int) -> np.ndarray:
    """(PROMPT_TOKENS, PROMPT_DIM) structured stand-in for a caption embedding.

    Token 0 describes the shot (palette one-hot, shot id), tokens 1-2 the
    sprite slots (kind one-hot, pixel position, velocity direction, size),
    token 3 a multi-frequency encoding of the sprite positions.
    """
    si = episode.shot_index(index)
    shot = episode.shots[si]
    h, w = episode.height, episode.width
    t = index - shot.start
    row = np.zeros((PROMPT_TOKENS, PROMPT_DIM))
    row[0, shot.palette] = 1.0
    row[0, N_PALETTES] = np.sin(si * 0.7)
    row[0, N_PALETTES + 1] = np.cos(si * 0.7)
    row[0, N_PALETTES + 2] = len(shot.sprites) / 2.0
    col = 0
    for slot, sp in enumerate(shot.sprites[:2]):
        x, y = sprite_position(sp, t, h, w)
        sx, sy = sprite_velocity_sign(sp, t, h, w)
        cx = (2.0 * x + sp.size) / w - 1.0
        cy = (2.0 * y + sp.size) / h - 1.0
        tok = row[1 + slot]
        tok[0] = 1.0
        tok[1 + sp.kind] = 1.0
        tok[5], tok[6] = cx, cy
        tok[7], tok[8] = sx * abs(sp.vx) / 8.0, sy * abs(sp.vy) / 8.0
        tok[9] = sp.size / 10.0
        for f in (1.0, 3.0):
            row[3, col : col + 4] = (np.sin(np.pi * f * cx), np.cos(np.pi * f * cx), np.sin(np.pi * f * cy), np.cos(np.pi * f * cy))
            col += 4
    return row


def condition_rows(episode: SyntheticEpisode, indices) -> np.ndarray:
    return np.stack([condition_row(episode, int(i)) for i in indices])


class PromptSource:
    """Condition rows for every absolute frame index of one episode."""

    def __init__(self, episode: SyntheticEpisode, offset: int = 0):
        self.episode = episode
        self.offset = offset

    def __len__(self) -> int:
        return self.episode.length - self.offset

    def rows(self, indices) -> np.ndarray:
        idx = [int(i) + self.offset for i in indices]
        bad = [i - self.offset for i in idx if not 0 <= i < self.episode.length]
        if bad:
            raise KeyError(f"prompt source has no rows for frame indices {bad[:8]}{'...' if len(bad) > 8 else ''}")
        return condition_rows(self.episode, idx)

    def frames(self, indices) -> np.ndarray:
        return render_frames(self.episode, [int(i) + self.offset for i in indices])


def clip_indices(start: int, L: int, stride: int) -> np.ndarray:
    return start + stride * np.arange(L)


def sample_training_clip(episode: SyntheticEpisode, depth: int, L: int, m: int, rng: np.random.Generator):
    """L frames at the depth's stride from a random start, with matching condition rows.

    Returns (video (L, 3, H, W), prompts (L, PROMPT_TOKENS, PROMPT_DIM), indices).
    """
    stride = depth_stride(L, m, depth)
    need = span(L, m, depth)
    if need > episode.length:
        raise ValueError(f"episode {episode.episode_id} has {episode.length} frames, depth {depth} clips need {need}")
    start = int(rng.integers(0, episode.length - need + 1))
    idx = clip_indices(start, L, stride)
    return render_frames(episode, idx), condition_rows(episode, idx), idx


def episodes(ids, length: int = 3600, size: int = 32) -> list[SyntheticEpisode]:
    return [SyntheticEpisode.from_id(i, length, size) for i in ids]
