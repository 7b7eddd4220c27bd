"""Coarse-to-fine generation: one global pass, then local passes per depth.

Depth 1 produces L keyframes ``(L - 1) ** (m - 1)`` frames apart. Every
adjacent pair of frames from depth d - 1 becomes the endpoints of one
depth-d segment, which fills in the L - 2 frames between them. Segments
of the same depth are independent and run on a worker pool; depths run one
after another.
"""
from __future__ import annotations

import hashlib
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .core.serialize import dump_json
from .mtd.condition import GLOBAL, LOCAL
from .mtd.diffusion import sample
from .plan import depth_stride, total_frames


class MissingCheckpointError(LookupError):
    pass


def task_seed(seed: int, depth: int, first_index: int) -> int:
    """Seed from (global seed, depth, first frame index) only, so truncation and worker count never matter."""
    return int(np.random.SeedSequence([int(seed), int(depth), int(first_index)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SegmentTask:
    depth: int
    indices: tuple
    seed: int

    @property
    def first(self) -> int:
        return self.indices[0]

    @property
    def endpoints(self) -> tuple | None:
        return (self.indices[0], self.indices[-1]) if self.depth >= 2 else None

    @property
    def produced(self) -> tuple:
        return self.indices if self.depth == 1 else self.indices[1:-1]


@dataclass(frozen=True)
class GenerationPlan:
    L: int
    m: int
    seed: int
    total_frames: int
    n_frames: int
    strides: tuple
    tasks: tuple  # one tuple of SegmentTask per depth

    def depth_tasks(self, depth: int) -> tuple:
        return self.tasks[depth - 1]

    def task_counts(self) -> list[int]:
        return [len(t) for t in self.tasks]

    def all_tasks(self) -> list[SegmentTask]:
        return [t for level in self.tasks for t in level]

    def summary(self) -> dict:
        return {
            "L": self.L,
            "m": self.m,
            "seed": self.seed,
            "total_frames": self.total_frames,
            "n_frames": self.n_frames,
            "strides": list(self.strides),
            "task_counts": self.task_counts(),
            "frames_per_depth": [len(self.depth_frames(d)) for d in range(1, self.m + 1)],
        }

    def depth_frames(self, depth: int) -> list[int]:
        """Frame indices below ``n_frames`` first produced at ``depth``."""
        return sorted({i for t in self.depth_tasks(depth) for i in t.produced if i < self.n_frames})


def plan_frames(L: int, m: int, seed: int = 0) -> GenerationPlan:
    if m < 1:
        raise ValueError(f"depth m must be >= 1, got {m}")
    if L < 2 or (m >= 2 and L < 3):
        raise ValueError(f"L={L} leaves no middle frames to fill; need L >= 3 for m >= 2")
    strides = tuple(depth_stride(L, m, d) for d in range(1, m + 1))
    offsets = np.arange(L)
    levels = [(SegmentTask(1, tuple(int(i) for i in strides[0] * offsets), task_seed(seed, 1, 0)),)]
    for d in range(2, m + 1):
        parents = sorted(set().union(*(t.indices for lv in levels for t in lv)))
        level = []
        for a, b in zip(parents[:-1], parents[1:]):
            idx = tuple(int(i) for i in a + strides[d - 1] * offsets)
            assert idx[-1] == b
            level.append(SegmentTask(d, idx, task_seed(seed, d, a)))
        levels.append(tuple(level))
    n = total_frames(L, m)
    return GenerationPlan(L, m, seed, n, n, strides, tuple(levels))


def truncate(plan: GenerationPlan, n_frames: int) -> GenerationPlan:
    """Keep the tasks needed for the first ``n_frames`` frames.

    A task survives if it produces a frame below ``n_frames`` or produces an
    endpoint that a surviving deeper task depends on. Partial tasks run
    whole; the output is sliced afterwards.
    """
    if n_frames < plan.L:
        raise ValueError(f"n_frames={n_frames} is below the segment length L={plan.L}")
    if n_frames > plan.total_frames:
        raise ValueError(f"n_frames={n_frames} exceeds the plan's {plan.total_frames} frames")
    kept = [None] * plan.m
    needed: set[int] = set()
    for d in range(plan.m, 0, -1):
        level = tuple(t for t in plan.depth_tasks(d) if min(t.produced) < n_frames or needed.intersection(t.produced))
        kept[d - 1] = level
        needed = {i for t in level if t.endpoints for i in t.endpoints}
    return GenerationPlan(plan.L, plan.m, plan.seed, plan.total_frames, n_frames, plan.strides, tuple(kept))


def prompts_for_depth(plan: GenerationPlan, depth: int, prompt_source) -> list[np.ndarray]:
    """Condition rows (L, l_p, d_p) for every task of ``depth``, at its own indices."""
    return [prompt_source.rows(t.indices) for t in plan.depth_tasks(depth)]


# -- execution ---------------------------------------------------------------------
@dataclass
class Models:
    vae: object
    diffusion: dict  # depth -> MTD
    allow_untrained: bool = False
    frame_size: int = 32

    def check(self, m: int) -> None:
        if self.vae is None:
            raise MissingCheckpointError("no T-KLVAE checkpoint")
        missing = [d for d in range(1, m + 1) if self.diffusion.get(d) is None]
        if missing:
            raise MissingCheckpointError(f"no diffusion checkpoint for depth(s) {missing}")
        for d in range(1, m + 1):
            want = GLOBAL if d == 1 else LOCAL
            if self.diffusion[d].mode != want:
                raise ValueError(f"depth {d} needs a {want} model, got {self.diffusion[d].mode}")


@dataclass
class LongVideo:
    frames: np.ndarray  # (n, C, H, W) in [-1, 1]
    provenance: np.ndarray  # (n,) depth that produced each frame
    plan: GenerationPlan
    trace: list = field(default_factory=list)
    wall_time: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.frames.shape[0]

    def provenance_counts(self) -> list[int]:
        return [int(np.sum(self.provenance == d)) for d in range(1, self.plan.m + 1)]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.frames).tobytes())
        h.update(self.provenance.astype(np.int64).tobytes())
        return h.hexdigest()

    def manifest(self, extra: dict | None = None) -> dict:
        return {
            "plan": self.plan.summary(),
            "seeds": {f"{t.depth}:{t.first}": t.seed for t in self.plan.all_tasks()},
            "provenance": self.provenance.tolist(),
            "provenance_counts": self.provenance_counts(),
            "wall_time": self.wall_time,
            "content_sha256": self.content_hash(),
            **(extra or {}),
        }

    def save(self, directory, extra: dict | None = None) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for i, f in enumerate(to_uint8(self.frames)):
            write_ppm(d / f"frame_{i:06d}.ppm", f)
        dump_json(d / "manifest.json", self.manifest(extra))
        return d


def to_uint8(frames: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((frames + 1.0) * 127.5), 0, 255).astype(np.uint8)


def write_ppm(path, frame_u8: np.ndarray) -> None:
    """Binary P6 from a (3, H, W) uint8 frame."""
    c, h, w = frame_u8.shape
    if c != 3:
        raise ValueError(f"PPM needs 3 channels, got {c}")
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(frame_u8.transpose(1, 2, 0)).tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path} is not a binary PPM")
    w, h, vmax = int(parts[1]), int(parts[2]), int(parts[3])
    if vmax != 255:
        raise ValueError("only 8-bit PPM is supported")
    data = np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8)
    return data.reshape(h, w, 3).transpose(2, 0, 1)


# The models are handed to forked workers through this module global so they
# are never pickled; they are read-only inside the workers.
_WORKER_MODELS: Models | None = None


def _worker_init():
    threadpool_limits(1)


def run_task(task: SegmentTask, prompts: np.ndarray, left, right, models: Models | None = None):
    """Run one segment. Returns (frames for ``task.produced``, start_ns, end_ns, pid)."""
    models = models or _WORKER_MODELS
    start = time.monotonic_ns()
    net = models.diffusion[task.depth]
    p = prompts[None]
    if task.depth == 1:
        size = models.frame_size
        v0c = np.zeros((1, len(task.indices), models.vae.config.in_channels, size, size))
        out = sample(p, v0c, GLOBAL, net, models.vae, task.seed, models.allow_untrained)[0]
    else:
        v0c = np.zeros((1, len(task.indices)) + left.shape)
        v0c[0, 0], v0c[0, -1] = left, right
        out = sample(p, v0c, LOCAL, net, models.vae, task.seed, models.allow_untrained)[0]
        if not (np.array_equal(out[0], left) and np.array_equal(out[-1], right)):
            raise AssertionError(f"segment {task.depth}:{task.first} altered its endpoint frames")
        out = out[1:-1]
    return out, start, time.monotonic_ns(), os.getpid()


def generate(plan: GenerationPlan, models: Models, prompt_source, workers: int = 1, log=None) -> LongVideo:
    """Run the plan; output is bit-identical for any ``workers``."""
    global _WORKER_MODELS
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    models.check(plan.m)
    frame_size = models.frame_size
    all_prompts = {d: prompts_for_depth(plan, d, prompt_source) for d in range(1, plan.m + 1)}
    n_all = plan.total_frames
    frames = np.full((n_all, models.vae.config.in_channels, frame_size, frame_size), np.nan)
    provenance = np.zeros(n_all, dtype=np.int64)
    done_at = np.full(n_all, -1, dtype=np.int64)  # monotonic_ns at which each frame became available
    trace, wall = [], {}
    pool = None
    _WORKER_MODELS = models
    try:
        with threadpool_limits(1):
            if workers > 1:
                import multiprocessing as mp

                pool = ProcessPoolExecutor(workers, mp_context=mp.get_context("fork"), initializer=_worker_init)
            for d in range(1, plan.m + 1):
                t0 = time.perf_counter()
                tasks = plan.depth_tasks(d)
                args = []
                for task, pr in zip(tasks, all_prompts[d]):
                    if d >= 2:
                        a, b = task.endpoints
                        if provenance[a] == 0 or provenance[b] == 0:
                            raise AssertionError(f"segment {d}:{a} started before its endpoints exist")
                        args.append((task, pr, frames[a], frames[b]))
                    else:
                        args.append((task, pr, None, None))
                if pool is None:
                    results = [run_task(*a, models=models) for a in args]
                else:
                    results = list(pool.map(run_task, *zip(*args)))
                for task, (out, start, end, pid) in zip(tasks, results):
                    idx = list(task.produced)
                    frames[idx] = out
                    provenance[idx] = d
                    done_at[idx] = end
                    deps = [int(done_at[i]) for i in task.endpoints] if task.endpoints else []
                    trace.append({"depth": d, "first": task.first, "start_ns": start, "end_ns": end, "pid": pid, "deps_ready_ns": deps})
                wall[str(d)] = time.perf_counter() - t0
                if log is not None:
                    log(f"depth {d}: {len(tasks)} segments in {wall[str(d)]:.2f}s")
    finally:
        if pool is not None:
            pool.shutdown()
        _WORKER_MODELS = None
    n = plan.n_frames
    return LongVideo(frames[:n].copy(), provenance[:n].copy(), plan, trace, wall)


def audit_trace(video: LongVideo) -> list[str]:
    """Dependency violations: segments that started before an endpoint frame was finished."""
    bad = []
    for rec in video.trace:
        if any(ready < 0 or ready > rec["start_ns"] for ready in rec["deps_ready_ns"]):
            bad.append(f"{rec['depth']}:{rec['first']}")
    return bad
