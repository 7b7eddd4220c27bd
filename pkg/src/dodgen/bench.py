"""Sequential versus depth-parallel generation timing.

The sequential arm runs every segment one after another; the parallel arm
runs the segments of each depth on a worker pool. Both must produce the
same video bit for bit.
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .hierarchy import GenerationPlan, Models, generate


def _counts(plan_or_counts) -> list[int]:
    if isinstance(plan_or_counts, GenerationPlan):
        return plan_or_counts.task_counts()
    return [int(c) for c in plan_or_counts]


def predicted_times(plan_or_counts, workers, t_call: float) -> tuple[float, float]:
    """(sequential, parallel) seconds: sum of tasks vs per-depth ceil(tasks / workers) rounds."""
    if t_call <= 0:
        raise ValueError(f"t_call must be positive, got {t_call}")
    counts = _counts(plan_or_counts)
    if workers is None or workers == math.inf:
        rounds = [1 if c else 0 for c in counts]
    else:
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        rounds = [math.ceil(c / workers) for c in counts]
    return sum(counts) * t_call, sum(rounds) * t_call


def predict_speedup(plan_or_counts, workers, t_call: float = 1.0) -> float:
    """Percentage (1 - parallel / sequential) * 100; ``workers=None`` means unbounded."""
    seq, par = predicted_times(plan_or_counts, workers, t_call)
    return (1.0 - par / seq) * 100.0


def speedup_pct(sequential: float, parallel: float) -> float:
    return (1.0 - parallel / sequential) * 100.0


@dataclass
class BenchReport:
    L: int
    m: int
    n_frames: int
    workers: int
    T: int
    task_counts: list
    sequential_s: float
    parallel_s: float
    speedup: float
    t_call: float
    predicted_parallel_s: float
    predicted_speedup: float
    identical: bool
    runs_sequential: list = field(default_factory=list)
    runs_parallel: list = field(default_factory=list)
    cpu_count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [
            ("Method", "Frames", "Segments", "Time (s)", "Speedup"),
            ("sequential", str(self.n_frames), str(sum(self.task_counts)), f"{self.sequential_s:.2f}", "-"),
            (f"parallel x{self.workers}", str(self.n_frames), str(sum(self.task_counts)), f"{self.parallel_s:.2f}", f"{self.speedup:.2f}%"),
            (f"predicted x{self.workers}", str(self.n_frames), str(sum(self.task_counts)), f"{self.predicted_parallel_s:.2f}", f"{self.predicted_speedup:.2f}%"),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
        lines.insert(1, "-+-".join("-" * w for w in widths))
        return "\n".join(lines)


def run_bench(plan: GenerationPlan, models: Models, prompt_source, workers: int, repeats: int = 3, log=None) -> BenchReport:
    """Median-of-``repeats`` wall time for both arms after one untimed warmup."""
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    t0 = time.perf_counter()
    ref = generate(plan, models, prompt_source, workers=1)
    t_call = (time.perf_counter() - t0) / sum(plan.task_counts())
    seq_runs, par_runs = [], []
    identical = True
    for r in range(repeats):
        for arm, runs, w in (("sequential", seq_runs, 1), ("parallel", par_runs, workers)):
            t0 = time.perf_counter()
            out = generate(plan, models, prompt_source, workers=w)
            runs.append(time.perf_counter() - t0)
            same = np.array_equal(out.frames, ref.frames) and np.array_equal(out.provenance, ref.provenance)
            identical &= same
            if not same:
                raise AssertionError(f"{arm} run {r} differs from the reference output")
            if log is not None:
                log(f"{arm} run {r}: {runs[-1]:.2f}s")
    seq, par = float(np.median(seq_runs)), float(np.median(par_runs))
    _, pred_par = predicted_times(plan, workers, t_call)
    return BenchReport(
        L=plan.L,
        m=plan.m,
        n_frames=plan.n_frames,
        workers=workers,
        T=models.diffusion[1].config.T,
        task_counts=plan.task_counts(),
        sequential_s=seq,
        parallel_s=par,
        speedup=speedup_pct(seq, par),
        t_call=t_call,
        predicted_parallel_s=pred_par,
        predicted_speedup=predict_speedup(plan, workers, t_call),
        identical=identical,
        runs_sequential=seq_runs,
        runs_parallel=par_runs,
        cpu_count=os.cpu_count() or 1,
    )
