"""Expensive end-to-end measurements for the acceptance suite.

Trains (or loads from ``$DODGEN_CACHE``) the default-config models, generates
eval videos, runs the parallel benchmark and the multi-scale injection
ablation, then stores every number in one JSON file so that later test runs
only read it. Run directly to fill the cache::

    python3 -m tests.acceptance_runner
"""
from __future__ import annotations

import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

import dodgen.hierarchy as H
from dodgen.bench import predict_speedup, run_bench
from dodgen.config import RunConfig
from dodgen.dataset import PromptSource
from dodgen.hierarchy import Models, generate, plan_frames, truncate
from dodgen.mtd.condition import LOCAL
from dodgen.pipeline import (
    cached_diffusion,
    cached_vae,
    eval_set,
    evaluate,
    local_clip_eval,
    real_videos,
    untrained_models,
)

CACHE = Path(os.environ.get("DODGEN_CACHE", "~/.cache/dodgen")).expanduser()
N_FULL = 6  # full-length generated videos
ABLATION_STEPS = 400
ABLATION_SEEDS = (0, 1, 2)
ABLATION_CLIPS = 32
BENCH_WORKERS = 8
VERSION = 1


def results_path(cfg: RunConfig) -> Path:
    key = f"{cfg.digest()}-v{VERSION}-n{N_FULL}-a{ABLATION_STEPS}-cpu{os.cpu_count()}"
    return CACHE / f"acceptance-{key}.json"


def _sha(a) -> str:
    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()


class SeamSpy:
    """Wraps the hierarchy's sampler and task runner to audit every local segment."""

    def __init__(self):
        self.calls = 0
        self.endpoint_failures = 0
        self.joins = []  # (left index, right index, sha(left), sha(right))

    def __enter__(self):
        self._sample, self._run_task = H.sample, H.run_task

        def sample(p, v0c, mode, *a, **k):
            out = self._sample(p, v0c, mode, *a, **k)
            if mode == LOCAL:
                self.calls += 1
                if not (np.array_equal(out[:, 0], v0c[:, 0]) and np.array_equal(out[:, -1], v0c[:, -1])):
                    self.endpoint_failures += 1
            return out

        def run_task(task, prompts, left, right, models=None):
            if task.endpoints:
                a, b = task.endpoints
                self.joins.append((a, b, _sha(left), _sha(right)))
            return self._run_task(task, prompts, left, right, models)

        H.sample, H.run_task = sample, run_task
        return self

    def __exit__(self, *exc):
        H.sample, H.run_task = self._sample, self._run_task

    def seam_mismatches(self, frames) -> int:
        return sum(_sha(frames[a]) != la or _sha(frames[b]) != rb for a, b, la, rb in self.joins)


def _bfvd16(cfg, gen, n_frames):
    return evaluate(cfg, gen, real_videos(cfg, n_frames, np.float32), lengths=[n_frames])


def compute(cfg: RunConfig | None = None, cache=None, n_full=N_FULL, ablation_steps=ABLATION_STEPS, ablation_seeds=ABLATION_SEEDS,
            ablation_clips=ABLATION_CLIPS, bench_workers=BENCH_WORKERS, bench_frames=226, log=print) -> dict:
    cfg = cfg or RunConfig().validate()
    cache = CACHE if cache is None else cache
    t_start = time.perf_counter()
    stamp = lambda msg: log(f"[{time.perf_counter() - t_start:8.1f}s] {msg}")
    res: dict = {"config": cfg.to_dict(), "n_full_videos": n_full, "cpu_count": os.cpu_count()}

    # 5a / 5b: training
    vae, vrep = cached_vae(cfg, cache, stamp)
    nets, drep = {}, {}
    for d in range(1, cfg.m + 1):
        nets[d], drep[str(d)] = cached_diffusion(cfg, vae, d, cache, stamp)
    res["vae"], res["diffusion"] = vrep, drep
    stamp(f"vae x{vrep['improvement']:.1f}; diffusion " + ", ".join(f"d{d} x{r['improvement']:.1f}" for d, r in drep.items()))
    models = Models(vae, nets, frame_size=cfg.frame_size)
    eps = eval_set(cfg)

    # 5c: 16-frame B-FVD for trained and epoch-0 models over every eval episode
    plan16 = lambda i: truncate(plan_frames(cfg.L, cfg.m, cfg.seed + i), 16)
    base = untrained_models(cfg)
    trained16 = np.stack([generate(plan16(i), models, PromptSource(e)).frames for i, e in enumerate(eps)]).astype(np.float32)
    untrained16 = np.stack([generate(plan16(i), base, PromptSource(e)).frames for i, e in enumerate(eps)]).astype(np.float32)
    res["bfvd16_trained"] = _bfvd16(cfg, trained16, 16)["b_fvd_16"]
    res["bfvd16_untrained"] = _bfvd16(cfg, untrained16, 16)["b_fvd_16"]
    stamp(f"B-FVD-16 trained {res['bfvd16_trained']:.4f} untrained {res['bfvd16_untrained']:.4f}")

    # 5d / 6: full-length generation, audited
    n = plan_frames(cfg.L, cfg.m).total_frames
    full = np.empty((n_full, n, 3, cfg.frame_size, cfg.frame_size), dtype=np.float32)
    audits = []
    for i in range(n_full):
        with SeamSpy() as spy:
            v = generate(plan_frames(cfg.L, cfg.m, cfg.seed + i), models, PromptSource(eps[i]))
        full[i] = v.frames
        audits.append(
            {
                "frames": len(v),
                "provenance_counts": v.provenance_counts(),
                "every_frame_once": bool(np.all((v.provenance >= 1) & (v.provenance <= cfg.m))),
                "local_segments": spy.calls,
                "endpoint_failures": spy.endpoint_failures,
                "seam_mismatches": spy.seam_mismatches(v.frames),
                "joins": len(spy.joins),
                "trace_violations": len(H.audit_trace(v)),
                "prefix16_matches": bool(np.array_equal(v.frames[:16].astype(np.float32), trained16[i])),
                "sha256": v.content_hash(),
            }
        )
        stamp(f"full video {i}: {audits[-1]}")
    res["full_audits"] = audits
    ev = evaluate(cfg, full, real_videos(cfg, n, np.float32), lengths=sorted({16, min(226, n), n}))
    res["bfvd_by_length"] = ev["b_fvd_by_length"]
    res["avg_fid_full"] = ev["avg_fid"]
    res["bfvd_blocks_full"] = ev["blocks"]
    del full
    stamp(f"B-FVD-16 by length {res['bfvd_by_length']}")

    # 7: parallel speedup on the 226-frame plan
    rep = run_bench(truncate(plan_frames(cfg.L, cfg.m, cfg.seed), bench_frames), models, PromptSource(eps[0]), bench_workers, 3, stamp)
    res["bench"] = rep.to_dict()
    res["predicted_unbounded_3376"] = predict_speedup(plan_frames(cfg.L, cfg.m), None)
    stamp(f"bench speedup {rep.speedup:.2f}% (predicted {rep.predicted_speedup:.2f}%)")

    # 9: multi-scale injection ablation on the deepest local model
    abl = {"steps": ablation_steps, "seeds": list(ablation_seeds), "on": [], "off": []}
    for s in ablation_seeds:
        for ms, arm in ((True, "on"), (False, "off")):
            model, r = cached_diffusion(cfg, vae, cfg.m, cache, stamp, multi_scale=ms, seed=100 + s, steps=ablation_steps)
            e = local_clip_eval(cfg, model, vae, ablation_clips, seed=s)
            abl[arm].append({**e, "heldout_loss": r["heldout_loss"]})
            stamp(f"ablation MI={arm} seed {s}: {e}")
    res["ablation"] = abl
    res["runtime_s"] = time.perf_counter() - t_start
    return res


def load_or_compute(log=print) -> dict:
    cfg = RunConfig().validate()
    path = results_path(cfg)
    if path.is_file():
        return json.loads(path.read_text(encoding="utf-8"))
    res = compute(log=log)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(res, indent=2, sort_keys=True), encoding="utf-8")
    return res


if __name__ == "__main__":
    out = load_or_compute(lambda m: print(m, flush=True))
    print(json.dumps({k: out[k] for k in ("bfvd16_trained", "bfvd16_untrained", "bfvd_by_length", "runtime_s")}, indent=2))
    sys.exit(0)
