"""``dodgen`` command line.

Exit codes: 0 success, 2 configuration error, 3 missing checkpoint.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .core.serialize import dump_json
from .hierarchy import MissingCheckpointError, read_ppm

EXIT_OK, EXIT_CONFIG, EXIT_MISSING = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--out", metavar="DIR", help="run directory")
    common.add_argument("--frames", type=int, help="generate only the first N frames")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="set one config key (repeatable)")
    p = argparse.ArgumentParser(prog="dodgen", description="Coarse-to-fine long video generation at desk scale.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("plan", parents=[common], help="print the generation plan without running models")
    sub.add_parser("train-vae", parents=[common], help="train the T-KLVAE")
    td = sub.add_parser("train-diffusion", parents=[common], help="train the diffusion model of one depth")
    td.add_argument("--depth", type=int, required=True, metavar="D")
    sub.add_parser("generate", parents=[common], help="generate videos into <out>/generate")
    sub.add_parser("eval", parents=[common], help="score <out>/generate against eval episodes")
    sub.add_parser("bench", parents=[common], help="time sequential vs parallel generation")
    return p


def resolve_config(args) -> RunConfig:
    overrides = list(args.override)
    for key in ("seed", "workers", "out", "frames"):
        v = getattr(args, key, None)
        if v is not None:
            overrides.append(f"{key}={json.dumps(v)}")
    return load_config(args.config, overrides)


def _print(msg: str) -> None:
    print(msg, flush=True)


def cmd_plan(cfg: RunConfig, args) -> int:
    from .hierarchy import plan_frames, truncate

    plan = plan_frames(cfg.L, cfg.m, cfg.seed)
    if cfg.frames is not None:
        plan = truncate(plan, cfg.frames)
    s = plan.summary()
    _print(f"L={plan.L} m={plan.m} total frames {plan.total_frames}")
    n = kept = 0
    for d in range(1, plan.m + 1):
        n = n + plan.L if d == 1 else n + (n - 1) * (plan.L - 2)
        kept += s["frames_per_depth"][d - 1]
        line = f"depth {d}: stride {plan.strides[d - 1]:>5d}  segments {s['task_counts'][d - 1]:>5d}  frames {n}"
        _print(line if cfg.frames is None else f"{line}  kept {kept}")
    if cfg.frames is not None:
        _print(f"truncated to {plan.n_frames} frames; segments per depth {s['task_counts']}")
    return EXIT_OK


def cmd_train_vae(cfg: RunConfig, args) -> int:
    from .pipeline import train_vae, vae_dir

    vae, report = train_vae(cfg, log=_print)
    d = vae.save(vae_dir(cfg.out), {"report": report, "run_config": cfg.to_dict()})
    _print(f"held-out mse {report['heldout_mse_init']:.5f} -> {report['heldout_mse']:.5f}; saved {d}")
    return EXIT_OK


def cmd_train_diffusion(cfg: RunConfig, args) -> int:
    from .pipeline import load_vae, mtd_dir, train_diffusion

    if not 1 <= args.depth <= cfg.m:
        raise ConfigError(f"--depth must lie in [1, {cfg.m}], got {args.depth}")
    vae = load_vae(cfg.out)
    model, report = train_diffusion(cfg, vae, args.depth, log=_print)
    d = model.save(mtd_dir(cfg.out, args.depth), {"report": report, "run_config": cfg.to_dict()})
    _print(f"held-out loss {report['heldout_loss_init']:.5f} -> {report['heldout_loss']:.5f}; saved {d}")
    return EXIT_OK


def cmd_generate(cfg: RunConfig, args) -> int:
    from .pipeline import generate_eval_videos, load_models

    models = load_models(cfg, cfg.out)
    videos = generate_eval_videos(cfg, models, log=_print)
    root = Path(cfg.out) / "generate"
    for i, v in enumerate(videos):
        d = v.save(root / f"video_{i:03d}", {"run_config": cfg.to_dict(), "eval_episode_index": i})
        _print(f"wrote {len(v)} frames to {d} (sha256 {v.content_hash()[:16]})")
    return EXIT_OK


def load_generated(root) -> np.ndarray:
    """Every ``video_*`` directory under ``root`` as a (N, n, 3, H, W) array in [-1, 1]."""
    dirs = sorted(p for p in Path(root).glob("video_*") if (p / "manifest.json").is_file())
    if not dirs:
        raise MissingCheckpointError(f"missing generated videos under {root}; run `dodgen generate` first")
    vids = []
    for d in dirs:
        files = sorted(d.glob("frame_*.ppm"))
        vids.append(np.stack([read_ppm(f) for f in files]).astype(np.float64) / 127.5 - 1.0)
    n = min(v.shape[0] for v in vids)
    return np.stack([v[:n] for v in vids])


def cmd_eval(cfg: RunConfig, args) -> int:
    from .pipeline import evaluate

    gen = load_generated(Path(cfg.out) / "generate")
    n = gen.shape[1]
    lengths = [k for k in (16, 226, 3376, n) if cfg.block <= k <= n]
    res = evaluate(replace(cfg), gen, lengths=lengths)
    res["run_config"] = cfg.to_dict()
    dump_json(Path(cfg.out) / "metrics.json", res)
    _print(f"avg_fid {res['avg_fid']:.4f}  b_fvd_{cfg.block} {res[f'b_fvd_{cfg.block}']:.4f}  over {gen.shape[0]} video(s) of {n} frames")
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    from .bench import run_bench
    from .dataset import PromptSource
    from .hierarchy import plan_frames, truncate
    from .pipeline import eval_set, load_models

    models = load_models(cfg, cfg.out)
    plan = truncate(plan_frames(cfg.L, cfg.m, cfg.seed), cfg.frames or cfg.bench_frames)
    workers = args.workers if args.workers is not None else cfg.bench_workers
    rep = run_bench(plan, models, PromptSource(eval_set(cfg)[0]), workers, cfg.bench_repeats, log=_print)
    out = {**rep.to_dict(), "run_config": cfg.to_dict()}
    dump_json(Path(cfg.out) / "bench.json", out)
    table = rep.table()
    (Path(cfg.out) / "bench.txt").write_text(table + "\n", encoding="utf-8")
    _print(table)
    return EXIT_OK


COMMANDS = {
    "plan": cmd_plan,
    "train-vae": cmd_train_vae,
    "train-diffusion": cmd_train_diffusion,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingCheckpointError as e:
        print(f"missing checkpoint: {e}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
