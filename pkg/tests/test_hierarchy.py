import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dodgen.dataset import PromptSource, episodes
from dodgen.hierarchy import (
    LongVideo,
    MissingCheckpointError,
    Models,
    audit_trace,
    generate,
    plan_frames,
    read_ppm,
    task_seed,
    to_uint8,
    truncate,
    write_ppm,
)
from dodgen.plan import depth_stride, span, total_frames

from .conftest import TINY_SIZE, tiny_models, tiny_mtd, tiny_vae
from .oracles import frame_count_oracle


# -- plan arithmetic ---------------------------------------------------------------
def test_default_plan_counts():
    plan = plan_frames(16, 3)
    assert plan.total_frames == 3376
    assert plan.task_counts() == [1, 15, 225]
    assert plan.strides == (225, 15, 1)
    assert plan.summary()["frames_per_depth"] == [16, 210, 3150]
    assert total_frames(16, 2) == 226 == 16 + 15 * 14


@pytest.mark.parametrize("L", range(3, 9))
@pytest.mark.parametrize("m", range(1, 5))
def test_total_frames_matches_simulation(L, m):
    assert total_frames(L, m) == frame_count_oracle(L, m) == (L - 1) ** m + 1
    assert plan_frames(L, m).total_frames == total_frames(L, m)


@pytest.mark.parametrize("L,m", [(3, 1), (3, 4), (5, 3), (16, 3)])
def test_every_frame_produced_exactly_once(L, m):
    plan = plan_frames(L, m)
    produced = [i for t in plan.all_tasks() for i in t.produced]
    assert sorted(produced) == list(range(plan.total_frames))


@pytest.mark.parametrize("L,m", [(4, 3), (16, 3)])
def test_segments_join_parent_frames(L, m):
    plan = plan_frames(L, m)
    for d in range(2, m + 1):
        parents = sorted(set().union(*(t.indices for lv in plan.tasks[: d - 1] for t in lv)))
        ends = [t.endpoints for t in plan.depth_tasks(d)]
        assert ends == list(zip(parents[:-1], parents[1:]))
        for t in plan.depth_tasks(d):
            assert np.all(np.diff(t.indices) == plan.strides[d - 1])
            assert len(t.indices) == L


def test_strides_and_spans():
    assert [depth_stride(16, 3, d) for d in (1, 2, 3)] == [225, 15, 1]
    assert span(16, 3, 1) == 3376
    with pytest.raises(ValueError):
        depth_stride(16, 3, 4)


@pytest.mark.parametrize("L,m", [(2, 2), (1, 1), (16, 0)])
def test_plan_rejects_degenerate(L, m):
    with pytest.raises(ValueError):
        plan_frames(L, m)


def test_task_seed_depends_only_on_position():
    assert task_seed(0, 2, 15) == task_seed(0, 2, 15)
    assert len({task_seed(0, d, i) for d in (1, 2, 3) for i in (0, 15, 225)}) == 9
    assert task_seed(1, 2, 15) != task_seed(0, 2, 15)


@pytest.mark.parametrize("n,counts", [(16, [1, 1, 1]), (226, [1, 1, 15]), (230, [1, 2, 16]), (1024, [1, 5, 69]), (3376, [1, 15, 225])])
def test_truncation_counts(n, counts):
    assert truncate(plan_frames(16, 3), n).task_counts() == counts


@pytest.mark.parametrize("n", [15, 3377, 0])
def test_truncation_bounds(n):
    with pytest.raises(ValueError):
        truncate(plan_frames(16, 3), n)


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 7), st.integers(1, 4), st.data())
def test_truncation_is_dependency_closed(L, m, data):
    plan = plan_frames(L, m, seed=3)
    n = data.draw(st.integers(L, plan.total_frames))
    t = truncate(plan, n)
    kept = t.all_tasks()
    produced = {i for task in kept for i in task.produced}
    assert set(range(n)) <= produced
    for task in kept:
        if task.endpoints:
            assert set(task.endpoints) <= produced
    full = {(x.depth, x.first): x.seed for x in plan.all_tasks()}
    assert all(full[(x.depth, x.first)] == x.seed for x in kept)


# -- execution ---------------------------------------------------------------------
SMALL = (4, 3)  # 28 frames in 13 segments


@pytest.fixture(scope="module")
def small_run(models3, prompt_source):
    plan = plan_frames(*SMALL, seed=5)
    return plan, generate(plan, models3, prompt_source, workers=1)


def test_generate_shapes_and_provenance(small_run):
    plan, video = small_run
    assert video.frames.shape == (28, 3, TINY_SIZE, TINY_SIZE)
    assert np.all(np.isfinite(video.frames))
    assert video.provenance_counts() == [4, 6, 18]
    assert set(np.unique(video.provenance)) == {1, 2, 3}
    assert len(video.trace) == 13
    assert audit_trace(video) == []


def test_worker_count_does_not_change_output(small_run, models3, prompt_source):
    plan, ref = small_run
    par = generate(plan, models3, prompt_source, workers=3)
    assert np.array_equal(par.frames, ref.frames)
    assert np.array_equal(par.provenance, ref.provenance)
    assert par.content_hash() == ref.content_hash()
    assert audit_trace(par) == []
    assert len({r["pid"] for r in par.trace}) >= 2


def test_truncated_output_is_a_prefix(small_run, models3, prompt_source):
    plan, ref = small_run
    for n in (4, 11, 20):
        part = generate(truncate(plan, n), models3, prompt_source)
        assert np.array_equal(part.frames, ref.frames[:n])
        assert np.array_equal(part.provenance, ref.provenance[:n])


def test_seams_are_exact(models3, prompt_source, monkeypatch):
    """Every local segment's endpoints are copied bit-for-bit from the coarser depth."""
    import dodgen.hierarchy as H

    seen = []
    real = H.run_task

    def spy(task, prompts, left, right, models=None):
        out = real(task, prompts, left, right, models)
        seen.append((task, None if left is None else left.copy(), None if right is None else right.copy()))
        return out

    monkeypatch.setattr(H, "run_task", spy)
    video = generate(plan_frames(*SMALL, seed=5), models3, prompt_source)
    for task, left, right in seen:
        if task.depth >= 2:
            a, b = task.endpoints
            assert np.array_equal(video.frames[a], left) and np.array_equal(video.frames[b], right)
            assert video.provenance[a] < task.depth and video.provenance[b] < task.depth


def test_seed_changes_output(small_run, models3, prompt_source):
    plan, ref = small_run
    other = generate(plan_frames(*SMALL, seed=6), models3, prompt_source)
    assert not np.array_equal(other.frames, ref.frames)


def test_missing_checkpoints_are_named(prompt_source):
    plan = plan_frames(*SMALL)
    with pytest.raises(MissingCheckpointError, match="T-KLVAE"):
        generate(plan, Models(None, {}), prompt_source)
    partial = Models(tiny_vae(), {1: tiny_mtd(1), 2: tiny_mtd(2)}, allow_untrained=True, frame_size=TINY_SIZE)
    with pytest.raises(MissingCheckpointError, match=r"\[3\]"):
        generate(plan, partial, prompt_source)


def test_mode_mismatch_rejected(prompt_source):
    swapped = Models(tiny_vae(), {1: tiny_mtd(2), 2: tiny_mtd(2), 3: tiny_mtd(3)}, allow_untrained=True, frame_size=TINY_SIZE)
    with pytest.raises(ValueError, match="global"):
        generate(plan_frames(*SMALL), swapped, prompt_source)


def test_untrained_models_refused_without_flag(prompt_source):
    m = tiny_models()
    m.allow_untrained = False
    with pytest.raises(RuntimeError, match="untrained"):
        generate(plan_frames(*SMALL), m, prompt_source)


def test_prompt_source_too_short():
    short = PromptSource(episodes([1000], length=20, size=TINY_SIZE)[0])
    with pytest.raises(KeyError, match="frame indices"):
        generate(plan_frames(*SMALL), tiny_models(), short)


def test_invalid_worker_count(models3, prompt_source):
    with pytest.raises(ValueError):
        generate(plan_frames(*SMALL), models3, prompt_source, workers=0)


# -- persistence ---------------------------------------------------------------------
def test_ppm_roundtrip(tmp_path):
    f = np.random.default_rng(0).integers(0, 256, (3, 5, 7), dtype=np.uint8)
    write_ppm(tmp_path / "a.ppm", f)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n7 5\n255\n")
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), f)
    with pytest.raises(ValueError):
        write_ppm(tmp_path / "b.ppm", f[:2])


def test_to_uint8_range():
    assert np.array_equal(to_uint8(np.array([-1.0, 0.0, 1.0, -5.0, 5.0])), [0, 128, 255, 0, 255])


def test_save_writes_frames_and_manifest(small_run, tmp_path):
    plan, video = small_run
    d = video.save(tmp_path / "v", {"note": "x"})
    files = sorted(d.glob("frame_*.ppm"))
    assert len(files) == 28
    assert np.array_equal(read_ppm(files[7]), to_uint8(video.frames[7]))
    text = (d / "manifest.json").read_text(encoding="utf-8")
    man = json.loads(text)
    assert list(man) == sorted(man)
    assert man["provenance_counts"] == [4, 6, 18]
    assert man["content_sha256"] == video.content_hash()
    assert man["plan"]["total_frames"] == 28
    assert len(man["seeds"]) == 13
    assert man["note"] == "x"


def test_repeat_runs_share_content_hash(small_run, models3, prompt_source):
    plan, ref = small_run
    again = generate(plan, models3, prompt_source)
    assert again.manifest()["content_sha256"] == ref.manifest()["content_sha256"]
    assert isinstance(again, LongVideo)
