import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dodgen.metrics import FeatureExtractor, FrechetStats, avg_fid, b_fvd, b_fvd_blocks, frechet_distance

from .oracles import frechet_oracle

TOL = 1e-9


def stats(mu, cov):
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    return FrechetStats(mu, np.atleast_2d(np.asarray(cov, dtype=np.float64)), 10)


def random_spd(r, d, lo=0.1):
    a = r.standard_normal((d, d))
    return a @ a.T / d + lo * np.eye(d)


# -- Frechet distance --------------------------------------------------------------
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_zero_on_identical_stats(seed, d):
    r = np.random.default_rng(seed)
    s = stats(r.standard_normal(d), random_spd(r, d))
    assert abs(frechet_distance(s, s)) <= TOL


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 4), st.floats(0.01, 4))
def test_one_dimensional_closed_form(ma, mb, sa, sb):
    got = frechet_distance(stats(ma, sa**2), stats(mb, sb**2))
    assert got == pytest.approx((ma - mb) ** 2 + (sa - sb) ** 2, abs=TOL, rel=TOL)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 16))
def test_diagonal_closed_form(seed, d):
    r = np.random.default_rng(seed)
    va, vb = r.uniform(0.01, 3, d), r.uniform(0.01, 3, d)
    ma, mb = r.standard_normal(d), r.standard_normal(d)
    want = np.sum((ma - mb) ** 2) + np.sum((np.sqrt(va) - np.sqrt(vb)) ** 2)
    assert frechet_distance(stats(ma, np.diag(va)), stats(mb, np.diag(vb))) == pytest.approx(want, abs=TOL, rel=TOL)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 10))
def test_matches_iterative_sqrtm_oracle(seed, d):
    r = np.random.default_rng(seed)
    a, b = random_spd(r, d), random_spd(r, d)
    ma, mb = r.standard_normal(d), r.standard_normal(d)
    assert frechet_distance(stats(ma, a), stats(mb, b)) == pytest.approx(frechet_oracle(ma, a, mb, b), abs=1e-8, rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 10))
def test_symmetric_and_non_negative(seed, d):
    r = np.random.default_rng(seed)
    a = stats(r.standard_normal(d), random_spd(r, d, lo=1e-6))
    b = stats(r.standard_normal(d), random_spd(r, d, lo=1e-6))
    ab, ba = frechet_distance(a, b), frechet_distance(b, a)
    assert ab >= 0 and ba >= 0
    assert ab == pytest.approx(ba, abs=TOL, rel=1e-9)


def test_rank_deficient_covariances_stay_non_negative():
    r = np.random.default_rng(0)
    x = r.standard_normal((3, 8))  # 3 samples in 8 dims: rank 2
    s = FrechetStats.fit(x, ridge=0.0)
    assert frechet_distance(s, s) >= 0
    assert frechet_distance(s, s) <= 1e-7


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimensions differ"):
        frechet_distance(stats([0, 0], np.eye(2)), stats([0], [[1]]))


def test_fit_ridge_and_single_sample():
    x = np.random.default_rng(1).standard_normal((50, 4))
    s = FrechetStats.fit(x)
    assert np.allclose(s.cov, np.cov(x, rowvar=False) + 1e-6 * np.eye(4))
    one = FrechetStats.fit(x[:1])
    assert np.array_equal(one.cov, 1e-6 * np.eye(4))
    with pytest.raises(ValueError):
        FrechetStats.fit(np.zeros((0, 4)))


# -- features --------------------------------------------------------------------------
def test_extractor_is_seeded():
    v = np.random.default_rng(0).uniform(-1, 1, (2, 5, 3, 8, 8))
    a, b, c = FeatureExtractor((3, 8, 8), seed=0), FeatureExtractor((3, 8, 8), seed=0), FeatureExtractor((3, 8, 8), seed=1)
    assert np.array_equal(a.clip_features(v), b.clip_features(v))
    assert not np.allclose(a.clip_features(v), c.clip_features(v))
    assert a.frame_features(v).shape == (2, 5, 32)
    assert a.clip_features(v).shape == (2, 32)


def test_clip_features_see_motion():
    ext = FeatureExtractor((3, 8, 8))
    r = np.random.default_rng(0)
    clip = r.uniform(-1, 1, (6, 3, 8, 8))
    shuffled = clip[[0, 3, 1, 5, 2, 4]]
    # same frames, different order: frame statistics agree, clip features do not
    assert np.allclose(np.sort(ext.frame_features(clip), 0), np.sort(ext.frame_features(shuffled), 0))
    assert not np.allclose(ext.clip_features(clip), ext.clip_features(shuffled))


def test_extractor_shape_checks():
    ext = FeatureExtractor((3, 8, 8))
    with pytest.raises(ValueError):
        ext.frame_features(np.zeros((2, 3, 4, 4)))
    with pytest.raises(ValueError, match="at least 2"):
        ext.clip_features(np.zeros((1, 3, 8, 8)))


# -- avg_fid / B-FVD ---------------------------------------------------------------------
def videos(seed, n=5, length=40, size=8):
    return np.random.default_rng(seed).uniform(-1, 1, (n, length, 3, size, size))


def test_avg_fid_identical_is_zero_and_needs_frames():
    ext = FeatureExtractor((3, 8, 8))
    v = videos(0)
    assert avg_fid(v, v, ext) <= TOL
    assert avg_fid(v, videos(1) * 0.2, ext) > 0.01
    with pytest.raises(ValueError, match="at least 33"):
        avg_fid(v[:1, :10], v, ext)


def test_b_fvd_blocks_by_hand():
    ext = FeatureExtractor((3, 8, 8))
    real, gen = videos(0), videos(1)
    got = b_fvd_blocks(real, gen, 16, ext)
    assert len(got) == 2  # 40 frames: blocks [0, 16) and [16, 32), the tail of 8 is dropped
    for k, sl in enumerate((slice(0, 16), slice(16, 32))):
        want = frechet_distance(FrechetStats.fit(ext.clip_features(real[:, sl])), FrechetStats.fit(ext.clip_features(gen[:, sl])))
        assert got[k] == pytest.approx(want, abs=TOL)
    assert b_fvd(real, gen, 16, ext) == pytest.approx(np.mean(got), abs=TOL)


def test_b_fvd_blocks_are_local():
    ext = FeatureExtractor((3, 8, 8))
    real = videos(0)
    gen = real.copy()
    gen[:, 20] = 0.0  # damage block 1 only
    blocks = b_fvd_blocks(real, gen, 16, ext)
    assert blocks[0] <= TOL and blocks[1] > 1e-3
    gen2 = real.copy()
    gen2[:, 35] = 0.0  # trailing partial block is not scored
    assert max(b_fvd_blocks(real, gen2, 16, ext)) <= TOL


def test_b_fvd_single_block_equals_clip_fd():
    ext = FeatureExtractor((3, 8, 8))
    real, gen = videos(0, length=16), videos(2, length=16)
    want = frechet_distance(FrechetStats.fit(ext.clip_features(real)), FrechetStats.fit(ext.clip_features(gen)))
    assert b_fvd(real, gen, 16, ext) == pytest.approx(want, abs=TOL)


def test_b_fvd_single_video_input():
    ext = FeatureExtractor((3, 8, 8))
    v = videos(0, n=1)[0]
    assert b_fvd(v, v, 8, ext) <= TOL
    assert len(b_fvd_blocks(v, v, 8, ext)) == 5


def test_b_fvd_rejects_short_or_bad_input():
    ext = FeatureExtractor((3, 8, 8))
    with pytest.raises(ValueError, match="shorter than the block"):
        b_fvd(videos(0, length=10), videos(0), 16, ext)
    with pytest.raises(ValueError, match="X must be"):
        b_fvd(videos(0), videos(0), 1, ext)
    with pytest.raises(ValueError):
        b_fvd(np.zeros((3, 8, 8)), videos(0), 16, ext)


def test_b_fvd_unequal_lengths_use_common_blocks():
    ext = FeatureExtractor((3, 8, 8))
    assert len(b_fvd_blocks(videos(0, length=64), videos(1, length=40), 16, ext)) == 2
