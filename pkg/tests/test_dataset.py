"""Sample windowing, feature layout, normalization, and dataset files."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from demo_fixtures import make_demo
from deskhand.container import ContainerError, read_container, write_container
from deskhand.container import KIND_DATASET
from deskhand.dataset import (
    PAD_DROP,
    PAD_REPEAT,
    Dataset,
    DatasetConfig,
    NormStats,
    build_dataset,
    chunk_demo,
    compute_norm_stats,
    demo_step_features,
    denormalize,
    downsample_gray,
    normalize,
    read_dataset,
    write_dataset,
)
from deskhand.demo_io import derive_actions
from deskhand.geometry import quat_to_rotvec_batch


def small_config(**kw):
    base = dict(target_h=4, target_w=5)
    base.update(kw)
    return DatasetConfig(**base)


def labeled_demo(rng, T, **kw):
    return derive_actions(make_demo(rng, T=T, H=8, W=10, **kw))


def expected_anchors(T, t_o, t_a, padding):
    """Independent enumeration of valid anchor steps."""
    out = []
    for t in range(T):
        if t < t_o - 1:
            continue
        if padding == PAD_DROP and t + t_a - 1 > T - 1:
            continue
        out.append(t)
    return out


# ---------------------------------------------------------------------------
# windowing arithmetic


@pytest.mark.parametrize(
    "T,padding,count",
    [(100, PAD_DROP, 84), (100, PAD_REPEAT, 99), (2, PAD_REPEAT, 1)],
)
def test_sample_counts(T, padding, count):
    rng = np.random.default_rng(0)
    demo = labeled_demo(rng, T)
    cfg = small_config(obs_horizon=2, action_horizon=16, padding=padding)
    samples = chunk_demo(demo, cfg)
    anchors = expected_anchors(T, 2, 16, padding)
    assert len(samples) == len(anchors) == count
    assert [s.source[1] for s in samples] == anchors


@pytest.mark.parametrize("t_o,t_a,padding", [(1, 3, PAD_DROP), (3, 5, PAD_REPEAT), (2, 4, PAD_DROP)])
def test_sample_contents(t_o, t_a, padding):
    rng = np.random.default_rng(1)
    demo = labeled_demo(rng, 9)
    cfg = small_config(obs_horizon=t_o, action_horizon=t_a, padding=padding)
    feats = demo_step_features(demo, cfg)
    samples = chunk_demo(demo, cfg)
    anchors = expected_anchors(9, t_o, t_a, padding)
    assert [s.source[1] for s in samples] == anchors
    for s in samples:
        t = s.source[1]
        assert_array_equal(s.features, feats[t - t_o + 1 : t + 1])
        for i in range(t_a):
            assert_array_equal(s.chunk[i], demo.labels[min(t + i, 8)])
        assert s.source[0] == demo.seed


def test_two_step_demo_chunk_repeats_final_label():
    rng = np.random.default_rng(2)
    demo = labeled_demo(rng, 2)
    cfg = small_config(obs_horizon=2, action_horizon=16, padding=PAD_REPEAT)
    (sample,) = chunk_demo(demo, cfg)
    assert_array_equal(sample.chunk, np.repeat(demo.labels[1][None], 16, axis=0))


def test_demo_shorter_than_window_rejected():
    rng = np.random.default_rng(3)
    demo = labeled_demo(rng, 2)
    with pytest.raises(ValueError, match="at least"):
        chunk_demo(demo, small_config(obs_horizon=3))


def test_drop_mode_can_produce_nothing():
    rng = np.random.default_rng(4)
    demo = labeled_demo(rng, 10)
    cfg = small_config(obs_horizon=2, action_horizon=16, padding=PAD_DROP)
    assert chunk_demo(demo, cfg) == []


def test_unlabeled_demo_rejected():
    rng = np.random.default_rng(5)
    demo = make_demo(rng, T=6, H=8, W=10)
    with pytest.raises(ValueError, match="labels"):
        chunk_demo(demo, small_config())


def test_config_validation():
    with pytest.raises(ValueError):
        DatasetConfig(obs_horizon=0)
    with pytest.raises(ValueError):
        DatasetConfig(padding="mirror")
    with pytest.raises(ValueError):
        DatasetConfig(normalization="zscore")


# ---------------------------------------------------------------------------
# features


def test_downsample_matches_loop_oracle():
    rng = np.random.default_rng(6)
    imgs = rng.random((3, 8, 10, 3)).astype(np.float32)
    got = downsample_gray(imgs, 4, 5)
    assert got.shape == (3, 4, 5)
    for t in range(3):
        for i in range(4):
            for j in range(5):
                block = imgs[t, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2, :]
                assert abs(got[t, i, j] - block.mean()) < 1e-6


def test_downsample_requires_divisible():
    with pytest.raises(ValueError, match="divisible"):
        downsample_gray(np.zeros((1, 9, 10, 3)), 4, 5)


def test_step_feature_layout():
    rng = np.random.default_rng(7)
    demo = labeled_demo(rng, 5)
    cfg = small_config()
    feats = demo_step_features(demo, cfg)
    assert feats.shape == (5, cfg.step_dim)
    sl = cfg.feature_slices()
    gf = downsample_gray(demo.front, 4, 5).reshape(5, -1)
    assert_array_equal(feats[:, sl["gray_front"]], gf)
    gw = downsample_gray(demo.wrist, 4, 5).reshape(5, -1)
    assert_array_equal(feats[:, sl["gray_wrist"]], gw)
    assert_array_equal(feats[:, sl["tactile"]], demo.force.reshape(5, 15))
    prop = feats[:, sl["proprio"]]
    assert_array_equal(prop[:, :12], demo.q)
    assert_array_equal(prop[:, 12:15], demo.wrist_pos)
    rv = quat_to_rotvec_batch(demo.wrist_quat.astype(np.float64)).astype(np.float32)
    assert_array_equal(prop[:, 15:18], rv)


# ---------------------------------------------------------------------------
# normalization


def test_normalize_round_trip_and_bounds():
    rng = np.random.default_rng(8)
    rows = rng.standard_normal((40, 7)) * [1, 5, 0.1, 100, 2, 3, 1] + 4
    stats = compute_norm_stats(rows)
    xh = normalize(rows, stats)
    assert xh.min() >= -1.0 - 1e-12 and xh.max() <= 1.0 + 1e-12
    assert np.any(np.isclose(xh.min(axis=0), -1.0)) and np.any(np.isclose(xh.max(axis=0), 1.0))
    assert_allclose(denormalize(xh, stats), rows, atol=1e-9)


def test_constant_dimensions_map_to_zero():
    rows = np.ones((10, 3))
    rows[:, 1] = np.linspace(-2, 2, 10)
    stats = compute_norm_stats(rows)
    xh = normalize(rows, stats)
    assert_array_equal(xh[:, 0], np.zeros(10))
    assert_array_equal(xh[:, 2], np.zeros(10))
    assert stats.scale[0] == 1.0 and stats.scale[2] == 1.0


def test_norm_stats_dict_round_trip():
    stats = compute_norm_stats(np.random.default_rng(9).random((20, 4)))
    back = NormStats.from_dict(stats.to_dict())
    assert_array_equal(back.lo, stats.lo)
    assert_array_equal(back.hi, stats.hi)


def test_norm_stats_rejects_inverted():
    with pytest.raises(ValueError):
        NormStats(lo=[1.0], hi=[0.0])


# ---------------------------------------------------------------------------
# dataset assembly and files


def make_dataset(rng, n_demos=3, T=8, **cfg_kw):
    demos = [
        labeled_demo(rng, T, seed=k) for k in range(n_demos)
    ]
    cfg = small_config(**cfg_kw)
    return build_dataset(demos, cfg, allow_raw=True), demos, cfg


def test_build_dataset_stacks_all_demos():
    rng = np.random.default_rng(10)
    ds, demos, cfg = make_dataset(rng, n_demos=3, T=8)
    per = len(expected_anchors(8, cfg.obs_horizon, cfg.action_horizon, cfg.padding))
    assert len(ds) == 3 * per
    assert sorted(set(ds.sources[:, 0])) == [0, 1, 2]
    flat = ds.normalized_features()
    assert flat.shape == (len(ds), cfg.obs_horizon * cfg.step_dim)
    assert flat.min() >= -1.0 - 1e-12 and flat.max() <= 1.0 + 1e-12


def test_build_dataset_refuses_occluded_by_default():
    rng = np.random.default_rng(11)
    demos = [labeled_demo(rng, 6, seed=k) for k in range(2)]
    with pytest.raises(ValueError, match="occluder"):
        build_dataset(demos, small_config())
    inpainted = [d for d in demos]
    for d in inpainted:
        d.inpainted = True
    assert len(build_dataset(inpainted, small_config())) > 0


def test_build_dataset_refuses_mixed_tasks():
    rng = np.random.default_rng(12)
    a = labeled_demo(rng, 6)
    b = labeled_demo(rng, 6)
    b.task = "different"
    with pytest.raises(ValueError, match="tasks"):
        build_dataset([a, b], small_config(), allow_raw=True)


def test_dataset_file_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    ds, _, _ = make_dataset(rng)
    path = tmp_path / "train.ds"
    write_dataset(ds, path)
    back = read_dataset(path)
    assert back.task == ds.task
    assert back.config == ds.config
    assert_array_equal(back.features, ds.features)
    assert_array_equal(back.chunks, ds.chunks)
    assert_array_equal(back.sources, ds.sources)
    assert_array_equal(back.obs_stats.lo, ds.obs_stats.lo)
    assert_array_equal(back.act_stats.hi, ds.act_stats.hi)


def test_dataset_write_deterministic(tmp_path):
    rng = np.random.default_rng(14)
    ds, _, _ = make_dataset(rng)
    p1, p2 = tmp_path / "a.ds", tmp_path / "b.ds"
    write_dataset(ds, p1)
    write_dataset(ds, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_dataset_unknown_tag_skipped(tmp_path):
    rng = np.random.default_rng(15)
    ds, _, _ = make_dataset(rng)
    path = tmp_path / "train.ds"
    write_dataset(ds, path)
    _, header, records = read_container(path)
    write_container(path, KIND_DATASET, header, records + [(77, b"future")])
    with pytest.warns(UserWarning, match="tag 77"):
        back = read_dataset(path)
    assert_array_equal(back.features, ds.features)


def test_dataset_missing_record_fails(tmp_path):
    rng = np.random.default_rng(16)
    ds, _, _ = make_dataset(rng)
    path = tmp_path / "train.ds"
    write_dataset(ds, path)
    _, header, records = read_container(path)
    write_container(path, KIND_DATASET, header, records[:-1])
    with pytest.raises(ContainerError, match="missing"):
        read_dataset(path)
