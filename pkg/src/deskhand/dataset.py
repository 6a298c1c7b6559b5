"""Turns labeled demos into normalized (observation window, action chunk) pairs.

Each training sample pairs a short window of past observations with the
chunk of future action labels starting at the window's last step.  Step
features are a fixed concatenation: both camera views block-averaged to a
small grayscale raster, the net per-finger pad forces, and proprioception.
Min-max statistics over the whole dataset map every dimension into
[-1, 1]; constant dimensions map to exactly 0 so distance metrics ignore
them.  Datasets round-trip through the shared chunked container.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .container import (
    KIND_DATASET,
    ContainerError,
    pack_tensor,
    read_container,
    unpack_tensor,
    write_container,
)
from .control import ACTION_DIM
from .demo_io import DemoLog
from .geometry import quat_to_rotvec_batch

PAD_REPEAT = "repeat-last"
PAD_DROP = "drop"

FEATURES_RECORD = 2
CHUNKS_RECORD = 3
SOURCES_RECORD = 4

_TACTILE_DIM = 15   # 5 fingers x 3 aggregate force components
_PROPRIO_DIM = 18   # 12 joints + wrist position + wrist rotation vector


@dataclass
class DatasetConfig:
    obs_horizon: int = 2
    action_horizon: int = 16
    target_h: int = 48
    target_w: int = 64
    padding: str = PAD_REPEAT
    normalization: str = "minmax"

    def __post_init__(self) -> None:
        if self.obs_horizon < 1 or self.action_horizon < 1:
            raise ValueError("horizons must be >= 1")
        if self.padding not in (PAD_REPEAT, PAD_DROP):
            raise ValueError(f"unknown padding mode {self.padding!r}")
        if self.normalization != "minmax":
            raise ValueError(f"unknown normalization mode {self.normalization!r}")

    @property
    def step_dim(self) -> int:
        return 2 * self.target_h * self.target_w + _TACTILE_DIM + _PROPRIO_DIM

    def feature_slices(self) -> dict:
        """Named column ranges of one step's feature vector."""
        hw = self.target_h * self.target_w
        return {
            "gray_front": slice(0, hw),
            "gray_wrist": slice(hw, 2 * hw),
            "tactile": slice(2 * hw, 2 * hw + _TACTILE_DIM),
            "proprio": slice(2 * hw + _TACTILE_DIM, self.step_dim),
        }

    def to_dict(self) -> dict:
        return {
            "obs_horizon": self.obs_horizon,
            "action_horizon": self.action_horizon,
            "target_h": self.target_h,
            "target_w": self.target_w,
            "padding": self.padding,
            "normalization": self.normalization,
        }

    @staticmethod
    def from_dict(d: dict) -> "DatasetConfig":
        return DatasetConfig(**d)


@dataclass
class TrainingSample:
    features: np.ndarray     # (T_o, step_dim) float32
    chunk: np.ndarray        # (T_a, 23) float32
    source: Tuple[int, int]  # (demo seed, anchor step)


@dataclass
class NormStats:
    """Per-dimension min/max with the affine map onto [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self) -> None:
        self.lo = np.asarray(self.lo, dtype=np.float64).ravel()
        self.hi = np.asarray(self.hi, dtype=np.float64).ravel()
        if self.lo.shape != self.hi.shape:
            raise ValueError("lo and hi must match in length")
        if np.any(self.hi < self.lo):
            raise ValueError("max below min")
        self.offset = 0.5 * (self.hi + self.lo)
        half = 0.5 * (self.hi - self.lo)
        # near-constant dimensions get unit scale: dividing by a vanishing
        # range would blow up any out-of-range value at query time
        self.scale = np.where(half > 1e-6, half, 1.0)

    def to_dict(self) -> dict:
        return {"lo": [float(v) for v in self.lo], "hi": [float(v) for v in self.hi]}

    @staticmethod
    def from_dict(d: dict) -> "NormStats":
        return NormStats(np.array(d["lo"]), np.array(d["hi"]))


def compute_norm_stats(rows: np.ndarray) -> NormStats:
    """Column-wise stats over a (n, d) matrix."""
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("need a nonempty (n, d) matrix")
    return NormStats(rows.min(axis=0), rows.max(axis=0))


def normalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - stats.offset) / stats.scale


def denormalize(xh: np.ndarray, stats: NormStats) -> np.ndarray:
    return np.asarray(xh, dtype=np.float64) * stats.scale + stats.offset


# ---------------------------------------------------------------------------
# step features
# ---------------------------------------------------------------------------


def downsample_gray(images: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Block-average (T, H, W, 3) frames to (T, target_h, target_w) grayscale."""
    T, H, W, _ = images.shape
    if H % target_h or W % target_w:
        raise ValueError(
            f"image {H}x{W} not divisible by target {target_h}x{target_w}"
        )
    bh, bw = H // target_h, W // target_w
    blocks = images.reshape(T, target_h, bh, target_w, bw, 3)
    return blocks.mean(axis=(2, 4, 5), dtype=np.float64).astype(np.float32)


def demo_step_features(demo: DemoLog, config: DatasetConfig) -> np.ndarray:
    """Per-step feature rows (T, step_dim) in the documented column order."""
    T = demo.steps
    gf = downsample_gray(demo.front, config.target_h, config.target_w)
    gw = downsample_gray(demo.wrist, config.target_h, config.target_w)
    rotvec = quat_to_rotvec_batch(demo.wrist_quat.astype(np.float64))
    parts = [
        gf.reshape(T, -1),
        gw.reshape(T, -1),
        demo.force.reshape(T, _TACTILE_DIM),
        demo.q,
        demo.wrist_pos,
        rotvec.astype(np.float32),
    ]
    return np.concatenate(parts, axis=1, dtype=np.float32)


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------


def chunk_demo(demo: DemoLog, config: DatasetConfig) -> List[TrainingSample]:
    """Slice one labeled demo into training samples.

    The anchor step t contributes observations [t - T_o + 1 .. t] and the
    labels [t .. t + T_a - 1]; with repeat-last padding, anchors near the
    end repeat the final label, and with drop they are excluded.
    """
    if demo.labels is None:
        raise ValueError("demo has no action labels; derive them first")
    T = demo.steps
    t_o, t_a = config.obs_horizon, config.action_horizon
    if T < t_o:
        raise ValueError(f"demo has {T} steps, need at least {t_o}")
    feats = demo_step_features(demo, config)
    samples: List[TrainingSample] = []
    for t in range(t_o - 1, T):
        if config.padding == PAD_DROP and t + t_a > T:
            continue
        rows = np.minimum(np.arange(t, t + t_a), T - 1)
        samples.append(
            TrainingSample(
                features=feats[t - t_o + 1 : t + 1].copy(),
                chunk=demo.labels[rows].copy(),
                source=(demo.seed, t),
            )
        )
    return samples


@dataclass
class Dataset:
    task: str
    config: DatasetConfig
    features: np.ndarray     # (N, T_o, step_dim) float32
    chunks: np.ndarray       # (N, T_a, 23) float32
    sources: np.ndarray      # (N, 2) int32: demo seed, anchor step
    obs_stats: NormStats = field(default=None)
    act_stats: NormStats = field(default=None)

    def __post_init__(self) -> None:
        n = self.features.shape[0]
        if self.chunks.shape[0] != n or self.sources.shape[0] != n:
            raise ValueError("feature, chunk, and source counts disagree")
        if self.obs_stats is None:
            self.obs_stats = compute_norm_stats(
                self.features.reshape(-1, self.features.shape[2])
            )
        if self.act_stats is None:
            self.act_stats = compute_norm_stats(self.chunks.reshape(-1, ACTION_DIM))

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def normalized_features(self) -> np.ndarray:
        """(N, T_o * step_dim) rows mapped to [-1, 1]."""
        n, t_o, d = self.features.shape
        flat = normalize(self.features.reshape(-1, d), self.obs_stats)
        return flat.reshape(n, t_o * d)


def build_dataset(
    demos: Sequence[DemoLog], config: DatasetConfig, allow_raw: bool = False
) -> Dataset:
    """Stack samples from labeled demos of one task into a dataset.

    Demos that still carry occluder masks are refused unless `allow_raw`,
    since training on frames with the operator in view is normally a
    mistake rather than a choice.
    """
    if not demos:
        raise ValueError("no demos given")
    tasks = {d.task for d in demos}
    if len(tasks) != 1:
        raise ValueError(f"demos span multiple tasks: {sorted(tasks)}")
    occluded = sum(1 for d in demos if d.mask_front is not None and not d.inpainted)
    if occluded and not allow_raw:
        raise ValueError(
            f"{occluded} demos still carry occluder masks; preprocess them "
            "or pass allow_raw to train on occluded frames deliberately"
        )
    samples: List[TrainingSample] = []
    for demo in demos:
        samples.extend(chunk_demo(demo, config))
    if not samples:
        raise ValueError("no training samples produced (demos too short?)")
    return Dataset(
        task=demos[0].task,
        config=config,
        features=np.stack([s.features for s in samples]),
        chunks=np.stack([s.chunk for s in samples]),
        sources=np.asarray([s.source for s in samples], dtype=np.int32),
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def write_dataset(ds: Dataset, path) -> None:
    header = {
        "task": ds.task,
        "config": ds.config.to_dict(),
        "n_samples": len(ds),
        "obs_stats": ds.obs_stats.to_dict(),
        "act_stats": ds.act_stats.to_dict(),
    }
    records = [
        (FEATURES_RECORD, pack_tensor(ds.features)),
        (CHUNKS_RECORD, pack_tensor(ds.chunks)),
        (SOURCES_RECORD, np.ascontiguousarray(ds.sources, dtype="<i4").tobytes()),
    ]
    write_container(path, KIND_DATASET, header, records)


def read_dataset(path) -> Dataset:
    _, header, records = read_container(path, expect_kind=KIND_DATASET)
    config = DatasetConfig.from_dict(header["config"])
    n = int(header["n_samples"])
    found = {}
    for tag, payload in records:
        if tag in (FEATURES_RECORD, CHUNKS_RECORD, SOURCES_RECORD):
            found[tag] = payload
        else:
            warnings.warn(f"{path}: skipping unknown record tag {tag}")
    missing = {FEATURES_RECORD, CHUNKS_RECORD, SOURCES_RECORD} - set(found)
    if missing:
        raise ContainerError(f"{path}: dataset records missing: {sorted(missing)}")
    features = unpack_tensor(
        found[FEATURES_RECORD], (n, config.obs_horizon, config.step_dim), "features"
    )
    chunks = unpack_tensor(
        found[CHUNKS_RECORD], (n, config.action_horizon, ACTION_DIM), "chunks"
    )
    src = found[SOURCES_RECORD]
    if len(src) != 8 * n:
        raise ContainerError(f"{path}: sources record holds {len(src)} bytes, want {8 * n}")
    sources = np.frombuffer(src, dtype="<i4").reshape(n, 2).copy()
    return Dataset(
        task=header["task"],
        config=config,
        features=features,
        chunks=chunks,
        sources=sources,
        obs_stats=NormStats.from_dict(header["obs_stats"]),
        act_stats=NormStats.from_dict(header["act_stats"]),
    )
