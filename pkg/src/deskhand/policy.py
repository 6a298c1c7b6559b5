"""Chunk-emitting policies: scripted task demonstrators and nearest neighbor.

Every policy produces 16-step action chunks at the 80 ms policy rate.  The
scripted oracles play the role of the human demonstrator: they read the
true scene state (as a person watching the desk would), align the guided
fingertips over the object, descend, and then switch to force commands on
the task's schedule.  The nearest-neighbor policy is the trained imitator:
it matches the current observation window against a dataset in normalized
feature space and replays the closest sample's action chunk.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .container import (
    KIND_INDEX,
    ContainerError,
    pack_tensor,
    read_container,
    unpack_tensor,
    write_container,
)
from .control import ACTION_DIM, CHUNK_LEN
from .dataset import (
    Dataset,
    DatasetConfig,
    NormStats,
    downsample_gray,
    normalize,
)
from .kinematics import NUM_FINGERS, HandConfig, batch_forward
from .world import BatchScene, TaskSpec, squeeze_profile

_SEEK_SLICE = slice(18, 23)

INDEX_FEATURES_RECORD = 2
INDEX_CHUNKS_RECORD = 3


def _kin_of(scene: BatchScene):
    if scene._kin is None:
        scene._kin = batch_forward(
            scene.config, scene.wrist_pos, scene.wrist_quat, scene.q
        )
    return scene._kin


def _home_joints(config: HandConfig, task: TaskSpec) -> np.ndarray:
    q = np.zeros(config.num_joints)
    q[config.base_index] = task.home_flexion
    q[config.tip_index] = task.home_flexion
    return q


# ---------------------------------------------------------------------------
# scripted demonstrators
# ---------------------------------------------------------------------------


class _OracleBase:
    """Shared approach scaffolding: hover, descend, then the force script.

    Subclasses fill in the per-row force schedule and any late-phase
    vertical motion (such as lifting).  Plans are recomputed from the live
    scene every policy step, so alignment is closed-loop; once the force
    phase begins, the commanded wrist height is frozen so the wrist servo
    stops cancelling the force-informed flexion offsets.
    """

    needs_observations = False

    def __init__(self, task: TaskSpec):
        self.task = task
        self.p = task.oracle
        self.fingers = np.asarray(task.guided_fingers, dtype=int)
        self.frozen_z: Optional[np.ndarray] = None

    def reset(self, n: int) -> None:
        self.frozen_z = np.full(n, np.nan)

    # subclass hooks ---------------------------------------------------

    def _object_xy(self, scene, idx) -> np.ndarray:
        raise NotImplementedError

    def _touch_z(self, scene, idx) -> np.ndarray:
        """Desired lowest-pad-point height at first contact."""
        raise NotImplementedError

    def _touch_wrist_z(self, scene, idx, kin, wrist, shift_xy) -> np.ndarray:
        """Absolute wrist height that brings the guided pads to first contact."""
        guided_pts = kin.points[idx][:, self.fingers]      # (n, F, P, 3)
        pad_z = guided_pts[:, :, :, 2].min(axis=(1, 2))
        return wrist[:, 2] + (self._touch_z(scene, idx) - pad_z)

    def _cyl_touch_wrist_z(self, scene, idx, kin, wrist, shift_xy,
                           center, radius, second, bias=0.0) -> np.ndarray:
        """Touch height against a y-axis cylinder lying on the desk.

        The pads' lowest points land off the crown, so aim each guided
        finger at the cylinder surface directly beneath it; `second` waits
        for the second finger to make contact instead of the first.
        Fingers whose lowest point falls outside the footprint can never
        touch and are ignored.
        """
        pts = kin.points[idx][:, self.fingers]             # (n, F, P, 3)
        low = np.argmin(pts[:, :, :, 2], axis=2)           # (n, F)
        gx = np.take_along_axis(pts[:, :, :, 0], low[:, :, None], axis=2)[:, :, 0]
        gz = np.take_along_axis(pts[:, :, :, 2], low[:, :, None], axis=2)[:, :, 0]
        dx = gx + shift_xy[:, None, 0] - center[idx, None, 0]
        r = radius[idx][:, None]
        surf = center[idx, None, 2] + np.sqrt(np.maximum(r * r - dx * dx, 0.0))
        cand = np.where(np.abs(dx) < r, wrist[:, None, 2] + (surf - gz), -np.inf)
        order = np.sort(cand, axis=1)
        target = order[:, -1]
        if second and order.shape[1] >= 2:
            target = np.where(np.isfinite(order[:, -2]), order[:, -2], target)
        crown = _OracleBase._touch_wrist_z(self, scene, idx, kin, wrist, shift_xy)
        return np.where(np.isfinite(target), target, crown) + bias

    def _row_forces(self, scene, idx, step_idx, row) -> None:
        """Write the per-finger force commands for one chunk row."""
        raise NotImplementedError

    def _row_lift(self, scene, idx, step_idx) -> np.ndarray:
        """Extra wrist height for one chunk row (lifting phases)."""
        return 0.0

    def _freeze_mask(self, scene, idx, s) -> np.ndarray:
        """Trials whose descent should stop where it is right now."""
        return np.full(idx.size, s >= int(self.p["force_step"]), dtype=bool)

    def _descent_z(self, step, hover_wz, touch_wz):
        """Wrist height of the open-loop descent schedule at one step index.

        Hover until align_steps, ease down to creep_h above the touch
        height, then creep at constant rate to creep_bias below it (the
        creep segment guarantees contact anywhere inside the scene jitter
        band).  With creep_steps zero the ease lands on the touch height
        directly and the schedule holds there.
        """
        p = self.p
        align = int(p["align_steps"])
        fstep = int(p["force_step"])
        creep = int(p.get("creep_steps", 0))
        creep_h = float(p.get("creep_h", 0.0))
        bias = float(p.get("creep_bias", 0.0))
        ease_end = fstep - creep
        if step < align:
            return hover_wz
        if step < ease_end:
            frac = (step - align + 1) / max(ease_end - align, 1)
            frac = 1.0 - (1.0 - frac) ** 2           # ease out: arrive slow
            return hover_wz + frac * (touch_wz + creep_h - hover_wz)
        if step < fstep:
            frac = (step - ease_end + 1) / max(creep, 1)
            return touch_wz + creep_h - frac * (creep_h + bias)
        return touch_wz - bias

    # plan -------------------------------------------------------------

    def plan(self, scene: BatchScene, idx: np.ndarray, s: int) -> np.ndarray:
        p = self.p
        kin = _kin_of(scene)
        n = idx.size
        if self.frozen_z is None or self.frozen_z.shape[0] != n:
            self.reset(n)
        fingers = self.fingers

        pad_xy = kin.centers[idx][:, fingers, 0:2].mean(axis=1)
        wrist = scene.wrist_pos[idx]
        obj_xy = self._object_xy(scene, idx)
        shift_xy = obj_xy - pad_xy
        wrist_dxy = wrist[:, 0:2] + shift_xy

        touch_wz = self._touch_wrist_z(scene, idx, kin, wrist, shift_xy)
        hover_wz = touch_wz + float(p["clearance"]) + 0.006

        need = np.isnan(self.frozen_z) & self._freeze_mask(scene, idx, s)
        if need.any():
            # settle slightly below the height where contact formed; the
            # fingers give way under force control, so this only deepens
            # the reachable band, it does not press harder
            here = self._descent_z(s, hover_wz, touch_wz) - float(
                p.get("settle_bias", 0.0)
            )
            self.frozen_z[need] = np.broadcast_to(here, (n,))[need]
        frozen = self.frozen_z

        out = np.zeros((n, CHUNK_LEN, ACTION_DIM))
        out[:, :, 6:18] = _home_joints(scene.config, self.task)
        for i in range(CHUNK_LEN):
            step_idx = s + i
            sched = self._descent_z(step_idx, hover_wz, touch_wz)
            z_cmd = np.where(np.isnan(frozen), sched, frozen)
            z_cmd = z_cmd + self._row_lift(scene, idx, step_idx)
            self._row_forces(scene, idx, step_idx, out[:, i])
            out[:, i, 0:2] = wrist_dxy
            out[:, i, 2] = z_cmd
        return out


class PressOracle(_OracleBase):
    """Hover over the plunger cap, descend, then hold the target force."""

    def _object_xy(self, scene, idx):
        return scene.plunger_rest[idx, 0:2]

    def _touch_z(self, scene, idx):
        cap_half = float(self.task.bodies["plunger"]["cap_half_height"])
        return scene.plunger_rest[idx, 2] + cap_half

    def _row_forces(self, scene, idx, step_idx, row):
        p = self.p
        fstep = int(p["force_step"])
        if step_idx >= fstep:
            f = float(p["seek_force"])
            # press firmly at first so the sensed force rises fast, then
            # relax onto the target instead of creeping up to it
            if step_idx < fstep + int(p.get("boost_steps", 0)):
                f = float(p.get("seek_boost", f))
            row[:, 18 + int(self.fingers[0])] = f


class GraspOracle(_OracleBase):
    """Settle three fingers on the cylinder, attach gently, then lift.

    Force commands are gated per finger: every guided finger seeks until
    attachment, but afterwards only fingers that have actually felt the
    object keep pressing.  A finger whose pad missed the cylinder (finger
    lengths differ) falls back to its position target instead of curling
    blindly into the desk.
    """

    attach_step: Optional[np.ndarray] = None

    def reset(self, n: int) -> None:
        super().reset(n)
        self.attach_step = np.full(n, -1, dtype=np.int64)
        self.felt = np.zeros((n, NUM_FINGERS), dtype=bool)

    def _object_xy(self, scene, idx):
        return scene.cyl_center[idx, 0:2]

    def _touch_z(self, scene, idx):
        return scene.cyl_center[idx, 2] + scene.cyl_radius[idx]

    def _touch_wrist_z(self, scene, idx, kin, wrist, shift_xy):
        return self._cyl_touch_wrist_z(
            scene, idx, kin, wrist, shift_xy,
            scene.cyl_center, scene.cyl_radius, second=True,
        )

    def plan(self, scene, idx, s):
        if self.attach_step is None or self.attach_step.shape[0] != idx.size:
            self.reset(idx.size)
        self.felt |= scene.agg[idx][:, :, 2] >= float(self.p["touch_thresh"])
        att = scene.attached[idx]
        newly = att & (self.attach_step < 0)
        if newly.any():
            self.attach_step[newly] = s
        # a grip that slipped away before the lift began is forgotten and
        # the descent resumes probing for contact
        lift_from = self.attach_step + int(self.p["lift_delay_steps"])
        lost = (~att) & (self.attach_step >= 0) & (s < lift_from)
        if lost.any():
            self.attach_step[lost] = -1
            self.frozen_z[lost] = np.nan
        return super().plan(scene, idx, s)

    def _freeze_mask(self, scene, idx, s):
        # stop descending the moment the grip forms, not on a fixed step
        return (self.attach_step >= 0) | (s >= int(self.p["force_step"]))

    def _row_forces(self, scene, idx, step_idx, row):
        p = self.p
        seeking = self.attach_step < 0
        # firm the grip gradually between attachment and the lift so every
        # step of the wait is tactilely distinct from its neighbors
        frac = np.clip(
            (step_idx - self.attach_step) / float(p["lift_delay_steps"]), 0.0, 1.0
        )
        firm = float(p["hold_force"]) + frac * (
            float(p.get("firm_force", p["hold_force"])) - float(p["hold_force"])
        )
        for g in self.fingers:
            g = int(g)
            f = np.where(seeking, float(p["seek_force"]), firm)
            # a finger presses only once it has actually met the object, so
            # the approach stays open-loop and nothing curls into the desk
            row[:, 18 + g] = np.where(self.felt[:, g], f, 0.0)

    def _row_lift(self, scene, idx, step_idx):
        att = self.attach_step
        lift_from = att + int(self.p["lift_delay_steps"])
        frac = np.clip((step_idx - lift_from) / float(self.p["lift_steps"]), 0.0, 1.0)
        return np.where(att < 0, 0.0, frac * float(self.p["lift_height"]))


class SqueezeOracle(_OracleBase):
    """Touch the tube, then track the reference squeeze-force profile."""

    def _object_xy(self, scene, idx):
        return scene.tube_center[idx, 0:2]

    def _touch_z(self, scene, idx):
        return scene.tube_center[idx, 2] + scene.tube_radius[idx]

    def _touch_wrist_z(self, scene, idx, kin, wrist, shift_xy):
        return self._cyl_touch_wrist_z(
            scene, idx, kin, wrist, shift_xy,
            scene.tube_center, scene.tube_radius, second=False,
        )

    def _freeze_mask(self, scene, idx, s):
        # stop descending as soon as the tube is felt, not at a fixed step;
        # the creep band spans the radius jitter so the felt height varies
        felt = scene.touch_tick[idx] >= 0
        return felt | (s >= int(self.p["force_step"]))

    def _row_forces(self, scene, idx, step_idx, row):
        p = self.p
        touch_tick = scene.touch_tick[idx]
        row_tick = step_idx * 8 + int(p.get("lead_ticks", 0))
        dticks = np.where(touch_tick >= 0, row_tick - touch_tick, -1)
        profile = squeeze_profile(self.task.success, dticks.astype(np.float64))
        pre = (touch_tick < 0) & (step_idx >= int(p["force_step"]))
        f = np.where(touch_tick >= 0, profile, np.where(pre, float(p["seek_force"]), 0.0))
        row[:, 18 + int(self.fingers[0])] = f


_ORACLES = {"press": PressOracle, "grasp": GraspOracle, "squeeze": SqueezeOracle}


def make_oracle(task: TaskSpec) -> _OracleBase:
    try:
        cls = _ORACLES[task.kind]
    except KeyError:
        raise ValueError(f"no demonstrator script for task kind {task.kind!r}") from None
    return cls(task)


# ---------------------------------------------------------------------------
# rollout-time features
# ---------------------------------------------------------------------------


def step_features(obs, agg: np.ndarray, config: DatasetConfig) -> np.ndarray:
    """(B, step_dim) float32 rows matching the dataset's feature pipeline.

    Images are cast to float32 before pooling so a step observed live
    produces bit-identical features to the same step read back from a
    recorded demo.
    """
    B = obs.front.shape[0]
    gf = downsample_gray(
        obs.front.astype(np.float32), config.target_h, config.target_w
    )
    gw = downsample_gray(
        obs.wrist.astype(np.float32), config.target_h, config.target_w
    )
    parts = [
        gf.reshape(B, -1),
        gw.reshape(B, -1),
        agg.astype(np.float32).reshape(B, 15),
        obs.proprio.astype(np.float32),
    ]
    return np.concatenate(parts, axis=1, dtype=np.float32)


# ---------------------------------------------------------------------------
# nearest-neighbor imitation
# ---------------------------------------------------------------------------

# Retrieval weight on the tactile aggregate columns.  A handful of contact
# dims cannot out-vote two downsampled images on plain L2, yet contact state
# is the strongest cue for which demo phase the hand is in, so the metric
# scales those columns up after normalization (applied symmetrically to the
# stored features and to queries).  The scale grows with image area so the
# contact-to-pixels balance does not depend on the chosen resolution.
TACTILE_WEIGHT = 6.0
_TACTILE_REF_PIXELS = 24 * 32


def _tactile_weight(config: DatasetConfig) -> np.float32:
    area = config.target_h * config.target_w
    return np.float32(TACTILE_WEIGHT * np.sqrt(area / _TACTILE_REF_PIXELS))


def _tactile_cols(config: DatasetConfig) -> np.ndarray:
    """Flat feature indices carrying tactile aggregates, one span per window step."""
    d = config.step_dim
    sl = config.feature_slices()["tactile"]
    cols = []
    for t in range(config.obs_horizon):
        cols.extend(range(t * d + sl.start, t * d + sl.stop))
    return np.asarray(cols, dtype=int)


@dataclass
class NeighborIndex:
    """Normalized training features with their aligned action chunks."""

    task: str
    config: DatasetConfig
    k: int
    tactile: bool
    obs_stats: NormStats
    features: np.ndarray          # (N, T_o * step_dim) float32, tactile cols zeroed when off
    chunks: np.ndarray            # (N, T_a, 23) float32

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.features.shape[0] != self.chunks.shape[0]:
            raise ValueError("feature rows and chunks misaligned")
        self._sq = None

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def _sq_norms(self) -> np.ndarray:
        if self._sq is None:
            f = self.features.astype(np.float64)
            self._sq = (f * f).sum(axis=1)
        return self._sq

    def tactile_columns(self) -> np.ndarray:
        """Flat feature indices carrying tactile aggregates (one span per window step)."""
        return _tactile_cols(self.config)

    def normalize_window(self, window: np.ndarray) -> np.ndarray:
        """Raw (T_o, step_dim) or (B, T_o, step_dim) rows -> flat query rows."""
        window = np.asarray(window)
        squeeze = window.ndim == 2
        if squeeze:
            window = window[None]
        B, t_o, d = window.shape
        if t_o != self.config.obs_horizon or d != self.config.step_dim:
            raise ValueError(
                f"window shape {(t_o, d)} does not match index "
                f"({self.config.obs_horizon}, {self.config.step_dim})"
            )
        flat = normalize(window.reshape(-1, d), self.obs_stats).reshape(B, t_o * d)
        flat = flat.astype(np.float32)
        cols = self.tactile_columns()
        if self.tactile:
            flat[:, cols] *= _tactile_weight(self.config)
        else:
            flat[:, cols] = 0.0
        return flat[0] if squeeze else flat


def knn_fit(ds: Dataset, k: int = 1, tactile: bool = True) -> NeighborIndex:
    """Freeze a dataset into a nearest-neighbor index."""
    if len(ds) == 0:
        raise ValueError("cannot fit on an empty dataset")
    feats = ds.normalized_features().astype(np.float32).copy()
    cols = _tactile_cols(ds.config)
    if tactile:
        feats[:, cols] *= _tactile_weight(ds.config)
    else:
        feats[:, cols] = 0.0
    return NeighborIndex(
        task=ds.task,
        config=ds.config,
        k=k,
        tactile=tactile,
        obs_stats=ds.obs_stats,
        features=feats,
        chunks=ds.chunks.copy(),
    )


def knn_predict(index: NeighborIndex, query: np.ndarray) -> np.ndarray:
    """Chunk(s) for normalized flat queries.

    (F,) -> (T_a, 23); (m, F) -> (m, T_a, 23).  k = 1 returns the nearest
    row's chunk verbatim; larger k averages the k nearest element-wise.
    Exact distance ties go to the lowest training row.
    """
    q = np.asarray(query, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None]
    if q.shape[1] != index.feature_dim:
        raise ValueError(
            f"query dim {q.shape[1]} != index dim {index.feature_dim}"
        )
    x = index.features.astype(np.float64)
    d2 = index._sq_norms()[None, :] - 2.0 * (q @ x.T) + (q * q).sum(axis=1)[:, None]
    n = x.shape[0]
    rows_order = np.arange(n)
    out = np.empty((q.shape[0], index.chunks.shape[1], ACTION_DIM))
    for m in range(q.shape[0]):
        order = np.lexsort((rows_order, d2[m]))
        if index.k == 1:
            out[m] = index.chunks[order[0]]
        else:
            kk = min(index.k, n)
            out[m] = index.chunks[order[:kk]].astype(np.float64).mean(axis=0)
    return out[0] if single else out


class KnnPolicy:
    """Rollout adapter: windowed observation features -> neighbor chunks."""

    needs_observations = True

    def __init__(self, index: NeighborIndex):
        self.index = index
        self._history: Optional[np.ndarray] = None

    def reset(self, n: int) -> None:
        self._history = None

    def plan_from_features(self, feats: np.ndarray) -> np.ndarray:
        """feats: (n, step_dim) this step's raw feature rows -> (n, T_a, 23)."""
        t_o = self.index.config.obs_horizon
        if self._history is None:
            # before there is a full window, repeat the first observation
            self._history = np.repeat(feats[:, None], t_o, axis=1)
        else:
            self._history = np.concatenate(
                [self._history[:, 1:], feats[:, None]], axis=1
            )
        queries = self.index.normalize_window(self._history)
        return knn_predict(self.index, queries)


# ---------------------------------------------------------------------------
# index files
# ---------------------------------------------------------------------------


def write_index(index: NeighborIndex, path) -> None:
    header = {
        "task": index.task,
        "config": index.config.to_dict(),
        "k": index.k,
        "tactile": index.tactile,
        "obs_stats": index.obs_stats.to_dict(),
        "n_rows": int(index.features.shape[0]),
    }
    records = [
        (INDEX_FEATURES_RECORD, pack_tensor(index.features)),
        (INDEX_CHUNKS_RECORD, pack_tensor(index.chunks)),
    ]
    write_container(path, KIND_INDEX, header, records)


def read_index(path) -> NeighborIndex:
    _, header, records = read_container(path, expect_kind=KIND_INDEX)
    config = DatasetConfig.from_dict(header["config"])
    n = int(header["n_rows"])
    found = {}
    for tag, payload in records:
        if tag in (INDEX_FEATURES_RECORD, INDEX_CHUNKS_RECORD):
            found[tag] = payload
        else:
            warnings.warn(f"{path}: skipping unknown record tag {tag}")
    missing = {INDEX_FEATURES_RECORD, INDEX_CHUNKS_RECORD} - set(found)
    if missing:
        raise ContainerError(f"{path}: index records missing: {sorted(missing)}")
    features = unpack_tensor(
        found[INDEX_FEATURES_RECORD],
        (n, config.obs_horizon * config.step_dim),
        "index features",
    )
    chunks = unpack_tensor(
        found[INDEX_CHUNKS_RECORD],
        (n, config.action_horizon, ACTION_DIM),
        "index chunks",
    )
    return NeighborIndex(
        task=header["task"],
        config=config,
        k=int(header["k"]),
        tactile=bool(header["tactile"]),
        obs_stats=NormStats.from_dict(header["obs_stats"]),
        features=features,
        chunks=chunks,
    )
