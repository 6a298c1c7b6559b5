"""Scene construction, physics stepping and observation rendering.

A scene is a desk plane plus one task assembly (spring plunger, loose
cylinder or compliant tube) and the hand.  Dynamics use a fixed layout:

* finger joints are unit-inertia revolute joints driven by commanded
  torques plus contact torques, with viscous damping, integrated
  semi-implicitly at 1 ms inside the 10 ms control tick;
* the wrist is a kinematic first-order servo toward its setpoint;
* the plunger cap is a 1-DOF spring-mass-damper along its axis;
* the grasp cylinder is quasi-static: it freezes to the wrist frame while
  enough fingers press on it and releases when they let go.

Everything is batched over independent trials (leading dim B) so whole
evaluation sweeps integrate in lockstep; `Scene` wraps a batch of one for
the single-trial API.  All randomness comes from counter-based per-seed
generators, so a scene is a pure function of (task, seed).
"""

from __future__ import annotations

import importlib.resources as resources
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import render
from .contact import BatchContact, ContactParams, ContactSlot, batch_contact
from .control import CONTROL_DT, PHYSICS_SUBSTEPS
from .geometry import (
    IDENTITY_QUAT,
    quat_nlerp_step,
    quat_to_rotvec_batch,
)
from .kinematics import (
    NUM_FINGERS,
    BatchKin,
    ConfigError,
    HandConfig,
    HandState,
    batch_forward,
)
from .objects import (
    Body,
    Box,
    Cylinder,
    HalfSpace,
    Plunger,
    box_normal_at,
    cylinder_normal_at,
)

TASKS_SCHEMA_VERSION = 1
SUBSTEP_DT = CONTROL_DT / PHYSICS_SUBSTEPS

_AXIS_Y = np.array([0.0, 1.0, 0.0])
_AXIS_Z = np.array([0.0, 0.0, 1.0])
_UP = np.array([0.0, 0.0, 1.0])


def _flat_up(bq: np.ndarray, pq: np.ndarray) -> np.ndarray:
    """Desk normals: straight up at every queried point."""
    return np.broadcast_to(_UP, (bq.size, 3))


def _ycyl_sdf(x, y, z, center, half_length, radius) -> np.ndarray:
    """Distance to y-axis cylinders from coordinate columns (B, M)."""
    dr = np.sqrt((x - center[:, 0, None]) ** 2 + (z - center[:, 2, None]) ** 2)
    dr -= radius[:, None]
    da = np.abs(y - center[:, 1, None]) - half_length
    return np.hypot(np.maximum(dr, 0.0), np.maximum(da, 0.0)) + np.minimum(
        np.maximum(dr, da), 0.0
    )


@dataclass
class WorldParams:
    """Dynamics constants shared by every task."""

    joint_damping: float = 0.3
    wrist_tau: float = 0.04
    sway_period_ticks: int = 170

    def __post_init__(self) -> None:
        if self.joint_damping < 0.0 or self.wrist_tau <= 0.0:
            raise ValueError("bad world params")
        if self.sway_period_ticks <= 0:
            raise ValueError("sway period must be positive")


@dataclass
class TaskSpec:
    """One task: geometry template, jitter ranges, success predicate."""

    name: str
    kind: str                       # press | grasp | squeeze
    horizon_steps: int
    guided_fingers: List[int]
    home_wrist_pos: np.ndarray
    home_flexion: np.ndarray        # (5,) per-finger rest flexion
    desk_z: float
    desk_color: Tuple[float, float, float]
    jitter: Dict[str, float]
    bodies: Dict[str, Any]
    success: Dict[str, float]
    oracle: Dict[str, float]
    contact: ContactParams
    world: WorldParams

    def __post_init__(self) -> None:
        if self.kind not in ("press", "grasp", "squeeze"):
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.horizon_steps <= 0:
            raise ConfigError("horizon must be positive")
        self.home_wrist_pos = np.asarray(self.home_wrist_pos, dtype=np.float64).reshape(3)
        for f in self.guided_fingers:
            if not 0 <= f < NUM_FINGERS:
                raise ConfigError(f"guided finger {f} out of range")
        for k, v in self.jitter.items():
            if v < 0.0:
                raise ConfigError(f"jitter range {k} must be non-negative")

    @property
    def horizon_ticks(self) -> int:
        from .control import POLICY_PERIOD_TICKS

        return self.horizon_steps * POLICY_PERIOD_TICKS


_REQUIRED_SUCCESS = {
    "press": ("f_star", "band", "hold_ticks"),
    "grasp": ("lift_height", "f_crush", "f_hold", "detach_ratio"),
    "squeeze": (
        "touch_thresh",
        "plateau",
        "ramp_start_ticks",
        "ramp_end_ticks",
        "peak",
        "rms_max",
        "peak_min",
    ),
}


def load_tasks(text: Optional[str] = None) -> Dict[str, TaskSpec]:
    """Parse the task suite from yaml text (None loads the packaged file)."""
    if text is None:
        text = (
            resources.files("deskhand").joinpath("configs/tasks.yaml").read_text()
        )
    data = yaml.safe_load(text)
    try:
        if int(data["schema_version"]) != TASKS_SCHEMA_VERSION:
            raise ConfigError(
                f"task schema {data['schema_version']} unsupported, "
                f"expected {TASKS_SCHEMA_VERSION}"
            )
        contact = ContactParams(**{k: float(v) for k, v in data["contact"].items()})
        wp = data["world"]
        world = WorldParams(
            joint_damping=float(wp["joint_damping"]),
            wrist_tau=float(wp["wrist_tau"]),
            sway_period_ticks=int(wp["sway_period_ticks"]),
        )
        tasks: Dict[str, TaskSpec] = {}
        for name, t in data["tasks"].items():
            spec = TaskSpec(
                name=str(name),
                kind=str(t["kind"]),
                horizon_steps=int(t["horizon_steps"]),
                guided_fingers=[int(g) for g in t["guided_fingers"]],
                home_wrist_pos=t["home"]["wrist_pos"],
                home_flexion=np.broadcast_to(
                    np.asarray(t["home"]["flexion"], dtype=np.float64), (5,)
                ).copy(),
                desk_z=float(t["desk"]["z"]),
                desk_color=tuple(float(c) for c in t["desk"]["color"]),
                jitter={k: float(v) for k, v in t["jitter"].items()},
                bodies=t["bodies"],
                success={k: float(v) for k, v in t["success"].items()},
                oracle={k: float(v) for k, v in t["oracle"].items()},
                contact=contact,
                world=world,
            )
            for key in _REQUIRED_SUCCESS[spec.kind]:
                if key not in spec.success:
                    raise ConfigError(f"task {name!r}: success predicate needs {key!r}")
            tasks[spec.name] = spec
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed task config: {exc}") from exc
    return tasks


_DEFAULT_TASKS: Optional[Dict[str, TaskSpec]] = None


def get_task(name: str) -> TaskSpec:
    global _DEFAULT_TASKS
    if _DEFAULT_TASKS is None:
        _DEFAULT_TASKS = load_tasks()
    if name not in _DEFAULT_TASKS:
        raise KeyError(
            f"unknown task {name!r}; available: {sorted(_DEFAULT_TASKS)}"
        )
    return _DEFAULT_TASKS[name]


def task_names() -> List[str]:
    global _DEFAULT_TASKS
    if _DEFAULT_TASKS is None:
        _DEFAULT_TASKS = load_tasks()
    return sorted(_DEFAULT_TASKS)


@dataclass
class Observation:
    """One rendered sensing snapshot (batched: leading dim B)."""

    front: np.ndarray            # (B, H, W, 3) float in [0, 1]
    wrist: np.ndarray            # (B, H, W, 3)
    tactile: np.ndarray          # (B, 5, P, 3) pad-frame forces
    proprio: np.ndarray          # (B, 18): q, wrist pos, wrist rotvec
    mask_front: Optional[np.ndarray] = None   # (B, H, W) bool, occluder pixels
    mask_wrist: Optional[np.ndarray] = None


def squeeze_profile(success: Dict[str, float], dticks: np.ndarray) -> np.ndarray:
    """Reference squeeze force at `dticks` ticks after first touch (<0: none).

    The pre-ramp segment rises gently from plateau_lo to plateau so that
    every moment of the hold has a distinct force level; a dead-flat hold
    gives a learner no way to tell its steps apart.
    """
    d = np.asarray(dticks, dtype=np.float64)
    rs = success["ramp_start_ticks"]
    re_ = success["ramp_end_ticks"]
    plateau = success["plateau"]
    lo = success.get("plateau_lo", plateau)
    peak = success["peak"]
    pre = lo + (plateau - lo) * np.clip(d / max(rs, 1.0), 0.0, 1.0)
    frac = np.clip((d - rs) / max(re_ - rs, 1.0), 0.0, 1.0)
    ref = np.where(d < rs, pre, plateau + (peak - plateau) * frac)
    return np.where(d < 0.0, 0.0, ref)


class BatchScene:
    """A batch of independent trials of one task, stepped in lockstep."""

    def __init__(
        self,
        task: TaskSpec,
        seeds: Sequence[int],
        config: Optional[HandConfig] = None,
    ):
        self.task = task
        self.config = config if config is not None else HandConfig.default()
        self.seeds = np.asarray(list(seeds), dtype=np.int64)
        if self.seeds.ndim != 1 or self.seeds.size == 0:
            raise ValueError("need a non-empty 1-D seed list")
        B = self.seeds.size
        self.B = B
        self.tick = 0

        cfg = self.config
        self.q = np.zeros((B, cfg.num_joints))
        self.q[:, cfg.base_index] = task.home_flexion
        self.q[:, cfg.tip_index] = task.home_flexion
        self.qd = np.zeros((B, cfg.num_joints))
        self.wrist_pos = np.tile(task.home_wrist_pos, (B, 1))
        self.wrist_quat = np.tile(IDENTITY_QUAT, (B, 1))
        self.wrist_vel = np.zeros((B, 3))

        # per-trial randomization, one counter-based stream per seed
        dx = np.empty(B)
        aux = np.empty(B)
        self.occ_phase = np.empty(B)
        self.occ_thickness = np.empty(B)
        jx = task.jitter.get("x", 0.0)
        jaux = task.jitter.get("z", task.jitter.get("radius", 0.0))
        for b, seed in enumerate(self.seeds):
            rng = np.random.Generator(np.random.Philox(key=int(seed)))
            dx[b] = rng.uniform(-jx, jx)
            aux[b] = rng.uniform(-jaux, jaux)
            self.occ_phase[b] = rng.uniform(0.0, 2.0 * np.pi)
            self.occ_thickness[b] = rng.uniform(0.85, 1.2)

        self.desk_z = np.full(B, task.desk_z)
        kind = task.kind
        if kind == "press":
            h = task.bodies["housing"]
            p = task.bodies["plunger"]
            self.housing_center = np.asarray(h["center"], dtype=np.float64) + 0.0
            self.housing_center = np.tile(self.housing_center, (B, 1))
            self.housing_center[:, 0] += dx
            self.housing_center[:, 2] += aux
            self.housing_half = np.asarray(h["half_extents"], dtype=np.float64)
            self.plunger_rest = np.tile(
                np.asarray(p["rest_center"], dtype=np.float64), (B, 1)
            )
            self.plunger_rest[:, 0] += dx
            self.plunger_rest[:, 2] += aux
            self.plunger_travel = np.zeros(B)
            self.plunger_travel_vel = np.zeros(B)
            self.plunger_force = np.zeros(B)
            self.press_run = np.zeros(B, dtype=np.int64)
            self.press_done = np.zeros(B, dtype=bool)
            self.work_in = np.zeros(B)
            self.work_damp = np.zeros(B)
        elif kind == "grasp":
            c = task.bodies["cylinder"]
            self.cyl_radius = float(c["radius"]) + aux
            self.cyl_center = np.zeros((B, 3))
            self.cyl_center[:, 0] = float(c["center_x"]) + dx
            self.cyl_center[:, 1] = float(c["center_y"])
            self.cyl_center[:, 2] = self.cyl_radius
            self.cyl_stiffness = float(c.get("stiffness_scale", 1.0))
            self.cyl_vel = np.zeros((B, 3))
            self.cyl_init_z = self.cyl_center[:, 2].copy()
            self.attached = np.zeros(B, dtype=bool)
            self.attach_local = np.zeros((B, 3))
            self.lift_max = np.zeros(B)
            self.crush_peak = np.zeros(B)
            self.crush_tick = np.full(B, -1, dtype=np.int64)
        elif kind == "squeeze":
            c = task.bodies["tube"]
            self.tube_radius = float(c["radius"]) + aux
            self.tube_center = np.zeros((B, 3))
            self.tube_center[:, 0] = float(c["center_x"]) + dx
            self.tube_center[:, 1] = float(c["center_y"])
            self.tube_center[:, 2] = self.tube_radius
            self.tube_stiffness = float(c["stiffness_scale"])
            self.touch_tick = np.full(B, -1, dtype=np.int64)
            self.touch_streak = np.zeros(B, dtype=np.int64)
            self.squeeze_sse = np.zeros(B)
            self.squeeze_peak = np.zeros(B)

        self._prev_depth: Optional[np.ndarray] = None
        self._prev_points: Optional[np.ndarray] = None
        npts = cfg.pad_offsets.shape[0]
        self.tactile = np.zeros((B, NUM_FINGERS, npts, 3))
        self.agg = np.zeros((B, NUM_FINGERS, 3))
        self._kin: Optional[BatchKin] = None

    # -- body slots ---------------------------------------------------------

    def _slots(self, pts: np.ndarray, min_z: float) -> List[ContactSlot]:
        """Contact slots at the current object poses.

        pts is the flattened (B, M, 3) pad point array; min_z is the lowest
        pad point over the whole batch, used to skip bodies that nothing
        can touch this substep (a skipped body contributes exactly zero
        force, so pruning never changes the result).  Distances are
        computed column-wise on the coordinate planes (everything here is
        axis-aligned), and normals are deferred to the contact core, which
        only evaluates them at penetrating points.
        """
        task = self.task
        x = pts[:, :, 0]
        y = pts[:, :, 1]
        z = pts[:, :, 2]
        slots: List[ContactSlot] = []
        if min_z < float(self.desk_z.max()) + 0.002:
            slots.append(
                ContactSlot(z - self.desk_z[:, None], normal_at=_flat_up)
            )
        kind = task.kind
        if kind == "press":
            if min_z < self.housing_center[:, 2].max() + self.housing_half[2] + 0.003:
                center = self.housing_center
                half = self.housing_half
                qx = np.abs(x - center[:, 0, None]) - half[0]
                qy = np.abs(y - center[:, 1, None]) - half[1]
                qz = np.abs(z - center[:, 2, None]) - half[2]
                ox = np.maximum(qx, 0.0)
                oy = np.maximum(qy, 0.0)
                oz = np.maximum(qz, 0.0)
                sdf = np.sqrt(ox * ox + oy * oy + oz * oz) + np.minimum(
                    np.maximum(qx, np.maximum(qy, qz)), 0.0
                )
                slots.append(
                    ContactSlot(
                        sdf,
                        normal_at=lambda bq, pq, c=center: box_normal_at(pq, c[bq], half),
                    )
                )
            cap_center = self.plunger_rest.copy()
            cap_center[:, 2] -= self.plunger_travel
            p = task.bodies["plunger"]
            hl = float(p["cap_half_height"])
            r = float(p["cap_radius"])
            dr = np.sqrt(
                (x - cap_center[:, 0, None]) ** 2 + (y - cap_center[:, 1, None]) ** 2
            ) - r
            da = np.abs(z - cap_center[:, 2, None]) - hl
            sdf = np.hypot(np.maximum(dr, 0.0), np.maximum(da, 0.0)) + np.minimum(
                np.maximum(dr, da), 0.0
            )
            vel = np.zeros((self.B, 3))
            vel[:, 2] = -self.plunger_travel_vel
            slots.append(
                ContactSlot(
                    sdf,
                    normal_at=lambda bq, pq, c=cap_center: cylinder_normal_at(
                        pq, c[bq], _AXIS_Z, hl, r
                    ),
                    vel=vel,
                )
            )
            self._object_slot = len(slots) - 1
        elif kind == "grasp":
            c = task.bodies["cylinder"]
            hl = float(c["half_length"])
            center = self.cyl_center
            radius = self.cyl_radius
            sdf = _ycyl_sdf(x, y, z, center, hl, radius)
            slots.append(
                ContactSlot(
                    sdf,
                    normal_at=lambda bq, pq, cc=center: cylinder_normal_at(
                        pq, cc[bq], _AXIS_Y, hl, radius[bq]
                    ),
                    stiffness_scale=self.cyl_stiffness,
                    vel=self.cyl_vel,
                )
            )
            self._object_slot = len(slots) - 1
        else:
            c = task.bodies["tube"]
            hl = float(c["half_length"])
            center = self.tube_center
            radius = self.tube_radius
            sdf = _ycyl_sdf(x, y, z, center, hl, radius)
            slots.append(
                ContactSlot(
                    sdf,
                    normal_at=lambda bq, pq, cc=center: cylinder_normal_at(
                        pq, cc[bq], _AXIS_Y, hl, radius[bq]
                    ),
                    stiffness_scale=self.tube_stiffness,
                )
            )
            self._object_slot = len(slots) - 1
        return slots

    # -- stepping -----------------------------------------------------------

    def step(
        self,
        torques: np.ndarray,
        wrist_pos_target: np.ndarray,
        wrist_quat_target: np.ndarray,
    ) -> None:
        """Advance every trial by one 10 ms control tick."""
        torques = np.asarray(torques, dtype=np.float64)
        wrist_pos_target = np.asarray(wrist_pos_target, dtype=np.float64)
        wrist_quat_target = np.asarray(wrist_quat_target, dtype=np.float64)
        if torques.shape != self.q.shape:
            raise ValueError(f"torques must be {self.q.shape}, got {torques.shape}")
        if not (
            np.isfinite(torques).all()
            and np.isfinite(wrist_pos_target).all()
            and np.isfinite(wrist_quat_target).all()
        ):
            raise ValueError("non-finite command rejected")

        task = self.task
        cfg = self.config
        h = SUBSTEP_DT
        damping = task.world.joint_damping
        alpha = 1.0 - float(np.exp(-h / task.world.wrist_tau))
        grasp = task.kind == "grasp"
        press = task.kind == "press"
        if press:
            p = task.bodies["plunger"]
            k_s, d_s, m_s = float(p["spring_k"]), float(p["damping"]), float(p["mass"])
            limit = float(p["travel_limit"])

        kin = None
        res = None
        for _ in range(PHYSICS_SUBSTEPS):
            kin = batch_forward(cfg, self.wrist_pos, self.wrist_quat, self.q)
            pts = kin.points.reshape(self.B, -1, 3)
            min_z = float(kin.points[:, :, :, 2].min())
            slots = self._slots(pts, min_z)
            res = batch_contact(
                kin.points,
                slots,
                task.contact,
                h,
                self._prev_depth,
                self._prev_points,
            )
            self._prev_depth = res.depth
            self._prev_points = kin.points

            if res.any_contact():
                tau_c = res.joint_torques(
                    kin.joint_axes, kin.joint_origins, cfg.finger_of_joint
                )
                qdd = torques + tau_c - damping * self.qd
            else:
                qdd = torques - damping * self.qd
            self.qd = self.qd + h * qdd
            self.q = self.q + h * self.qd
            below = self.q < cfg.joint_lower
            above = self.q > cfg.joint_upper
            if below.any():
                self.q = np.where(below, cfg.joint_lower, self.q)
                self.qd = np.where(below, np.maximum(self.qd, 0.0), self.qd)
            if above.any():
                self.q = np.where(above, cfg.joint_upper, self.q)
                self.qd = np.where(above, np.minimum(self.qd, 0.0), self.qd)

            prev_wrist = self.wrist_pos
            self.wrist_pos = self.wrist_pos + alpha * (wrist_pos_target - self.wrist_pos)
            self.wrist_vel = (self.wrist_pos - prev_wrist) / h
            self.wrist_quat = quat_nlerp_step(self.wrist_quat, wrist_quat_target, alpha)

            if press:
                drive = -res.reaction(self._object_slot)[:, 2]
                acc = (drive - k_s * self.plunger_travel - d_s * self.plunger_travel_vel) / m_s
                self.plunger_travel_vel = self.plunger_travel_vel + h * acc
                ds = h * self.plunger_travel_vel
                self.plunger_travel = self.plunger_travel + ds
                self.work_in += drive * ds
                self.work_damp += d_s * self.plunger_travel_vel * ds
                low = self.plunger_travel < 0.0
                high = self.plunger_travel > limit
                if low.any():
                    self.plunger_travel = np.where(low, 0.0, self.plunger_travel)
                    self.plunger_travel_vel = np.where(
                        low, np.maximum(self.plunger_travel_vel, 0.0), self.plunger_travel_vel
                    )
                if high.any():
                    self.plunger_travel = np.where(high, limit, self.plunger_travel)
                    self.plunger_travel_vel = np.where(
                        high, np.minimum(self.plunger_travel_vel, 0.0), self.plunger_travel_vel
                    )
                self.plunger_force = drive

            if grasp and self.attached.any():
                new_center = (
                    self.wrist_pos
                    + np.einsum("bij,bj->bi", kin.R, self.attach_local)
                )
                moved = np.where(self.attached[:, None], new_center, self.cyl_center)
                self.cyl_vel = np.where(
                    self.attached[:, None], (moved - self.cyl_center) / h, 0.0
                )
                self.cyl_center = moved

        if not (np.isfinite(self.q).all() and np.isfinite(self.wrist_pos).all()):
            raise FloatingPointError(f"state diverged at tick {self.tick}")

        self.tactile = res.tactile_frames(kin.basis)
        self.agg = self.tactile.sum(axis=2)
        self._kin = kin
        self._update_trackers(res, kin)
        self.tick += 1

    def _update_trackers(self, res: BatchContact, kin: BatchKin) -> None:
        task = self.task
        s = task.success
        if task.kind == "press":
            inband = np.abs(self.plunger_force - s["f_star"]) <= s["band"]
            self.press_run = np.where(inband, self.press_run + 1, 0)
            self.press_done |= self.press_run >= int(s["hold_ticks"])
        elif task.kind == "grasp":
            held = res.finger_normal(self._object_slot)
            hmax = held.max(axis=1)
            self.crush_tick = np.where(hmax > self.crush_peak, self.tick, self.crush_tick)
            self.crush_peak = np.maximum(self.crush_peak, hmax)
            self.lift_max = np.maximum(
                self.lift_max, self.cyl_center[:, 2] - self.cyl_init_z
            )
            n_hold = (held >= s["f_hold"]).sum(axis=1)
            n_keep = (held >= s["detach_ratio"] * s["f_hold"]).sum(axis=1)
            newly = (~self.attached) & (n_hold >= 2)
            if newly.any():
                rel = self.cyl_center - self.wrist_pos
                local = np.einsum("bji,bj->bi", kin.R, rel)   # R^T @ rel
                self.attach_local = np.where(newly[:, None], local, self.attach_local)
                self.attached |= newly
            release = self.attached & (n_keep < 2)
            if release.any():
                self.attached &= ~release
                self.cyl_vel = np.where(release[:, None], 0.0, self.cyl_vel)
        else:
            fz = self.agg[:, 0, 2]
            # debounced first-touch clock: a graze that bounces straight off
            # must not start the squeeze profile
            debounce = int(s.get("debounce_ticks", 1))
            self.touch_streak = np.where(
                fz >= s["touch_thresh"], self.touch_streak + 1, 0
            )
            first = (self.touch_tick < 0) & (self.touch_streak >= debounce)
            self.touch_tick = np.where(
                first, self.tick - self.touch_streak + 1, self.touch_tick
            )
            dticks = np.where(self.touch_tick >= 0, self.tick - self.touch_tick, -1)
            ref = squeeze_profile(s, dticks)
            # grade tracking only after a short settle window; the touchdown
            # transient is an approach artifact, not part of the squeeze
            settled = dticks >= s.get("settle_ticks", 0.0)
            self.squeeze_sse += np.where(settled, (fz - ref) ** 2, 0.0)
            self.squeeze_peak = np.maximum(self.squeeze_peak, fz)

    # -- predicates and views -----------------------------------------------

    def success(self) -> np.ndarray:
        """(B,) bool, the task predicate for every trial at the current tick."""
        task = self.task
        s = task.success
        if task.kind == "press":
            return self.press_done.copy()
        if task.kind == "grasp":
            return (self.lift_max >= s["lift_height"]) & (self.crush_peak < s["f_crush"])
        rms = np.sqrt(self.squeeze_sse / max(self.tick, 1))
        return (
            (self.touch_tick >= 0)
            & (self.squeeze_peak >= s["peak_min"])
            & (rms < s["rms_max"])
        )

    def materialize_bodies(self, b: int) -> List[Body]:
        """Single-trial Body objects at the current pose (render and tests)."""
        task = self.task
        desk = HalfSpace(
            name="desk",
            pos=np.array([0.0, 0.0, self.desk_z[b]]),
            color=task.desk_color,
        )
        out: List[Body] = [desk]
        if task.kind == "press":
            hb = task.bodies["housing"]
            p = task.bodies["plunger"]
            out.append(
                Box(
                    name="housing",
                    pos=self.housing_center[b],
                    half_extents=self.housing_half,
                    color=tuple(hb["color"]),
                )
            )
            out.append(
                Plunger(
                    name="plunger",
                    pos=self.plunger_rest[b],
                    axis=_AXIS_Z,
                    spring_k=float(p["spring_k"]),
                    damping=float(p["damping"]),
                    mass=float(p["mass"]),
                    travel_limit=float(p["travel_limit"]),
                    cap_radius=float(p["cap_radius"]),
                    cap_half_height=float(p["cap_half_height"]),
                    travel=float(self.plunger_travel[b]),
                    travel_vel=float(self.plunger_travel_vel[b]),
                    color=tuple(p["color"]),
                )
            )
        elif task.kind == "grasp":
            c = task.bodies["cylinder"]
            out.append(
                Cylinder(
                    name="cylinder",
                    pos=self.cyl_center[b],
                    axis=_AXIS_Y,
                    half_length=float(c["half_length"]),
                    radius=float(self.cyl_radius[b]),
                    stiffness_scale=self.cyl_stiffness,
                    color=tuple(c["color"]),
                    vel=self.cyl_vel[b],
                )
            )
        else:
            c = task.bodies["tube"]
            out.append(
                Cylinder(
                    name="tube",
                    pos=self.tube_center[b],
                    axis=_AXIS_Y,
                    half_length=float(c["half_length"]),
                    radius=float(self.tube_radius[b]),
                    stiffness_scale=self.tube_stiffness,
                    color=tuple(c["color"]),
                )
            )
        return out

    def observe(self, height: int, width: int, kinesthetic: bool = False) -> Observation:
        """Render both camera views and assemble the sensing snapshot."""
        cfg = self.config
        kin = self._kin
        if kin is None:
            kin = batch_forward(cfg, self.wrist_pos, self.wrist_quat, self.q)
            self._kin = kin
        fv = render.front_view(height, width)
        wv = render.wrist_view(height, width)
        B = self.B
        front = np.empty((B, height, width, 3))
        wrist = np.empty((B, height, width, 3))
        mask_f = np.zeros((B, height, width), dtype=bool) if kinesthetic else None
        mask_w = np.zeros((B, height, width), dtype=bool) if kinesthetic else None

        hl = 0.5 * cfg.pad_length
        hw = 0.5 * cfg.pad_width
        period = self.task.world.sway_period_ticks
        for b in range(B):
            bodies = self.materialize_bodies(b)
            wxy = self.wrist_pos[b, :2]
            hand_f = render.hand_prims(
                kin.bases[b], kin.knuckle2[b], kin.centers[b], kin.tangent1[b],
                hl, hw, top=False,
            )
            hand_w = render.hand_prims(
                kin.bases[b], kin.knuckle2[b], kin.centers[b], kin.tangent1[b],
                hl, hw, top=True, wrist_xy=wxy,
            )
            prims_f: List = []
            prims_w: List = []
            for body in bodies:
                prims_f += render.body_prims(body, fv, top=False)
                prims_w += render.body_prims(body, wv, top=True, wrist_xy=wxy)
            prims_f += hand_f
            prims_w += hand_w

            if kinesthetic:
                sway = self.occ_phase[b] + 2.0 * np.pi * self.tick / period
                th = self.occ_thickness[b] * (1.0 + 0.08 * np.sin(0.7 * sway + 1.3))
                tips_f = np.stack(
                    [
                        [kin.centers[b, g, 0], kin.centers[b, g, 2]]
                        for g in self.task.guided_fingers
                    ]
                )
                occ_f = render.occluder_prims(tips_f, sway, th)
                tips_w = np.stack(
                    [
                        [
                            kin.centers[b, g, 1] - wxy[1],
                            kin.centers[b, g, 0] - wxy[0],
                        ]
                        for g in self.task.guided_fingers
                    ]
                )
                occ_w = _top_occluder_prims(tips_w, sway, th)
                front[b] = render.render(fv, prims_f + occ_f)
                wrist[b] = render.render(wv, prims_w + occ_w)
                mask_f[b] = render.coverage(fv, occ_f)
                mask_w[b] = render.coverage(wv, occ_w)
            else:
                front[b] = render.render(fv, prims_f)
                wrist[b] = render.render(wv, prims_w)

        proprio = np.concatenate(
            [self.q, self.wrist_pos, quat_to_rotvec_batch(self.wrist_quat)], axis=1
        )
        return Observation(
            front=front,
            wrist=wrist,
            tactile=self.tactile.copy(),
            proprio=proprio,
            mask_front=mask_f,
            mask_wrist=mask_w,
        )

    @property
    def time(self) -> float:
        return self.tick * CONTROL_DT


def _top_occluder_prims(tips_uv: np.ndarray, sway: float, thickness: float) -> List:
    """Operator fingers seen from the wrist camera: blobs over the guided
    pads plus a knuckle bar drifting with the arm sway."""
    tips = np.asarray(tips_uv, dtype=float).reshape(-1, 2)
    prims: List = []
    du = 0.015 * np.sin(sway)
    dv = 0.012 * np.cos(0.7 * sway)
    lo = tips[np.argmin(tips[:, 0])]
    hi = tips[np.argmax(tips[:, 0])]
    prims.append(
        render.capsule(
            render.OCCLUDER_COLOR,
            float(lo[0]) - 0.02 + du,
            float(lo[1]) - 0.035 + dv,
            float(hi[0]) + 0.02 + du,
            float(hi[1]) - 0.035 + dv,
            0.016 * thickness,
        )
    )
    for k in range(tips.shape[0]):
        prims.append(
            render.capsule(
                render.OCCLUDER_COLOR,
                float(tips[k, 0]) + du,
                float(tips[k, 1]) + dv - 0.03,
                float(tips[k, 0]) + du * 0.5,
                float(tips[k, 1]) + 0.01,
                0.011 * thickness,
            )
        )
    return prims


# ---------------------------------------------------------------------------
# single-trial facade
# ---------------------------------------------------------------------------

class Scene:
    """One trial; thin wrapper over a batch of size 1."""

    def __init__(self, batch: BatchScene):
        if batch.B != 1:
            raise ValueError("Scene wraps exactly one trial")
        self.batch = batch

    @property
    def task(self) -> TaskSpec:
        return self.batch.task

    @property
    def config(self) -> HandConfig:
        return self.batch.config

    @property
    def tick(self) -> int:
        return self.batch.tick

    @property
    def time(self) -> float:
        return self.batch.time

    @property
    def hand(self) -> HandState:
        b = self.batch
        return HandState.create(
            b.config,
            wrist_pos=b.wrist_pos[0],
            wrist_quat=b.wrist_quat[0],
            q=b.q[0],
            qd=b.qd[0],
        )

    @property
    def bodies(self) -> List[Body]:
        return self.batch.materialize_bodies(0)

    @property
    def tactile(self) -> np.ndarray:
        return self.batch.tactile[0]

    def step(
        self,
        torques: np.ndarray,
        wrist_pos_target: np.ndarray,
        wrist_quat_target: np.ndarray,
    ) -> None:
        self.batch.step(
            np.asarray(torques, dtype=np.float64).reshape(1, -1),
            np.asarray(wrist_pos_target, dtype=np.float64).reshape(1, 3),
            np.asarray(wrist_quat_target, dtype=np.float64).reshape(1, 4),
        )

    def observe(self, height: int, width: int, kinesthetic: bool = False) -> Observation:
        obs = self.batch.observe(height, width, kinesthetic)
        return Observation(
            front=obs.front[0],
            wrist=obs.wrist[0],
            tactile=obs.tactile[0],
            proprio=obs.proprio[0],
            mask_front=None if obs.mask_front is None else obs.mask_front[0],
            mask_wrist=None if obs.mask_wrist is None else obs.mask_wrist[0],
        )

    def success(self) -> bool:
        return bool(self.batch.success()[0])


def randomize(task: TaskSpec, seed: int, config: Optional[HandConfig] = None) -> Scene:
    """Build one trial scene; a pure function of (task, seed)."""
    return Scene(BatchScene(task, [int(seed)], config))


def check_success(scene: Scene) -> bool:
    """Evaluate the scene's task predicate at its current state."""
    return scene.success()
