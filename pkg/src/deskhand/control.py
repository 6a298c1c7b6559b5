"""Joint-space PD control, force-informed targets, chunked actions.

The control stack runs on a 10 ms tick.  A policy replans every 8 ticks
(80 ms) and emits chunks of 16 future actions; overlapping chunk
predictions for the current step are blended by an exponentially weighted
temporal ensemble.  Within a tick, per-finger force targets can override
the two flexion joints of a finger: the target angle is displaced from the
*current* angle proportionally to the commanded fingertip force, so the
position error sustains a contact force instead of vanishing at the
surface.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .kinematics import NUM_FINGERS, NUM_JOINTS, ConfigError, HandConfig

CONTROL_DT = 0.01                # seconds per control tick
PHYSICS_SUBSTEPS = 10            # 1 ms physics substeps per tick
POLICY_PERIOD_TICKS = 8          # replan every 80 ms
HAND_TICK_DIV = 2                # hand setpoints update at 50 Hz
CHUNK_LEN = 16
ACTION_DIM = 23                  # 3 wrist pos + 3 wrist rotvec + 12 joints + 5 forces

GAINS_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# gains
# ---------------------------------------------------------------------------

def _gain_vector(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(NUM_JOINTS, float(arr))
    if arr.shape != (NUM_JOINTS,):
        raise ConfigError(f"{name} must be a scalar or a {NUM_JOINTS}-vector")
    return arr


@dataclass
class Gains:
    """PD gains plus the force-mode parameters shared by all tasks."""

    kp: np.ndarray               # (12,) proportional gains
    kd: np.ndarray               # (12,) derivative gains
    k_tip: float                 # rad/N offset gain, distal flexion joint
    k_base: float                # rad/N offset gain, proximal flexion joint
    f_min: float                 # N; force mode entered when f_d exceeds this

    def __post_init__(self) -> None:
        self.kp = _gain_vector(self.kp, "kp")
        self.kd = _gain_vector(self.kd, "kd")
        if np.any(self.kp <= 0.0):
            raise ConfigError("kp must be positive")
        if np.any(self.kd < 0.0):
            raise ConfigError("kd must be non-negative")
        if not (self.k_tip >= self.k_base >= 0.0):
            raise ConfigError("need k_tip >= k_base >= 0")
        if self.f_min < 0.0:
            raise ConfigError("f_min must be non-negative")

    @property
    def exit_threshold(self) -> float:
        """Force-mode exit level: 20% hysteresis below f_min."""
        return 0.8 * self.f_min

    @staticmethod
    def from_dict(data: dict) -> "Gains":
        try:
            version = int(data["schema_version"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("missing or invalid schema_version") from exc
        if version != GAINS_SCHEMA_VERSION:
            raise ConfigError(f"unsupported gains schema version {version}")
        try:
            return Gains(
                kp=data["kp"],
                kd=data["kd"],
                k_tip=float(data["k_tip"]),
                k_base=float(data["k_base"]),
                f_min=float(data["f_min"]),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed gains config: {exc}") from exc

    @staticmethod
    def from_yaml(path: str) -> "Gains":
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        return Gains.from_dict(data)

    @staticmethod
    def default() -> "Gains":
        ref = importlib.resources.files("deskhand") / "configs" / "gains.yaml"
        return Gains.from_dict(yaml.safe_load(ref.read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# actions
# ---------------------------------------------------------------------------

@dataclass
class ForceInformedAction:
    """One 23-dim target: wrist pose, 12 joint angles, 5 fingertip forces.

    Layout of the packed vector: wrist position (3), wrist orientation as a
    rotation vector (3), joint targets (12), per-finger normal-force targets
    (5, clamped to >= 0).
    """

    wrist_pos: np.ndarray        # (3,) [m]
    wrist_rotvec: np.ndarray     # (3,) [rad]
    joints: np.ndarray           # (12,) [rad]
    forces: np.ndarray           # (5,) [N], >= 0

    def __post_init__(self) -> None:
        self.wrist_pos = np.asarray(self.wrist_pos, dtype=np.float64).reshape(3)
        self.wrist_rotvec = np.asarray(self.wrist_rotvec, dtype=np.float64).reshape(3)
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(NUM_JOINTS)
        self.forces = np.maximum(
            np.asarray(self.forces, dtype=np.float64).reshape(NUM_FINGERS), 0.0
        )
        vec = self.to_vector()
        if not np.all(np.isfinite(vec)):
            raise ValueError("action contains non-finite values")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.wrist_pos, self.wrist_rotvec, self.joints, self.forces])

    @staticmethod
    def from_vector(vec: np.ndarray) -> "ForceInformedAction":
        vec = np.asarray(vec, dtype=np.float64).reshape(ACTION_DIM)
        return ForceInformedAction(
            wrist_pos=vec[0:3],
            wrist_rotvec=vec[3:6],
            joints=vec[6:18],
            forces=vec[18:23],
        )


@dataclass
class ActionChunk:
    """16 consecutive actions emitted at one policy step."""

    actions: np.ndarray          # (16, 23)
    emitted_tick: int = 0

    def __post_init__(self) -> None:
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.actions.shape != (CHUNK_LEN, ACTION_DIM):
            raise ValueError(
                f"chunk must have shape ({CHUNK_LEN}, {ACTION_DIM}), got {self.actions.shape}"
            )

    def row(self, i: int) -> ForceInformedAction:
        return ForceInformedAction.from_vector(self.actions[i])


# ---------------------------------------------------------------------------
# PD law and force-informed targets
# ---------------------------------------------------------------------------

def pd_control(
    x_d: np.ndarray, x: np.ndarray, xdot_d: np.ndarray, xdot: np.ndarray, gains: Gains
) -> np.ndarray:
    """Joint torques u = kp*(x_d - x) + kd*(xdot_d - xdot)."""
    return gains.kp * (x_d - x) + gains.kd * (xdot_d - xdot)


def force_informed_targets(x_tip, x_base, f_d, gains: Gains):
    """Flexion targets displaced from the current angles by the force command.

    x_tip/x_base are the *current* distal/proximal flexion angles (scalars or
    arrays); returns (x_d_tip, x_d_base) = (x_tip + k_tip*f_d,
    x_base + k_base*f_d).  Refreshing from current angles every tick makes
    the offset act like an integrator that presses until the contact force
    balances the command.
    """
    f_d = np.asarray(f_d, dtype=np.float64)
    return x_tip + gains.k_tip * f_d, x_base + gains.k_base * f_d


def resolve_targets(
    action: ForceInformedAction,
    state,                        # HandState
    tactile,                      # TactileFrame or None; reserved for entry rules
    gains: Gains,
    config: HandConfig,
    force_mode: Optional[np.ndarray] = None,
    force_control: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """Blend position and force targets into one 12-joint target vector.

    A finger enters force mode when its commanded force exceeds f_min
    (strictly) and leaves it only after the command drops to 80% of f_min,
    so small fluctuations around the threshold cannot chatter.  In force
    mode the finger's two flexion joints take force-informed targets; every
    other joint tracks the policy's position target.  Targets are clamped
    to the joint limits.  With force_control False all commands are treated
    as pure position targets (forces ignored).

    Returns (targets, new force_mode flags).
    """
    del tactile  # sensed forces are recorded but do not gate the mode switch
    if force_mode is None:
        force_mode = np.zeros(NUM_FINGERS, dtype=bool)
    targets = action.joints.copy()
    if not force_control:
        return config.clamp(targets), np.zeros(NUM_FINGERS, dtype=bool)

    f_d = action.forces
    enter = f_d > gains.f_min
    stay = f_d > gains.exit_threshold
    mode = np.where(force_mode, stay, enter)

    for i in np.nonzero(mode)[0]:
        jb, jt = config.flexion_joints(int(i))
        tip_t, base_t = force_informed_targets(state.q[jt], state.q[jb], f_d[i], gains)
        targets[jt] = tip_t
        targets[jb] = base_t
    return config.clamp(targets), mode


# ---------------------------------------------------------------------------
# chunk interpolation
# ---------------------------------------------------------------------------

def chunk_span_ticks() -> int:
    """Last valid tick offset inside a chunk (waypoints every 8 ticks)."""
    return (CHUNK_LEN - 1) * POLICY_PERIOD_TICKS


def _segment(chunk: ActionChunk, tick: int) -> Tuple[int, float, np.ndarray]:
    span = chunk_span_ticks()
    if not 0 <= tick <= span:
        raise ValueError(f"tick {tick} outside chunk span [0, {span}]")
    seg = min(tick // POLICY_PERIOD_TICKS, CHUNK_LEN - 2)
    frac = (tick - seg * POLICY_PERIOD_TICKS) / POLICY_PERIOD_TICKS
    slope = (chunk.actions[seg + 1] - chunk.actions[seg]) / (
        POLICY_PERIOD_TICKS * CONTROL_DT
    )
    return seg, frac, slope


def interpolate_chunk(
    chunk: ActionChunk, tick: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dual-rate setpoints at a tick offset inside the chunk.

    Waypoints sit every 8 ticks.  The wrist setpoint (6) is linearly
    interpolated at every 10 ms tick (100 Hz); the hand joint setpoint (12)
    is updated only on even ticks and held for two (50 Hz).  The returned
    joint velocity feedforward is the slope of the current segment.
    """
    seg, frac, slope = _segment(chunk, tick)
    a = chunk.actions[seg] + frac * POLICY_PERIOD_TICKS * CONTROL_DT * slope
    wrist = a[0:6]

    hand_tick = (tick // HAND_TICK_DIV) * HAND_TICK_DIV
    seg_h, frac_h, slope_h = _segment(chunk, hand_tick)
    a_h = chunk.actions[seg_h] + frac_h * POLICY_PERIOD_TICKS * CONTROL_DT * slope_h
    joints = a_h[6:18]
    return wrist, joints, slope_h[6:18]


def interpolate_forces(chunk: ActionChunk, tick: int) -> np.ndarray:
    """Per-finger force commands at a tick, updated at the 50 Hz hand rate."""
    hand_tick = (tick // HAND_TICK_DIV) * HAND_TICK_DIV
    seg, frac, slope = _segment(chunk, hand_tick)
    a = chunk.actions[seg] + frac * POLICY_PERIOD_TICKS * CONTROL_DT * slope
    return np.maximum(a[18:23], 0.0)


# ---------------------------------------------------------------------------
# temporal ensemble
# ---------------------------------------------------------------------------

@dataclass
class EnsembleConfig:
    """Exponential blending of overlapping chunk predictions."""

    window: int = 16             # max overlapping predictions kept
    rate: float = -0.01          # weight exponent per step of age

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ConfigError("ensemble window must be >= 1")

    def weights(self, n: int) -> np.ndarray:
        """Unnormalized weights for ages 0..n-1 (0 = newest)."""
        return np.exp(self.rate * np.arange(n))


def temporal_ensemble(
    predictions: Sequence[Tuple[int, np.ndarray]], config: EnsembleConfig
) -> np.ndarray:
    """Weighted average of per-step action predictions.

    `predictions` holds (age, 23-vector) pairs where age 0 is the newest
    chunk's opinion about the current step.  Weights are exp(rate * age),
    normalized; orientation enters through its rotation-vector parameters
    like every other dimension.
    """
    if len(predictions) == 0:
        raise ValueError("ensemble buffer is empty")
    ages = np.array([int(a) for a, _ in predictions])
    if np.any(ages < 0):
        raise ValueError("ages must be >= 0")
    vecs = np.stack([np.asarray(v, dtype=np.float64) for _, v in predictions])
    w = np.exp(config.rate * ages)
    return (w[:, None] * vecs).sum(axis=0) / w.sum()


class ChunkBuffer:
    """Rolling buffer of the last few chunks for temporal ensembling.

    Chunks are pushed once per policy step; `blend(step)` gathers every
    buffered chunk's prediction for the given policy step and ensembles
    them.  Chunks older than the window or no longer covering the step are
    dropped.
    """

    def __init__(self, config: EnsembleConfig):
        self.config = config
        self._entries: List[Tuple[int, ActionChunk]] = []   # (policy step, chunk)

    def push(self, policy_step: int, chunk: ActionChunk) -> None:
        self._entries.append((policy_step, chunk))
        if len(self._entries) > self.config.window:
            self._entries.pop(0)

    def blend(self, policy_step: int) -> np.ndarray:
        preds = []
        for emitted, chunk in self._entries:
            age = policy_step - emitted
            if 0 <= age < CHUNK_LEN:
                preds.append((age, chunk.actions[age]))
        return temporal_ensemble(preds, self.config)

    def clear(self) -> None:
        self._entries.clear()
