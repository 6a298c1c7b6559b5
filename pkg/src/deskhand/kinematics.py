"""Hand model: configuration, state, and forward kinematics.

The hand has five fingers and 12 actuated joints.  Thumb and index each
carry an abduction (spread) joint followed by two flexion joints; middle,
ring and pinky carry two flexion joints each.  Joint indices are assigned
finger by finger in config order, abduction first:

    thumb  0=abd 1=base 2=tip
    index  3=abd 4=base 5=tip
    middle 6=base 7=tip
    ring   8=base 9=tip
    pinky  10=base 11=tip

Each finger is a planar two-link chain mounted at a fixed offset in the
wrist frame.  At the zero pose fingers point along +x with the sensing pad
facing -z; flexion rotates about the local +y axis (curling the tip toward
-z) and abduction rotates about -z at the finger base, swinging the whole
chain sideways before any flexion is applied.  The rectangular sensing pad
sits at the end of the distal link, tangent to the last link direction.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .geometry import quat_normalize, quat_to_mat

NUM_FINGERS = 5
NUM_JOINTS = 12
PAD_POINTS = 120

HAND_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised when a hand configuration file is malformed."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class FingerSpec:
    """Geometry of a single finger chain."""

    name: str
    has_abduction: bool
    base_offset: np.ndarray      # (3,) position of the base joint, wrist frame
    link_lengths: np.ndarray     # (2,) proximal and distal link lengths [m]


@dataclass
class HandConfig:
    """Validated hand geometry plus the joint index layout derived from it.

    Attributes beyond the raw geometry are precomputed here so the hot
    kinematics path can stay allocation-light:

      joint_lower/joint_upper  (12,) per-joint limits
      abd_index                (5,) abduction joint per finger, -1 if none
      base_index / tip_index   (5,) flexion joint indices per finger
      pad_offsets              (P, 2) grid offsets on the pad plane [m]
    """

    fingers: List[FingerSpec]
    flexion_limits: Tuple[float, float]
    abduction_limits: Tuple[float, float]
    pad_rows: int
    pad_cols: int
    pad_length: float
    pad_width: float

    # derived, filled in __post_init__
    joint_lower: np.ndarray = field(init=False)
    joint_upper: np.ndarray = field(init=False)
    abd_index: np.ndarray = field(init=False)
    base_index: np.ndarray = field(init=False)
    tip_index: np.ndarray = field(init=False)
    pad_offsets: np.ndarray = field(init=False)
    num_joints: int = field(init=False)
    finger_of_joint: np.ndarray = field(init=False)
    is_abd_joint: np.ndarray = field(init=False)
    is_tip_joint: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if len(self.fingers) != NUM_FINGERS:
            raise ConfigError(f"expected {NUM_FINGERS} fingers, got {len(self.fingers)}")
        lo_f, hi_f = self.flexion_limits
        lo_a, hi_a = self.abduction_limits
        if not (lo_f < hi_f and lo_a < hi_a):
            raise ConfigError("joint limit intervals must be nonempty")
        if self.pad_rows < 2 or self.pad_cols < 2:
            raise ConfigError("pad grid needs at least 2x2 points")
        if self.pad_length <= 0.0 or self.pad_width <= 0.0:
            raise ConfigError("pad extents must be positive")

        abd, base, tip = [], [], []
        lower, upper = [], []
        j = 0
        for f in self.fingers:
            f.base_offset = np.asarray(f.base_offset, dtype=np.float64).reshape(3)
            f.link_lengths = np.asarray(f.link_lengths, dtype=np.float64).reshape(2)
            if np.any(f.link_lengths <= 0.0):
                raise ConfigError(f"finger {f.name!r}: link lengths must be positive")
            if f.has_abduction:
                abd.append(j)
                lower.append(lo_a)
                upper.append(hi_a)
                j += 1
            else:
                abd.append(-1)
            base.append(j)
            tip.append(j + 1)
            lower.extend([lo_f, lo_f])
            upper.extend([hi_f, hi_f])
            j += 2
        if j != NUM_JOINTS:
            raise ConfigError(f"finger layout yields {j} joints, expected {NUM_JOINTS}")

        self.num_joints = j
        self.abd_index = np.array(abd, dtype=np.intp)
        self.base_index = np.array(base, dtype=np.intp)
        self.tip_index = np.array(tip, dtype=np.intp)
        self.joint_lower = np.array(lower, dtype=np.float64)
        self.joint_upper = np.array(upper, dtype=np.float64)

        # Pad grid offsets: rows run along the last link direction, columns
        # across it.  Row-major point order, row 0 nearest the knuckle.
        uu = np.linspace(-0.5 * self.pad_length, 0.5 * self.pad_length, self.pad_rows)
        vv = np.linspace(-0.5 * self.pad_width, 0.5 * self.pad_width, self.pad_cols)
        gu, gv = np.meshgrid(uu, vv, indexing="ij")
        self.pad_offsets = np.stack([gu.ravel(), gv.ravel()], axis=1)

        # packed per-finger geometry for the vectorized kinematics path
        self._bases = np.stack([f.base_offset for f in self.fingers])
        self._links = np.stack([f.link_lengths for f in self.fingers])
        self._pad_weights = np.concatenate(
            [self.pad_offsets, np.ones((self.pad_offsets.shape[0], 1))], axis=1
        )

        # joint -> finger gather tables, used by the batched kinematics
        finger_of = np.empty(self.num_joints, dtype=np.intp)
        is_abd = np.zeros(self.num_joints, dtype=bool)
        is_tip = np.zeros(self.num_joints, dtype=bool)
        for i in range(NUM_FINGERS):
            if self.abd_index[i] >= 0:
                finger_of[self.abd_index[i]] = i
                is_abd[self.abd_index[i]] = True
            finger_of[self.base_index[i]] = i
            finger_of[self.tip_index[i]] = i
            is_tip[self.tip_index[i]] = True
        self.finger_of_joint = finger_of
        self.is_abd_joint = is_abd
        self.is_tip_joint = is_tip

    # -- joint layout -------------------------------------------------------

    @property
    def pad_points(self) -> int:
        return self.pad_rows * self.pad_cols

    def joint_indices(self, finger: int) -> List[int]:
        """All joint indices of one finger, abduction first."""
        idx = [int(self.base_index[finger]), int(self.tip_index[finger])]
        if self.abd_index[finger] >= 0:
            idx.insert(0, int(self.abd_index[finger]))
        return idx

    def flexion_joints(self, finger: int) -> Tuple[int, int]:
        """(base, tip) flexion joint indices of one finger."""
        return int(self.base_index[finger]), int(self.tip_index[finger])

    def abduction_joint(self, finger: int) -> Optional[int]:
        """Abduction joint index of one finger, or None."""
        j = int(self.abd_index[finger])
        return j if j >= 0 else None

    def clamp(self, q: np.ndarray) -> np.ndarray:
        """Joint vector clipped to the configured limits."""
        return np.clip(q, self.joint_lower, self.joint_upper)

    # -- serialization ------------------------------------------------------

    @staticmethod
    def from_dict(data: dict) -> "HandConfig":
        try:
            version = int(data["schema_version"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("missing or invalid schema_version") from exc
        if version != HAND_SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported hand schema version {version}, "
                f"this build reads version {HAND_SCHEMA_VERSION}"
            )
        try:
            fingers = [
                FingerSpec(
                    name=str(f["name"]),
                    has_abduction=bool(f["abduction"]),
                    base_offset=np.array(f["base_offset"], dtype=np.float64),
                    link_lengths=np.array(f["link_lengths"], dtype=np.float64),
                )
                for f in data["fingers"]
            ]
            limits = data["limits"]
            pad = data["pad"]
            return HandConfig(
                fingers=fingers,
                flexion_limits=(float(limits["flexion"][0]), float(limits["flexion"][1])),
                abduction_limits=(float(limits["abduction"][0]), float(limits["abduction"][1])),
                pad_rows=int(pad["rows"]),
                pad_cols=int(pad["cols"]),
                pad_length=float(pad["length"]),
                pad_width=float(pad["width"]),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"malformed hand config: {exc}") from exc

    @staticmethod
    def from_yaml(path: str) -> "HandConfig":
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        return HandConfig.from_dict(data)

    @staticmethod
    def default() -> "HandConfig":
        """The packaged default geometry (configs/hand.yaml)."""
        ref = importlib.resources.files("deskhand") / "configs" / "hand.yaml"
        data = yaml.safe_load(ref.read_text(encoding="utf-8"))
        return HandConfig.from_dict(data)


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass
class HandState:
    """Wrist pose plus joint positions and velocities.

    The wrist orientation is a scalar-first unit quaternion; the constructor
    normalizes it and clamps q into the configured limits so downstream code
    can rely on both invariants.
    """

    wrist_pos: np.ndarray        # (3,) [m]
    wrist_quat: np.ndarray       # (4,) scalar-first unit quaternion
    q: np.ndarray                # (12,) joint positions [rad]
    qd: np.ndarray               # (12,) joint velocities [rad/s]

    @staticmethod
    def create(
        config: HandConfig,
        wrist_pos: Sequence[float] = (0.0, 0.0, 0.0),
        wrist_quat: Sequence[float] = (1.0, 0.0, 0.0, 0.0),
        q: Optional[Sequence[float]] = None,
        qd: Optional[Sequence[float]] = None,
    ) -> "HandState":
        qv = np.zeros(NUM_JOINTS) if q is None else np.asarray(q, dtype=np.float64).copy()
        if qv.shape != (NUM_JOINTS,):
            raise ValueError(f"q must have shape ({NUM_JOINTS},), got {qv.shape}")
        qdv = np.zeros(NUM_JOINTS) if qd is None else np.asarray(qd, dtype=np.float64).copy()
        return HandState(
            wrist_pos=np.asarray(wrist_pos, dtype=np.float64).reshape(3).copy(),
            wrist_quat=quat_normalize(np.asarray(wrist_quat, dtype=np.float64)),
            q=config.clamp(qv),
            qd=qdv.reshape(NUM_JOINTS),
        )

    def copy(self) -> "HandState":
        return HandState(
            wrist_pos=self.wrist_pos.copy(),
            wrist_quat=self.wrist_quat.copy(),
            q=self.q.copy(),
            qd=self.qd.copy(),
        )


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------

@dataclass
class FingertipFrame:
    """Pose of one sensing pad in the world frame.

    center    (3,)  pad center (end of the distal link)
    normal    (3,)  outward pad normal (faces away from the palm)
    tangents  (2,3) t1 along the last link, t2 across the pad; with the
                    normal these form a right-handed orthonormal triad
    points    (P,3) tactile grid points on the pad plane, row-major
    """

    center: np.ndarray
    normal: np.ndarray
    tangents: np.ndarray
    points: np.ndarray


@dataclass
class HandKin:
    """Full kinematic snapshot used by contact and control.

    frames       per-finger pad frames
    joint_axes   (12, 3) world rotation axis of every joint
    joint_origins(12, 3) world position of every joint
    """

    frames: List[FingertipFrame]
    joint_axes: np.ndarray
    joint_origins: np.ndarray

    def point_jacobian(self, finger: int, point: np.ndarray, config: HandConfig) -> np.ndarray:
        """Jacobian of a material point on the distal link of `finger`.

        Returns (3, n) with one column per joint of the finger (abduction
        first when present): column_j = axis_j x (point - origin_j).
        """
        idx = config.joint_indices(finger)
        cols = [np.cross(self.joint_axes[j], point - self.joint_origins[j]) for j in idx]
        return np.stack(cols, axis=1)


def forward_kinematics(config: HandConfig, state: HandState) -> HandKin:
    """World-frame pad frames, joint axes and joint origins for every finger.

    Per finger: an optional abduction rotation about -z at the base, then two
    flexion rotations about the (abducted) local +y axis.  Everything is then
    carried into the world frame by the wrist pose.
    """
    q = state.q
    bases = config._bases                       # (5, 3) wrist frame
    links = config._links                       # (5, 2)

    has_abd = config.abd_index >= 0
    a = np.where(has_abd, q[np.maximum(config.abd_index, 0)], 0.0)
    t1q = q[config.base_index]                  # base flexion
    t2q = q[config.tip_index]                   # tip flexion
    th1 = t1q
    th12 = t1q + t2q

    ca, sa = np.cos(a), np.sin(a)
    c1, s1 = np.cos(th1), np.sin(th1)
    c12, s12 = np.cos(th12), np.sin(th12)

    # Direction of a link flexed by theta, after abduction by a:
    #   Rz(-a) @ (cos t, 0, -sin t)
    u1 = np.stack([ca * c1, -sa * c1, -s1], axis=1)          # proximal link
    u2 = np.stack([ca * c12, -sa * c12, -s12], axis=1)       # distal link
    flex_axis = np.stack([sa, ca, np.zeros(NUM_FINGERS)], axis=1)
    normal = np.stack([-ca * s12, sa * s12, -c12], axis=1)   # pad faces -z at q=0

    knuckle2 = bases + links[:, :1] * u1                     # second flexion joint
    center = knuckle2 + links[:, 1:] * u2                    # pad center

    # wrist composition
    R = quat_to_mat(state.wrist_quat)
    p0 = state.wrist_pos
    bases_w = bases @ R.T + p0
    knuckle2_w = knuckle2 @ R.T + p0
    center_w = center @ R.T + p0
    u2_w = u2 @ R.T
    flex_axis_w = flex_axis @ R.T
    normal_w = normal @ R.T
    abd_axis_w = R @ np.array([0.0, 0.0, -1.0])

    offsets = config.pad_offsets                             # (P, 2)
    points_w = (
        center_w[:, None, :]
        + offsets[None, :, 0, None] * u2_w[:, None, :]
        + offsets[None, :, 1, None] * flex_axis_w[:, None, :]
    )

    joint_axes = np.zeros((config.num_joints, 3))
    joint_origins = np.zeros((config.num_joints, 3))
    frames: List[FingertipFrame] = []
    for i in range(NUM_FINGERS):
        ja = config.abd_index[i]
        if ja >= 0:
            joint_axes[ja] = abd_axis_w
            joint_origins[ja] = bases_w[i]
        jb, jt = config.base_index[i], config.tip_index[i]
        joint_axes[jb] = flex_axis_w[i]
        joint_origins[jb] = bases_w[i]
        joint_axes[jt] = flex_axis_w[i]
        joint_origins[jt] = knuckle2_w[i]
        frames.append(
            FingertipFrame(
                center=center_w[i],
                normal=normal_w[i],
                tangents=np.stack([u2_w[i], flex_axis_w[i]]),
                points=points_w[i],
            )
        )
    return HandKin(frames=frames, joint_axes=joint_axes, joint_origins=joint_origins)


def fingertip_positions(config: HandConfig, state: HandState) -> np.ndarray:
    """(5, 3) pad centers in the world frame."""
    kin = forward_kinematics(config, state)
    return np.stack([f.center for f in kin.frames])


def fingertip_jacobian(config: HandConfig, state: HandState, finger: int) -> np.ndarray:
    """(3, 12) Jacobian of one pad center w.r.t. the full joint vector.

    Columns for joints that belong to other fingers are zero.
    """
    kin = forward_kinematics(config, state)
    J = np.zeros((3, config.num_joints))
    idx = config.joint_indices(finger)
    Jf = kin.point_jacobian(finger, kin.frames[finger].center, config)
    for k, j in enumerate(idx):
        J[:, j] = Jf[:, k]
    return J


# ---------------------------------------------------------------------------
# batched kinematics
# ---------------------------------------------------------------------------

@dataclass
class BatchKin:
    """Forward kinematics of a whole trial batch (leading dim B).

    basis holds rows (tangent 1, tangent 2, inward normal) per finger, the
    layout the tactile projection expects.
    """

    centers: np.ndarray          # (B, 5, 3) pad centers
    normals: np.ndarray          # (B, 5, 3) outward pad normals
    tangent1: np.ndarray         # (B, 5, 3) along the distal link
    tangent2: np.ndarray         # (B, 5, 3) across the pad (flexion axis)
    points: np.ndarray           # (B, 5, P, 3) pad grid points
    knuckle2: np.ndarray         # (B, 5, 3) second flexion joint
    bases: np.ndarray            # (B, 5, 3) finger bases, world frame
    joint_axes: np.ndarray       # (B, 12, 3)
    joint_origins: np.ndarray    # (B, 12, 3)
    basis: np.ndarray            # (B, 5, 3, 3)
    R: np.ndarray                # (B, 3, 3) wrist rotation


def batch_forward(
    config: HandConfig,
    wrist_pos: np.ndarray,
    wrist_quat: np.ndarray,
    q: np.ndarray,
) -> BatchKin:
    """forward_kinematics over a batch: wrist_pos (B, 3), wrist_quat (B, 4)
    scalar-first unit quaternions, q (B, 12)."""
    from .geometry import quat_to_mat_batch

    B = q.shape[0]
    bases = config._bases                       # (5, 3)
    links = config._links                       # (5, 2)

    has_abd = config.abd_index >= 0
    a = np.where(has_abd[None, :], q[:, np.maximum(config.abd_index, 0)], 0.0)
    th1 = q[:, config.base_index]
    th12 = th1 + q[:, config.tip_index]

    ca, sa = np.cos(a), np.sin(a)
    c1, s1 = np.cos(th1), np.sin(th1)
    c12, s12 = np.cos(th12), np.sin(th12)

    u1 = np.stack([ca * c1, -sa * c1, -s1], axis=2)          # (B, 5, 3)
    u2 = np.stack([ca * c12, -sa * c12, -s12], axis=2)
    flex_axis = np.stack([sa, ca, np.zeros_like(sa)], axis=2)
    normal = np.stack([-ca * s12, sa * s12, -c12], axis=2)

    knuckle2 = bases[None] + links[None, :, :1] * u1
    center = knuckle2 + links[None, :, 1:] * u2

    R = quat_to_mat_batch(wrist_quat)                        # (B, 3, 3)
    p0 = wrist_pos[:, None, :]
    bases_w = np.einsum("bij,fj->bfi", R, bases) + p0
    knuckle2_w = np.einsum("bij,bfj->bfi", R, knuckle2) + p0
    center_w = np.einsum("bij,bfj->bfi", R, center) + p0
    u2_w = np.einsum("bij,bfj->bfi", R, u2)
    flex_axis_w = np.einsum("bij,bfj->bfi", R, flex_axis)
    normal_w = np.einsum("bij,bfj->bfi", R, normal)
    abd_axis_w = -R[:, :, 2]                                 # R @ (0, 0, -1)

    # points = center + off_u * u2 + off_v * flex, folded into one broadcast
    # matmul over the precomputed (P, 3) weight rows (off_u, off_v, 1)
    span = np.stack([u2_w, flex_axis_w, center_w], axis=2)   # (B, 5, 3, 3)
    points_w = np.matmul(config._pad_weights, span)          # (B, 5, P, 3)

    fj = config.finger_of_joint
    joint_axes = np.where(
        config.is_abd_joint[None, :, None],
        abd_axis_w[:, None, :],
        flex_axis_w[:, fj],
    )
    joint_origins = np.where(
        config.is_tip_joint[None, :, None],
        knuckle2_w[:, fj],
        bases_w[:, fj],
    )

    basis = np.stack([u2_w, flex_axis_w, -normal_w], axis=2)  # (B, 5, 3, 3)
    return BatchKin(
        centers=center_w,
        normals=normal_w,
        tangent1=u2_w,
        tangent2=flex_axis_w,
        points=points_w,
        knuckle2=knuckle2_w,
        bases=bases_w,
        joint_axes=joint_axes,
        joint_origins=joint_origins,
        basis=basis,
        R=R,
    )
