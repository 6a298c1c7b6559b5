"""Penetration-based tactile contact model.

Every tactile grid point is tested against every scene body; the deepest
penetration wins.  The normal force is a linear spring-damper on the
penetration depth, clamped so separation never produces suction.  The
tangential force is viscous drag on the slip velocity, capped at the
Coulomb cone mu * f_z, so the friction-cone constraint holds by
construction.  Depth and slip rates come from per-point finite differences
against the previous sample, which the caller threads through as a
ContactState.

The arithmetic lives in `batch_contact`, which evaluates a whole batch of
independent trials (leading dim B) in one pass; `sample_contacts` is the
single-scene wrapper (B = 1) used by the step API and the tests, so both
paths produce identical numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .kinematics import NUM_FINGERS, HandConfig, HandKin
from .objects import Body

_EPS = 1e-12


@dataclass
class ContactParams:
    """Shared contact constants (per-body stiffness scales multiply k_normal)."""

    k_normal: float = 2000.0     # N/m
    c_normal: float = 80.0       # N*s/m
    mu: float = 0.6              # Coulomb friction coefficient
    c_tangent: float = 10.0      # N*s/m viscous slip gain

    def __post_init__(self) -> None:
        if self.k_normal <= 0.0:
            raise ValueError("contact stiffness must be positive")
        if self.c_normal < 0.0 or self.c_tangent < 0.0 or self.mu < 0.0:
            raise ValueError("contact damping and friction must be non-negative")


@dataclass
class ContactState:
    """Previous-sample memory for finite-difference rates."""

    depth: np.ndarray            # (5, P) penetration depth at the last sample
    points: np.ndarray           # (5, P, 3) world point positions at the last sample


@dataclass
class TactileFrame:
    """Per-point contact forces in each pad frame.

    forces[f, p] = (f_x along tangent 1, f_y along tangent 2, f_z into the
    pad).  Non-contacting points are exactly zero; f_z >= 0 everywhere.
    """

    forces: np.ndarray           # (5, P, 3)

    def copy(self) -> "TactileFrame":
        return TactileFrame(self.forces.copy())

    @staticmethod
    def zeros(pad_points: int) -> "TactileFrame":
        return TactileFrame(np.zeros((NUM_FINGERS, pad_points, 3)))


@dataclass
class ContactSample:
    """Everything one contact pass produces."""

    tactile: TactileFrame
    world_forces: np.ndarray     # (5, P, 3) force on each pad point, world frame
    body_forces: Dict[str, np.ndarray]   # reaction force on each body (world)
    state: ContactState


# ---------------------------------------------------------------------------
# batched core
# ---------------------------------------------------------------------------

@dataclass
class ContactSlot:
    """One body slot evaluated across the trial batch.

    sdf holds the slot's signed distances at the flattened pad points
    (+inf rows are fine for points the caller pruned away).  Normals are
    taken either from a dense `normal` array or, to avoid computing them
    where nothing touches, from a `normal_at(bidx, points)` callback that
    is queried only at the contacting points.  stiffness_scale and vel may
    be scalars / (3,) when shared by every trial or (B,) / (B, 3) when
    they differ per trial.
    """

    sdf: np.ndarray                          # (B, M)
    normal: Optional[np.ndarray] = None      # (B, M, 3)
    normal_at: Optional[object] = None       # callable (K,), (K, 3) -> (K, 3)
    stiffness_scale: Union[float, np.ndarray] = 1.0
    vel: Union[np.ndarray, None] = None      # (3,) or (B, 3); None means static


class BatchContact:
    """Result of one batched contact pass.

    The contacting points are stored sparsely (flat index arrays over
    B * F * P); the dense per-point views are materialized on demand.
    """

    def __init__(self, shape, depth, idx, bidx, fidx, slot_k, pts_k, force_k, fn_k):
        self.shape = shape                   # (B, F, P)
        self.depth = depth                   # (B, F, P) penetration depth
        self.idx = idx                       # (K,) flat indices of contacts
        self.bidx = bidx                     # (K,) trial of each contact
        self.fidx = fidx                     # (K,) finger of each contact
        self.slot_k = slot_k                 # (K,) winning slot per contact
        self.pts_k = pts_k                   # (K, 3) world positions
        self.force_k = force_k               # (K, 3) world-frame forces
        self.fn_k = fn_k                     # (K,) normal force magnitudes
        self._world = None
        self._f_n = None
        self._slot_of = None

    @property
    def world(self) -> np.ndarray:
        """(B, F, P, 3) force on each pad point."""
        if self._world is None:
            B, F, P = self.shape
            w = np.zeros((B * F * P, 3))
            w[self.idx] = self.force_k
            self._world = w.reshape(B, F, P, 3)
        return self._world

    @property
    def f_n(self) -> np.ndarray:
        """(B, F, P) normal force magnitude."""
        if self._f_n is None:
            B, F, P = self.shape
            f = np.zeros(B * F * P)
            f[self.idx] = self.fn_k
            self._f_n = f.reshape(B, F, P)
        return self._f_n

    @property
    def slot_of(self) -> np.ndarray:
        """(B, F, P) winning slot index, -1 where no contact."""
        if self._slot_of is None:
            B, F, P = self.shape
            s = np.full(B * F * P, -1, dtype=np.intp)
            s[self.idx] = self.slot_k
            self._slot_of = s.reshape(B, F, P)
        return self._slot_of

    def any_contact(self) -> bool:
        return self.idx.size > 0

    def reaction(self, slot: int) -> np.ndarray:
        """(B, 3) total reaction force on one slot's body."""
        B = self.shape[0]
        out = np.zeros((B, 3))
        mask = self.slot_k == slot
        if mask.any():
            b = self.bidx[mask]
            f = self.force_k[mask]
            for c in range(3):
                out[:, c] = -np.bincount(b, weights=f[:, c], minlength=B)
        return out

    def finger_normal(self, slot: int) -> np.ndarray:
        """(B, F) per-finger normal force carried by one slot's body."""
        B, F, _ = self.shape
        mask = self.slot_k == slot
        key = self.bidx[mask] * F + self.fidx[mask]
        return np.bincount(key, weights=self.fn_k[mask], minlength=B * F).reshape(B, F)

    def joint_torques(
        self,
        joint_axes: np.ndarray,
        joint_origins: np.ndarray,
        finger_of_joint: np.ndarray,
    ) -> np.ndarray:
        """(B, 12) joint torques from the contact forces.

        joint_axes/joint_origins (B, 12, 3); finger_of_joint (12,) maps
        each joint to its finger row.  Equivalent to summing a . ((p - o)
        x F) over a finger's points, folded into per-finger force/moment
        totals first.
        """
        B, F, _ = self.shape
        if self.idx.size == 0:
            return np.zeros((B, joint_axes.shape[1]))
        key = self.bidx * F + self.fidx
        moments = np.cross(self.pts_k, self.force_k)
        f_tot = np.empty((B * F, 3))
        m_tot = np.empty((B * F, 3))
        for c in range(3):
            f_tot[:, c] = np.bincount(key, weights=self.force_k[:, c], minlength=B * F)
            m_tot[:, c] = np.bincount(key, weights=moments[:, c], minlength=B * F)
        fj = f_tot.reshape(B, F, 3)[:, finger_of_joint]       # (B, 12, 3)
        mj = m_tot.reshape(B, F, 3)[:, finger_of_joint]
        return np.einsum("bjc,bjc->bj", joint_axes, mj - np.cross(joint_origins, fj))

    def tactile_frames(self, basis: np.ndarray) -> np.ndarray:
        """(B, F, P, 3) pad-frame forces; basis (B, F, 3, 3) holds rows
        (tangent 1, tangent 2, inward normal).  The normal component is
        clamped at zero: the sensels read pressure only."""
        B, F, P = self.shape
        out = np.zeros((B * F * P, 3))
        if self.idx.size:
            bk = basis[self.bidx, self.fidx]                  # (K, 3, 3)
            t = np.einsum("krc,kc->kr", bk, self.force_k)
            t[:, 2] = np.maximum(t[:, 2], 0.0)
            out[self.idx] = t
        return out.reshape(B, F, P, 3)


def batch_contact(
    points: np.ndarray,
    slots: Sequence[ContactSlot],
    params: ContactParams,
    dt: float,
    prev_depth: Optional[np.ndarray] = None,
    prev_points: Optional[np.ndarray] = None,
) -> BatchContact:
    """Contact forces for a batch of trials.

    points: (B, F, P, 3) pad point positions; prev_* are the previous
    sample's depth / positions with matching shapes (None on the first
    sample, which zeroes all rates).  Slot distances are evaluated densely
    for the deepest-body selection, but all force arithmetic runs only at
    the points actually in contact.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    B, F, P, _ = points.shape
    M = F * P

    best_sdf = np.full((B, M), np.inf)
    best_slot = np.full((B, M), -1, dtype=np.intp)
    for si, slot in enumerate(slots):
        closer = slot.sdf < best_sdf
        best_sdf = np.where(closer, slot.sdf, best_sdf)
        best_slot = np.where(closer, si, best_slot)

    neg = best_sdf < 0.0
    depth = np.where(neg, -best_sdf, 0.0).reshape(B, F, P)

    idx = np.nonzero(neg.ravel())[0]
    if idx.size == 0:
        empty = np.zeros(0, dtype=np.intp)
        return BatchContact(
            (B, F, P), depth, empty, empty, empty, empty,
            np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0),
        )

    bidx = idx // M
    fidx = (idx % M) // P
    slot_k = best_slot.ravel()[idx]
    depth_k = depth.reshape(-1)[idx]
    pts_k = points.reshape(-1, 3)[idx]

    if prev_depth is not None:
        rate_k = (depth_k - prev_depth.reshape(-1)[idx]) / dt
        vel_k = (pts_k - prev_points.reshape(-1, 3)[idx]) / dt
    else:
        rate_k = np.zeros_like(depth_k)
        vel_k = np.zeros_like(pts_k)

    K = idx.size
    normal_k = np.empty((K, 3))
    scale_k = np.ones(K)
    bvel_k = np.zeros((K, 3))
    for si, slot in enumerate(slots):
        sel = slot_k == si
        if not sel.any():
            continue
        if slot.normal is not None:
            normal_k[sel] = slot.normal.reshape(-1, 3)[idx[sel]]
        else:
            normal_k[sel] = slot.normal_at(bidx[sel], pts_k[sel])
        s = np.asarray(slot.stiffness_scale, dtype=np.float64)
        scale_k[sel] = s if s.ndim == 0 else s[bidx[sel]]
        if slot.vel is not None:
            v = np.asarray(slot.vel, dtype=np.float64)
            bvel_k[sel] = v if v.ndim == 1 else v[bidx[sel]]

    fn_k = np.maximum(
        0.0, (params.k_normal * depth_k + params.c_normal * rate_k) * scale_k
    )

    v_rel = vel_k - bvel_k
    v_tan = v_rel - np.sum(v_rel * normal_k, axis=1, keepdims=True) * normal_k
    f_t = -params.c_tangent * v_tan
    t_mag = np.sqrt(np.sum(f_t * f_t, axis=1))
    cap = params.mu * fn_k
    factor = np.where(t_mag > _EPS, np.minimum(1.0, cap / np.maximum(t_mag, _EPS)), 0.0)
    force_k = fn_k[:, None] * normal_k + f_t * factor[:, None]

    return BatchContact((B, F, P), depth, idx, bidx, fidx, slot_k, pts_k, force_k, fn_k)


def project_tactile(world: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """World-frame pad forces (B, F, P, 3) into pad frames.

    basis (B, F, 3, 3) holds rows (tangent 1, tangent 2, inward normal) per
    finger.  The normal component is clamped at zero: the sensels read
    pressure only.
    """
    tactile = np.einsum("bfpc,bfkc->bfpk", world, basis)
    tactile[:, :, :, 2] = np.maximum(tactile[:, :, :, 2], 0.0)
    loaded = np.any(world != 0.0, axis=3)
    return np.where(loaded[:, :, :, None], tactile, 0.0)


def batch_contact_torques(
    world: np.ndarray,
    points: np.ndarray,
    joint_axes: np.ndarray,
    joint_origins: np.ndarray,
    finger_of_joint: np.ndarray,
) -> np.ndarray:
    """(B, 12) joint torques from batched pad forces.

    world/points (B, F, P, 3); joint_axes/joint_origins (B, 12, 3);
    finger_of_joint (12,) maps each joint to its finger row.
    """
    f_tot = world.sum(axis=2)                                 # (B, F, 3)
    m_tot = np.cross(points, world).sum(axis=2)               # (B, F, 3)
    fj = f_tot[:, finger_of_joint]                            # (B, 12, 3)
    mj = m_tot[:, finger_of_joint]
    return np.einsum("bjc,bjc->bj", joint_axes, mj - np.cross(joint_origins, fj))


# ---------------------------------------------------------------------------
# single-scene wrapper
# ---------------------------------------------------------------------------

def sample_contacts(
    bodies: Sequence[Body],
    kin: HandKin,
    params: ContactParams,
    dt: float,
    prev: Optional[ContactState] = None,
) -> ContactSample:
    """Tactile forces for the current hand pose against the scene bodies."""
    pts = np.stack([f.points for f in kin.frames])            # (5, P, 3)
    nf, npts, _ = pts.shape
    flat = pts.reshape(1, -1, 3)

    slots: List[ContactSlot] = []
    for body in bodies:
        sdf, normal = body.signed_distance(flat[0])
        slots.append(
            ContactSlot(
                sdf=sdf[None],
                normal=normal[None],
                stiffness_scale=body.stiffness_scale,
                vel=body.vel,
            )
        )

    result = batch_contact(
        pts[None],
        slots,
        params,
        dt,
        prev_depth=None if prev is None else prev.depth[None],
        prev_points=None if prev is None else prev.points[None],
    )

    basis = np.stack(
        [np.stack([f.tangents[0], f.tangents[1], -f.normal]) for f in kin.frames]
    )                                                         # (5, 3, 3)
    tactile = project_tactile(result.world, basis[None])[0]

    body_forces: Dict[str, np.ndarray] = {
        body.name: result.reaction(bi)[0] for bi, body in enumerate(bodies)
    }

    return ContactSample(
        tactile=TactileFrame(tactile),
        world_forces=result.world[0],
        body_forces=body_forces,
        state=ContactState(depth=result.depth[0], points=pts.copy()),
    )


def aggregate_fingertip_force(frame: TactileFrame) -> np.ndarray:
    """(5, 3) per-finger force: component-wise sum over the pad points."""
    return frame.forces.sum(axis=1)


def normal_component(fingertip_forces: np.ndarray) -> np.ndarray:
    """(5,) normal force f_z per finger from aggregated (5, 3) forces."""
    return np.asarray(fingertip_forces)[:, 2]


def contact_joint_torques(
    kin: HandKin, world_forces: np.ndarray, config: HandConfig
) -> np.ndarray:
    """(12,) joint torques produced by the pad contact forces.

    For a revolute joint with axis a and origin o, the torque from a force
    F at point p is a . ((p - o) x F); summing over a finger's points only
    needs the total force and total moment of that finger.
    """
    tau = np.zeros(config.num_joints)
    for i in range(NUM_FINGERS):
        F = world_forces[i]
        total = F.sum(axis=0)
        if not np.any(total) and not np.any(F):
            continue
        moment = np.cross(kin.frames[i].points, F).sum(axis=0)
        for j in config.joint_indices(i):
            o = kin.joint_origins[j]
            a = kin.joint_axes[j]
            tau[j] += a @ (moment - np.cross(o, total))
    return tau
