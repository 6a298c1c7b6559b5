"""Demonstration logs: on-disk format, validation, and action-label derivation.

A demo is one trial's time series sampled at the policy period: wrist pose,
joint state, per-pad tactile forces, net fingertip forces, both camera
views, occluder masks while a human guides the hand, and (for replayed
rollouts) the applied actions.  Files use the shared chunked container
with content kind 1; every step is one float32 record so partial writes
are detectable and future record types can ride along.

Label derivation turns a guided (kinesthetic) demo into training targets:
position targets are the achieved trajectory a fixed lookahead ahead, and
force targets are exactly the recorded per-finger normal forces.  Guiding
the fingers leaves the recorded positions untouched by whatever force the
operator applied, so the achieved path is the correct position label and
the touch stream carries the force intent.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .container import (
    KIND_DEMO,
    DimensionError,
    TruncatedError,
    pack_tensor,
    read_container,
    unpack_tensor,
    write_container,
)
from .control import ACTION_DIM
from .geometry import quat_to_rotvec_batch

STEP_RECORD = 1

MODE_KINESTHETIC = "kinesthetic"
MODE_ROLLOUT = "rollout"

NUM_FINGERS = 5


@dataclass
class DemoLog:
    """One recorded trial.  All arrays are float32 except the boolean masks."""

    task: str
    seed: int
    mode: str                    # "kinesthetic" (guided) or "rollout" (policy)
    tick_dt: float               # physics tick period [s]
    ticks_per_step: int          # ticks between recorded steps (policy period)
    inpainted: bool

    times: np.ndarray            # (T,) [s]
    wrist_pos: np.ndarray        # (T, 3)
    wrist_quat: np.ndarray       # (T, 4) wxyz
    q: np.ndarray                # (T, 12)
    qd: np.ndarray               # (T, 12)
    tactile: np.ndarray          # (T, 5, P, 3) pad-frame forces
    force: np.ndarray            # (T, 5, 3) net per-finger pad-frame force
    front: np.ndarray            # (T, H, W, 3) in [0, 1]
    wrist: np.ndarray            # (T, H, W, 3)
    mask_front: Optional[np.ndarray] = None   # (T, H, W) bool
    mask_wrist: Optional[np.ndarray] = None
    actions: Optional[np.ndarray] = None      # (T, 23) applied during rollout
    labels: Optional[np.ndarray] = None       # (T, 23) derived training targets

    @property
    def steps(self) -> int:
        return int(self.times.shape[0])

    @property
    def image_hw(self):
        return int(self.front.shape[1]), int(self.front.shape[2])

    @property
    def pads(self) -> int:
        return int(self.tactile.shape[2])

    def equals(self, other: "DemoLog") -> bool:
        """Field-by-field exact equality (used by round-trip checks)."""
        for name in (
            "task", "seed", "mode", "tick_dt", "ticks_per_step", "inpainted",
        ):
            if getattr(self, name) != getattr(other, name):
                return False
        for name in _ARRAY_FIELDS + _OPTIONAL_FIELDS:
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


_ARRAY_FIELDS = (
    "times", "wrist_pos", "wrist_quat", "q", "qd",
    "tactile", "force", "front", "wrist",
)
_OPTIONAL_FIELDS = ("mask_front", "mask_wrist", "actions", "labels")


def validate_demo(demo: DemoLog) -> None:
    """Raise ValueError on structural problems; cheap enough to run on write."""
    T = demo.steps
    if demo.mode not in (MODE_KINESTHETIC, MODE_ROLLOUT):
        raise ValueError(f"unknown demo mode {demo.mode!r}")
    H, W = demo.image_hw
    P = demo.pads
    shapes = {
        "times": (T,),
        "wrist_pos": (T, 3),
        "wrist_quat": (T, 4),
        "q": (T, 12),
        "qd": (T, 12),
        "tactile": (T, NUM_FINGERS, P, 3),
        "force": (T, NUM_FINGERS, 3),
        "front": (T, H, W, 3),
        "wrist": (T, H, W, 3),
        "mask_front": (T, H, W),
        "mask_wrist": (T, H, W),
        "actions": (T, ACTION_DIM),
        "labels": (T, ACTION_DIM),
    }
    for name, want in shapes.items():
        arr = getattr(demo, name)
        if arr is None:
            continue
        if arr.shape != want:
            raise ValueError(f"{name}: shape {arr.shape}, expected {want}")
        if arr.dtype != np.bool_ and not np.all(np.isfinite(arr)):
            raise ValueError(f"{name}: contains non-finite values")
    if (demo.mask_front is None) != (demo.mask_wrist is None):
        raise ValueError("occluder masks must cover both views or neither")
    if T > 0:
        period = demo.tick_dt * demo.ticks_per_step
        expected = demo.times[0] + period * np.arange(T)
        if np.abs(demo.times.astype(np.float64) - expected).max() > 1e-4:
            raise ValueError("step times must be uniform at the recording period")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _header(demo: DemoLog) -> dict:
    H, W = demo.image_hw
    return {
        "task": demo.task,
        "seed": int(demo.seed),
        "mode": demo.mode,
        "tick_dt": float(demo.tick_dt),
        "ticks_per_step": int(demo.ticks_per_step),
        "inpainted": bool(demo.inpainted),
        "steps": demo.steps,
        "height": H,
        "width": W,
        "pads": demo.pads,
        "fingers": NUM_FINGERS,
        "has_masks": demo.mask_front is not None,
        "has_actions": demo.actions is not None,
        "has_labels": demo.labels is not None,
    }


def _step_layout(h: dict):
    """Ordered (name, float count) pairs for one step record."""
    H, W, P = h["height"], h["width"], h["pads"]
    layout = [
        ("times", 1),
        ("wrist_pos", 3),
        ("wrist_quat", 4),
        ("q", 12),
        ("qd", 12),
        ("tactile", NUM_FINGERS * P * 3),
        ("force", NUM_FINGERS * 3),
        ("front", H * W * 3),
        ("wrist", H * W * 3),
    ]
    if h["has_masks"]:
        layout += [("mask_front", H * W), ("mask_wrist", H * W)]
    if h["has_actions"]:
        layout.append(("actions", ACTION_DIM))
    if h["has_labels"]:
        layout.append(("labels", ACTION_DIM))
    return layout


def write_demo(demo: DemoLog, path) -> None:
    """Serialize to `path` plus a human-readable `<path>.meta.json` sidecar."""
    validate_demo(demo)
    header = _header(demo)
    layout = _step_layout(header)

    def records():
        for t in range(demo.steps):
            parts = []
            for name, _ in layout:
                arr = getattr(demo, name)
                value = arr[t]
                if arr.dtype == np.bool_:
                    value = value.astype(np.float32)
                parts.append(np.asarray(value, dtype="<f4").ravel())
            yield STEP_RECORD, pack_tensor(np.concatenate(parts))

    write_container(path, KIND_DEMO, header, records())
    with open(f"{path}.meta.json", "w") as f:
        json.dump(header, f, indent=2, sort_keys=True)
        f.write("\n")


def read_demo(path) -> DemoLog:
    """Read a demo; bit-exact inverse of write_demo for known record types."""
    _, header, raw_records = read_container(path, expect_kind=KIND_DEMO)
    try:
        layout = _step_layout(header)
        T = int(header["steps"])
        H, W, P = header["height"], header["width"], header["pads"]
    except KeyError as e:
        raise DimensionError(f"{path}: header missing field {e}") from None

    step_floats = sum(n for _, n in layout)
    payloads = []
    for tag, payload in raw_records:
        if tag != STEP_RECORD:
            warnings.warn(f"{path}: skipping unknown record tag {tag}")
            continue
        if len(payload) != 4 * step_floats:
            raise DimensionError(
                f"{path}: step record holds {len(payload)} bytes, "
                f"header dims require {4 * step_floats}"
            )
        payloads.append(payload)
    if len(payloads) < T:
        raise TruncatedError(
            f"{path}: header promises {T} steps, found {len(payloads)}"
        )
    if len(payloads) > T:
        raise DimensionError(
            f"{path}: header promises {T} steps, found {len(payloads)}"
        )

    flat = unpack_tensor(b"".join(payloads), (T, step_floats), "step records")
    fields = {}
    off = 0
    for name, n in layout:
        fields[name] = flat[:, off : off + n]
        off += n

    def shaped(name, *shape, as_bool=False):
        arr = np.ascontiguousarray(fields[name].reshape(T, *shape))
        return arr != 0 if as_bool else arr

    return DemoLog(
        task=header["task"],
        seed=int(header["seed"]),
        mode=header["mode"],
        tick_dt=float(header["tick_dt"]),
        ticks_per_step=int(header["ticks_per_step"]),
        inpainted=bool(header["inpainted"]),
        times=np.ascontiguousarray(fields["times"][:, 0]),
        wrist_pos=shaped("wrist_pos", 3),
        wrist_quat=shaped("wrist_quat", 4),
        q=shaped("q", 12),
        qd=shaped("qd", 12),
        tactile=shaped("tactile", NUM_FINGERS, P, 3),
        force=shaped("force", NUM_FINGERS, 3),
        front=shaped("front", H, W, 3),
        wrist=shaped("wrist", H, W, 3),
        mask_front=shaped("mask_front", H, W, as_bool=True) if header["has_masks"] else None,
        mask_wrist=shaped("mask_wrist", H, W, as_bool=True) if header["has_masks"] else None,
        actions=shaped("actions", ACTION_DIM) if header["has_actions"] else None,
        labels=shaped("labels", ACTION_DIM) if header["has_labels"] else None,
    )


# ---------------------------------------------------------------------------
# training-label derivation
# ---------------------------------------------------------------------------


def derive_actions(demo: DemoLog, lookahead: int = 1) -> DemoLog:
    """Attach per-step action labels to a guided demo.

    The position part of the label at step t is the achieved wrist pose and
    joint vector at step t + lookahead (clamped at the end); the force part
    is the net normal force per finger measured at step t, copied verbatim.
    """
    if demo.mode != MODE_KINESTHETIC:
        raise ValueError("labels are derived from guided demos only")
    if lookahead < 1:
        raise ValueError("lookahead must be >= 1")
    T = demo.steps
    if T < 2:
        raise ValueError("need at least two steps to derive motion labels")

    ahead = np.minimum(np.arange(T) + lookahead, T - 1)
    rotvec = quat_to_rotvec_batch(demo.wrist_quat[ahead].astype(np.float64))
    labels = np.empty((T, ACTION_DIM), dtype=np.float32)
    labels[:, 0:3] = demo.wrist_pos[ahead]
    labels[:, 3:6] = rotvec.astype(np.float32)
    labels[:, 6:18] = demo.q[ahead]
    labels[:, 18:23] = demo.force[:, :, 2]
    out = replace(demo, labels=labels)
    # keep the original's arrays out of reach of later mutation
    for name in _ARRAY_FIELDS + ("mask_front", "mask_wrist", "actions"):
        arr = getattr(out, name)
        if arr is not None:
            setattr(out, name, arr.copy())
    return out
