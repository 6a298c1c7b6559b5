"""Batched closed-loop execution: policies in, demos and outcomes out.

One runner drives a whole batch of trials in lockstep.  Each trial belongs
to a group that shares a policy and a force-control flag, so ablation
conditions (force control off, tactile features off, different training
sets) run side by side in a single scene without any cross-talk.

Execution semantics are chosen so that recorded demonstrations replay
bit-for-bit.  Every policy step the ensembled action is quantized to
float32 and stored; the controller then interpolates from the *previous*
stored waypoint to the current one over the next 8 ticks.  Replaying a
demo feeds the identical float32 waypoints through the identical code
path, so the reproduced joint trajectory carries zero drift.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .control import (
    ACTION_DIM,
    CHUNK_LEN,
    CONTROL_DT,
    HAND_TICK_DIV,
    POLICY_PERIOD_TICKS,
    ActionChunk,
    ChunkBuffer,
    EnsembleConfig,
    Gains,
    pd_control,
)
from .dataset import DatasetConfig
from .demo_io import MODE_KINESTHETIC, MODE_ROLLOUT, DemoLog
from .geometry import quat_from_rotvec_batch
from .kinematics import NUM_FINGERS, NUM_JOINTS, HandConfig
from .policy import step_features
from .world import BatchScene, TaskSpec


@dataclass
class RolloutGroup:
    """A block of trials sharing one policy and controller configuration.

    ensemble overrides the run-level chunk blending for this group; a
    scripted demonstrator that re-plans every step is usually run with
    window 1 (no smoothing) so its force decisions take effect at once.
    """

    policy: object
    seeds: Sequence[int]
    force_control: bool = True
    ensemble: Optional[EnsembleConfig] = None


@dataclass
class RolloutResult:
    task: str
    seeds: np.ndarray            # (B,) int64
    group_of: np.ndarray         # (B,) int32, index into the groups argument
    success: np.ndarray          # (B,) bool at the final tick
    applied: np.ndarray          # (B, S, 23) float32 executed waypoints
    traces: np.ndarray           # (B, S*8, 5, 2) float32 [commanded f_d, sensed f_z]
    demos: Optional[List[DemoLog]] = None
    metrics: Optional[Dict[str, np.ndarray]] = None


def _final_metrics(scene: BatchScene) -> Dict[str, np.ndarray]:
    """Per-trial end-state numbers behind the success predicate."""
    kind = scene.task.kind
    if kind == "press":
        return {
            "press_run": scene.press_run.astype(np.int64),
            "press_done": scene.press_done.copy(),
        }
    if kind == "grasp":
        return {
            "lift_max": scene.lift_max.copy(),
            "crush_peak": scene.crush_peak.copy(),
            "crush_tick": scene.crush_tick.copy(),
            "attached": scene.attached.copy(),
        }
    rms = np.sqrt(scene.squeeze_sse / max(scene.tick, 1))
    return {
        "touch_tick": scene.touch_tick.copy(),
        "squeeze_rms": rms,
        "squeeze_peak": scene.squeeze_peak.copy(),
    }


# ---------------------------------------------------------------------------
# batched force-aware target resolution
# ---------------------------------------------------------------------------

def resolve_targets_batch(
    joints_cmd: np.ndarray,       # (B, 12) interpolated joint targets
    forces_cmd: np.ndarray,       # (B, 5) interpolated force commands, >= 0
    q: np.ndarray,                # (B, 12) current joint angles
    force_mode: np.ndarray,       # (B, 5) bool, carried between ticks
    force_control: np.ndarray,    # (B,) bool per trial
    gains: Gains,
    config: HandConfig,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized counterpart of the single-hand target resolver.

    Returns (targets (B,12), new force_mode (B,5), force-mode joint mask
    (B,12)); the joint mask marks flexion joints whose velocity feedforward
    must be suppressed because their target is force-derived.
    """
    enter = forces_cmd > gains.f_min
    stay = forces_cmd > gains.exit_threshold
    mode = np.where(force_mode, stay, enter) & force_control[:, None]

    targets = joints_cmd.copy()
    ti = config.tip_index
    bi = config.base_index
    tip_t = q[:, ti] + gains.k_tip * forces_cmd
    base_t = q[:, bi] + gains.k_base * forces_cmd
    targets[:, ti] = np.where(mode, tip_t, targets[:, ti])
    targets[:, bi] = np.where(mode, base_t, targets[:, bi])

    joint_mask = np.zeros(targets.shape, dtype=bool)
    joint_mask[:, ti] = mode
    joint_mask[:, bi] = mode
    return config.clamp(targets), mode, joint_mask


# ---------------------------------------------------------------------------
# waypoint span execution
# ---------------------------------------------------------------------------

def _execute_span(
    scene: BatchScene,
    prev: np.ndarray,             # (B, 23) float64 waypoint being left
    cur: np.ndarray,              # (B, 23) float64 waypoint being approached
    force_mode: np.ndarray,       # (B, 5) bool, updated in place semantics via return
    force_control: np.ndarray,    # (B,) bool
    gains: Gains,
    traces: Optional[np.ndarray],  # (B, S*8, 5, 2) or None
) -> np.ndarray:
    """Drive the scene over one 8-tick policy period; returns new force_mode."""
    cfg = scene.config
    delta = cur - prev
    slope_q = delta[:, 6:18] / (POLICY_PERIOD_TICKS * CONTROL_DT)
    for d in range(POLICY_PERIOD_TICKS):
        frac_w = (d + 1) / POLICY_PERIOD_TICKS
        hand_tick = (d // HAND_TICK_DIV) * HAND_TICK_DIV
        frac_h = (hand_tick + HAND_TICK_DIV) / POLICY_PERIOD_TICKS

        wrist_cmd = prev[:, 0:6] + frac_w * delta[:, 0:6]
        joints_cmd = prev[:, 6:18] + frac_h * delta[:, 6:18]
        forces_cmd = np.maximum(prev[:, 18:23] + frac_h * delta[:, 18:23], 0.0)

        targets, force_mode, fm_joints = resolve_targets_batch(
            joints_cmd, forces_cmd, scene.q, force_mode, force_control, gains, cfg
        )
        xdot_d = np.where(fm_joints, 0.0, slope_q)
        torques = pd_control(targets, scene.q, xdot_d, scene.qd, gains)
        wrist_quat_t = quat_from_rotvec_batch(wrist_cmd[:, 3:6])
        if traces is not None:
            traces[:, scene.tick, :, 0] = forces_cmd.astype(np.float32)
        scene.step(torques, wrist_cmd[:, 0:3], wrist_quat_t)
        if traces is not None:
            traces[:, scene.tick - 1, :, 1] = scene.agg[:, :, 2].astype(np.float32)
    return force_mode


# ---------------------------------------------------------------------------
# the runner
# ---------------------------------------------------------------------------

def run_batch(
    task: TaskSpec,
    groups: Sequence[RolloutGroup],
    record: str = "none",
    obs_hw: Tuple[int, int] = (48, 64),
    feature_config: Optional[DatasetConfig] = None,
    ensemble: Optional[EnsembleConfig] = None,
    gains: Optional[Gains] = None,
    hand_config: Optional[HandConfig] = None,
) -> RolloutResult:
    """Run every group's trials to the task horizon in one shared scene.

    record: "none" (outcome and traces only), "kinesthetic" (occluded
    views with occluder masks, as captured while a person guides the
    hand), or "rollout" (clean views).  Both recording modes also store
    the executed waypoints so any demo can be replayed exactly.
    """
    if record not in ("none", "kinesthetic", "rollout"):
        raise ValueError(f"unknown record mode {record!r}")
    if ensemble is None:
        ensemble = EnsembleConfig()
    if gains is None:
        gains = Gains.default()

    seeds: List[int] = []
    group_of: List[int] = []
    bounds: List[Tuple[int, int]] = []
    for gi, g in enumerate(groups):
        start = len(seeds)
        seeds.extend(int(s) for s in g.seeds)
        bounds.append((start, len(seeds)))
        group_of.extend([gi] * (len(seeds) - start))
    if not seeds:
        raise ValueError("no trials requested")

    scene = BatchScene(task, seeds, config=hand_config)
    B = scene.B
    S = task.horizon_steps
    H, W = obs_hw

    needs_obs = any(getattr(g.policy, "needs_observations", False) for g in groups)
    if needs_obs and feature_config is None:
        for g in groups:
            if getattr(g.policy, "needs_observations", False):
                feature_config = g.policy.index.config
                break
    rendering = needs_obs or record != "none"
    kinesthetic = record == "kinesthetic"

    for g, (lo, hi) in zip(groups, bounds):
        g.policy.reset(hi - lo)

    force_control = np.zeros(B, dtype=bool)
    for g, (lo, hi) in zip(groups, bounds):
        force_control[lo:hi] = g.force_control
    force_mode = np.zeros((B, NUM_FINGERS), dtype=bool)

    buffers: List[ChunkBuffer] = []
    for g, (lo, hi) in zip(groups, bounds):
        cfg_e = g.ensemble if g.ensemble is not None else ensemble
        buffers.extend(ChunkBuffer(cfg_e) for _ in range(hi - lo))
    applied = np.zeros((B, S, ACTION_DIM), dtype=np.float32)
    traces = np.zeros((B, S * POLICY_PERIOD_TICKS, NUM_FINGERS, 2), dtype=np.float32)

    rec = None
    if record != "none":
        P = scene.config.pad_points
        rec = {
            "wrist_pos": np.zeros((B, S, 3), dtype=np.float32),
            "wrist_quat": np.zeros((B, S, 4), dtype=np.float32),
            "q": np.zeros((B, S, NUM_JOINTS), dtype=np.float32),
            "qd": np.zeros((B, S, NUM_JOINTS), dtype=np.float32),
            "tactile": np.zeros((B, S, NUM_FINGERS, P, 3), dtype=np.float32),
            "force": np.zeros((B, S, NUM_FINGERS, 3), dtype=np.float32),
            "front": np.zeros((B, S, H, W, 3), dtype=np.float32),
            "wrist": np.zeros((B, S, H, W, 3), dtype=np.float32),
        }
        if kinesthetic:
            rec["mask_front"] = np.zeros((B, S, H, W), dtype=bool)
            rec["mask_wrist"] = np.zeros((B, S, H, W), dtype=bool)

    prev64 = None
    for s in range(S):
        obs = None
        if rendering:
            obs = scene.observe(H, W, kinesthetic=kinesthetic)
        if rec is not None:
            rec["wrist_pos"][:, s] = scene.wrist_pos.astype(np.float32)
            rec["wrist_quat"][:, s] = scene.wrist_quat.astype(np.float32)
            rec["q"][:, s] = scene.q.astype(np.float32)
            rec["qd"][:, s] = scene.qd.astype(np.float32)
            rec["tactile"][:, s] = scene.tactile.astype(np.float32)
            rec["force"][:, s] = scene.agg.astype(np.float32)
            rec["front"][:, s] = obs.front.astype(np.float32)
            rec["wrist"][:, s] = obs.wrist.astype(np.float32)
            if kinesthetic:
                rec["mask_front"][:, s] = obs.mask_front
                rec["mask_wrist"][:, s] = obs.mask_wrist

        feats = None
        if needs_obs:
            feats = step_features(obs, scene.agg, feature_config)

        for g, (lo, hi) in zip(groups, bounds):
            if getattr(g.policy, "needs_observations", False):
                chunks = g.policy.plan_from_features(feats[lo:hi])
            else:
                chunks = g.policy.plan(scene, np.arange(lo, hi), s)
            for b in range(lo, hi):
                buffers[b].push(s, ActionChunk(chunks[b - lo]))

        blended = np.stack([buffers[b].blend(s) for b in range(B)])
        a32 = blended.astype(np.float32)
        applied[:, s] = a32
        cur64 = a32.astype(np.float64)
        if prev64 is None:
            prev64 = cur64
        force_mode = _execute_span(
            scene, prev64, cur64, force_mode, force_control, gains, traces
        )
        prev64 = cur64

    demos = None
    if rec is not None:
        mode = MODE_KINESTHETIC if kinesthetic else MODE_ROLLOUT
        times = (POLICY_PERIOD_TICKS * CONTROL_DT * np.arange(S)).astype(np.float32)
        demos = []
        for b in range(B):
            demos.append(
                DemoLog(
                    task=task.name,
                    seed=int(seeds[b]),
                    mode=mode,
                    tick_dt=CONTROL_DT,
                    ticks_per_step=POLICY_PERIOD_TICKS,
                    inpainted=False,
                    times=times.copy(),
                    wrist_pos=rec["wrist_pos"][b],
                    wrist_quat=rec["wrist_quat"][b],
                    q=rec["q"][b],
                    qd=rec["qd"][b],
                    tactile=rec["tactile"][b],
                    force=rec["force"][b],
                    front=rec["front"][b],
                    wrist=rec["wrist"][b],
                    mask_front=rec["mask_front"][b] if kinesthetic else None,
                    mask_wrist=rec["mask_wrist"][b] if kinesthetic else None,
                    actions=applied[b].copy(),
                    labels=None,
                )
            )

    return RolloutResult(
        task=task.name,
        seeds=scene.seeds.copy(),
        group_of=np.asarray(group_of, dtype=np.int32),
        success=scene.success(),
        applied=applied,
        traces=traces,
        demos=demos,
        metrics=_final_metrics(scene),
    )


# ---------------------------------------------------------------------------
# exact replay
# ---------------------------------------------------------------------------

@dataclass
class ReplayResult:
    success: bool
    q_achieved: np.ndarray       # (S, 12) float32 at each policy boundary
    drift: float                 # max |q_achieved - demo.q| over all joints/steps


def run_replay(
    task: TaskSpec,
    demo: DemoLog,
    force_control: bool = True,
    gains: Optional[Gains] = None,
    hand_config: Optional[HandConfig] = None,
) -> ReplayResult:
    """Re-execute a demo's stored waypoints and measure trajectory drift.

    The demo must carry actions (every runner-recorded demo does).  The
    scene is reseeded from the demo header, so the same contact history
    unfolds and the achieved joint trajectory matches the recording.
    """
    if demo.actions is None:
        raise ValueError("demo carries no actions to replay")
    if demo.task != task.name:
        raise ValueError(f"demo was recorded on task {demo.task!r}, not {task.name!r}")
    if gains is None:
        gains = Gains.default()
    S = demo.steps
    scene = BatchScene(task, [demo.seed], config=hand_config)
    fc = np.array([force_control])
    force_mode = np.zeros((1, NUM_FINGERS), dtype=bool)

    q_achieved = np.zeros((S, NUM_JOINTS), dtype=np.float32)
    prev64 = None
    for s in range(S):
        q_achieved[s] = scene.q[0].astype(np.float32)
        cur64 = demo.actions[s][None].astype(np.float64)
        if prev64 is None:
            prev64 = cur64
        force_mode = _execute_span(scene, prev64, cur64, force_mode, fc, gains, None)
        prev64 = cur64

    drift = float(np.max(np.abs(q_achieved.astype(np.float64) - demo.q.astype(np.float64))))
    return ReplayResult(
        success=bool(scene.success()[0]), q_achieved=q_achieved, drift=drift
    )
