"""Synthetic demo builders shared by the I/O and preprocessing tests."""

import numpy as np

from deskhand.demo_io import MODE_KINESTHETIC, DemoLog
from deskhand.geometry import quat_from_rotvec_batch


def make_demo(
    rng,
    T=6,
    H=8,
    W=10,
    P=4,
    mode=MODE_KINESTHETIC,
    masks=True,
    actions=False,
    labels=False,
    inpainted=False,
    task="press-button",
    seed=0,
):
    """A structurally valid random demo with small tensors."""
    f32 = lambda a: np.asarray(a, dtype=np.float32)
    rotvecs = 0.2 * rng.standard_normal((T, 3))
    quats = quat_from_rotvec_batch(rotvecs)

    def mask_pair():
        if not masks:
            return None, None
        mf = np.zeros((T, H, W), dtype=bool)
        mw = np.zeros((T, H, W), dtype=bool)
        for t in range(T):
            r = 1 + int(rng.integers(0, max(min(H, W) // 3, 1)))
            cy, cx = int(rng.integers(0, H)), int(rng.integers(0, W))
            mf[t, max(cy - r, 0) : cy + r, max(cx - r, 0) : cx + r] = True
            cy, cx = int(rng.integers(0, H)), int(rng.integers(0, W))
            mw[t, max(cy - r, 0) : cy + r, max(cx - r, 0) : cx + r] = True
        return mf, mw

    mf, mw = mask_pair()
    return DemoLog(
        task=task,
        seed=seed,
        mode=mode,
        tick_dt=0.01,
        ticks_per_step=8,
        inpainted=inpainted,
        times=f32(0.08 * np.arange(T)),
        wrist_pos=f32(rng.standard_normal((T, 3))),
        wrist_quat=f32(quats),
        q=f32(0.3 + 0.1 * rng.standard_normal((T, 12))),
        qd=f32(0.01 * rng.standard_normal((T, 12))),
        tactile=f32(np.abs(rng.standard_normal((T, 5, P, 3)))),
        force=f32(np.abs(rng.standard_normal((T, 5, 3)))),
        front=f32(rng.random((T, H, W, 3))),
        wrist=f32(rng.random((T, H, W, 3))),
        mask_front=mf,
        mask_wrist=mw,
        actions=f32(rng.standard_normal((T, 23))) if actions else None,
        labels=f32(rng.standard_normal((T, 23))) if labels else None,
    )
