"""Scene dynamics checks: integrator oracles, determinism, batching,
energy bookkeeping, randomization statistics and success predicates."""

import importlib.resources as resources

import numpy as np
import pytest

from deskhand.contact import BatchContact
from deskhand.control import CONTROL_DT, PHYSICS_SUBSTEPS
from deskhand.geometry import IDENTITY_QUAT, quat_from_rotvec_batch
from deskhand.kinematics import ConfigError, HandConfig, batch_forward
from deskhand.render import OCCLUDER_COLOR
from deskhand.world import (
    BatchScene,
    Scene,
    check_success,
    get_task,
    load_tasks,
    randomize,
    squeeze_profile,
    task_names,
)

H = CONTROL_DT / PHYSICS_SUBSTEPS


def hold(scene: BatchScene):
    """Commands that hold the current wrist pose with zero joint torque."""
    B = scene.B
    return np.zeros((B, 12)), scene.wrist_pos.copy(), scene.wrist_quat.copy()


def tasks_yaml_text() -> str:
    return resources.files("deskhand").joinpath("configs/tasks.yaml").read_text()


# ---------------------------------------------------------------------------
# task loading and validation
# ---------------------------------------------------------------------------

def test_task_suite_contents():
    names = task_names()
    assert names == sorted(["press", "fragile-grasp", "squeeze"])
    press = get_task("press")
    assert press.kind == "press"
    assert press.horizon_ticks == press.horizon_steps * 8


def test_wrong_schema_version_rejected():
    text = tasks_yaml_text().replace("schema_version: 1", "schema_version: 99")
    with pytest.raises(ConfigError, match="schema"):
        load_tasks(text)


def test_missing_success_key_rejected():
    text = tasks_yaml_text().replace("f_star:", "f_star_renamed:")
    with pytest.raises(ConfigError):
        load_tasks(text)


def test_unknown_kind_rejected():
    text = tasks_yaml_text().replace("kind: press", "kind: bounce")
    with pytest.raises(ConfigError):
        load_tasks(text)


def test_negative_jitter_rejected():
    text = tasks_yaml_text().replace("x: 0.02", "x: -0.02")
    with pytest.raises(ConfigError):
        load_tasks(text)


# ---------------------------------------------------------------------------
# dynamics oracles
# ---------------------------------------------------------------------------

def test_free_joint_matches_discrete_integrator():
    """One torqued joint away from contact follows the closed form of the
    semi-implicit damped recursion qd' = qd + h (tau - b qd)."""
    task = get_task("fragile-grasp")
    sc = BatchScene(task, [11])
    tq, wp, wq = hold(sc)
    j = int(sc.config.base_index[1])
    tau = 0.05
    tq[0, j] = tau
    q0 = sc.q[0, j]
    n_ticks = 5
    for _ in range(n_ticks):
        sc.step(tq, wp, wq)
    assert not sc.agg.any(), "test assumes no contact"

    b = task.world.joint_damping
    a = 1.0 - H * b
    n = n_ticks * PHYSICS_SUBSTEPS
    qd_exp = (tau / b) * (1.0 - a**n)
    q_exp = q0 + (tau / b) * (n * H - H * a * (1.0 - a**n) / (1.0 - a))
    assert sc.qd[0, j] == pytest.approx(qd_exp, abs=1e-9)
    assert sc.q[0, j] == pytest.approx(q_exp, abs=1e-9)
    # untouched joints stay exactly at rest
    rest = np.ones(12, dtype=bool)
    rest[j] = False
    np.testing.assert_array_equal(sc.qd[0, rest], 0.0)


def test_equilibrium_is_a_fixed_point():
    for name in task_names():
        sc = BatchScene(get_task(name), [2])
        q0 = sc.q.copy()
        w0 = sc.wrist_pos.copy()
        for _ in range(4):
            sc.step(*hold(sc))
        np.testing.assert_array_equal(sc.q, q0)
        np.testing.assert_array_equal(sc.wrist_pos, w0)
        np.testing.assert_array_equal(sc.qd, 0.0)
        np.testing.assert_array_equal(sc.tactile, 0.0)
        assert not sc.success().any()


def test_wrist_servo_first_order_lag():
    task = get_task("fragile-grasp")
    sc = BatchScene(task, [4])
    tq, wp, wq = hold(sc)
    x0 = sc.wrist_pos[0, 0]
    wp[0, 0] += 0.01
    sc.step(tq, wp, wq)
    alpha = 1.0 - np.exp(-H / task.world.wrist_tau)
    expected = wp[0, 0] + (x0 - wp[0, 0]) * (1.0 - alpha) ** PHYSICS_SUBSTEPS
    assert sc.wrist_pos[0, 0] == pytest.approx(expected, abs=1e-12)


def test_wrist_quat_servo_converges_to_target():
    sc = BatchScene(get_task("fragile-grasp"), [4])
    tq, wp, _ = hold(sc)
    target = quat_from_rotvec_batch(np.array([[0.0, 0.0, 0.3]]))
    for _ in range(40):
        sc.step(tq, wp, target)
        assert np.linalg.norm(sc.wrist_quat[0]) == pytest.approx(1.0, abs=1e-12)
    assert abs(sc.wrist_quat[0] @ target[0]) > 0.9999


def test_joint_limits_clamp_and_zero_outward_velocity():
    sc = BatchScene(get_task("fragile-grasp"), [1])
    tq, wp, wq = hold(sc)
    tq[:] = 5.0                         # slam every joint into its upper stop
    for _ in range(150):
        sc.step(tq, wp, wq)
    np.testing.assert_allclose(sc.q[0], sc.config.joint_upper, atol=1e-12)
    assert (sc.qd[0] <= 1e-12).all()


# ---------------------------------------------------------------------------
# determinism and batching
# ---------------------------------------------------------------------------

def run_ticks(sc: BatchScene, n: int, dz: float = -0.04, tau: float = 0.06):
    tq = np.full((sc.B, 12), tau)
    wp = sc.wrist_pos + np.array([0.0, 0.0, dz])
    wq = np.tile(IDENTITY_QUAT, (sc.B, 1))
    for _ in range(n):
        sc.step(tq, wp, wq)


def test_same_seed_bit_identical():
    task = get_task("press")
    a = BatchScene(task, [5, 9])
    b = BatchScene(task, [5, 9])
    run_ticks(a, 10)
    run_ticks(b, 10)
    np.testing.assert_array_equal(a.q, b.q)
    np.testing.assert_array_equal(a.wrist_pos, b.wrist_pos)
    np.testing.assert_array_equal(a.tactile, b.tactile)
    np.testing.assert_array_equal(a.plunger_travel, b.plunger_travel)
    oa = a.observe(24, 32, kinesthetic=True)
    ob = b.observe(24, 32, kinesthetic=True)
    np.testing.assert_array_equal(oa.front, ob.front)
    np.testing.assert_array_equal(oa.wrist, ob.wrist)
    np.testing.assert_array_equal(oa.mask_front, ob.mask_front)


def test_different_seeds_differ():
    sc = BatchScene(get_task("press"), [5, 9])
    assert sc.housing_center[0, 0] != sc.housing_center[1, 0]
    assert sc.occ_phase[0] != sc.occ_phase[1]


def test_batch_matches_singles():
    """A batch of trials reproduces each trial run alone."""
    task = get_task("press")
    seeds = [3, 14, 15]
    batch = BatchScene(task, seeds)
    singles = [BatchScene(task, [s]) for s in seeds]

    rng = np.random.default_rng(0)
    for t in range(12):
        tq = 0.08 * rng.standard_normal((len(seeds), 12))
        wp = batch.wrist_pos + np.array([0.0, 0.0, -0.004 * t])
        wq = np.tile(IDENTITY_QUAT, (len(seeds), 1))
        batch.step(tq, wp, wq)
        for i, sc in enumerate(singles):
            sc.step(tq[i : i + 1], wp[i : i + 1], wq[i : i + 1])

    for i, sc in enumerate(singles):
        np.testing.assert_allclose(batch.q[i], sc.q[0], atol=1e-9)
        np.testing.assert_allclose(batch.qd[i], sc.qd[0], atol=1e-9)
        np.testing.assert_allclose(batch.tactile[i], sc.tactile[0], atol=1e-9)
        np.testing.assert_allclose(
            batch.plunger_travel[i], sc.plunger_travel[0], atol=1e-9
        )


def test_single_scene_facade_round_trip():
    scene = randomize(get_task("squeeze"), seed=7)
    assert isinstance(scene, Scene)
    assert scene.tick == 0
    scene.step(np.zeros(12), scene.batch.wrist_pos[0], scene.batch.wrist_quat[0])
    assert scene.tick == 1
    assert scene.time == pytest.approx(CONTROL_DT)
    assert scene.tactile.shape[0] == 5
    names = [b.name for b in scene.bodies]
    assert names == ["desk", "tube"]
    assert check_success(scene) is False


def test_non_finite_and_misshaped_commands_rejected():
    sc = BatchScene(get_task("press"), [0])
    tq, wp, wq = hold(sc)
    bad = tq.copy()
    bad[0, 3] = np.nan
    with pytest.raises(ValueError):
        sc.step(bad, wp, wq)
    with pytest.raises(ValueError):
        sc.step(np.zeros((1, 7)), wp, wq)


# ---------------------------------------------------------------------------
# plunger dynamics and energy bookkeeping
# ---------------------------------------------------------------------------

def test_plunger_free_decay_matches_recursion():
    """With the hand away, a pre-compressed plunger follows the exact
    semi-implicit spring-damper recursion, substep for substep."""
    task = get_task("press")
    p = task.bodies["plunger"]
    k, d, m = float(p["spring_k"]), float(p["damping"]), float(p["mass"])
    sc = BatchScene(task, [0])
    sc.plunger_travel[:] = 0.005

    n_ticks = 3
    for _ in range(n_ticks):
        sc.step(*hold(sc))
    assert not sc.agg.any(), "test assumes the hand never touches the cap"

    s, v, wd = 0.005, 0.0, 0.0
    for _ in range(n_ticks * PHYSICS_SUBSTEPS):
        v += H * (-k * s - d * v) / m
        ds = H * v
        s += ds
        wd += d * v * ds
        assert s > 0.0, "decay should stay off the lower stop"
    assert sc.plunger_travel[0] == pytest.approx(s, abs=1e-12)
    assert sc.plunger_travel_vel[0] == pytest.approx(v, abs=1e-12)
    assert sc.work_damp[0] == pytest.approx(wd, abs=1e-12)
    assert sc.work_in[0] == 0.0


def test_plunger_free_decay_dissipates_monotonically():
    task = get_task("press")
    p = task.bodies["plunger"]
    k, m = float(p["spring_k"]), float(p["mass"])
    sc = BatchScene(task, [0])
    sc.plunger_travel[:] = 0.008
    energies = []
    for _ in range(10):
        sc.step(*hold(sc))
        e = 0.5 * k * float(sc.plunger_travel[0]) ** 2
        e += 0.5 * m * float(sc.plunger_travel_vel[0]) ** 2
        energies.append(e)
    assert all(b < a for a, b in zip(energies, energies[1:]))
    assert float(sc.work_damp[0]) > 0.0


def test_press_work_accounting():
    """Pushing the cap books at least the stored + damped energy as input
    work; the excess is the impact loss of hard contact, never negative."""
    task = get_task("press")
    sc = BatchScene(task, [0])
    tq = np.full((1, 12), 0.08)
    wp = sc.wrist_pos + np.array([0.0, 0.0, -0.05])
    wq = sc.wrist_quat.copy()
    for _ in range(80):
        sc.step(tq, wp, wq)

    travel = float(sc.plunger_travel[0])
    p = task.bodies["plunger"]
    assert travel > 1e-3, "plunger never engaged"
    assert travel < float(p["travel_limit"])
    pe = 0.5 * float(p["spring_k"]) * travel**2
    ke = 0.5 * float(p["mass"]) * float(sc.plunger_travel_vel[0]) ** 2
    stored = pe + ke + float(sc.work_damp[0])
    assert float(sc.work_damp[0]) >= 0.0
    assert float(sc.work_in[0]) >= 0.95 * stored
    assert float(sc.work_in[0]) < 20.0 * stored


# ---------------------------------------------------------------------------
# randomization statistics
# ---------------------------------------------------------------------------

def test_press_jitter_statistics():
    task = get_task("press")
    sc = BatchScene(task, range(1000))
    dx = sc.housing_center[:, 0] - np.asarray(task.bodies["housing"]["center"])[0]
    jx = task.jitter["x"]
    assert dx.min() >= -jx and dx.max() <= jx
    assert abs(dx.mean()) < 0.002
    assert dx.std() > 0.008            # actually spread out, not collapsed
    dz = sc.housing_center[:, 2] - np.asarray(task.bodies["housing"]["center"])[2]
    assert np.abs(dz).max() <= task.jitter["z"]
    # plunger rides with its housing
    np.testing.assert_allclose(
        sc.plunger_rest[:, 0] - np.asarray(task.bodies["plunger"]["rest_center"])[0],
        dx,
        atol=1e-12,
    )


def test_squeeze_radius_jitter_statistics():
    task = get_task("squeeze")
    sc = BatchScene(task, range(500))
    r0 = float(task.bodies["tube"]["radius"])
    jr = task.jitter["radius"]
    assert sc.tube_radius.min() >= r0 - jr
    assert sc.tube_radius.max() <= r0 + jr
    assert abs(sc.tube_radius.mean() - r0) < 3e-4
    # tube rests on the desk whatever its radius
    np.testing.assert_allclose(sc.tube_center[:, 2], sc.tube_radius, atol=1e-15)


# ---------------------------------------------------------------------------
# observations and occluders
# ---------------------------------------------------------------------------

def test_observation_shapes_and_proprio_layout():
    sc = BatchScene(get_task("press"), [1, 2])
    obs = sc.observe(48, 64)
    assert obs.front.shape == (2, 48, 64, 3)
    assert obs.wrist.shape == (2, 48, 64, 3)
    assert obs.tactile.shape[0] == 2 and obs.tactile.shape[3] == 3
    assert obs.proprio.shape == (2, 18)
    np.testing.assert_array_equal(obs.proprio[:, :12], sc.q)
    np.testing.assert_array_equal(obs.proprio[:, 12:15], sc.wrist_pos)
    np.testing.assert_array_equal(obs.proprio[:, 15:18], 0.0)  # identity wrist
    assert obs.mask_front is None and obs.mask_wrist is None
    assert obs.front.min() >= 0.0 and obs.front.max() <= 1.0


def test_occluder_overlays_and_masks():
    sc = BatchScene(get_task("press"), [6])
    plain = sc.observe(48, 64)
    occ = sc.observe(48, 64, kinesthetic=True)
    for img, base, mask in (
        (occ.front[0], plain.front[0], occ.mask_front[0]),
        (occ.wrist[0], plain.wrist[0], occ.mask_wrist[0]),
    ):
        frac = mask.mean()
        assert 0.02 < frac < 0.40
        np.testing.assert_array_equal(img[~mask], base[~mask])
        assert (img[mask] == OCCLUDER_COLOR).all()


def test_occluder_sways_between_ticks():
    sc = BatchScene(get_task("press"), [6])
    m0 = sc.observe(48, 64, kinesthetic=True).mask_front[0]
    for _ in range(6):
        sc.step(*hold(sc))
    m1 = sc.observe(48, 64, kinesthetic=True).mask_front[0]
    assert not np.array_equal(m0, m1)


# ---------------------------------------------------------------------------
# success predicates
# ---------------------------------------------------------------------------

def test_press_predicate_requires_hold():
    task = get_task("press")
    s = task.success
    sc = BatchScene(task, [0])
    need = int(s["hold_ticks"])
    for _ in range(need - 1):
        sc.plunger_force[:] = s["f_star"]
        sc._update_trackers(None, None)
    assert not sc.success()[0]
    sc.plunger_force[:] = s["f_star"]
    sc._update_trackers(None, None)
    assert sc.success()[0]

    # out-of-band force never latches
    sc2 = BatchScene(task, [0])
    for _ in range(need + 10):
        sc2.plunger_force[:] = s["f_star"] + s["band"] + 0.05
        sc2._update_trackers(None, None)
    assert not sc2.success()[0]


def test_press_band_interruption_resets_run():
    task = get_task("press")
    s = task.success
    sc = BatchScene(task, [0])
    need = int(s["hold_ticks"])
    for k in range(need + need // 2):
        inband = k != need // 2       # one dropout in the middle
        sc.plunger_force[:] = s["f_star"] if inband else 0.0
        sc._update_trackers(None, None)
    assert not sc.success()[0]


def test_squeeze_predicate_tracks_reference_profile():
    task = get_task("squeeze")
    s = task.success
    sc = BatchScene(task, [0])
    for t in range(120):
        dt = np.array([t], dtype=np.float64)
        sc.agg[:, 0, 2] = squeeze_profile(s, dt)[0]
        sc._update_trackers(None, None)
        sc.tick += 1
    assert sc.touch_tick[0] == 0
    assert sc.success()[0]

    # never touching, or squeezing at the wrong level, both fail
    weak = BatchScene(task, [0])
    for t in range(120):
        weak.agg[:, 0, 2] = 0.05
        weak._update_trackers(None, None)
        weak.tick += 1
    assert not weak.success()[0]

    wrong = BatchScene(task, [0])
    for t in range(120):
        wrong.agg[:, 0, 2] = 3.0      # touches, but far above the profile
        wrong._update_trackers(None, None)
        wrong.tick += 1
    assert not wrong.success()[0]


def test_squeeze_profile_shape():
    s = get_task("squeeze").success
    d = np.array([-1.0, 0.0, s["ramp_start_ticks"], s["ramp_end_ticks"], 1e4])
    ref = squeeze_profile(s, d)
    assert ref[0] == 0.0
    assert ref[1] == s["plateau"]
    assert ref[2] == s["plateau"]
    assert ref[3] == s["peak"]
    assert ref[4] == s["peak"]
    mid = squeeze_profile(
        s, np.array([(s["ramp_start_ticks"] + s["ramp_end_ticks"]) / 2.0])
    )
    assert mid[0] == pytest.approx((s["plateau"] + s["peak"]) / 2.0)


def test_grasp_attach_and_release():
    task = get_task("fragile-grasp")
    s = task.success
    sc = BatchScene(task, [0])
    sc._object_slot = 1
    kin = batch_forward(sc.config, sc.wrist_pos, sc.wrist_quat, sc.q)
    P = sc.config.pad_offsets.shape[0]

    def fake_contact(fn):
        idx = np.array([0, P], dtype=np.intp)      # point 0 of fingers 0 and 1
        return BatchContact(
            (1, 5, P),
            np.zeros((1, 5, P)),
            idx,
            np.zeros(2, dtype=np.intp),
            np.array([0, 1], dtype=np.intp),
            np.full(2, 1, dtype=np.intp),
            np.zeros((2, 3)),
            np.zeros((2, 3)),
            np.full(2, fn),
        )

    sc._update_trackers(fake_contact(s["f_hold"] + 0.1), kin)
    assert sc.attached[0]
    np.testing.assert_allclose(           # identity wrist: local = cyl - wrist
        sc.attach_local[0], sc.cyl_center[0] - sc.wrist_pos[0], atol=1e-12
    )

    sc._update_trackers(fake_contact(s["detach_ratio"] * s["f_hold"] - 0.1), kin)
    assert not sc.attached[0]
    np.testing.assert_array_equal(sc.cyl_vel, 0.0)


def test_grasp_success_needs_lift_without_crush():
    sc = BatchScene(get_task("fragile-grasp"), [0])
    s = sc.task.success
    sc.lift_max[:] = s["lift_height"] + 0.01
    sc.crush_peak[:] = 0.5 * s["f_crush"]
    assert sc.success()[0]
    sc.crush_peak[:] = s["f_crush"] + 1.0
    assert not sc.success()[0]
    sc.crush_peak[:] = 0.0
    sc.lift_max[:] = 0.5 * s["lift_height"]
    assert not sc.success()[0]
