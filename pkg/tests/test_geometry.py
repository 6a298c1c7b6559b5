"""Quaternion helper sanity checks against scipy rotations."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from deskhand import geometry as geo


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def test_normalize_unit_and_sign():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = rng.normal(size=4) * 3.0
        n = geo.quat_normalize(q)
        assert abs(np.linalg.norm(n) - 1.0) < 1e-12
        assert n[0] >= 0.0


def test_normalize_rejects_zero():
    with pytest.raises(ValueError):
        geo.quat_normalize(np.zeros(4))


def test_rotate_matches_matrix():
    rng = np.random.default_rng(1)
    for _ in range(50):
        q = random_quat(rng)
        v = rng.normal(size=3)
        R = geo.quat_to_mat(q)
        assert np.allclose(geo.quat_rotate(q, v), R @ v, atol=1e-12)
        # matrix is a proper rotation
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_mul_composes():
    rng = np.random.default_rng(2)
    for _ in range(50):
        qa, qb = random_quat(rng), random_quat(rng)
        v = rng.normal(size=3)
        lhs = geo.quat_rotate(geo.quat_mul(qa, qb), v)
        rhs = geo.quat_rotate(qa, geo.quat_rotate(qb, v))
        assert np.allclose(lhs, rhs, atol=1e-12)


def test_rotvec_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(50):
        rv = rng.normal(size=3)
        q = geo.quat_from_rotvec(rv)
        back = geo.quat_to_rotvec(q)
        # same rotation even if the vector flips through the 2*pi wrap
        assert np.allclose(
            Rotation.from_rotvec(back).as_matrix(),
            Rotation.from_rotvec(rv).as_matrix(),
            atol=1e-12,
        )


def test_step_toward_endpoints_and_monotonicity():
    rng = np.random.default_rng(4)
    for _ in range(20):
        qa, qb = random_quat(rng), random_quat(rng)
        assert np.allclose(geo.quat_step_toward(qa, qb, 0.0), geo.quat_normalize(qa), atol=1e-12)
        stepped = geo.quat_step_toward(qa, qb, 1.0)
        assert np.allclose(geo.quat_to_mat(stepped), geo.quat_to_mat(qb), atol=1e-12)
        # a partial step shrinks the remaining angle
        def angle(q1, q2):
            return np.linalg.norm(
                Rotation.from_matrix(geo.quat_to_mat(q1).T @ geo.quat_to_mat(q2)).as_rotvec()
            )
        mid = geo.quat_step_toward(qa, qb, 0.25)
        assert angle(mid, qb) <= angle(qa, qb) + 1e-12
