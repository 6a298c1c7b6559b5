"""Signed-distance checks for the scene body shapes."""

import numpy as np
import pytest

from deskhand.objects import Box, Cylinder, HalfSpace, Plunger, Sphere


def test_halfspace():
    desk = HalfSpace(name="desk", pos=(0.0, 0.0, 0.1))
    pts = np.array([[0.0, 0.0, 0.3], [5.0, -2.0, 0.1], [0.0, 0.0, 0.05]])
    sdf, normal = desk.signed_distance(pts)
    np.testing.assert_allclose(sdf, [0.2, 0.0, -0.05], atol=1e-15)
    np.testing.assert_array_equal(normal, [[0, 0, 1]] * 3)


def test_sphere():
    s = Sphere(name="ball", pos=(1.0, 0.0, 0.0), radius=0.5)
    pts = np.array([[2.0, 0.0, 0.0], [1.0, 0.0, 0.1], [1.0, 0.0, 0.0]])
    sdf, normal = s.signed_distance(pts)
    np.testing.assert_allclose(sdf, [0.5, -0.4, -0.5], atol=1e-15)
    np.testing.assert_allclose(normal[0], [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(normal[1], [0, 0, 1], atol=1e-15)
    assert np.linalg.norm(normal[2]) == pytest.approx(1.0)


def test_box_faces_and_corner():
    b = Box(name="block", pos=(0.0, 0.0, 0.0), half_extents=(0.1, 0.2, 0.3))
    pts = np.array(
        [
            [0.25, 0.0, 0.0],      # outside +x face
            [0.0, 0.0, 0.35],      # outside +z face
            [0.2, 0.3, 0.0],       # outside edge in x-y
            [0.05, 0.0, 0.0],      # inside, nearest +x face
            [0.0, -0.15, 0.0],     # inside, nearest -y face
        ]
    )
    sdf, normal = b.signed_distance(pts)
    np.testing.assert_allclose(
        sdf, [0.15, 0.05, np.hypot(0.1, 0.1), -0.05, -0.05], atol=1e-12
    )
    np.testing.assert_allclose(normal[0], [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(normal[1], [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(normal[2], [np.sqrt(0.5), np.sqrt(0.5), 0.0], atol=1e-12)
    np.testing.assert_allclose(normal[3], [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(normal[4], [0, -1, 0], atol=1e-12)


def test_cylinder_side_cap_inside():
    c = Cylinder(
        name="roll", pos=(0.0, 0.0, 0.0), axis=(0.0, 1.0, 0.0), half_length=0.1, radius=0.02
    )
    pts = np.array(
        [
            [0.05, 0.0, 0.0],       # outside the side
            [0.0, 0.15, 0.0],       # beyond the +axis cap
            [0.0, 0.0, 0.01],       # inside, side closest
            [0.0, 0.095, 0.0],      # inside, cap closest
        ]
    )
    sdf, normal = c.signed_distance(pts)
    np.testing.assert_allclose(sdf, [0.03, 0.05, -0.01, -0.005], atol=1e-12)
    np.testing.assert_allclose(normal[0], [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(normal[1], [0, 1, 0], atol=1e-12)
    np.testing.assert_allclose(normal[2], [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(normal[3], [0, 1, 0], atol=1e-12)


def test_normals_match_sdf_gradient():
    rng = np.random.default_rng(5)
    shapes = [
        Sphere(name="s", pos=(0.0, 0.1, 0.0), radius=0.07),
        Box(name="b", pos=(0.05, 0.0, 0.0), half_extents=(0.06, 0.05, 0.04)),
        Cylinder(name="c", pos=(0.0, 0.0, 0.05), axis=(0.0, 1.0, 0.0), half_length=0.08, radius=0.03),
    ]
    h = 1e-7
    eye = np.eye(3)
    for shape in shapes:
        pts = rng.uniform(-0.2, 0.2, size=(200, 3))
        sdf, normal = shape.signed_distance(pts)
        grad = np.stack(
            [
                (shape.signed_distance(pts + h * eye[k])[0] - shape.signed_distance(pts - h * eye[k])[0])
                / (2 * h)
                for k in range(3)
            ],
            axis=1,
        )
        # skip points near edges/medial axis where the gradient is not defined
        ok = np.abs(np.linalg.norm(grad, axis=1) - 1.0) < 1e-4
        assert ok.sum() > 100
        np.testing.assert_allclose(normal[ok], grad[ok], atol=1e-5)


def test_plunger_cap_rides_travel():
    p = Plunger(
        name="plunger",
        pos=(0.0, 0.0, 0.1),
        axis=(0.0, 0.0, 1.0),
        spring_k=200.0,
        damping=6.0,
        mass=0.05,
        travel_limit=0.03,
        cap_radius=0.018,
        cap_half_height=0.005,
    )
    probe = np.array([[0.0, 0.0, 0.12]])
    sdf0, _ = p.signed_distance(probe)
    p.travel = 0.01
    sdf1, _ = p.signed_distance(probe)
    assert sdf1 - sdf0 == pytest.approx(0.01, abs=1e-12)
    np.testing.assert_allclose(p.cap_center, [0.0, 0.0, 0.09], atol=1e-15)


def test_validation_errors():
    with pytest.raises(ValueError):
        Sphere(name="s", pos=(0, 0, 0), radius=-1.0)
    with pytest.raises(ValueError):
        Box(name="b", pos=(0, 0, 0), half_extents=(0.1, 0.0, 0.1))
    with pytest.raises(ValueError):
        Cylinder(name="c", pos=(0, 0, 0), axis=(0, 0, 0), half_length=0.1, radius=0.1)
    with pytest.raises(ValueError):
        Plunger(
            name="p",
            pos=(0, 0, 0),
            axis=(0, 0, 1),
            spring_k=-5.0,
            damping=1.0,
            mass=0.1,
            travel_limit=0.01,
            cap_radius=0.01,
            cap_half_height=0.01,
        )
