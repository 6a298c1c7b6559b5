"""Scene bodies and their signed-distance queries.

Contact sampling asks every body for the signed distance of a batch of
points (negative inside) plus the outward surface normal at each point.
Shapes are deliberately few: a desk halfspace, axis-aligned boxes, spheres
and capped cylinders cover all desk tasks.  Bodies also carry rendering
color, a per-body contact stiffness scale (compliant pads use < 1) and a
linear surface velocity used by the friction model.

The `batch_*` functions evaluate one shape slot across a whole batch of
independent trials at once (leading dim B); the Body classes delegate to
them with B = 1 so both paths share the same arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

_EPS = 1e-12
_UP = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# signed-distance kernels, shared by single bodies and trial batches
#
# The *_sdf functions evaluate distances only (the scene's body-selection
# pass needs distances at every pad point); the *_normal_at functions
# evaluate outward normals point-wise with per-point parameters, which the
# contact core calls only at the points actually in contact.  The batch_*
# functions combine both for the single-body API.
# ---------------------------------------------------------------------------

def halfspace_sdf(points: np.ndarray, z) -> np.ndarray:
    """points (..., 3), surface height z broadcastable -> sdf (...)."""
    return points[..., 2] - z


def box_sdf(points: np.ndarray, center: np.ndarray, half_extents: np.ndarray) -> np.ndarray:
    """points (..., 3), per-point center (..., 3), half_extents (3,) or (..., 3)."""
    q = np.abs(points - center) - half_extents
    outside = np.maximum(q, 0.0)
    out_d = np.sqrt(np.sum(outside * outside, axis=-1))
    in_d = np.minimum(np.max(q, axis=-1), 0.0)
    return out_d + in_d


def box_normal_at(points: np.ndarray, center: np.ndarray, half_extents: np.ndarray) -> np.ndarray:
    """Outward normals at (K, 3) points of axis-aligned boxes."""
    p = points - center
    q = np.abs(p) - half_extents
    outside = np.maximum(q, 0.0)
    normal = np.where(p >= 0.0, 1.0, -1.0) * outside
    inner = np.max(q, axis=-1) < 0.0
    if np.any(inner):
        qi = q[inner]
        k = np.argmax(qi, axis=1)
        rows = np.arange(qi.shape[0])
        n_in = np.zeros((qi.shape[0], 3))
        n_in[rows, k] = np.where(p[inner][rows, k] >= 0.0, 1.0, -1.0)
        normal[inner] = n_in
    norms = np.sqrt(np.sum(normal * normal, axis=-1, keepdims=True))
    np.divide(normal, norms, out=normal, where=norms > _EPS)
    degenerate = norms[..., 0] <= _EPS
    if np.any(degenerate):
        normal[degenerate] = _UP
    return normal


def sphere_sdf(points: np.ndarray, center: np.ndarray, radius) -> np.ndarray:
    rel = points - center
    return np.sqrt(np.sum(rel * rel, axis=-1)) - radius


def sphere_normal_at(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    rel = points - center
    r = np.sqrt(np.sum(rel * rel, axis=-1, keepdims=True))
    return np.where(r > _EPS, rel / np.maximum(r, _EPS), _UP)


def _cyl_decompose(points: np.ndarray, center: np.ndarray, axis: np.ndarray):
    rel = points - center
    s = rel @ axis
    radial = rel - s[..., None] * axis
    rn = np.sqrt(np.sum(radial * radial, axis=-1))
    return s, radial, rn


def cylinder_sdf(points: np.ndarray, center: np.ndarray, axis: np.ndarray, half_length, radius) -> np.ndarray:
    """Capped cylinder, shared unit axis (3,); center (..., 3), half_length
    and radius broadcastable against the point shape."""
    s, _, rn = _cyl_decompose(points, center, axis)
    dr = rn - radius
    da = np.abs(s) - half_length
    out_d = np.hypot(np.maximum(dr, 0.0), np.maximum(da, 0.0))
    in_d = np.minimum(np.maximum(dr, da), 0.0)
    return out_d + in_d


def cylinder_normal_at(points: np.ndarray, center: np.ndarray, axis: np.ndarray, half_length, radius) -> np.ndarray:
    """Outward normals at (K, 3) points; half_length/radius scalar or (K,)."""
    s, radial, rn = _cyl_decompose(points, center, axis)
    dr = rn - radius
    da = np.abs(s) - half_length

    fallback = np.cross(axis, np.array([1.0, 0.0, 0.0]))
    if np.linalg.norm(fallback) < 0.5:
        fallback = np.cross(axis, np.array([0.0, 1.0, 0.0]))
    fallback = fallback / np.linalg.norm(fallback)
    rhat = np.where((rn > _EPS)[..., None], radial / np.maximum(rn, _EPS)[..., None], fallback)
    ahat = np.where((s >= 0.0)[..., None], axis, -axis)

    pr = np.maximum(dr, 0.0)
    pa = np.maximum(da, 0.0)
    out_d = np.hypot(pr, pa)
    outside = (dr > 0.0) | (da > 0.0)
    denom = np.where(out_d > _EPS, out_d, 1.0)
    n_out = (pr[..., None] * rhat + pa[..., None] * ahat) / denom[..., None]
    n_in = np.where((dr >= da)[..., None], rhat, ahat)
    return np.where(outside[..., None], n_out, n_in)


def batch_halfspace(points: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """points (B, N, 3), surface height z (B,) -> sdf (B, N), normal (B, N, 3)."""
    sdf = halfspace_sdf(points, np.asarray(z)[:, None])
    normal = np.broadcast_to(_UP, points.shape)
    return sdf, normal


def batch_box(
    points: np.ndarray, center: np.ndarray, half_extents: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Axis-aligned boxes: center (B, 3), half_extents (B, 3) or (3,)."""
    c = center[:, None, :]
    half = np.broadcast_to(half_extents, center.shape)[:, None, :]
    sdf = box_sdf(points, c, half)
    normal = box_normal_at(points, c, half)
    return sdf, normal


def batch_sphere(
    points: np.ndarray, center: np.ndarray, radius: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Spheres: center (B, 3), radius (B,) or scalar."""
    c = center[:, None, :]
    sdf = sphere_sdf(points, c, np.asarray(radius)[..., None])
    normal = sphere_normal_at(points, c)
    return sdf, normal


def batch_cylinder(
    points: np.ndarray,
    center: np.ndarray,
    axis: np.ndarray,
    half_length,
    radius,
) -> Tuple[np.ndarray, np.ndarray]:
    """Capped cylinders with a shared unit axis (3,); center (B, 3),
    half_length and radius scalars or (B,)."""
    c = center[:, None, :]
    hl = np.asarray(half_length)[..., None] if np.ndim(half_length) else half_length
    r = np.asarray(radius)[..., None] if np.ndim(radius) else radius
    sdf = cylinder_sdf(points, c, axis, hl, r)
    normal = cylinder_normal_at(points, c, axis, hl, r)
    return sdf, normal


# ---------------------------------------------------------------------------
# single scene bodies
# ---------------------------------------------------------------------------

@dataclass(kw_only=True)
class Body:
    """Common fields of every scene body."""

    name: str
    pos: np.ndarray                      # (3,) reference point, world frame [m]
    color: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    stiffness_scale: float = 1.0         # multiplies the contact normal stiffness
    vel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.pos = np.asarray(self.pos, dtype=np.float64).reshape(3)
        self.vel = np.asarray(self.vel, dtype=np.float64).reshape(3)
        if self.stiffness_scale <= 0.0:
            raise ValueError(f"body {self.name!r}: stiffness scale must be positive")

    def signed_distance(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(sdf (N,), outward normal (N, 3)) for a batch of world points."""
        raise NotImplementedError


@dataclass(kw_only=True)
class HalfSpace(Body):
    """Everything below pos[2] along +z; models the desk surface."""

    def signed_distance(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        sdf, normal = batch_halfspace(points[None], self.pos[2:3])
        return sdf[0], normal[0].copy()


@dataclass(kw_only=True)
class Box(Body):
    """Axis-aligned box centered at pos."""

    half_extents: np.ndarray             # (3,) [m]

    def __post_init__(self) -> None:
        super().__post_init__()
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if np.any(self.half_extents <= 0.0):
            raise ValueError(f"body {self.name!r}: half extents must be positive")

    def signed_distance(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        sdf, normal = batch_box(points[None], self.pos[None], self.half_extents[None])
        return sdf[0], normal[0]


@dataclass(kw_only=True)
class Sphere(Body):
    radius: float

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.radius <= 0.0:
            raise ValueError(f"body {self.name!r}: radius must be positive")

    def signed_distance(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        sdf, normal = batch_sphere(points[None], self.pos[None], np.array([self.radius]))
        return sdf[0], normal[0]


@dataclass(kw_only=True)
class Cylinder(Body):
    """Capped cylinder: center pos, unit axis, half length, radius."""

    axis: np.ndarray                     # (3,) unit vector
    half_length: float
    radius: float

    def __post_init__(self) -> None:
        super().__post_init__()
        self.axis = np.asarray(self.axis, dtype=np.float64).reshape(3)
        n = np.linalg.norm(self.axis)
        if n < _EPS:
            raise ValueError(f"body {self.name!r}: axis must be nonzero")
        self.axis = self.axis / n
        if self.radius <= 0.0 or self.half_length <= 0.0:
            raise ValueError(f"body {self.name!r}: radius and half length must be positive")

    def signed_distance(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        sdf, normal = batch_cylinder(
            points[None],
            self.pos[None],
            self.axis,
            np.array([self.half_length]),
            np.array([self.radius]),
        )
        return sdf[0], normal[0]


@dataclass(kw_only=True)
class Plunger(Body):
    """Spring-loaded cap that travels along -axis when pressed.

    pos is the rest position of the cap center.  `travel` is the scalar
    compression along the (unit) axis, integrated by the scene; the cap
    itself is a short cylinder whose center rides at pos - travel * axis.
    """

    axis: np.ndarray                     # (3,) unit vector, direction of compression
    spring_k: float                      # [N/m]
    damping: float                       # [N*s/m]
    mass: float                          # [kg]
    travel_limit: float                  # [m]
    cap_radius: float
    cap_half_height: float
    travel: float = 0.0
    travel_vel: float = 0.0

    def __post_init__(self) -> None:
        super().__post_init__()
        self.axis = np.asarray(self.axis, dtype=np.float64).reshape(3)
        n = np.linalg.norm(self.axis)
        if n < _EPS:
            raise ValueError(f"body {self.name!r}: axis must be nonzero")
        self.axis = self.axis / n
        if self.spring_k <= 0.0:
            raise ValueError(f"body {self.name!r}: spring constant must be positive")
        if self.travel_limit <= 0.0:
            raise ValueError(f"body {self.name!r}: travel limit must be positive")
        if self.mass <= 0.0 or self.damping < 0.0:
            raise ValueError(f"body {self.name!r}: bad mass/damping")
        if self.cap_radius <= 0.0 or self.cap_half_height <= 0.0:
            raise ValueError(f"body {self.name!r}: bad cap geometry")

    @property
    def cap_center(self) -> np.ndarray:
        return self.pos - self.travel * self.axis

    def signed_distance(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        sdf, normal = batch_cylinder(
            points[None],
            self.cap_center[None],
            self.axis,
            np.array([self.cap_half_height]),
            np.array([self.cap_radius]),
        )
        return sdf[0], normal[0]
