"""Orthographic flat-shaded rasterizer for scene observations.

Two fixed camera views: a front view looking along +y at the x-z plane of
the desk, and a top-down view looking along -z at a window that tracks the
wrist.  Both are orthographic; every entity projects to rectangles, discs
and 2D capsules, filled back to front in painter order with fixed flat
colors.  A pixel is inside a primitive when its center is, so the output
is a pure function of the projected geometry and bit-stable across runs.

Images are float64 in [0, 1], shape (H, W, 3), row 0 at the top.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .objects import Body, Box, Cylinder, HalfSpace, Plunger, Sphere

BACKGROUND_COLOR = (0.92, 0.92, 0.95)
HAND_COLOR = (0.20, 0.45, 0.80)
OCCLUDER_COLOR = (0.85, 0.66, 0.55)

# front view window, world coords [m]: u = x, v = z
FRONT_X = (-0.20, 0.20)
FRONT_Z = (-0.05, 0.25)
# wrist view window, wrist-relative [m]: u = y (left is +y), v = x (up is +x)
WRIST_Y = 0.16
WRIST_X = (-0.04, 0.20)


@dataclass(frozen=True)
class RasterView:
    """Mapping between world (u, v) coordinates and pixel indices.

    u_left/u_right are the world u of the left/right image edge, v_top and
    v_bottom of the top/bottom edge; either axis may run in a decreasing
    direction.
    """

    height: int
    width: int
    u_left: float
    u_right: float
    v_top: float
    v_bottom: float

    @property
    def du(self) -> float:
        return (self.u_right - self.u_left) / self.width

    @property
    def dv(self) -> float:
        return (self.v_bottom - self.v_top) / self.height


def front_view(height: int, width: int) -> RasterView:
    return RasterView(height, width, FRONT_X[0], FRONT_X[1], FRONT_Z[1], FRONT_Z[0])


def wrist_view(height: int, width: int) -> RasterView:
    return RasterView(height, width, WRIST_Y, -WRIST_Y, WRIST_X[1], WRIST_X[0])


@lru_cache(maxsize=16)
def _pixel_centers(view: RasterView) -> Tuple[np.ndarray, np.ndarray]:
    u = view.u_left + (np.arange(view.width) + 0.5) * view.du
    v = view.v_top + (np.arange(view.height) + 0.5) * view.dv
    return u, v


def _col_span(view: RasterView, u_a: float, u_b: float) -> Tuple[int, int]:
    a = (u_a - view.u_left) / view.du - 0.5
    b = (u_b - view.u_left) / view.du - 0.5
    lo = max(0, math.ceil(min(a, b) - 1e-12))
    hi = min(view.width - 1, math.floor(max(a, b) + 1e-12))
    return lo, hi


def _row_span(view: RasterView, v_a: float, v_b: float) -> Tuple[int, int]:
    a = (v_a - view.v_top) / view.dv - 0.5
    b = (v_b - view.v_top) / view.dv - 0.5
    lo = max(0, math.ceil(min(a, b) - 1e-12))
    hi = min(view.height - 1, math.floor(max(a, b) + 1e-12))
    return lo, hi


def _paint(out: np.ndarray, i0: int, i1: int, j0: int, j1: int, mask, color) -> None:
    if i0 > i1 or j0 > j1:
        return
    block = out[i0 : i1 + 1, j0 : j1 + 1]
    if out.ndim == 3:
        if mask is None:
            block[:] = color
        else:
            block[mask] = color
    else:
        if mask is None:
            block[:] = True
        else:
            block[mask] = True


# primitives are (kind, color, *params) tuples in view coordinates
def rect(color, u_a: float, u_b: float, v_a: float, v_b: float):
    return ("rect", color, u_a, u_b, v_a, v_b)


def disc(color, cu: float, cv: float, r: float):
    return ("disc", color, cu, cv, r)


def capsule(color, u_a: float, v_a: float, u_b: float, v_b: float, r: float):
    return ("capsule", color, u_a, v_a, u_b, v_b, r)


def _draw_one(out: np.ndarray, view: RasterView, prim) -> None:
    kind, color = prim[0], prim[1]
    ucent, vcent = _pixel_centers(view)
    if kind == "rect":
        _, _, u_a, u_b, v_a, v_b = prim
        j0, j1 = _col_span(view, u_a, u_b)
        i0, i1 = _row_span(view, v_a, v_b)
        _paint(out, i0, i1, j0, j1, None, color)
    elif kind == "disc":
        _, _, cu, cv, r = prim
        j0, j1 = _col_span(view, cu - r, cu + r)
        i0, i1 = _row_span(view, cv - r, cv + r)
        if i0 > i1 or j0 > j1:
            return
        uu = ucent[j0 : j1 + 1][None, :] - cu
        vv = vcent[i0 : i1 + 1][:, None] - cv
        mask = uu * uu + vv * vv <= r * r
        _paint(out, i0, i1, j0, j1, mask, color)
    elif kind == "capsule":
        _, _, u_a, v_a, u_b, v_b, r = prim
        j0, j1 = _col_span(view, min(u_a, u_b) - r, max(u_a, u_b) + r)
        i0, i1 = _row_span(view, min(v_a, v_b) - r, max(v_a, v_b) + r)
        if i0 > i1 or j0 > j1:
            return
        uu = ucent[j0 : j1 + 1][None, :] - u_a
        vv = vcent[i0 : i1 + 1][:, None] - v_a
        eu, ev = u_b - u_a, v_b - v_a
        ee = eu * eu + ev * ev
        if ee < 1e-18:
            t = 0.0
        else:
            t = np.clip((uu * eu + vv * ev) / ee, 0.0, 1.0)
        du = uu - t * eu
        dv = vv - t * ev
        mask = du * du + dv * dv <= r * r
        _paint(out, i0, i1, j0, j1, mask, color)
    else:
        raise ValueError(f"unknown primitive kind {kind!r}")


def render(view: RasterView, prims: Sequence, base: Optional[np.ndarray] = None) -> np.ndarray:
    """Paint primitives back to front onto a fresh (or given) image."""
    if base is None:
        img = np.empty((view.height, view.width, 3))
        img[:] = BACKGROUND_COLOR
    else:
        img = base
    for p in prims:
        _draw_one(img, view, p)
    return img


def coverage(view: RasterView, prims: Sequence) -> np.ndarray:
    """(H, W) bool mask of every pixel any of the primitives touches."""
    mask = np.zeros((view.height, view.width), dtype=bool)
    for p in prims:
        _draw_one(mask, view, p)
    return mask


# ---------------------------------------------------------------------------
# scene entities -> primitives
# ---------------------------------------------------------------------------

def _project(p: np.ndarray, top: bool, wrist_xy) -> Tuple[float, float]:
    if top:
        return float(p[1] - wrist_xy[1]), float(p[0] - wrist_xy[0])
    return float(p[0]), float(p[2])


def body_prims(body: Body, view: RasterView, top: bool, wrist_xy=None) -> List:
    """Silhouette primitives of one body in one view."""
    color = body.color
    if isinstance(body, HalfSpace):
        if top:
            return [rect(color, view.u_left, view.u_right, view.v_top, view.v_bottom)]
        lo = min(view.v_top, view.v_bottom)
        return [rect(color, view.u_left, view.u_right, lo, float(body.pos[2]))]
    if isinstance(body, Box):
        cu, cv = _project(body.pos, top, wrist_xy)
        he = body.half_extents
        hu, hv = (he[1], he[0]) if top else (he[0], he[2])
        return [rect(color, cu - hu, cu + hu, cv - hv, cv + hv)]
    if isinstance(body, Sphere):
        cu, cv = _project(body.pos, top, wrist_xy)
        return [disc(color, cu, cv, body.radius)]
    if isinstance(body, Plunger):
        cu, cv = _project(body.cap_center, top, wrist_xy)
        return _cyl_prims(color, cu, cv, body.axis, body.cap_half_height, body.cap_radius, top)
    if isinstance(body, Cylinder):
        cu, cv = _project(body.pos, top, wrist_xy)
        return _cyl_prims(color, cu, cv, body.axis, body.half_length, body.radius, top)
    raise ValueError(f"no silhouette for body type {type(body).__name__}")


def _cyl_prims(color, cu, cv, axis, half_length, radius, top) -> List:
    if top:
        au, av = float(axis[1]), float(axis[0])
    else:
        au, av = float(axis[0]), float(axis[2])
    in_plane = math.hypot(au, av)
    if in_plane < 1e-9:
        return [disc(color, cu, cv, radius)]
    if abs(av) < 1e-9:
        return [rect(color, cu - half_length, cu + half_length, cv - radius, cv + radius)]
    if abs(au) < 1e-9:
        return [rect(color, cu - radius, cu + radius, cv - half_length, cv + half_length)]
    return [
        capsule(
            color,
            cu - au * half_length,
            cv - av * half_length,
            cu + au * half_length,
            cv + av * half_length,
            radius,
        )
    ]


def hand_prims(
    bases: np.ndarray,
    knuckles: np.ndarray,
    centers: np.ndarray,
    tangent1: np.ndarray,
    pad_half_length: float,
    pad_half_width: float,
    top: bool,
    wrist_xy=None,
) -> List:
    """Hand silhouette for one trial: palm bar plus three capsules per finger.

    bases/knuckles/centers/tangent1 are the (5, 3) world-frame arrays of one
    forward-kinematics pass.
    """
    prims: List = []
    pu, pv = _project(bases[0], top, wrist_xy)
    qu, qv = _project(bases[4], top, wrist_xy)
    prims.append(capsule(HAND_COLOR, pu, pv, qu, qv, 0.022))
    for f in range(bases.shape[0]):
        bu, bv = _project(bases[f], top, wrist_xy)
        ku, kv = _project(knuckles[f], top, wrist_xy)
        cu, cv = _project(centers[f], top, wrist_xy)
        tu, tv = _project(centers[f] + pad_half_length * tangent1[f], top, wrist_xy)
        su, sv = _project(centers[f] - pad_half_length * tangent1[f], top, wrist_xy)
        prims.append(capsule(HAND_COLOR, bu, bv, ku, kv, 0.0055))
        prims.append(capsule(HAND_COLOR, ku, kv, cu, cv, 0.005))
        prims.append(capsule(HAND_COLOR, su, sv, tu, tv, pad_half_width))
    return prims


def occluder_prims(
    tips_uv: np.ndarray,
    sway: float,
    thickness: float,
) -> List:
    """Operator arm and hand covering the guided fingers, front view only.

    tips_uv (K, 2) are the projected guided fingertip positions; sway is a
    phase angle that moves the whole arm, thickness scales its width.  Both
    vary per demonstration and per tick, so the covered pixels never repeat
    exactly.
    """
    tips = np.asarray(tips_uv, dtype=float).reshape(-1, 2)
    cu = float(tips[:, 0].mean()) + 0.020 * math.sin(sway)
    cv = float(tips[:, 1].mean()) + 0.048 + 0.010 * math.cos(0.7 * sway)
    ang = 1.02 + 0.30 * math.sin(0.53 * sway + 0.4)
    eu = cu + 0.30 * math.cos(ang)
    ev = cv + 0.30 * math.sin(ang)
    prims: List = [
        capsule(OCCLUDER_COLOR, cu, cv, eu, ev, 0.027 * thickness),
        disc(OCCLUDER_COLOR, cu, cv, 0.036 * thickness),
    ]
    for k in range(tips.shape[0]):
        prims.append(
            capsule(
                OCCLUDER_COLOR,
                cu,
                cv,
                float(tips[k, 0]),
                float(tips[k, 1]) + 0.004,
                0.0105 * thickness,
            )
        )
    return prims
