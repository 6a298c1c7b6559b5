"""Mask-guided removal of occluders from camera frames.

Masked pixels are filled with the harmonic interpolant of the surrounding
image: the discrete Laplace equation is solved over the masked region with
the untouched pixels as Dirichlet boundary, which extends the surrounding
gradients smoothly across the hole.  At the image border the missing
neighbors are treated as mirror values (zero normal gradient), so holes
touching the frame edge remain well posed as long as the region sees at
least one real boundary pixel.

The solver is red-black successive over-relaxation restricted to the
bounding box of the mask (plus a one-pixel halo), initialized at the mean
of the region boundary.  Pixels outside the mask are never written, so
the fill is exactly local.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "InpaintError",
    "InpaintResult",
    "harmonic_fill",
    "inpaint_image",
    "preprocess_demo",
]

# 4-neighborhood; diagonal contact does not couple regions
_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class InpaintError(ValueError):
    """Raised when a masked region has no boundary data to interpolate."""


@dataclass
class InpaintResult:
    image: np.ndarray            # same shape as the input, masked pixels filled
    iterations: int              # total red-black sweeps executed
    converged: bool              # update norm fell below tol everywhere
    max_update: float            # last sweep's largest pixel change


def _sor_channel(u: np.ndarray, groups, omega: float, tol: float, max_iter: int):
    """Relax one contiguous channel subarray in place; returns (iters, last).

    The caller seeds the masked pixels.  `groups` holds, per red-black
    color, the flat own/neighbor indices of the masked pixels; out-of-image
    neighbors are clamped to the pixel itself, which realizes the mirror
    boundary.
    """
    flat = u.reshape(-1)
    last = np.inf
    for it in range(1, max_iter + 1):
        last = 0.0
        for own, nbr in groups:
            if own.size == 0:
                continue
            new = 0.25 * (flat[nbr[0]] + flat[nbr[1]] + flat[nbr[2]] + flat[nbr[3]])
            old = flat[own]
            upd = old + omega * (new - old)
            flat[own] = upd
            last = max(last, float(np.abs(upd - old).max()))
        if last < tol:
            return it, last
    return max_iter, last


def harmonic_fill(
    image: np.ndarray,
    mask: np.ndarray,
    tol: float = 1e-6,
    max_iter: int | None = None,
    init: np.ndarray | None = None,
) -> InpaintResult:
    """Fill `mask` pixels of `image` with the harmonic interpolant.

    image: (H, W) or (H, W, C) float array; mask: (H, W) bool.  Returns a
    new image; unmasked pixels are copied bit for bit.  When `init` is
    given (e.g. the previous frame's fill), masked pixels start from its
    values instead of the boundary mean, which cuts iterations sharply
    when the hole moves slowly between frames.
    """
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} != image shape {image.shape[:2]}")
    if init is not None:
        init = np.asarray(init, dtype=np.float64)
        if init.shape != image.shape:
            raise ValueError(f"init shape {init.shape} != image shape {image.shape}")
    out = image.copy()
    if not mask.any():
        return InpaintResult(out, 0, True, 0.0)
    if mask.all():
        # any smaller region necessarily borders an unmasked pixel, so this
        # is the only way to be left with no boundary data at all
        raise InpaintError("mask covers the whole image; nothing to interpolate from")

    rows = np.nonzero(mask.any(axis=1))[0]
    cols = np.nonzero(mask.any(axis=0))[0]
    H, W = mask.shape
    r0, r1 = max(rows[0] - 1, 0), min(rows[-1] + 1, H - 1)
    c0, c1 = max(cols[0] - 1, 0), min(cols[-1] + 1, W - 1)
    sub_mask = mask[r0 : r1 + 1, c0 : c1 + 1]
    sh, sw = sub_mask.shape

    # relaxation factor sized to the widest single region, not the bbox:
    # distant small blobs share a bbox but converge at their own diameter
    labels, _ = ndimage.label(sub_mask, structure=_CROSS)
    span = 2
    for sl in ndimage.find_objects(labels):
        span = max(span, sl[0].stop - sl[0].start, sl[1].stop - sl[1].start)
    omega = min(2.0 / (1.0 + np.sin(np.pi / span)), 1.98)
    if max_iter is None:
        max_iter = 10 * H * W

    ii, jj = np.nonzero(sub_mask)
    red = ((ii + jj) % 2).astype(bool)
    groups = []
    for sel in (~red, red):
        pi, pj = ii[sel], jj[sel]
        nbr = np.stack(
            [
                np.clip(pi - 1, 0, sh - 1) * sw + pj,
                np.clip(pi + 1, 0, sh - 1) * sw + pj,
                pi * sw + np.clip(pj - 1, 0, sw - 1),
                pi * sw + np.clip(pj + 1, 0, sw - 1),
            ]
        )
        groups.append((pi * sw + pj, nbr))
    ring = ndimage.binary_dilation(sub_mask, structure=_CROSS) & ~sub_mask

    channels = out[..., None] if out.ndim == 2 else out
    init_channels = None
    if init is not None:
        init_channels = init[..., None] if init.ndim == 2 else init
    iters = 0
    worst = 0.0
    ok = True
    for c in range(channels.shape[2]):
        sub = np.ascontiguousarray(channels[r0 : r1 + 1, c0 : c1 + 1, c])
        if init_channels is None:
            # boundary-mean start keeps every sweep inside the data's range
            sub[sub_mask] = sub[ring].mean()
        else:
            sub[sub_mask] = init_channels[r0 : r1 + 1, c0 : c1 + 1, c][sub_mask]
        it, last = _sor_channel(sub, groups, omega, tol, max_iter)
        channels[r0 : r1 + 1, c0 : c1 + 1, c][sub_mask] = sub[sub_mask]
        iters += it
        worst = max(worst, last)
        ok = ok and last < tol
    return InpaintResult(out, iters, ok, worst)


def inpaint_image(image: np.ndarray, mask: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """harmonic_fill that returns the image and insists on convergence."""
    res = harmonic_fill(image, mask, tol=tol)
    if not res.converged:
        raise InpaintError(
            f"inpainting did not converge (last update {res.max_update:.3e})"
        )
    return res.image


def preprocess_demo(demo, tol: float = 1e-6, max_iter: int | None = None):
    """Remove the operator occluder from every frame of a guided demo.

    Each view is filled frame by frame, warm-starting frame t from the fill
    of frame t-1 since the occluder drifts slowly.  Masks are cleared on
    the output and the demo is flagged occluder-free; running this again on
    its own output returns it bit-identically.  Only the images and masks
    change; every other field is copied verbatim.
    """
    from dataclasses import replace

    from .demo_io import MODE_KINESTHETIC, _ARRAY_FIELDS

    if demo.inpainted:
        out = replace(demo)
    else:
        if demo.mask_front is None:
            if demo.mode == MODE_KINESTHETIC:
                raise InpaintError("guided demo carries no occluder masks")
            out = replace(demo, inpainted=True)
        else:
            stale = 0
            views = {}
            for img_name, mask_name in (
                ("front", "mask_front"),
                ("wrist", "mask_wrist"),
            ):
                frames = getattr(demo, img_name)
                masks = getattr(demo, mask_name)
                filled = np.empty_like(frames)
                prev = None
                for t in range(frames.shape[0]):
                    res = harmonic_fill(
                        frames[t], masks[t], tol=tol, max_iter=max_iter, init=prev
                    )
                    if not res.converged:
                        stale += 1
                    prev = res.image
                    filled[t] = prev.astype(np.float32)
                views[img_name] = filled
            if stale:
                warnings.warn(f"{stale} frame fills stopped short of tol {tol:g}")
            out = replace(
                demo,
                front=views["front"],
                wrist=views["wrist"],
                mask_front=None,
                mask_wrist=None,
                inpainted=True,
            )
    for name in _ARRAY_FIELDS + ("mask_front", "mask_wrist", "actions", "labels"):
        arr = getattr(out, name)
        if arr is not None:
            setattr(out, name, arr.copy())
    return out
