"""Procedural ground-truth scenes for the simulation experiments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .simulate import box_downsample


def _noise(shape, scale, rng):
    n = rng.standard_normal(shape)
    n = ndimage.gaussian_filter(n, scale, mode="wrap")
    return n / (n.std() + 1e-12)


def orange(size: int = 256, seed: int = 7) -> np.ndarray:
    """Textured disc on a dark background, values in [0, 1].

    Peel pores, a few dark blemishes and a stem mark give structure at several
    scales so that rotation is observable everywhere on the fruit.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    r = np.hypot(xx - c, yy - c) / size
    ang = np.arctan2(yy - c, xx - c)
    radius = 0.44
    disc = np.clip((radius - r) * size / 1.5, 0, 1)
    shade = 0.75 + 0.25 * np.cos(np.clip(r / radius, 0, 1) * np.pi / 2) ** 0.5
    pores = 0.18 * _noise((size, size), size / 110.0, rng)
    blotch = 0.22 * _noise((size, size), size / 18.0, rng)
    bands = 0.12 * np.sin(7 * ang + 9 * r) * (r / radius)
    img = 0.62 * shade + pores + blotch + bands
    for _ in range(9):
        py, px = c + (rng.uniform(-0.3, 0.3, 2)) * size
        rad = rng.uniform(0.012, 0.03) * size
        img -= 0.45 * np.exp(-((xx - px) ** 2 + (yy - py) ** 2) / (2 * rad ** 2))
    stem = np.exp(-((xx - c - 0.05 * size) ** 2 + (yy - c + 0.08 * size) ** 2) / (2 * (0.02 * size) ** 2))
    img -= 0.5 * stem
    img = np.clip(img, 0.08, 1.0)
    return disc * img + (1 - disc) * 0.02


@dataclass(frozen=True)
class TwoCarScene:
    """Per-photon-frame flux images of two cars moving over a static background."""

    frames: np.ndarray
    background: np.ndarray
    reference_masks: tuple
    displacements: tuple


def two_cars(height: int = 80, width: int = 120, n_frames: int = 690, *, background_flux: float = 5e5,
             contrasts=(5.0, 1.2), travel=(57.0, 19.0), render_factor: int = 2, seed: int = 3) -> TwoCarScene:
    """A fast dark car (flux = background / contrast) and a slow bright car
    (flux = background * contrast) driving right in separate lanes.

    Both cars carry internal detail (windows, wheels, stripes) at roughly their
    stated mean contrast.  ``reference_masks`` are the car footprints in frame 0.
    """
    rng = np.random.default_rng(seed)
    f = render_factor
    H, W = height * f, width * f
    bg = background_flux * (1 + 0.05 * _noise((H, W), 6.0 * f, rng))

    def car(h, w, base, detail):
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        body = np.full((h, w), base)
        win = (yy > 0.15 * h) & (yy < 0.45 * h) & (((xx > 0.2 * w) & (xx < 0.45 * w)) | ((xx > 0.55 * w) & (xx < 0.8 * w)))
        body[win] *= detail
        stripe = (yy > 0.6 * h) & (yy < 0.7 * h)
        body[stripe] *= 1.0 / detail
        for cx in (0.25 * w, 0.75 * w):
            wheel = (xx - cx) ** 2 + (yy - 0.95 * h) ** 2 < (0.16 * h) ** 2
            body[wheel] *= detail
        return body

    dark_h, dark_w = int(0.22 * H), int(0.26 * W)
    light_h, light_w = int(0.24 * H), int(0.3 * W)
    dark = car(dark_h, dark_w, background_flux / contrasts[0], 2.0)
    light = car(light_h, light_w, background_flux * contrasts[1], 0.55)
    dark_pos = (int(0.62 * H), int(0.04 * W))
    light_pos = (int(0.12 * H), int(0.10 * W))

    def paste(canvas, sprite, r0, c0):
        h, w = sprite.shape
        sub = canvas[r0:r0 + h]
        cols = np.arange(w) + c0
        lo = np.floor(cols).astype(int)
        a = cols - lo
        for k, wt in ((0, 1 - a), (1, a)):
            ok = (lo + k >= 0) & (lo + k < canvas.shape[1])
            sub[:, lo[ok] + k] = sub[:, lo[ok] + k] * (1 - wt[ok]) + sprite[:, ok] * wt[ok]

    frames = np.empty((n_frames, height, width))
    for t in range(n_frames):
        canvas = bg.copy()
        s = (t + 0.5) / n_frames
        paste(canvas, dark, dark_pos[0], dark_pos[1] + s * travel[0] * f)
        paste(canvas, light, light_pos[0], light_pos[1] + s * travel[1] * f)
        frames[t] = box_downsample(canvas, f)
    masks = []
    for (r0, c0), (h, w), d in ((dark_pos, (dark_h, dark_w), travel[0]), (light_pos, (light_h, light_w), travel[1])):
        m = np.zeros((H, W))
        shift = 0.5 / n_frames * d * f
        c = int(round(c0 + shift))
        m[r0:r0 + h, c:c + w] = 1
        masks.append(box_downsample(m, f) > 0.5)
    return TwoCarScene(frames, box_downsample(bg, f), tuple(masks), tuple(travel))
