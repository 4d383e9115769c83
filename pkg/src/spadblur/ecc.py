"""Enhanced correlation coefficient (ECC) alignment for Euclidean warps.

Forward-additive Gauss-Newton iterations on (theta, tx, ty) with the rotation
centre held fixed, run coarse-to-fine over a box-filtered pyramid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import as_array
from .transforms import EuclideanTransform


class AlignmentError(ValueError):
    """Inputs cannot be aligned (e.g. an image without intensity variance)."""


@dataclass(frozen=True)
class AlignResult:
    transform: EuclideanTransform
    ecc: float
    converged: bool
    iterations: int


def _downsample(img, mask):
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    a = img[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2)
    m = mask[:2 * h2, :2 * w2].reshape(h2, 2, w2, 2)
    cnt = m.sum(axis=(1, 3))
    s = (a * m).sum(axis=(1, 3))
    out = np.where(cnt > 0, s / np.maximum(cnt, 1), 0.0)
    return out, cnt >= 2


def ecc_value(src, dst, transform: EuclideanTransform, mask=None) -> float:
    """Correlation coefficient between ``src`` and ``dst`` sampled through ``transform``."""
    src = as_array(src)
    dst = as_array(dst)
    yy, xx = np.mgrid[0:src.shape[0], 0:src.shape[1]].astype(np.float64)
    m = transform.matrix
    xw = m[0, 0] * xx + m[0, 1] * yy + m[0, 2]
    yw = m[1, 0] * xx + m[1, 1] * yy + m[1, 2]
    warped = ndimage.map_coordinates(dst, [yw, xw], order=1, mode="constant", cval=np.nan)
    valid = np.isfinite(warped)
    if mask is not None:
        valid &= mask
    t = src[valid] - src[valid].mean()
    i = warped[valid] - warped[valid].mean()
    den = np.linalg.norm(t) * np.linalg.norm(i)
    return float(t @ i / den) if den > 0 else 0.0


def _level(src, dst, mask, p, center, max_iter, eps):
    h, w = src.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    gy, gx = np.gradient(dst)
    rx, ry = center
    dx = xx - rx
    dy = yy - ry
    best = (-np.inf, p.copy())
    rho_prev = -np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        c, s = np.cos(p[0]), np.sin(p[0])
        xw = c * dx + s * dy + rx + p[1]
        yw = -s * dx + c * dy + ry + p[2]
        coords = [yw, xw]
        warped = ndimage.map_coordinates(dst, coords, order=1, mode="constant", cval=np.nan)
        valid = np.isfinite(warped) & mask
        if valid.sum() < 16:
            break
        t = src[valid]
        t = t - t.mean()
        iw = warped[valid]
        iw = iw - iw.mean()
        tn = np.linalg.norm(t)
        inorm = np.linalg.norm(iw)
        if tn == 0 or inorm == 0:
            break
        rho = float(t @ iw) / (tn * inorm)
        if rho > best[0]:
            best = (rho, p.copy())
        if abs(rho - rho_prev) < eps:
            converged = True
            break
        rho_prev = rho
        gxw = ndimage.map_coordinates(gx, coords, order=1, mode="nearest")[valid]
        gyw = ndimage.map_coordinates(gy, coords, order=1, mode="nearest")[valid]
        jt_x = -s * dx[valid] + c * dy[valid]
        jt_y = -c * dx[valid] - s * dy[valid]
        G = np.column_stack([gxw * jt_x + gyw * jt_y, gxw, gyw])
        H = G.T @ G
        try:
            Hinv = np.linalg.inv(H)
        except np.linalg.LinAlgError:
            break
        img_proj = G.T @ iw
        tmp_proj = G.T @ t
        ih = Hinv @ img_proj
        lam_num = inorm ** 2 - img_proj @ ih
        lam_den = float(t @ iw) - tmp_proj @ ih
        if lam_den > 0:
            lam = lam_num / lam_den
        else:
            # far from the optimum: scale the template to the projected image energy
            th = tmp_proj @ Hinv @ tmp_proj
            lam = np.sqrt(max(img_proj @ ih, 1e-300) / max(th, 1e-300))
        err = lam * t - iw
        p = p + Hinv @ (G.T @ err)
    return best[1], best[0], converged, it


def ecc_align(src, dst, init: EuclideanTransform | None = None, *, max_iter: int = 60, eps: float = 1e-6,
              levels: int | None = None, sigma: float = 0.0, mask=None) -> AlignResult:
    """Find the Euclidean warp A with ``dst(A p) ~ src(p)`` maximizing the ECC.

    ``init`` fixes the rotation centre (image centre by default).  ``sigma`` applies a
    Gaussian pre-filter to both images; ``mask`` restricts the template pixels.
    Non-convergence is reported through ``AlignResult.converged`` with the best
    warp seen.
    """
    src = as_array(src)
    dst = as_array(dst)
    if src.shape != dst.shape:
        raise AlignmentError(f"shape mismatch {src.shape} vs {dst.shape}")
    if src.std() == 0 or dst.std() == 0:
        raise AlignmentError("image has zero intensity variance")
    if init is None:
        init = EuclideanTransform.identity(src.shape)
    if sigma > 0:
        src = ndimage.gaussian_filter(src, sigma)
        dst = ndimage.gaussian_filter(dst, sigma)
    mask = np.ones(src.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if levels is None:
        levels = 1
        while min(src.shape) >> levels >= 24 and levels < 4:
            levels += 1
    pyr = [(src, dst, mask)]
    for _ in range(levels - 1):
        s, m = _downsample(pyr[-1][0], pyr[-1][2])
        d, _ = _downsample(pyr[-1][1], np.ones_like(pyr[-1][1], dtype=bool))
        pyr.append((s, d, m))
    p = None
    total_it = 0
    converged = False
    rho = -1.0
    for lvl in range(levels - 1, -1, -1):
        s, d, m = pyr[lvl]
        f = 0.5 ** lvl
        if p is None:
            p = init.scaled(f).params()
        else:
            p = np.array([p[0], p[1] * 2, p[2] * 2])
        center = (init.rx * f + (f - 1) / 2.0, init.ry * f + (f - 1) / 2.0)
        if s.std() == 0 or d.std() == 0:
            continue
        p, rho, converged, it = _level(s, d, m, p, center, max_iter, eps)
        total_it += it
    result = EuclideanTransform(float(p[0]), float(p[1]), float(p[2]), init.rx, init.ry)
    return AlignResult(result, float(rho), bool(converged), total_it)
