"""Synthetic photon-frame generation under known global motion.

Every pixel draws its arrivals from its own Philox4x64 stream keyed by
``(seed, pixel index)``, so results do not depend on traversal order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import FluxImage, PhotonFrameTensor, QisFrameTensor, SensorConfig, as_array
from .transforms import EuclideanTransform

RNG_ALGORITHM = "numpy Philox4x64-10 keyed by (seed, pixel index)"

MOTION_KINDS = ("static", "translation", "rotation", "random_shake", "frame_sequence")


@dataclass(frozen=True)
class MotionScript:
    """Known global motion applied step by step to a ground-truth flux image.

    ``translation`` is pixels per step (x, y) at sensor resolution, ``rotation_deg``
    degrees per step about the image centre, ``shake_bound`` the integer bound of
    the discrete-uniform per-step shake.  Each step lasts ``photons_per_step``
    photon frames.
    """

    kind: str = "static"
    total_steps: int = 1
    photons_per_step: int = 10
    translation: tuple[float, float] = (0.0, 0.0)
    rotation_deg: float = 0.0
    shake_bound: int = 3
    frames: list = field(default=None, repr=False)
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in MOTION_KINDS:
            raise ValueError(f"unknown motion kind {self.kind!r}")
        if self.total_steps < 1 or self.photons_per_step < 1:
            raise ValueError("total_steps and photons_per_step must be >= 1")
        if int(self.shake_bound) != self.shake_bound:
            raise ValueError("shake bounds are integers")
        if self.kind == "frame_sequence" and not self.frames:
            raise ValueError("frame_sequence needs explicit frames")

    def step_transforms(self, shape) -> list[EuclideanTransform]:
        """Cumulative transforms (step-0 coordinates -> step-k coordinates), sensor pixels."""
        n = self.total_steps
        if self.kind == "rotation":
            return [EuclideanTransform.about_center(np.deg2rad(self.rotation_deg * k), 0, 0, shape) for k in range(n)]
        if self.kind == "translation":
            dx, dy = self.translation
            return [EuclideanTransform.about_center(0, dx * k, dy * k, shape) for k in range(n)]
        if self.kind == "random_shake":
            rng = np.random.default_rng(self.rng_seed)
            steps = rng.integers(-self.shake_bound, self.shake_bound + 1, size=(n, 2))
            steps[0] = 0
            cum = np.cumsum(steps, axis=0)
            return [EuclideanTransform.about_center(0, float(x), float(y), shape) for x, y in cum]
        return [EuclideanTransform.identity(shape) for _ in range(n)]


def warp_image(img, transform: EuclideanTransform, cval=0.0, order=1, out_of_frame=False):
    """Image whose content moved by ``transform``: out(A p) = img(p)."""
    img = as_array(img)
    h, w = img.shape
    inv = np.linalg.inv(transform.matrix)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    xs = inv[0, 0] * xx + inv[0, 1] * yy + inv[0, 2]
    ys = inv[1, 0] * xx + inv[1, 1] * yy + inv[1, 2]
    out = ndimage.map_coordinates(img, [ys, xs], order=order, mode="constant", cval=cval)
    if out_of_frame:
        inside = (xs > -0.5) & (xs < w - 0.5) & (ys > -0.5) & (ys < h - 0.5)
        return out, inside
    return out


def box_downsample(img, factor: int):
    if factor == 1:
        return img
    h, w = img.shape
    if h % factor or w % factor:
        raise ValueError(f"image shape {img.shape} not divisible by {factor}")
    return img.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def scale_flux(img, min_flux: float, max_flux: float):
    """Linear min-max map of an image onto [min_flux, max_flux] photons/second."""
    a = as_array(img)
    lo, hi = a.min(), a.max()
    if hi == lo:
        return np.full_like(a, max_flux)
    return min_flux + (a - lo) / (hi - lo) * (max_flux - min_flux)


def render_flux_sequence(ground_truth, script: MotionScript, render_factor: int = 1,
                         sensor_shape=None, background: float = 0.0):
    """One flux image per motion step plus the exact cumulative transforms.

    ``ground_truth`` is rendered at ``render_factor`` times the sensor resolution,
    warped bilinearly (out-of-frame pixels take ``background``) and box-downsampled.
    ``sensor_shape`` optionally crops the central window after downsampling, which
    keeps translated content inside the field of view.
    """
    if script.kind == "frame_sequence":
        frames = [FluxImage(box_downsample(as_array(f), render_factor)) for f in script.frames]
        shape = frames[0].shape
        return frames, [EuclideanTransform.identity(shape) for _ in frames]
    gt = as_array(ground_truth)
    if np.any(gt < 0):
        raise ValueError("ground truth flux must be nonnegative")
    full_shape = (gt.shape[0] // render_factor, gt.shape[1] // render_factor)
    transforms = script.step_transforms(full_shape)
    if sensor_shape is None:
        sensor_shape = full_shape
    r0 = (full_shape[0] - sensor_shape[0]) // 2
    c0 = (full_shape[1] - sensor_shape[1]) // 2
    if (full_shape[0] - sensor_shape[0]) % 2 or (full_shape[1] - sensor_shape[1]) % 2:
        raise ValueError("sensor crop must be centred (equal margins)")
    out = []
    for a in transforms:
        hi_res = a.scaled(render_factor)
        img, inside = warp_image(gt, hi_res, cval=background, out_of_frame=True)
        img = box_downsample(img, render_factor)[r0:r0 + sensor_shape[0], c0:c0 + sensor_shape[1]]
        inside = box_downsample(inside.astype(float), render_factor)[r0:r0 + sensor_shape[0], c0:c0 + sensor_shape[1]]
        if not inside.any():
            raise ValueError("motion pushed all content out of frame")
        out.append(FluxImage(np.maximum(img, 0.0)))
    sensor_transforms = [EuclideanTransform.about_center(a.theta, a.tx, a.ty, sensor_shape) for a in transforms]
    return out, sensor_transforms


def _pixel_rng(seed: int, pixel: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(seed) & (2**64 - 1)) | (int(pixel) << 64)))


def quantize(t, config: SensorConfig):
    """Arrival times (seconds) -> bin indices with the floor convention; >= T_pf is the sentinel."""
    t = np.asarray(t, dtype=np.float64)
    b = np.floor(t / config.bin_width + 1e-9)
    b = np.where(t >= config.frame_period, config.sentinel, np.minimum(b, config.sentinel - 1))
    return b.astype(config.index_dtype)


def sample_photon_frames(flux_sequence, photons_per_step, config: SensorConfig, rng_seed: int = 0) -> PhotonFrameTensor:
    """First-photon frames: one exponential draw per pixel per frame at rate q*flux.

    Flux image ``k`` supplies ``photons_per_step`` consecutive frames (an int or a
    per-image sequence).
    """
    flux = np.stack([as_array(f) for f in flux_sequence])
    if np.any(flux < 0):
        raise ValueError("flux must be nonnegative")
    per = np.broadcast_to(np.asarray(photons_per_step, dtype=np.int64), (len(flux),))
    step_of_frame = np.repeat(np.arange(len(flux)), per)
    n = len(step_of_frame)
    _, h, w = flux.shape
    data = np.empty((n, h, w), dtype=config.index_dtype)
    q = config.detection_efficiency
    for p in range(h * w):
        r, c = divmod(p, w)
        rate = q * flux[step_of_frame, r, c]
        e = _pixel_rng(rng_seed, p).standard_exponential(n)
        with np.errstate(divide="ignore"):
            t = np.where(rate > 0, e / np.where(rate > 0, rate, 1.0), np.inf)
        data[:, r, c] = quantize(t, config)
    return PhotonFrameTensor(data, config)


def strip_timing(tensor: PhotonFrameTensor) -> QisFrameTensor:
    """Binary frames: 1 wherever a photon was detected."""
    return QisFrameTensor((tensor.data != tensor.config.sentinel).astype(np.uint8), tensor.config)


def pulse_pixel_stream(base_flux: float, contrast_ratio: float, pulse_width_frames: int, n_frames: int = 800,
                       rng_seed: int = 0, config: SensorConfig | None = None):
    """Single-pixel stream with one rectangular flux pulse at a random position.

    Returns ``(bin_indices, true_changepoints, pulse_start)``; the true count is 2
    by construction.
    """
    config = config or SensorConfig()
    if contrast_ratio <= 0:
        raise ValueError("contrast_ratio must be positive")
    if not 1 <= pulse_width_frames < n_frames - 1:
        raise ValueError("pulse must fit strictly inside the stream")
    rng = np.random.Generator(np.random.Philox(key=int(rng_seed)))
    start = int(rng.integers(1, n_frames - pulse_width_frames))
    flux = np.full(n_frames, float(base_flux))
    flux[start:start + pulse_width_frames] *= contrast_ratio
    rate = config.detection_efficiency * flux
    e = rng.standard_exponential(n_frames)
    with np.errstate(divide="ignore"):
        t = np.where(rate > 0, e / np.where(rate > 0, rate, 1.0), np.inf)
    return quantize(t, config), 2, start
