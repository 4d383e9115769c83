"""Changepoint video: per-pixel piecewise-constant flux and adaptive frame sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .changepoint import PixelChangepoints
from .core import FluxImage, PhotonFrameTensor, QisFrameTensor, SensorConfig


@dataclass(frozen=True)
class PixelFluxProfile:
    """Right-continuous step function; ``breakpoints`` in seconds, one level per segment."""

    breakpoints: np.ndarray
    levels: np.ndarray

    def __call__(self, t):
        k = np.searchsorted(self.breakpoints, t, side="right") - 1
        k = np.clip(k, 0, len(self.levels) - 1)
        return self.levels[k]


@dataclass(frozen=True)
class ChangepointVideo:
    """Flux profiles of every pixel over ``[0, total_exposure]``.

    Segment boundaries are stored in frame units with the ragged layout of
    :class:`PixelChangepoints`; ``levels[offsets[p] - p + k]`` is the level of
    segment ``k`` of pixel ``p``.
    """

    height: int
    width: int
    n_frames: int
    config: SensorConfig
    offsets: np.ndarray
    bounds: np.ndarray
    levels: np.ndarray

    @property
    def total_exposure(self) -> float:
        return self.n_frames * self.config.frame_period

    def profile(self, row: int, col: int) -> PixelFluxProfile:
        p = row * self.width + col
        b = self.bounds[self.offsets[p]:self.offsets[p + 1]]
        lv = self.levels[self.offsets[p] - p:self.offsets[p + 1] - p - 1]
        return PixelFluxProfile(b * self.config.frame_period, lv)

    def frames_at(self, frame_times) -> np.ndarray:
        """Video frames at the given times (frame units), shape (n, height, width)."""
        t = np.asarray(frame_times, dtype=np.float64)
        order = np.argsort(t, kind="stable")
        out = _evaluate(self.offsets, self.bounds, self.levels, t[order], self.height, self.width)
        res = np.empty_like(out)
        res[order] = out
        return res

    def frame_at(self, frame_time: float) -> FluxImage:
        return FluxImage(self.frames_at([frame_time])[0])


@numba.njit(cache=True)
def _segment_levels(data, sentinel, offsets, bounds, floor_bins, scale, binary, frame_scale):
    nf, h, w = data.shape
    npix = h * w
    levels = np.empty(len(bounds) - npix, dtype=np.float64)
    for p in range(npix):
        r = p // w
        c = p % w
        for k in range(offsets[p], offsets[p + 1] - 1):
            cnt = 0
            dur = 0
            for f in range(bounds[k], bounds[k + 1]):
                b = data[f, r, c]
                dur += b
                if b != sentinel:
                    cnt += 1
            if binary:
                n = bounds[k + 1] - bounds[k]
                ph = min(cnt / n, 1.0 - 0.5 / n)
                levels[k - p] = -np.log1p(-ph) / frame_scale
            else:
                d = max(float(dur), cnt * floor_bins)
                levels[k - p] = cnt / (d * scale) if d > 0 else 0.0
    return levels


@numba.njit(cache=True)
def _evaluate(offsets, bounds, levels, times, h, w):
    npix = h * w
    out = np.empty((len(times), h, w))
    for p in range(npix):
        k = offsets[p]
        last = offsets[p + 1] - 2
        for i in range(len(times)):
            while k < last and bounds[k + 1] <= times[i]:
                k += 1
            out[i, p // w, p % w] = levels[k - p]
    return out


def build_cpv(tensor: PhotonFrameTensor, changepoints: PixelChangepoints, floor_bins: float = 0.5) -> ChangepointVideo:
    """Flux level of every virtual exposure from the photon frames it spans.

    Timestamp tensors use the count/exposure estimator (zero-length exposures are
    floored at ``floor_bins`` per detection); binary tensors the Bernoulli one,
    clamped below saturation.
    """
    if (changepoints.height, changepoints.width, changepoints.n_frames) != (tensor.height, tensor.width, tensor.n_frames):
        raise ValueError("changepoints do not match tensor dimensions")
    cfg = tensor.config
    if isinstance(tensor, QisFrameTensor):
        data, sentinel, binary = (1 - tensor.data).astype(np.uint8), 1, True
    else:
        data, sentinel, binary = tensor.data, cfg.sentinel, False
    scale = cfg.detection_efficiency * cfg.bin_width
    levels = _segment_levels(data, sentinel, changepoints.offsets, changepoints.frame_bounds,
                             float(floor_bins), scale, binary, cfg.detection_efficiency * cfg.frame_period)
    return ChangepointVideo(tensor.height, tensor.width, tensor.n_frames, cfg, changepoints.offsets,
                            changepoints.frame_bounds, levels)


@dataclass(frozen=True)
class CpvSamples:
    frame_times: np.ndarray
    images: list
    config: SensorConfig

    @property
    def times(self) -> np.ndarray:
        return self.frame_times * self.config.frame_period

    def __len__(self) -> int:
        return len(self.frame_times)

    def __iter__(self):
        return iter(zip(self.times, self.images))


def switch_times(cpv: ChangepointVideo, switch_fraction: float = 0.01) -> np.ndarray:
    """Sample instants (frame units): 0, then whenever enough distinct pixels switched."""
    if not 0 < switch_fraction <= 1:
        raise ValueError("switch_fraction must lie in (0, 1]")
    npix = cpv.height * cpv.width
    counts = np.diff(cpv.offsets) - 2
    pix = np.repeat(np.arange(npix), counts)
    inner = np.ones(len(cpv.bounds), dtype=bool)
    inner[cpv.offsets[:-1]] = False
    inner[cpv.offsets[1:] - 1] = False
    t = cpv.bounds[inner]
    order = np.argsort(t, kind="stable")
    return _sweep(t[order], pix[order], npix, switch_fraction * npix)


@numba.njit(cache=True)
def _sweep(t, pix, npix, need):
    stamp = np.full(npix, -1, dtype=np.int64)
    out = [0]
    epoch = 0
    distinct = 0
    i = 0
    n = len(t)
    while i < n:
        j = i
        while j < n and t[j] == t[i]:
            if stamp[pix[j]] != epoch:
                stamp[pix[j]] = epoch
                distinct += 1
            j += 1
        if distinct >= need and t[i] > out[-1]:
            out.append(t[i])
            epoch += 1
            distinct = 0
        i = j
    return np.array(out, dtype=np.int64)


def sample_cpv(cpv: ChangepointVideo, switch_fraction: float = 0.01) -> CpvSamples:
    """Adaptive-rate frames: t=0 plus every instant at which at least
    ``switch_fraction`` of the pixels have entered a new segment since the last frame.
    A pixel switching several times within one interval counts once."""
    ft = switch_times(cpv, switch_fraction)
    frames = cpv.frames_at(ft)
    return CpvSamples(ft, [FluxImage(f) for f in frames], cpv.config)
