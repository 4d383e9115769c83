"""Sensor description, photon-frame containers and pixelwise flux estimators.

Timestamps are kept as integer bin indices everywhere; conversion to seconds
only happens inside the estimators.  A bin index equal to ``bins_per_frame``
is the "no detection" sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np


class SaturationError(ArithmeticError):
    """Flux is beyond the measurable range (zero observation time or p_hat == 1)."""


@dataclass(frozen=True)
class SensorConfig:
    """Frame-readout SPAD geometry.

    Attributes:
        bins_per_frame: number of timing bins per photon frame (B).
        bin_width: bin width in seconds.
        detection_efficiency: photon detection efficiency q in (0, 1].
    """

    bins_per_frame: int = 8000
    bin_width: float = 256e-12
    detection_efficiency: float = 1.0

    def __post_init__(self):
        if int(self.bins_per_frame) != self.bins_per_frame or self.bins_per_frame < 1:
            raise ValueError(f"bins_per_frame must be a positive integer, got {self.bins_per_frame}")
        if not self.bin_width > 0:
            raise ValueError(f"bin_width must be positive, got {self.bin_width}")
        if not 0 < self.detection_efficiency <= 1:
            raise ValueError(f"detection_efficiency must lie in (0, 1], got {self.detection_efficiency}")

    @property
    def frame_period(self) -> float:
        return self.bins_per_frame * self.bin_width

    @property
    def sentinel(self) -> int:
        return self.bins_per_frame

    @property
    def index_dtype(self):
        return np.uint16 if self.bins_per_frame <= 65534 else np.uint32


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PhotonFrameTensor:
    """First-photon bin indices, shape (n_frames, height, width)."""

    data: np.ndarray
    config: SensorConfig = field(default_factory=SensorConfig)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"expected (n_frames, height, width) array, got shape {data.shape}")
        if data.size and (data.min() < 0 or data.max() > self.config.bins_per_frame):
            raise ValueError("bin indices must lie in [0, bins_per_frame]")
        object.__setattr__(self, "data", _freeze(data.astype(self.config.index_dtype, copy=False)))

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def total_exposure(self) -> float:
        return self.n_frames * self.config.frame_period

    def detections(self) -> np.ndarray:
        """Boolean detection map with the same shape as ``data``."""
        return self.data != self.config.sentinel

    def frames(self, start: int, stop: int) -> "PhotonFrameTensor":
        return PhotonFrameTensor(self.data[start:stop], self.config)


@dataclass(frozen=True)
class QisFrameTensor:
    """Binary photon frames, shape (n_frames, height, width)."""

    data: np.ndarray
    config: SensorConfig = field(default_factory=SensorConfig)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"expected (n_frames, height, width) array, got shape {data.shape}")
        if data.size and not np.isin(data, (0, 1)).all():
            raise ValueError("QIS frames must be strictly binary")
        object.__setattr__(self, "data", _freeze(data.astype(np.uint8, copy=False)))

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FluxImage:
    """Per-pixel photon flux in photons/second."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"flux image must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("flux values must be finite and nonnegative")
        object.__setattr__(self, "values", _freeze(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def as_array(image) -> np.ndarray:
    """Values of a FluxImage, or the array itself, as float64."""
    return np.asarray(getattr(image, "values", image), dtype=np.float64)


@dataclass(frozen=True)
class InterArrivalSeries:
    """Exponential inter-detection measurements of one pixel.

    ``measurements[k]`` is the observed time (seconds) between the start of the
    frame following detection k-1 and detection k, i.e. empty frames are added
    to the next detected photon.  ``frame_index_of[k]`` is the frame in which
    detection k happened.
    """

    measurements: np.ndarray
    frame_index_of: np.ndarray
    trailing_dead_time: float
    n_frames: int

    def __len__(self) -> int:
        return len(self.measurements)


def estimate_flux(timestamps, config: SensorConfig) -> float:
    """Maximum likelihood flux from per-frame first-photon times in seconds.

    Frames without a detection carry ``t = frame_period``.
    """
    t = np.asarray(timestamps, dtype=np.float64)
    if t.size == 0:
        raise ValueError("need at least one frame")
    T = config.frame_period
    if np.any(t < 0) or np.any(t > T):
        raise ValueError("timestamps must lie in [0, frame_period]")
    n_det = np.count_nonzero(t != T)
    total = t.sum()
    if n_det == 0:
        return 0.0
    if total == 0:
        raise SaturationError("all detections at t=0: flux beyond measurable range")
    return n_det / (config.detection_efficiency * total)


def estimate_flux_qis(counts, config: SensorConfig) -> float:
    """Bernoulli maximum likelihood flux from binary frames (one frame = T_pf)."""
    n = np.asarray(counts)
    if n.size == 0:
        raise ValueError("need at least one frame")
    if not np.isin(n, (0, 1)).all():
        raise ValueError("QIS counts must be binary")
    p_hat = n.mean()
    if p_hat >= 1:
        raise SaturationError("every frame detected a photon: p_hat = 1")
    return -np.log1p(-p_hat) / (config.detection_efficiency * config.frame_period)


@numba.njit(cache=True)
def _interarrival_bins(frames, sentinel):
    n = frames.shape[0]
    x = np.empty(n, dtype=np.float64)
    fidx = np.empty(n, dtype=np.int64)
    m = 0
    acc = 0
    for i in range(n):
        b = frames[i]
        if b == sentinel:
            acc += sentinel
        else:
            x[m] = acc + b
            fidx[m] = i
            m += 1
            acc = 0
    return x[:m], fidx[:m], acc


def to_interarrival(pixel_frames, config: SensorConfig) -> InterArrivalSeries:
    """Convert one pixel's per-frame bin indices into inter-arrival measurements."""
    frames = np.asarray(pixel_frames, dtype=np.int64)
    if frames.size and (frames.min() < 0 or frames.max() > config.sentinel):
        raise ValueError("bin indices must lie in [0, bins_per_frame]")
    x_bins, fidx, trailing = _interarrival_bins(frames, config.sentinel)
    return InterArrivalSeries(
        measurements=x_bins * config.bin_width,
        frame_index_of=fidx,
        trailing_dead_time=trailing * config.bin_width,
        n_frames=len(frames),
    )


@numba.njit(cache=True)
def _sum_frames(data, start, stop, sentinel):
    _, h, w = data.shape
    counts = np.zeros((h, w), dtype=np.int64)
    bins = np.zeros((h, w), dtype=np.int64)
    for f in range(start, stop):
        for r in range(h):
            for c in range(w):
                b = data[f, r, c]
                bins[r, c] += b
                if b != sentinel:
                    counts[r, c] += 1
    return counts, bins


def frame_sums(tensor: PhotonFrameTensor, start: int = 0, stop: int | None = None):
    """Per-pixel detection counts and summed durations (in bins) over a frame range."""
    stop = tensor.n_frames if stop is None else stop
    return _sum_frames(tensor.data, start, stop, tensor.config.sentinel)


def flux_from_sums(counts, durations_bins, config: SensorConfig, floor_bins: float | None = None) -> np.ndarray:
    """Counts / (q * duration) per pixel; pixels with no observation time get 0.

    ``floor_bins`` bounds the duration below by ``floor_bins`` per detection; without
    it, a pixel with detections but zero duration raises SaturationError.
    """
    counts = np.asarray(counts, dtype=np.float64)
    dur = np.asarray(durations_bins, dtype=np.float64)
    if floor_bins is not None:
        dur = np.maximum(dur, counts * floor_bins)
    elif np.any((dur == 0) & (counts > 0)):
        raise SaturationError("pixel with detections but zero observation time")
    out = np.zeros_like(dur)
    ok = dur > 0
    out[ok] = counts[ok] / (config.detection_efficiency * dur[ok] * config.bin_width)
    return out


def qis_flux_from_sums(counts, n_frames, config: SensorConfig) -> np.ndarray:
    """Bernoulli flux per pixel from detection counts over ``n_frames`` binary frames.

    Saturated pixels (a detection in every frame) are clamped at half a missed
    frame, ``p_hat = 1 - 1 / (2 n)``, the largest finite estimate; pixels never
    observed get 0.
    """
    k = np.asarray(counts, dtype=np.float64)
    n = np.broadcast_to(np.asarray(n_frames, dtype=np.float64), k.shape)
    out = np.zeros(k.shape)
    ok = n > 0
    p = np.minimum(k[ok] / n[ok], 1.0 - 0.5 / n[ok])
    out[ok] = -np.log1p(-p) / (config.detection_efficiency * config.frame_period)
    return out


def flux_image(tensor: PhotonFrameTensor, start: int = 0, stop: int | None = None,
               floor_bins: float | None = None) -> FluxImage:
    """Pixelwise maximum likelihood flux over frames ``[start, stop)``."""
    counts, bins = frame_sums(tensor, start, stop)
    return FluxImage(flux_from_sums(counts, bins, tensor.config, floor_bins))
