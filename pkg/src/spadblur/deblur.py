"""Motion-compensated photon accumulation and hierarchical merging.

The global pipeline splits the capture at the changepoint-video sample instants,
registers the photon images of consecutive intervals, interpolates a per-frame
trajectory through the interval midpoints, sums each interval's photons along
that trajectory, and merges the interval images pairwise until one is left.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from .changepoint import PixelChangepoints, detect_tensor
from .core import (FluxImage, PhotonFrameTensor, QisFrameTensor, SensorConfig, as_array, flux_from_sums, frame_sums,
                   qis_flux_from_sums)
from .cpv import ChangepointVideo, build_cpv, sample_cpv
from .ecc import AlignmentError, ecc_align, ecc_value
from .transforms import EuclideanTransform, MotionTrajectory, interpolate_trajectory


@dataclass(frozen=True)
class Accumulation:
    """Per-reference-pixel photon sums plus whatever landed outside the grid.

    ``durations`` are in timing bins and ``frames`` count the (fractional) photon
    frames that landed on each pixel; binary tensors use the frame counts.
    """

    counts: np.ndarray
    durations: np.ndarray
    frames: np.ndarray
    discarded_counts: float
    discarded_duration: float
    config: SensorConfig
    binary: bool = False

    @property
    def valid(self) -> np.ndarray:
        return self.frames > 0

    def flux(self, floor_bins: float = 0.5) -> FluxImage:
        if self.binary:
            return FluxImage(qis_flux_from_sums(self.counts, self.frames, self.config))
        return FluxImage(flux_from_sums(self.counts, self.durations, self.config, floor_bins))


def kernel_view(tensor):
    """(data, sentinel, binary) with detections marked by ``data != sentinel``."""
    if isinstance(tensor, QisFrameTensor):
        return (1 - tensor.data).astype(np.uint8), 1, True
    if isinstance(tensor, PhotonFrameTensor):
        return tensor.data, tensor.config.sentinel, False
    raise TypeError("expected PhotonFrameTensor or QisFrameTensor")


@numba.njit(cache=True)
def _accumulate(data, sentinel, mats, start, fy, fx, out_h, out_w, bilinear):
    nf, h, w = data.shape
    cnt = np.zeros((out_h, out_w))
    dur = np.zeros((out_h, out_w))
    nfr = np.zeros((out_h, out_w))
    lost_c = 0.0
    lost_d = 0.0
    for f in range(start, start + mats.shape[0]):
        m = mats[f - start]
        for r in range(h):
            for c in range(w):
                b = data[f, r, c]
                det = 1.0 if b != sentinel else 0.0
                # sub-cell centres of the replicated block (fx=fy=1: the pixel centre)
                share = 1.0 / (fx * fy)
                for sy in range(fy):
                    for sx in range(fx):
                        x = (c * fx + sx + 0.5) / fx - 0.5
                        y = (r * fy + sy + 0.5) / fy - 0.5
                        xr = (m[0, 0] * x + m[0, 1] * y + m[0, 2] + 0.5) * fx - 0.5
                        yr = (m[1, 0] * x + m[1, 1] * y + m[1, 2] + 0.5) * fy - 0.5
                        if not bilinear:
                            xi = int(np.floor(xr + 0.5))
                            yi = int(np.floor(yr + 0.5))
                            if 0 <= xi < out_w and 0 <= yi < out_h:
                                cnt[yi, xi] += det * share
                                dur[yi, xi] += b * share
                                nfr[yi, xi] += share
                            else:
                                lost_c += det * share
                                lost_d += b * share
                        else:
                            # counts land on the nearest cell, durations are splatted
                            xi = int(np.floor(xr + 0.5))
                            yi = int(np.floor(yr + 0.5))
                            if 0 <= xi < out_w and 0 <= yi < out_h:
                                cnt[yi, xi] += det * share
                                nfr[yi, xi] += share
                            else:
                                lost_c += det * share
                            x0 = int(np.floor(xr))
                            y0 = int(np.floor(yr))
                            ax = xr - x0
                            ay = yr - y0
                            for dy in range(2):
                                for dx in range(2):
                                    wgt = (ax if dx else 1.0 - ax) * (ay if dy else 1.0 - ay)
                                    xx = x0 + dx
                                    yy = y0 + dy
                                    if 0 <= xx < out_w and 0 <= yy < out_h:
                                        dur[yy, xx] += b * share * wgt
                                    else:
                                        lost_d += b * share * wgt
    return cnt, dur, nfr, lost_c, lost_d


def _frame_matrices(trajectory, start: int, stop: int) -> np.ndarray:
    if isinstance(trajectory, MotionTrajectory):
        mats = trajectory.to_reference[start:stop]
    else:
        mats = np.asarray(trajectory, dtype=np.float64)
        if mats.shape[0] != stop - start:
            mats = mats[start:stop]
    if mats.shape[0] != stop - start:
        raise ValueError("trajectory does not cover the frame range")
    return np.ascontiguousarray(mats, dtype=np.float64)


def warp_accumulate(tensor: PhotonFrameTensor, trajectory, frame_range=None, *, upsample=(1, 1),
                    bilinear: bool = False) -> Accumulation:
    """Sum every frame's detections and observation times at reference positions.

    ``trajectory`` is a :class:`MotionTrajectory` (frame -> reference maps) or an
    array of 3x3 matrices, either covering all frames or exactly ``frame_range``.
    Each pixel lands on its nearest reference pixel; landings off the grid are
    reported through the discard totals.  ``upsample=(fx, fy)`` accumulates on a
    grid ``fx`` by ``fy`` times finer, each source pixel split into equal sub-cells.
    """
    start, stop = (0, tensor.n_frames) if frame_range is None else frame_range
    if not 0 <= start < stop <= tensor.n_frames:
        raise ValueError(f"invalid frame range {frame_range}")
    fx, fy = upsample
    if fx < 1 or fy < 1:
        raise ValueError("upsampling factors must be >= 1")
    mats = _frame_matrices(trajectory, start, stop)
    data, sentinel, binary = kernel_view(tensor)
    cnt, dur, nfr, lc, ld = _accumulate(data, sentinel, mats, start, int(fy), int(fx),
                                        tensor.height * fy, tensor.width * fx, bool(bilinear))
    return Accumulation(cnt, dur, nfr, lc, ld, tensor.config, binary)


def fixed_window_baseline(tensor: PhotonFrameTensor, window_frames: int, floor_bins: float = 0.5):
    """Flux images of consecutive non-overlapping windows (a shorter final window is kept)."""
    if window_frames < 1:
        raise ValueError("window_frames must be >= 1")
    out = []
    for s in range(0, tensor.n_frames, window_frames):
        e = min(s + window_frames, tensor.n_frames)
        if isinstance(tensor, QisFrameTensor):
            counts = tensor.data[s:e].sum(axis=0, dtype=np.int64)
            out.append(FluxImage(qis_flux_from_sums(counts, e - s, tensor.config)))
        else:
            counts, bins = frame_sums(tensor, s, e)
            out.append(FluxImage(flux_from_sums(counts, bins, tensor.config, floor_bins)))
    return out


def upsample_zoh(item, factor_x: int, factor_y: int, rng_seed: int = 0, mode: str = "scatter"):
    """Zero-order-hold enlargement of a FluxImage or a photon-frame tensor.

    For tensors, ``scatter`` keeps each detection once, in a seeded uniformly chosen
    cell of its block (other cells see no detection); ``replicate`` copies the
    timestamp into every cell.
    """
    if factor_x < 1 or factor_y < 1 or int(factor_x) != factor_x or int(factor_y) != factor_y:
        raise ValueError("factors must be integers >= 1")
    fx, fy = int(factor_x), int(factor_y)
    if isinstance(item, PhotonFrameTensor):
        d = item.data
        big = np.repeat(np.repeat(d, fy, axis=1), fx, axis=2)
        if mode == "scatter" and fx * fy > 1:
            sent = item.config.sentinel
            rng = np.random.Generator(np.random.Philox(key=int(rng_seed)))
            pick = rng.integers(0, fx * fy, size=d.shape)
            keep = np.repeat(np.repeat(pick, fy, axis=1), fx, axis=2)
            yy = np.arange(d.shape[1] * fy) % fy
            xx = np.arange(d.shape[2] * fx) % fx
            cell = yy[:, None] * fx + xx[None, :]
            big = np.where(keep == cell[None], big, sent).astype(d.dtype)
        elif mode not in ("scatter", "replicate"):
            raise ValueError(f"unknown mode {mode!r}")
        return PhotonFrameTensor(big, item.config)
    a = as_array(item)
    return FluxImage(np.repeat(np.repeat(a, fy, axis=0), fx, axis=1))


def smooth_valid(img, valid, sigma: float):
    """Gaussian normalized convolution: fills holes and ignores invalid pixels."""
    img = as_array(img)
    if sigma <= 0:
        return np.where(valid, img, 0.0)
    w = ndimage.gaussian_filter(valid.astype(np.float64), sigma)
    s = ndimage.gaussian_filter(np.where(valid, img, 0.0), sigma)
    return np.where(w > 1e-3, s / np.maximum(w, 1e-3), 0.0)


def _sample(img, transform: EuclideanTransform):
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    m = transform.matrix
    xs = m[0, 0] * xx + m[0, 1] * yy + m[0, 2]
    ys = m[1, 0] * xx + m[1, 1] * yy + m[1, 2]
    out = ndimage.map_coordinates(img, [ys, xs], order=1, mode="constant", cval=np.nan)
    return out


@dataclass(frozen=True)
class MergeStep:
    level: int
    left: int
    right: int
    transform: EuclideanTransform
    ecc: float
    refined: bool
    fallback: bool


@dataclass(frozen=True)
class MergeResult:
    """Merged image plus the transform taking each input's coordinates to input 0's."""

    image: FluxImage
    to_first: list
    report: list = field(default_factory=list)


def hierarchical_merge(frames, durations=None, init=None, *, sigma: float = 1.0, max_iter: int = 60,
                       valid=None) -> MergeResult:
    """Pairwise align-and-average, halving the number of frames per level.

    ``init[k]``, if given, is the a-priori transform from frame k to frame k+1
    coordinates; ECC refines it and the refinement is kept only when it raises the
    correlation.  Alignment failures fall back to the initial transform (identity
    without ``init``) and are flagged in the report.
    """
    imgs = [as_array(f) for f in frames]
    if not imgs:
        raise ValueError("need at least one frame")
    shape = imgs[0].shape
    n = len(imgs)
    durs = np.ones(n) if durations is None else np.asarray(durations, dtype=np.float64)
    ok = [np.ones(shape, bool) for _ in imgs] if valid is None else [np.asarray(v, bool) for v in valid]
    ident = EuclideanTransform.identity(shape)
    # a-priori maps from frame 0 coordinates into frame k coordinates
    prior = [ident]
    for k in range(n - 1):
        step = init[k] if init is not None else ident
        prior.append(step @ prior[-1])
    # items: (image, valid, duration, member indices, first member index)
    items = [(imgs[k], ok[k], durs[k], [k]) for k in range(n)]
    to_item = [ident] * n  # member coords -> coords of the first member of its item
    report = []
    level = 0
    while len(items) > 1:
        nxt = []
        for i in range(0, len(items) - 1, 2):
            a, b = items[i], items[i + 1]
            ka, kb = a[3][0], b[3][0]
            guess = prior[kb] @ prior[ka].inverse()  # coords of a -> coords of b
            sa = smooth_valid(a[0], a[1], sigma)
            sb = smooth_valid(b[0], b[1], sigma)
            fallback = False
            refined = False
            try:
                rho0 = ecc_value(sa, sb, guess, a[1])
                res = ecc_align(sa, sb, guess, max_iter=max_iter, mask=a[1])
                rho1 = ecc_value(sa, sb, res.transform, a[1])
                if rho1 > rho0:
                    a_to_b, rho, refined = res.transform, rho1, True
                else:
                    a_to_b, rho = guess, rho0
            except AlignmentError:
                a_to_b, rho, fallback = guess, float("nan"), True
            wb = _sample(np.where(b[1], b[0], np.nan), a_to_b)
            good_b = np.isfinite(wb)
            wa = np.where(a[1], a[2], 0.0)
            wbw = np.where(good_b, b[2], 0.0)
            tot = wa + wbw
            merged = np.where(tot > 0, (wa * np.where(a[1], a[0], 0) + wbw * np.nan_to_num(wb)) / np.where(tot > 0, tot, 1), 0.0)
            b_to_a = a_to_b.inverse()
            for m in b[3]:
                to_item[m] = b_to_a @ to_item[m]
            report.append(MergeStep(level, ka, kb, a_to_b, rho, refined, fallback))
            nxt.append((merged, tot > 0, a[2] + b[2], a[3] + b[3]))
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
        level += 1
    return MergeResult(FluxImage(np.maximum(items[0][0], 0.0)), to_item, report)


@dataclass(frozen=True)
class DeblurConfig:
    """Knobs of the global-motion pipeline.

    ``registration`` selects what consecutive keyframes are aligned on: the photon
    images of consecutive virtual intervals (``"intervals"``, statistically
    independent) or the sampled changepoint-video frames (``"cpv"``).
    """

    penalty: float = 6.0
    method: str = "pelt"
    min_size: int = 2
    switch_fraction: float = 0.01
    ecc_sigma: float = 1.0
    ecc_max_iter: int = 60
    upsample: tuple = (1, 1)
    floor_bins: float = 0.5
    max_keyframes: int = 64
    registration: str = "intervals"

    def __post_init__(self):
        if self.registration not in ("intervals", "cpv"):
            raise ValueError(f"unknown registration source {self.registration!r}")
        if self.max_keyframes < 1:
            raise ValueError("max_keyframes must be >= 1")


@dataclass(frozen=True)
class DeblurResult:
    """Deblurred image in the coordinates of the first photon frame, plus diagnostics.

    ``trajectory`` holds the final per-frame maps (after merge refinement);
    ``initial_trajectory`` the interpolation of the pairwise keyframe estimates.
    """

    image: FluxImage
    keyframe_times: np.ndarray
    keyframe_transforms: list
    trajectory: MotionTrajectory
    initial_trajectory: MotionTrajectory
    merge: MergeResult
    interval_frames: list
    accumulation: Accumulation


def _thin(times: np.ndarray, max_keyframes: int) -> np.ndarray:
    if len(times) <= max_keyframes:
        return times
    idx = np.unique(np.round(np.linspace(0, len(times) - 1, max_keyframes)).astype(int))
    return times[idx]


def register_keyframes(images, valid=None, *, sigma: float = 1.0, max_iter: int = 60):
    """ECC transforms between consecutive images, each initialised from the previous pair.

    ``valid`` masks (e.g. zero-exposure pixels) are filled by normalized
    convolution; without masks the images are simply Gaussian-filtered.
    """
    out = []
    prev = None
    for k in range(len(images) - 1):
        va = None if valid is None else valid[k]
        if valid is None:
            a = ndimage.gaussian_filter(as_array(images[k]), sigma) if sigma > 0 else as_array(images[k])
            b = ndimage.gaussian_filter(as_array(images[k + 1]), sigma) if sigma > 0 else as_array(images[k + 1])
        else:
            a = smooth_valid(images[k], va, sigma)
            b = smooth_valid(images[k + 1], valid[k + 1], sigma)
        ident = EuclideanTransform.identity(a.shape)
        try:
            t = ecc_align(a, b, prev or ident, max_iter=max_iter, mask=va).transform
            # refinement that fits worse than no motion at all is discarded
            if ecc_value(a, b, t, va) < ecc_value(a, b, ident, va):
                t = ident
        except AlignmentError:
            t = prev or ident
        out.append(t)
        prev = t
    return out


def deblur_global(tensor: PhotonFrameTensor, config: DeblurConfig = DeblurConfig(),
                  changepoints: PixelChangepoints | None = None, cpv: ChangepointVideo | None = None) -> DeblurResult:
    """Adaptive global-motion deblurring of a photon-frame tensor."""
    if cpv is None:
        if changepoints is None:
            changepoints = detect_tensor(tensor, config.penalty, method=config.method, min_size=config.min_size,
                                         floor_bins=config.floor_bins)
        cpv = build_cpv(tensor, changepoints, config.floor_bins)
    samples = sample_cpv(cpv, config.switch_fraction)
    kt = _thin(samples.frame_times.astype(np.float64), config.max_keyframes)
    return deblur_intervals(tensor, kt, config, cpv=cpv)


def deblur_intervals(tensor: PhotonFrameTensor, starts, config: DeblurConfig = DeblurConfig(),
                     cpv: ChangepointVideo | None = None) -> DeblurResult:
    """Deblur given the start frames of consecutive intervals (the first must be 0).

    Each interval is assigned the pose at its midpoint; poses are interpolated
    linearly in between and extrapolated at both ends of the capture.
    """
    n = tensor.n_frames
    shape = (tensor.height, tensor.width)
    starts = np.asarray(starts, dtype=np.float64)
    if starts[0] != 0 or np.any(np.diff(starts) <= 0) or starts[-1] >= n:
        raise ValueError("interval starts must begin at 0 and increase strictly inside the capture")
    edges = np.append(starts, float(n)).astype(np.int64)
    mids = 0.5 * (edges[:-1] + edges[1:])
    ident = EuclideanTransform.identity(shape)
    if config.registration == "cpv" and cpv is not None:
        pair = register_keyframes(list(cpv.frames_at(mids)), None, sigma=config.ecc_sigma,
                                  max_iter=config.ecc_max_iter)
    else:
        raw, ok = [], []
        for s, e in zip(edges[:-1], edges[1:]):
            acc = warp_accumulate(tensor, np.broadcast_to(np.eye(3), (e - s, 3, 3)), (s, e))
            raw.append(acc.flux(config.floor_bins).values)
            ok.append(acc.valid)
        pair = register_keyframes(raw, ok, sigma=config.ecc_sigma, max_iter=config.ecc_max_iter)
    # poses at time 0 and at the end continue the neighbouring pair's rate
    if pair:
        head = pair[0].interpolate(mids[0] / (mids[1] - mids[0]))
        tail = pair[-1].interpolate((n - mids[-1]) / (mids[-1] - mids[-2]))
    else:
        head = tail = ident
    times = np.concatenate([[0.0], mids, [float(n)]])
    steps = [head] + pair + [tail]
    if mids[-1] >= n:
        times, steps = times[:-1], steps[:-1]
    traj = interpolate_trajectory(steps, times, n_frames=n)
    fx, fy = config.upsample
    # one motion-compensated image per interval, in the coordinates of its midpoint pose
    ivals, vals, durs = [], [], []
    for k, (s, e) in enumerate(zip(edges[:-1], edges[1:])):
        acc = warp_accumulate(tensor, traj.local(np.arange(s, e), k + 1), (s, e))
        ivals.append(acc.flux(config.floor_bins).values)
        vals.append(acc.valid)
        durs.append(e - s)
    merge = hierarchical_merge(ivals, durs, pair, sigma=config.ecc_sigma, max_iter=config.ecc_max_iter,
                               valid=vals)
    # final image: every photon frame re-accumulated once into time-0 coordinates
    back = head.inverse()
    mats = np.empty((n, 3, 3))
    for k, (s, e) in enumerate(zip(edges[:-1], edges[1:])):
        mats[s:e] = (back @ merge.to_first[k]).matrix @ traj.local(np.arange(s, e), k + 1)
    acc = warp_accumulate(tensor, mats, upsample=(fx, fy))
    img = acc.flux(config.floor_bins).values
    if (fx, fy) != (1, 1):
        img = img.reshape(shape[0], fy, shape[1], fx).mean(axis=(1, 3))
    refined = MotionTrajectory(mats, mids, np.array([np.linalg.inv((back @ t).matrix) for t in merge.to_first]),
                               traj.center)
    return DeblurResult(FluxImage(img), starts, pair, refined, traj, merge, ivals, acc)


def deblur_fixed_windows(tensor: PhotonFrameTensor, window_frames: int, *, sigma: float = 1.0,
                         max_iter: int = 60, floor_bins: float = 0.5) -> MergeResult:
    """Conventional burst baseline: fixed-window flux images, aligned and merged."""
    frames = fixed_window_baseline(tensor, window_frames, floor_bins)
    durs = [min(window_frames, tensor.n_frames - s) for s in range(0, tensor.n_frames, window_frames)]
    return hierarchical_merge(frames, durs, sigma=sigma, max_iter=max_iter)
