"""Bayesian online flux changepoint detection with a Gamma-exponential model.

Run length ``r`` counts the measurements of the current run, the newest one
included.  Under a Gamma(alpha, beta) prior on the rate, the predictive density of
the next duration given a run with ``n`` measurements summing to ``s`` is Lomax
with shape ``alpha + n`` and scale ``beta + s``.  Durations are expressed in
timing-bin units, so the default prior Lomax(1, 100) has a 100-bin scale.

Emission rule: while the modal run length is below the look-behind horizon ``W``
its start is kept as a candidate.  The first time the mode is >= W, points back
to within ``W`` measurements of the candidate start, and the posterior mass within
+-2 of the mode is at least ``threshold``, that start is reported as a changepoint.
A mode that jumps back to an older run drops the candidate.  The start of the
stream is never reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .changepoint import PixelChangepoints
from .core import PhotonFrameTensor, _interarrival_bins

MODE_BAND = 2


def lomax_predictive(y, shape, scale):
    """Lomax density ``shape * scale**shape / (y + scale)**(shape + 1)``."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0) or shape <= 0 or scale <= 0:
        raise ValueError("need y >= 0, shape > 0, scale > 0")
    return np.exp(np.log(shape) + shape * np.log(scale) - (shape + 1) * np.log(y + scale))


@dataclass
class OnlineDetectorState:
    """Run-length posterior and per-run sufficient statistics for one pixel."""

    prior_shape: float = 1.0
    prior_scale: float = 100.0
    hazard: float = 40.0
    lookbehind: int = 30
    threshold: float = 0.5
    max_run: int = 256
    probs: np.ndarray = field(default=None, repr=False)
    counts: np.ndarray = field(default=None, repr=False)
    sums: np.ndarray = field(default=None, repr=False)
    n_seen: int = 0
    candidate: int = 0
    emitted: list = field(default_factory=list)

    def __post_init__(self):
        if self.prior_shape <= 0 or self.prior_scale <= 0:
            raise ValueError("prior parameters must be positive")
        if self.hazard < 1:
            raise ValueError("expected run length must be >= 1")
        if not 1 <= self.lookbehind < self.max_run:
            raise ValueError("lookbehind must lie in [1, max_run)")
        if self.probs is None:
            self.probs = np.zeros(self.max_run + 1)
            self.probs[0] = 1.0
            self.counts = np.zeros(self.max_run + 1)
            self.sums = np.zeros(self.max_run + 1)

    def run_length_posterior(self) -> np.ndarray:
        return self.probs.copy()


@numba.njit(cache=True)
def _step(probs, counts, sums, x, a0, b0, h, max_run):
    # log predictive of x under every run length with nonzero mass
    n = max_run + 1
    logw = np.full(n, -np.inf)
    top = -np.inf
    reset = -np.inf
    log_prior_pred = np.log(a0) + a0 * np.log(b0) - (a0 + 1.0) * np.log(x + b0)
    for r in range(n):
        if probs[r] <= 0.0:
            continue
        a = a0 + counts[r]
        b = b0 + sums[r]
        lp = np.log(probs[r]) + np.log(a) + a * np.log(b) - (a + 1.0) * np.log(x + b)
        g = lp + np.log1p(-h)
        dst = r + 1 if r < max_run else max_run
        if logw[dst] == -np.inf:
            logw[dst] = g
        else:
            logw[dst] = np.logaddexp(logw[dst], g)
        c = np.log(probs[r]) + np.log(h) + log_prior_pred
        reset = c if reset == -np.inf else np.logaddexp(reset, c)
    logw[1] = reset if logw[1] == -np.inf else np.logaddexp(logw[1], reset)
    for r in range(n):
        if logw[r] > top:
            top = logw[r]
    # shift statistics: run r+1 inherits run r plus x; the last bin lumps longer runs
    for r in range(max_run, 1, -1):
        counts[r] = counts[r - 1] + 1.0
        sums[r] = sums[r - 1] + x
    counts[1] = 1.0
    sums[1] = x
    counts[0] = 0.0
    sums[0] = 0.0
    total = 0.0
    for r in range(n):
        v = np.exp(logw[r] - top) if logw[r] > -np.inf else 0.0
        probs[r] = v
        total += v
    mode = 0
    for r in range(n):
        probs[r] /= total
        if probs[r] > probs[mode]:
            mode = r
    lo = max(mode - MODE_BAND, 0)
    hi = min(mode + MODE_BAND, max_run)
    band = 0.0
    for r in range(lo, hi + 1):
        band += probs[r]
    return mode, band


@numba.njit(cache=True)
def _run(xs, probs, counts, sums, a0, b0, h, max_run, W, thr, n_seen, cand):
    out = np.empty(len(xs), dtype=np.int64)
    ne = 0
    for k in range(len(xs)):
        t = n_seen + k
        mode, band = _step(probs, counts, sums, xs[k], a0, b0, h, max_run)
        start = t - mode + 1
        if mode < W:
            cand = start
        elif cand >= 0:
            if abs(start - cand) > W:
                cand = -1
            elif band >= thr:
                cand = -1
                if start > 0:
                    out[ne] = start
                    ne += 1
    return out[:ne], cand


def detect_online(stream, state: OnlineDetectorState):
    """Feed measurements (bin units) into ``state``; returns (state, emitted run starts).

    Emitted values are measurement indices of the first measurement of a new run,
    reported with a latency of roughly ``lookbehind`` measurements.
    """
    xs = np.atleast_1d(np.asarray(stream, dtype=np.float64))
    if np.any(xs < 0):
        raise ValueError("durations must be nonnegative")
    em, state.candidate = _run(xs, state.probs, state.counts, state.sums, state.prior_shape, state.prior_scale,
                          1.0 / state.hazard, state.max_run, state.lookbehind, state.threshold,
                          state.n_seen, state.candidate)
    state.n_seen += len(xs)
    state.emitted.extend(int(e) for e in em)
    return state, em


@numba.njit(cache=True)
def _online_pixels(data, sentinel, a0, b0, h, max_run, W, thr, floor_bins):
    nf, hgt, wid = data.shape
    npix = hgt * wid
    frames = numba.typed.List()
    for p in range(npix):
        col = data[:, p // wid, p % wid]
        x, fidx, _ = _interarrival_bins(col, sentinel)
        for k in range(len(x)):
            if x[k] < floor_bins:
                x[k] = floor_bins
        probs = np.zeros(max_run + 1)
        probs[0] = 1.0
        counts = np.zeros(max_run + 1)
        sums = np.zeros(max_run + 1)
        em, _ = _run(x, probs, counts, sums, a0, b0, h, max_run, W, thr, 0, 0)
        f = np.empty(len(em), dtype=np.int64)
        for q in range(len(em)):
            f[q] = fidx[em[q] - 1] + 1
        frames.append(f)
    return frames


def online_emissions(tensor: PhotonFrameTensor, state: OnlineDetectorState | None = None,
                     floor_bins: float = 0.5) -> list[np.ndarray]:
    """Run the online detector on every pixel; returns per-pixel emitted frame indices.

    A run starting at measurement k is placed at the frame following detection k-1.
    """
    s = state or OnlineDetectorState()
    return list(_online_pixels(tensor.data, tensor.config.sentinel, s.prior_shape, s.prior_scale,
                               1.0 / s.hazard, s.max_run, s.lookbehind, s.threshold, floor_bins))


def densify_changepoints(emissions, height: int, width: int, radius: int) -> list[np.ndarray]:
    """Copy every pixel's emissions into its (2*radius+1)^2 neighbourhood (set union)."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if radius == 0:
        return [np.unique(np.asarray(e, dtype=np.int64)) for e in emissions]
    grid = [[np.asarray(emissions[r * width + c], dtype=np.int64) for c in range(width)] for r in range(height)]
    out = []
    for r in range(height):
        for c in range(width):
            parts = [grid[rr][cc]
                     for rr in range(max(r - radius, 0), min(r + radius + 1, height))
                     for cc in range(max(c - radius, 0), min(c + radius + 1, width))]
            out.append(np.unique(np.concatenate(parts)))
    return out


def emissions_to_changepoints(emissions, height: int, width: int, n_frames: int,
                              min_gap: int = 1, state: OnlineDetectorState | None = None) -> PixelChangepoints:
    """Per-pixel frame boundaries from emitted frame indices.

    Emissions closer than ``min_gap`` frames to the previous kept boundary are dropped.
    """
    bounds = []
    for e in emissions:
        kept = [0]
        for f in np.sort(np.asarray(e, dtype=np.int64)):
            if f - kept[-1] >= min_gap and n_frames - f >= min_gap and 0 < f < n_frames:
                kept.append(int(f))
        kept.append(n_frames)
        bounds.append(kept)
    lam = np.nan if state is None else state.threshold
    return PixelChangepoints.from_lists(height, width, n_frames, bounds, penalty=lam, method="online")
