"""Penalized-likelihood flux changepoint detection.

Segmentations are described by half-open boundaries ``0 = b_0 < b_1 < ... < b_K = N``;
segment ``k`` holds measurements ``[b_k, b_{k+1})``.  The objective minimized is

    sum_k cost(b_k, b_{k+1}) + lam * (K + 1)

where ``K + 1`` counts every boundary, endpoints included.  Two segment costs are
provided: the exponential negative log-likelihood of inter-arrival durations
(timestamp data) and the Bernoulli one for binary frames.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numba
import numpy as np

from .core import InterArrivalSeries, PhotonFrameTensor, QisFrameTensor, _interarrival_bins

EXPONENTIAL = 0
BERNOULLI = 1

# Pruning slack; keeps candidates whose bound ties the optimum up to rounding.
_PRUNE_RTOL = 1e-10


@dataclass(frozen=True)
class ChangepointSet:
    """Boundaries of an optimal segmentation and the penalty that produced it."""

    indices: np.ndarray
    penalty_used: float

    @property
    def interior(self) -> np.ndarray:
        return self.indices[1:-1]

    @property
    def n_segments(self) -> int:
        return len(self.indices) - 1


# ---------------------------------------------------------------- costs

def _segment_bounds(n: int, i: int, j: int):
    if not 0 <= i < j <= n:
        raise IndexError(f"segment [{i}, {j}) outside series of length {n}")


def segment_cost(series, i: int, j: int) -> float:
    """Exponential segment cost ``-m ln(m / sum x)`` over measurements ``[i, j)``.

    ``series`` is an InterArrivalSeries or a plain array of durations.
    """
    x = np.asarray(getattr(series, "measurements", series), dtype=np.float64)
    _segment_bounds(len(x), i, j)
    m = j - i
    total = x[i:j].sum()
    if total <= 0:
        raise ValueError("segment has zero total duration")
    return -m * np.log(m / total)


def segment_cost_qis(counts, i: int, j: int) -> float:
    """Bernoulli segment cost, i.e. m times the binary entropy of p_hat (nats)."""
    n = np.asarray(counts)
    _segment_bounds(len(n), i, j)
    m = j - i
    k = int(n[i:j].sum())
    cost = 0.0
    if 0 < k < m:
        p = k / m
        cost = -k * np.log(p) - (m - k) * np.log1p(-p)
    return cost


@numba.njit(cache=True, inline="always")
def _cost(cs, i, j, kind):
    m = j - i
    s = cs[j] - cs[i]
    if kind == EXPONENTIAL:
        return m * (np.log(s) - np.log(m))
    if s <= 0.0 or s >= m:
        return 0.0
    p = s / m
    return -s * np.log(p) - (m - s) * np.log1p(-p)


def _cumsum(x):
    cs = np.zeros(len(x) + 1)
    np.cumsum(x, out=cs[1:])
    return cs


def penalized_cost(x, indices, lam: float, kind: int = EXPONENTIAL) -> float:
    """Objective value of a segmentation (sum of segment costs + lam * boundaries)."""
    cs = _cumsum(np.asarray(x, dtype=np.float64))
    b = np.asarray(indices)
    return float(sum(_cost(cs, b[k], b[k + 1], kind) for k in range(len(b) - 1)) + lam * len(b))


# ---------------------------------------------------------------- PELT

@numba.njit(cache=True)
def _pelt(cs, lam, min_size, kind):
    n = len(cs) - 1
    F = np.full(n + 1, np.inf)
    nseg = np.zeros(n + 1, dtype=np.int64)
    last = np.zeros(n + 1, dtype=np.int64)
    usable_until = np.full(n + 1, n + 1, dtype=np.int64)
    F[0] = 0.0
    cand = np.empty(n + 1, dtype=np.int64)
    ncand = 0
    for t in range(min_size, n + 1):
        s_new = t - min_size
        if np.isfinite(F[s_new]):
            cand[ncand] = s_new
            ncand += 1
        best = np.inf
        best_k = 1 << 62
        best_s = -1
        for q in range(ncand):
            s = cand[q]
            if t - s < min_size or t > usable_until[s]:
                continue
            v = F[s] + _cost(cs, s, t, kind) + lam
            k = nseg[s] + 1
            if v < best or (v == best and (k < best_k or (k == best_k and s < best_s))):
                best = v
                best_k = k
                best_s = s
        F[t] = best
        nseg[t] = best_k
        last[t] = best_s
        if not np.isfinite(best):
            continue
        slack = _PRUNE_RTOL * (1.0 + abs(best))
        keep = 0
        for q in range(ncand):
            s = cand[q]
            if t > usable_until[s]:
                continue
            if usable_until[s] > n and F[s] + _cost(cs, s, t, kind) > best + slack:
                usable_until[s] = t + min_size - 1
            cand[keep] = s
            keep += 1
        ncand = keep
    # backtrack
    out = np.empty(nseg[n] + 1, dtype=np.int64)
    t = n
    pos = nseg[n]
    out[pos] = n
    while t > 0:
        t = last[t]
        pos -= 1
        out[pos] = t
    return out, F[n] + lam


def _prepare(series, kind):
    x = np.asarray(getattr(series, "measurements", series), dtype=np.float64)
    if kind == EXPONENTIAL and np.any(x <= 0):
        raise ValueError("exponential cost needs strictly positive durations; floor zero-length measurements first")
    return x


def detect_pelt(series, lam: float, min_size: int = 1, kind: int = EXPONENTIAL) -> ChangepointSet:
    """Exact penalized segmentation by pruned dynamic programming."""
    x = _prepare(series, kind)
    if len(x) < 2:
        raise ValueError("PELT needs at least 2 measurements")
    if lam < 0:
        raise ValueError("penalty must be nonnegative")
    if len(x) < min_size:
        return ChangepointSet(np.array([0, len(x)]), lam)
    b, _ = _pelt(_cumsum(x), float(lam), int(min_size), kind)
    return ChangepointSet(b, lam)


# ---------------------------------------------------------------- exhaustive oracle

@numba.njit(cache=True)
def _exhaustive(cs, lam, min_size, kind):
    n = len(cs) - 1
    n_inner = n - 1
    best = np.inf
    best_k = 1 << 62
    best_mask = 0
    buf = np.empty(n + 1, dtype=np.int64)
    for mask in range(1 << n_inner):
        nb = 0
        buf[nb] = 0
        nb += 1
        for p in range(n_inner):
            if mask >> p & 1:
                buf[nb] = p + 1
                nb += 1
        buf[nb] = n
        nb += 1
        ok = True
        total = lam * nb
        for q in range(nb - 1):
            if buf[q + 1] - buf[q] < min_size:
                ok = False
                break
            total += _cost(cs, buf[q], buf[q + 1], kind)
        if not ok:
            continue
        k = nb
        if total < best or (total == best and (k < best_k or (k == best_k and _earlier(mask, best_mask, n_inner)))):
            best = total
            best_k = k
            best_mask = mask
    nb = 0
    buf[nb] = 0
    nb += 1
    for p in range(n_inner):
        if best_mask >> p & 1:
            buf[nb] = p + 1
            nb += 1
    buf[nb] = n
    nb += 1
    return buf[:nb].copy(), best


@numba.njit(cache=True)
def _earlier(a, b, n_bits):
    # lexicographic comparison of the boundary lists of two masks with equal popcount
    for p in range(n_bits):
        ba = a >> p & 1
        bb = b >> p & 1
        if ba != bb:
            return ba == 1
    return False


def detect_exhaustive(series, lam: float, min_size: int = 1, kind: int = EXPONENTIAL,
                      max_len: int = 32) -> ChangepointSet:
    """Global minimizer by enumerating every subset of interior boundaries."""
    x = _prepare(series, kind)
    if len(x) > max_len:
        raise ValueError(f"exhaustive search limited to {max_len} measurements, got {len(x)}")
    if len(x) < 1:
        raise ValueError("empty series")
    b, _ = _exhaustive(_cumsum(x), float(lam), int(min_size), kind)
    return ChangepointSet(b, lam)


# ---------------------------------------------------------------- BottomUp

@numba.njit(cache=True)
def _bottomup(cs, lam, jump, kind):
    n = len(cs) - 1
    pos = list(range(0, n, jump))
    if pos[-1] != n:
        if n - pos[-1] < jump and len(pos) > 1:
            pos[-1] = n
        else:
            pos.append(n)
    nb = len(pos)
    b = np.array(pos, dtype=np.int64)
    prev = np.arange(-1, nb - 1)
    nxt = np.arange(1, nb + 1)
    alive = np.ones(nb, dtype=np.bool_)
    version = np.zeros(nb, dtype=np.int64)
    heap = [(0.0, 0, 0, 0)]
    heap.pop()
    for q in range(1, nb - 1):
        g = _cost(cs, b[q - 1], b[q + 1], kind) - _cost(cs, b[q - 1], b[q], kind) - _cost(cs, b[q], b[q + 1], kind)
        heap.append((g, b[q], q, 0))
    heapq.heapify(heap)
    while len(heap) > 0:
        g, _, q, ver = heapq.heappop(heap)
        if not alive[q] or ver != version[q]:
            continue
        if g > lam:
            break
        alive[q] = False
        a = prev[q]
        c = nxt[q]
        nxt[a] = c
        prev[c] = a
        for r in (a, c):
            if r == 0 or r == nb - 1:
                continue
            version[r] += 1
            lo = b[prev[r]]
            hi = b[nxt[r]]
            gr = _cost(cs, lo, hi, kind) - _cost(cs, lo, b[r], kind) - _cost(cs, b[r], hi, kind)
            heapq.heappush(heap, (gr, b[r], r, version[r]))
    return b[alive]


def detect_bottomup(series, lam: float, jump: int = 2, kind: int = EXPONENTIAL) -> ChangepointSet:
    """Greedy approximate segmentation merging an initial grid of boundaries.

    Starts with a boundary every ``jump`` measurements and repeatedly removes the
    boundary whose removal raises the data cost least, while that rise is at most
    ``lam``.
    """
    x = _prepare(series, kind)
    if len(x) < 2:
        raise ValueError("BottomUp needs at least 2 measurements")
    if lam < 0:
        raise ValueError("penalty must be nonnegative")
    if jump < 1:
        raise ValueError("jump must be >= 1")
    return ChangepointSet(_bottomup(_cumsum(x), float(lam), int(jump), kind), lam)


# ---------------------------------------------------------------- per-pixel batch

@dataclass(frozen=True)
class PixelChangepoints:
    """Ragged per-pixel segmentations of a frame tensor.

    For pixel ``p = row * width + col`` the frame boundaries are
    ``frame_bounds[offsets[p]:offsets[p + 1]]``: segment k covers photon frames
    ``[F_k, F_{k+1})``, starting at 0 and ending at ``n_frames``.  The matching
    measurement boundaries are stored in ``measure_bounds`` with the same layout.
    """

    height: int
    width: int
    n_frames: int
    offsets: np.ndarray
    frame_bounds: np.ndarray
    measure_bounds: np.ndarray
    penalty_used: float
    method: str

    def pixel(self, row: int, col: int) -> np.ndarray:
        p = row * self.width + col
        return self.frame_bounds[self.offsets[p]:self.offsets[p + 1]]

    def n_changepoints(self) -> np.ndarray:
        """Interior changepoints per pixel, shape (height, width)."""
        return (np.diff(self.offsets) - 2).reshape(self.height, self.width)

    def events(self):
        """Interior changepoints as an (n, 3) int array of (row, col, frame_index)."""
        counts = np.diff(self.offsets) - 2
        pix = np.repeat(np.arange(self.height * self.width), counts)
        inner = np.ones(len(self.frame_bounds), dtype=bool)
        inner[self.offsets[:-1]] = False
        inner[self.offsets[1:] - 1] = False
        frames = self.frame_bounds[inner]
        return np.column_stack([pix // self.width, pix % self.width, frames])

    def crop(self, r0: int, r1: int, c0: int, c1: int) -> "PixelChangepoints":
        """Segmentations of the pixel window rows [r0, r1) x cols [c0, c1)."""
        fb, mb = [], []
        for r in range(r0, r1):
            for c in range(c0, c1):
                p = r * self.width + c
                fb.append(self.frame_bounds[self.offsets[p]:self.offsets[p + 1]])
                mb.append(self.measure_bounds[self.offsets[p]:self.offsets[p + 1]])
        return PixelChangepoints.from_lists(r1 - r0, c1 - c0, self.n_frames, fb, self.penalty_used, self.method, mb)

    @classmethod
    def from_lists(cls, height, width, n_frames, frame_bounds_per_pixel, penalty=np.nan, method="given",
                   measure_bounds_per_pixel=None):
        lens = [len(b) for b in frame_bounds_per_pixel]
        offsets = np.zeros(len(lens) + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        fb = np.concatenate([np.asarray(b, dtype=np.int64) for b in frame_bounds_per_pixel])
        if measure_bounds_per_pixel is None:
            mb = np.full_like(fb, -1)
        else:
            mb = np.concatenate([np.asarray(b, dtype=np.int64) for b in measure_bounds_per_pixel])
        return cls(height, width, n_frames, offsets, fb, mb, penalty, method)


_METHODS = {"pelt": 0, "bottomup": 1}


@numba.njit(cache=True)
def _detect_pixels(data, sentinel, lam, method, min_size, jump, floor_bins, qis):
    nf, h, w = data.shape
    npix = h * w
    # measurement counts bound the number of boundaries per pixel
    cap = np.empty(npix + 1, dtype=np.int64)
    cap[0] = 0
    for p in range(npix):
        r = p // w
        c = p % w
        m = 0
        if qis:
            m = nf
        else:
            for f in range(nf):
                if data[f, r, c] != sentinel:
                    m += 1
        cap[p + 1] = cap[p] + m + 2
    fb = np.empty(cap[npix], dtype=np.int64)
    mb = np.empty(cap[npix], dtype=np.int64)
    counts = np.empty(npix, dtype=np.int64)
    for p in range(npix):
        r = p // w
        c = p % w
        col = data[:, r, c]
        if qis:
            x = np.empty(nf)
            for f in range(nf):
                x[f] = 1.0 if col[f] != sentinel else 0.0
            fidx = np.arange(nf)
            kind = BERNOULLI
        else:
            x, fidx, _ = _interarrival_bins(col, sentinel)
            for k in range(len(x)):
                if x[k] < floor_bins:
                    x[k] = floor_bins
            kind = EXPONENTIAL
        m = len(x)
        o = cap[p]
        if m < 2 or m < 2 * min_size:
            bounds = np.array([0, m], dtype=np.int64)
        else:
            cs = np.zeros(m + 1)
            for k in range(m):
                cs[k + 1] = cs[k] + x[k]
            if method == 0:
                bounds, _ = _pelt(cs, lam, min_size, kind)
            else:
                bounds = _bottomup(cs, lam, jump, kind)
        nbd = len(bounds)
        for q in range(nbd):
            mb[o + q] = bounds[q]
            if q == 0:
                fb[o + q] = 0
            elif q == nbd - 1:
                fb[o + q] = nf
            else:
                fb[o + q] = fidx[bounds[q] - 1] + 1
        counts[p] = nbd
    offsets = np.zeros(npix + 1, dtype=np.int64)
    for p in range(npix):
        offsets[p + 1] = offsets[p] + counts[p]
    out_f = np.empty(offsets[npix], dtype=np.int64)
    out_m = np.empty(offsets[npix], dtype=np.int64)
    for p in range(npix):
        for q in range(counts[p]):
            out_f[offsets[p] + q] = fb[cap[p] + q]
            out_m[offsets[p] + q] = mb[cap[p] + q]
    return offsets, out_f, out_m


def detect_tensor(tensor, lam: float, method: str = "pelt", min_size: int = 2, jump: int = 2,
                  floor_bins: float = 0.5) -> PixelChangepoints:
    """Run an offline detector on every pixel of a photon-frame tensor.

    Timestamp tensors are segmented on inter-arrival durations (in bin units,
    zero-length measurements floored at ``floor_bins``); QIS tensors use the
    Bernoulli cost on the raw binary frames.
    """
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {sorted(_METHODS)}")
    if isinstance(tensor, QisFrameTensor):
        data, sentinel, qis = (1 - tensor.data).astype(np.int64), 1, True
    elif isinstance(tensor, PhotonFrameTensor):
        data, sentinel, qis = tensor.data, tensor.config.sentinel, False
    else:
        raise TypeError("expected PhotonFrameTensor or QisFrameTensor")
    if method == "bottomup":
        min_size = 1
    offsets, fb, mb = _detect_pixels(data, sentinel, float(lam), _METHODS[method], int(min_size), int(jump),
                                     float(floor_bins), qis)
    return PixelChangepoints(tensor.height, tensor.width, tensor.n_frames, offsets, fb, mb, float(lam), method)


def frame_bounds_from_measurements(series: InterArrivalSeries, cps: ChangepointSet) -> np.ndarray:
    """Frame boundaries of a single pixel's segmentation."""
    b = np.asarray(cps.indices)
    out = np.empty(len(b), dtype=np.int64)
    out[0] = 0
    out[-1] = series.n_frames
    out[1:-1] = series.frame_index_of[b[1:-1] - 1] + 1
    return out


# ---------------------------------------------------------------- fixed-window baseline

def detect_fixed_window(detected, window: int = 50, z: float = 1.96) -> np.ndarray:
    """Frame-rate baseline on a binary detection stream.

    Detections are counted in non-overlapping windows of ``window`` frames; a
    change is flagged between consecutive windows whose Agresti-Coull intervals
    at level ``z`` do not overlap.  Runs of consecutive flags with the same sign
    are one change, located at the start of the first flagged window.  Returns
    the interior change positions in frames.
    """
    d = np.asarray(detected, dtype=np.float64)
    if window < 1:
        raise ValueError("window must be >= 1")
    n_win = len(d) // window
    if n_win < 2:
        return np.empty(0, dtype=np.int64)
    k = d[:n_win * window].reshape(n_win, window).sum(axis=1)
    nt = window + z * z
    pt = (k + z * z / 2) / nt
    half = z * np.sqrt(pt * (1 - pt) / nt)
    lo, hi = pt - half, pt + half
    sign = np.where(lo[1:] > hi[:-1], 1, np.where(hi[1:] < lo[:-1], -1, 0))
    out = []
    prev = 0
    for i, s in enumerate(sign):
        if s != 0 and s != prev:
            out.append((i + 1) * window)
        prev = s
    return np.array(out, dtype=np.int64)
