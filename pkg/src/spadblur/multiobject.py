"""Multiple moving objects: cluster changepoint events, deblur each object, stitch."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .changepoint import PixelChangepoints
from .core import FluxImage, PhotonFrameTensor, flux_image
from .cpv import build_cpv
from .deblur import DeblurConfig, DeblurResult, deblur_global

NOISE = -1


@dataclass(frozen=True)
class ChangepointEvent:
    row: int
    col: int
    frame_index: int
    time: float


def events_from_changepoints(cps: PixelChangepoints, frame_period: float | None = None) -> list[ChangepointEvent]:
    ev = cps.events()
    fp = 0.0 if frame_period is None else frame_period
    return [ChangepointEvent(int(r), int(c), int(f), f * fp) for r, c, f in ev]


def _points(events, time_scale: float) -> np.ndarray:
    if len(events) and isinstance(events[0], ChangepointEvent):
        ev = np.array([(e.row, e.col, e.frame_index) for e in events], dtype=np.float64)
    else:
        ev = np.asarray(events, dtype=np.float64).reshape(-1, 3)
    return np.column_stack([ev[:, 0], ev[:, 1], ev[:, 2] * time_scale])


def cluster_dbscan(events, eps: float = 7.5, min_pts: int = 40, time_scale: float = 0.02) -> np.ndarray:
    """DBSCAN labels (``NOISE`` = -1) over points (row, col, time_scale * frame).

    A point is core when at least ``min_pts`` points (itself included) lie within
    ``eps``.  Clusters are grown in input order, so a border point reachable from
    several clusters joins the lowest label.  ``time_scale=inf`` is not accepted
    here; see :func:`cluster_per_interval` for the purely spatial mode.
    """
    if eps <= 0 or min_pts < 1:
        raise ValueError("need eps > 0 and min_pts >= 1")
    if not np.isfinite(time_scale) or time_scale < 0:
        raise ValueError("time_scale must be finite and nonnegative")
    pts = _points(events, time_scale)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    tree = cKDTree(pts)
    nbrs = tree.query_ball_point(pts, eps, return_sorted=True)
    core = np.fromiter((len(x) >= min_pts for x in nbrs), dtype=bool, count=n)
    label = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = label
        queue = deque([i])
        while queue:
            j = queue.popleft()
            if not core[j]:
                continue
            for k in nbrs[j]:
                if labels[k] == NOISE:
                    labels[k] = label
                    if core[k]:
                        queue.append(k)
        label += 1
    return labels


def cluster_per_interval(events, interval_edges, eps: float = 7.5, min_pts: int = 40) -> np.ndarray:
    """Purely spatial DBSCAN inside each interval, linked across intervals by bbox overlap."""
    ev = np.asarray(events, dtype=np.int64).reshape(-1, 3)
    edges = np.asarray(interval_edges)
    slot = np.searchsorted(edges, ev[:, 2], side="right") - 1
    raw = np.full(len(ev), NOISE, dtype=np.int64)
    boxes = []
    nxt = 0
    for s in np.unique(slot):
        idx = np.flatnonzero(slot == s)
        lab = cluster_dbscan(np.column_stack([ev[idx, 0], ev[idx, 1], np.zeros(len(idx))]), eps, min_pts, 0.0)
        for l in range(lab.max() + 1):
            members = idx[lab == l]
            raw[members] = nxt
            boxes.append((s, ev[members, 0].min(), ev[members, 1].min(), ev[members, 0].max(), ev[members, 1].max()))
            nxt += 1
    parent = list(range(nxt))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(nxt):
        for b in range(a + 1, nxt):
            sa, ra0, ca0, ra1, ca1 = boxes[a]
            sb, rb0, cb0, rb1, cb1 = boxes[b]
            if abs(sa - sb) <= 1 and ra0 <= rb1 and rb0 <= ra1 and ca0 <= cb1 and cb0 <= ca1:
                pa, pb = find(a), find(b)
                parent[max(pa, pb)] = min(pa, pb)
    roots = sorted({find(a) for a in range(nxt)})
    remap = {r: i for i, r in enumerate(roots)}
    return np.array([remap[find(l)] if l != NOISE else NOISE for l in raw], dtype=np.int64)


@dataclass(frozen=True)
class ObjectCluster:
    label: int
    events: np.ndarray
    bbox: tuple

    @classmethod
    def from_labels(cls, events, labels) -> list["ObjectCluster"]:
        ev = np.asarray(events, dtype=np.int64).reshape(-1, 3)
        out = []
        for l in range(int(labels.max(initial=NOISE)) + 1):
            m = ev[labels == l]
            if len(m):
                out.append(cls(l, m, (int(m[:, 0].min()), int(m[:, 1].min()), int(m[:, 0].max()), int(m[:, 1].max()))))
        return out


@dataclass
class MultiObjectResult:
    image: FluxImage
    background: FluxImage
    clusters: list
    object_results: dict = field(default_factory=dict)
    paste_boxes: dict = field(default_factory=dict)
    tubes: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)


def _dominant_level(tensor: PhotonFrameTensor, cps: PixelChangepoints, floor_bins: float) -> np.ndarray:
    """Per-pixel flux of the longest segment (the static backdrop for pixels an object crossed)."""
    cpv = build_cpv(tensor, cps, floor_bins)
    out = np.empty((cps.height, cps.width))
    for p in range(cps.height * cps.width):
        b = cps.frame_bounds[cps.offsets[p]:cps.offsets[p + 1]]
        k = int(np.argmax(np.diff(b)))
        out.flat[p] = cpv.levels[cps.offsets[p] - p + k]
    return out


def segment_and_deblur(tensor: PhotonFrameTensor, changepoints: PixelChangepoints, labels=None, *,
                       eps: float = 7.5, min_pts: int = 40, time_scale: float = 0.02,
                       config: DeblurConfig = DeblurConfig(), min_box: int = 8,
                       paste_margin: int = 2) -> MultiObjectResult:
    """Deblur each clustered object inside its dilated tube and paste it over the background.

    Pixels outside every tube keep the full-exposure estimate.  Inside a tube,
    pixels outside the object's reference-pose box take the flux of their longest
    segment, which is the static backdrop the object moved across.
    """
    events = changepoints.events()
    if labels is None:
        labels = cluster_dbscan(events, eps, min_pts, time_scale)
    clusters = ObjectCluster.from_labels(events, np.asarray(labels))
    long_exp = flux_image(tensor, floor_bins=config.floor_bins).values
    out = long_exp.copy()
    res = MultiObjectResult(FluxImage(long_exp.copy()), FluxImage(long_exp.copy()), clusters)
    if not clusters:
        return res
    backdrop = _dominant_level(tensor, changepoints, config.floor_bins)
    h, w = long_exp.shape
    d = int(np.ceil(eps))
    for cl in clusters:
        r0, c0, r1, c1 = cl.bbox
        r0, c0 = max(r0 - d, 0), max(c0 - d, 0)
        r1, c1 = min(r1 + d + 1, h), min(c1 + d + 1, w)
        if r1 - r0 < min_box or c1 - c0 < min_box:
            res.flags[cl.label] = "too small to align; treated as background"
            continue
        sub = PhotonFrameTensor(np.ascontiguousarray(tensor.data[:, r0:r1, c0:c1]), tensor.config)
        try:
            dr: DeblurResult = deblur_global(sub, config, changepoints=changepoints.crop(r0, r1, c0, c1))
        except (ValueError, ArithmeticError) as exc:
            res.flags[cl.label] = f"deblur failed ({exc}); treated as background"
            continue
        # object footprint at the reference pose: member events mapped back to time 0
        loc = cl.events - np.array([r0, c0, 0])
        m = dr.trajectory.to_reference[np.clip(loc[:, 2], 0, sub.n_frames - 1)]
        xr = m[:, 0, 0] * loc[:, 1] + m[:, 0, 1] * loc[:, 0] + m[:, 0, 2]
        yr = m[:, 1, 0] * loc[:, 1] + m[:, 1, 1] * loc[:, 0] + m[:, 1, 2]
        pr0 = int(np.clip(np.floor(np.percentile(yr, 1)) - paste_margin, 0, r1 - r0))
        pr1 = int(np.clip(np.ceil(np.percentile(yr, 99)) + paste_margin + 1, 0, r1 - r0))
        pc0 = int(np.clip(np.floor(np.percentile(xr, 1)) - paste_margin, 0, c1 - c0))
        pc1 = int(np.clip(np.ceil(np.percentile(xr, 99)) + paste_margin + 1, 0, c1 - c0))
        out[r0:r1, c0:c1] = backdrop[r0:r1, c0:c1]
        res.object_results[cl.label] = dr
        res.paste_boxes[cl.label] = (r0 + pr0, c0 + pc0, r0 + pr1, c0 + pc1)
        res.tubes[cl.label] = (r0, c0, r1, c1)
    # paste in ascending label order after all tubes hold their backdrop
    for label in sorted(res.paste_boxes):
        a0, b0, a1, b1 = res.paste_boxes[label]
        t0, u0 = res.tubes[label][:2]
        out[a0:a1, b0:b1] = res.object_results[label].image.values[a0 - t0:a1 - t0, b0 - u0:b1 - u0]
    res.image = FluxImage(out)
    return res
