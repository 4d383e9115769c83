"""Planar Euclidean transforms and piecewise-linear motion trajectories.

Points are ``(x, y) = (col, row)`` in pixel-centre coordinates.  A transform
rotates by ``theta`` about ``(rx, ry)`` and then translates by ``(tx, ty)``, so
the rotation centre is a fixed point when the translation is zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EuclideanTransform:
    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    rx: float = 0.0
    ry: float = 0.0

    @classmethod
    def about_center(cls, theta=0.0, tx=0.0, ty=0.0, shape=None):
        h, w = shape
        return cls(theta, tx, ty, (w - 1) / 2.0, (h - 1) / 2.0)

    @classmethod
    def identity(cls, shape=None):
        return cls() if shape is None else cls.about_center(shape=shape)

    @property
    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.theta), np.sin(self.theta)
        rx, ry = self.rx, self.ry
        return np.array([
            [c, s, rx * (1 - c) - ry * s + self.tx],
            [-s, c, ry * (1 - c) + rx * s + self.ty],
            [0.0, 0.0, 1.0],
        ])

    @classmethod
    def from_matrix(cls, m, rx=0.0, ry=0.0):
        m = np.asarray(m, dtype=np.float64)
        theta = np.arctan2(m[0, 1], m[0, 0])
        c, s = np.cos(theta), np.sin(theta)
        tx = m[0, 2] - (rx * (1 - c) - ry * s)
        ty = m[1, 2] - (ry * (1 - c) + rx * s)
        return cls(float(theta), float(tx), float(ty), rx, ry)

    def recentered(self, rx, ry) -> "EuclideanTransform":
        return EuclideanTransform.from_matrix(self.matrix, rx, ry)

    def inverse(self) -> "EuclideanTransform":
        return EuclideanTransform.from_matrix(np.linalg.inv(self.matrix), self.rx, self.ry)

    def __matmul__(self, other: "EuclideanTransform") -> "EuclideanTransform":
        """``a @ b`` applies ``b`` first, then ``a``."""
        return EuclideanTransform.from_matrix(self.matrix @ other.matrix, self.rx, self.ry)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        m = self.matrix
        return p @ m[:2, :2].T + m[:2, 2]

    def scaled(self, factor: float) -> "EuclideanTransform":
        """Same motion expressed on a grid resampled by ``factor`` (pixel centres aligned)."""
        off = (factor - 1) / 2.0
        return EuclideanTransform(self.theta, self.tx * factor, self.ty * factor,
                                  self.rx * factor + off, self.ry * factor + off)

    def params(self) -> np.ndarray:
        return np.array([self.theta, self.tx, self.ty])

    def interpolate(self, alpha: float) -> "EuclideanTransform":
        """Componentwise linear interpolation from the identity (alpha=0) to self (alpha=1)."""
        return EuclideanTransform(alpha * self.theta, alpha * self.tx, alpha * self.ty, self.rx, self.ry)


@dataclass(frozen=True)
class MotionTrajectory:
    """Per-frame maps from photon-frame coordinates to the reference (first keyframe).

    ``to_reference[f]`` is the 3x3 matrix of frame ``f``; ``keyframe_from_reference[k]``
    maps reference coordinates into keyframe ``k``.
    """

    to_reference: np.ndarray
    keyframe_times: np.ndarray
    keyframe_from_reference: np.ndarray
    center: tuple[float, float]

    @property
    def n_frames(self) -> int:
        return len(self.to_reference)

    def transform(self, f: int) -> EuclideanTransform:
        """Reference -> frame ``f`` as a transform about the trajectory centre."""
        return EuclideanTransform.from_matrix(np.linalg.inv(self.to_reference[f]), *self.center)

    def params(self) -> np.ndarray:
        """(theta, tx, ty) of reference -> frame for every frame, shape (n, 3)."""
        return np.array([self.transform(f).params() for f in range(self.n_frames)])

    def local(self, frames, k: int) -> np.ndarray:
        """Matrices mapping the given frames into keyframe ``k`` coordinates."""
        return self.keyframe_from_reference[k] @ self.to_reference[np.asarray(frames)]


def interpolate_trajectory(keyframe_transforms, keyframe_times, frame_times=None, n_frames=None) -> MotionTrajectory:
    """Chain pairwise keyframe transforms into per-frame reference maps.

    ``keyframe_transforms[k]`` maps keyframe k coordinates to keyframe k+1.  For a
    frame at time t in [t_k, t_{k+1}] the motion since keyframe k is the linear
    interpolation of transform k at ``(t - t_k) / (t_{k+1} - t_k)``.  Times outside
    the keyframe span are clamped.  By default frame f sits at time ``f + 0.5``
    (frame centres, keyframe times in frame units).
    """
    kt = np.asarray(keyframe_times, dtype=np.float64)
    if len(kt) != len(keyframe_transforms) + 1:
        raise ValueError("need one more keyframe time than keyframe transforms")
    if np.any(np.diff(kt) <= 0):
        raise ValueError("keyframe times must be strictly increasing")
    if frame_times is None:
        frame_times = np.arange(n_frames) + 0.5
    ft = np.clip(np.asarray(frame_times, dtype=np.float64), kt[0], kt[-1])
    if keyframe_transforms:
        center = (keyframe_transforms[0].rx, keyframe_transforms[0].ry)
    else:
        center = (0.0, 0.0)
    cum = [np.eye(3)]
    for a in keyframe_transforms:
        cum.append(a.matrix @ cum[-1])
    cum = np.array(cum)
    out = np.empty((len(ft), 3, 3))
    if not keyframe_transforms:
        out[:] = np.eye(3)
    else:
        k = np.clip(np.searchsorted(kt, ft, side="right") - 1, 0, len(keyframe_transforms) - 1)
        alpha = (ft - kt[k]) / (kt[k + 1] - kt[k])
        for i in range(len(ft)):
            step = keyframe_transforms[k[i]].interpolate(alpha[i]).matrix
            out[i] = np.linalg.inv(step @ cum[k[i]])
    return MotionTrajectory(out, kt, cum, center)


def identity_trajectory(n_frames: int, shape) -> MotionTrajectory:
    h, w = shape
    return MotionTrajectory(np.broadcast_to(np.eye(3), (n_frames, 3, 3)).copy(), np.array([0.0, float(n_frames)]),
                            np.array([np.eye(3), np.eye(3)]), ((w - 1) / 2.0, (h - 1) / 2.0))
