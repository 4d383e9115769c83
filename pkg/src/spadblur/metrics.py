"""Image and changepoint quality measures."""

from __future__ import annotations

import numpy as np

from .core import as_array

SNR_CAP_DB = 300.0


def snr(estimate, ground_truth, mask=None) -> float:
    """20 log10(rms(gt) / rms(gt - estimate)) in dB, capped at ``SNR_CAP_DB``."""
    est = as_array(estimate)
    gt = as_array(ground_truth)
    if est.shape != gt.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {gt.shape}")
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        est, gt = est[m], gt[m]
    sig = np.sqrt(np.mean(gt ** 2))
    if sig == 0:
        raise ValueError("ground truth is all zero")
    err = np.sqrt(np.mean((gt - est) ** 2))
    if err == 0:
        return SNR_CAP_DB
    return float(min(20 * np.log10(sig / err), SNR_CAP_DB))


def annotation_error(detected, true_interior_count: int) -> int:
    """|detected interior changepoints - true count|; accepts a ChangepointSet, an
    array of interior positions, or a count."""
    if hasattr(detected, "interior"):
        n = len(detected.interior)
    elif np.ndim(detected) == 0:
        n = int(detected)
    else:
        n = len(detected)
    return abs(n - int(true_interior_count))
