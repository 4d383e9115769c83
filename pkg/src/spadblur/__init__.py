"""Adaptive-exposure motion deblurring for single-photon (SPAD/QIS) frame data.

Per-pixel flux changepoints define virtual exposures; sampling them gives a
changepoint video whose frames drive global or per-object motion compensation.
"""

from .core import (FluxImage, InterArrivalSeries, PhotonFrameTensor, QisFrameTensor, SaturationError, SensorConfig,
                   estimate_flux, estimate_flux_qis, flux_image, to_interarrival)
from .changepoint import (ChangepointSet, PixelChangepoints, detect_bottomup, detect_exhaustive, detect_pelt,
                          detect_tensor, segment_cost, segment_cost_qis)
from .online import OnlineDetectorState, detect_online, lomax_predictive
from .cpv import ChangepointVideo, PixelFluxProfile, build_cpv, sample_cpv
from .transforms import EuclideanTransform, MotionTrajectory, interpolate_trajectory
from .ecc import AlignmentError, ecc_align
from .deblur import (DeblurConfig, deblur_fixed_windows, deblur_global, fixed_window_baseline, hierarchical_merge,
                     upsample_zoh, warp_accumulate)
from .simulate import MotionScript, render_flux_sequence, sample_photon_frames, strip_timing, pulse_pixel_stream
from .multiobject import cluster_dbscan, segment_and_deblur
from .metrics import annotation_error, snr

__version__ = "0.1.0"
