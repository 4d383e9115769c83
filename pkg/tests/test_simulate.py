import numpy as np
import pytest

from spadblur.core import SensorConfig, estimate_flux
from spadblur.scenes import orange, two_cars
from spadblur.simulate import (MotionScript, box_downsample, pulse_pixel_stream, quantize, render_flux_sequence,
                               sample_photon_frames, scale_flux, strip_timing)


def test_motion_script_validation():
    with pytest.raises(ValueError):
        MotionScript("teleport")
    with pytest.raises(ValueError):
        MotionScript("rotation", total_steps=0)
    with pytest.raises(ValueError):
        MotionScript("random_shake", shake_bound=1.5)
    with pytest.raises(ValueError):
        MotionScript("frame_sequence")


def test_step_transforms():
    rot = MotionScript("rotation", total_steps=4, rotation_deg=0.5).step_transforms((16, 16))
    assert np.rad2deg(rot[3].theta) == pytest.approx(1.5)
    tr = MotionScript("translation", total_steps=3, translation=(1.0, -2.0)).step_transforms((16, 16))
    assert (tr[2].tx, tr[2].ty) == (2.0, -4.0)
    sh = MotionScript("random_shake", total_steps=50, shake_bound=3, rng_seed=1).step_transforms((16, 16))
    steps = np.diff([[t.tx, t.ty] for t in sh], axis=0)
    assert np.abs(steps).max() <= 3 and np.all(steps == np.round(steps))
    assert sh[0].tx == 0 and sh[0].ty == 0


def test_box_downsample_and_scale():
    a = np.arange(16.0).reshape(4, 4)
    np.testing.assert_allclose(box_downsample(a, 2), [[2.5, 4.5], [10.5, 12.5]])
    s = scale_flux(a, 10.0, 20.0)
    assert s.min() == 10.0 and s.max() == 20.0


def test_render_sequence_shapes_and_truth():
    gt = scale_flux(orange(64), 1e5, 1e7)
    seq, tr = render_flux_sequence(gt, MotionScript("rotation", total_steps=3, rotation_deg=1.0), render_factor=2)
    assert len(seq) == 3 and seq[0].shape == (32, 32)
    np.testing.assert_allclose(seq[0].values, box_downsample(gt, 2), rtol=1e-9)
    assert tr[2].rx == pytest.approx(15.5)
    with pytest.raises(ValueError):
        render_flux_sequence(-gt, MotionScript())


def test_quantize_floor_and_sentinel():
    cfg = SensorConfig(bins_per_frame=10, bin_width=1.0)
    np.testing.assert_array_equal(quantize([0.0, 0.99, 1.0, 9.99, 10.0, np.inf], cfg), [0, 0, 1, 9, 10, 10])


def test_sampling_is_seeded_and_per_pixel():
    cfg = SensorConfig()
    flux = [np.full((3, 4), 2e6)]
    a = sample_photon_frames(flux, 50, cfg, rng_seed=5)
    b = sample_photon_frames(flux, 50, cfg, rng_seed=5)
    c = sample_photon_frames(flux, 50, cfg, rng_seed=6)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)
    assert not np.array_equal(a.data[:, 0, 0], a.data[:, 0, 1])


def test_zero_flux_never_detects():
    t = sample_photon_frames([np.zeros((2, 2))], 20, SensorConfig(), 0)
    assert not t.detections().any()


def test_sampled_flux_is_consistent():
    cfg = SensorConfig()
    t = sample_photon_frames([np.full((1, 1), 3e6)], 5000, cfg, 1)
    b = t.data[:, 0, 0]
    est = estimate_flux(np.where(b == cfg.sentinel, cfg.frame_period, b * cfg.bin_width), cfg)
    assert est == pytest.approx(3e6, rel=0.05)


def test_strip_timing():
    t = sample_photon_frames([np.full((2, 2), 1e6)], 30, SensorConfig(), 2)
    q = strip_timing(t)
    np.testing.assert_array_equal(q.data.astype(bool), t.detections())


def test_pulse_stream():
    cfg = SensorConfig()
    b, truth, start = pulse_pixel_stream(1e5, 4.0, 100, 800, rng_seed=3, config=cfg)
    assert truth == 2 and 1 <= start <= 800 - 100 - 1 and len(b) == 800
    with pytest.raises(ValueError):
        pulse_pixel_stream(1e5, 4.0, 799, 800)
    with pytest.raises(ValueError):
        pulse_pixel_stream(1e5, 0.0, 10, 800)


def test_scenes():
    o = orange(64)
    assert o.shape == (64, 64) and 0 <= o.min() and o.max() <= 1
    s = two_cars(n_frames=20)
    assert s.frames.shape == (20, 80, 120)
    dark, light = s.reference_masks
    assert dark.any() and light.any() and not (dark & light).any()
    # the dark car is darker than the road, the light car brighter
    assert s.frames[0][dark].mean() < s.background.mean() < s.frames[0][light].mean()
