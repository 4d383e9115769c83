import numpy as np
import pytest

from spadblur.changepoint import (BERNOULLI, ChangepointSet, PixelChangepoints, detect_bottomup, detect_exhaustive,
                                  detect_fixed_window, detect_pelt, detect_tensor, frame_bounds_from_measurements,
                                  penalized_cost, segment_cost)
from spadblur.core import PhotonFrameTensor, SensorConfig, to_interarrival
from spadblur.simulate import pulse_pixel_stream, strip_timing


def step_series(rng, rates=(1.0, 10.0, 1.0), n=60):
    return np.concatenate([rng.exponential(r, n) for r in rates])


def test_constant_series_has_no_changepoints():
    x = np.full(50, 3.0)
    assert len(detect_pelt(x, 2.0).interior) == 0
    assert len(detect_bottomup(x, 2.0).interior) == 0


def test_obvious_steps_are_found():
    rng = np.random.default_rng(0)
    x = step_series(rng)
    cp = detect_pelt(x, 6.0)
    assert len(cp.interior) == 2
    assert abs(cp.interior[0] - 60) <= 5 and abs(cp.interior[1] - 120) <= 5
    assert cp.indices[0] == 0 and cp.indices[-1] == len(x)
    assert cp.n_segments == 3


def test_bottomup_finds_the_same_steps():
    rng = np.random.default_rng(1)
    x = step_series(rng)
    assert len(detect_bottomup(x, 6.0).interior) == 2


def test_min_size_is_respected():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.exponential(1.0, 40) * rng.choice([1, 30], 40)
        cp = detect_pelt(x, 0.5, min_size=3)
        assert np.diff(cp.indices).min() >= 3


def test_invalid_inputs():
    with pytest.raises(ValueError):
        detect_pelt([1.0], 1.0)
    with pytest.raises(ValueError):
        detect_pelt([1.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        detect_pelt([1.0, 2.0], -1.0)
    with pytest.raises(ValueError):
        detect_exhaustive(np.ones(40), 1.0)
    with pytest.raises(IndexError):
        segment_cost([1.0, 2.0], 1, 1)


def test_penalized_cost_counts_every_boundary():
    x = np.array([1.0, 1.0, 4.0, 4.0])
    one = penalized_cost(x, [0, 4], 1.0)
    two = penalized_cost(x, [0, 2, 4], 1.0)
    assert one == pytest.approx(4 * np.log(10 / 4) + 2.0)
    assert two == pytest.approx(2 * np.log(1.0) + 2 * np.log(4.0) + 3.0)


def test_frame_bounds_from_measurements():
    cfg = SensorConfig(bins_per_frame=10, bin_width=1.0)
    frames = [2, 10, 3, 4, 10, 10, 1, 5]
    s = to_interarrival(frames, cfg)  # detections in frames 0, 2, 3, 6, 7
    cps = ChangepointSet(np.array([0, 2, 5]), 1.0)
    np.testing.assert_array_equal(frame_bounds_from_measurements(s, cps), [0, 3, 8])


def test_detect_tensor_matches_single_pixel_pelt():
    cfg = SensorConfig()
    b, _, _ = pulse_pixel_stream(1e5, 8.0, 200, 600, rng_seed=4, config=cfg)
    data = np.stack([b, np.roll(b, 50)], axis=1)[:, None, :]
    cps = detect_tensor(PhotonFrameTensor(data, cfg), 6.0, method="pelt", min_size=2)
    assert isinstance(cps, PixelChangepoints)
    s = to_interarrival(b, cfg)
    ref = detect_pelt(np.maximum(s.measurements / cfg.bin_width, 0.5), 6.0, min_size=2)
    np.testing.assert_array_equal(cps.pixel(0, 0), frame_bounds_from_measurements(s, ref))
    assert cps.n_changepoints().shape == (1, 2)
    ev = cps.events()
    assert ev.shape[1] == 3 and set(ev[:, 1]) <= {0, 1}


def test_detect_tensor_qis_finds_pulse():
    cfg = SensorConfig()
    b, _, start = pulse_pixel_stream(3e5, 6.0, 200, 800, rng_seed=1, config=cfg)
    q = strip_timing(PhotonFrameTensor(b[:, None, None], cfg))
    cps = detect_tensor(q, 6.0, method="pelt")
    inner = cps.pixel(0, 0)[1:-1]
    assert len(inner) == 2
    assert abs(inner[0] - start) <= 10 and abs(inner[1] - start - 200) <= 10


def test_detect_tensor_rejects_unknown_method():
    with pytest.raises(ValueError):
        detect_tensor(PhotonFrameTensor(np.zeros((4, 1, 1))), 1.0, method="magic")


def test_crop_keeps_pixel_segmentations():
    cps = PixelChangepoints.from_lists(2, 3, 10, [[0, 10], [0, 4, 10], [0, 10], [0, 2, 6, 10], [0, 10], [0, 10]])
    sub = cps.crop(1, 2, 0, 2)
    np.testing.assert_array_equal(sub.pixel(0, 0), [0, 2, 6, 10])
    assert sub.n_changepoints().tolist() == [[2, 0]]


def test_fixed_window_baseline_detects_large_step():
    d = np.concatenate([np.zeros(200), np.ones(200), np.zeros(200)])
    np.testing.assert_array_equal(detect_fixed_window(d, 50), [200, 400])
    assert len(detect_fixed_window(np.zeros(40), 50)) == 0
    with pytest.raises(ValueError):
        detect_fixed_window(d, 0)


def test_bernoulli_kind_single_pixel():
    d = np.concatenate([np.zeros(100), np.ones(100)])
    assert detect_pelt(d, 3.0, kind=BERNOULLI).interior.tolist() == [100]
