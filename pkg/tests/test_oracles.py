"""Reference implementations (slow, obvious) checked against the fast code paths."""

import itertools
import math

import numpy as np
import pytest
from scipy import integrate, optimize, stats

from spadblur.changepoint import (BERNOULLI, EXPONENTIAL, detect_bottomup, detect_exhaustive, detect_pelt,
                                  penalized_cost, segment_cost, segment_cost_qis)
from spadblur.core import SensorConfig, estimate_flux, estimate_flux_qis, to_interarrival
from spadblur.deblur import warp_accumulate
from spadblur.core import PhotonFrameTensor
from spadblur.multiobject import NOISE, cluster_dbscan
from spadblur.online import OnlineDetectorState, detect_online, lomax_predictive


def brute_force_segmentation(x, lam, min_size=1, kind=EXPONENTIAL):
    """Minimum objective over every subset of interior boundaries."""
    n = len(x)
    best = (math.inf, None)
    for k in range(n):
        for inner in itertools.combinations(range(1, n), k):
            b = (0, *inner, n)
            if min(np.diff(b)) < min_size:
                continue
            v = penalized_cost(x, b, lam, kind)
            if v < best[0] - 1e-12:
                best = (v, b)
    return best


def optimal_partitioning(x, lam, min_size=1):
    """Unpruned O(n^2) dynamic program with the exponential cost written out."""
    n = len(x)
    F = [lam] + [math.inf] * n
    for t in range(1, n + 1):
        for s in range(0, t - min_size + 1):
            if s and s < min_size:
                continue
            seg = x[s:t]
            m = len(seg)
            c = m * math.log(sum(seg) / m)
            F[t] = min(F[t], F[s] + c + lam)
    return F[n]


class TestSegmentation:
    def test_segment_cost_is_negative_log_likelihood(self):
        rng = np.random.default_rng(0)
        x = rng.exponential(3.0, 17)
        rate = len(x) / x.sum()
        nll = -stats.expon(scale=1 / rate).logpdf(x).sum()
        # the cost drops the constant m (the "-m" of the NLL at the MLE)
        assert segment_cost(x, 0, 17) == pytest.approx(nll - len(x), rel=1e-12)

    def test_bernoulli_cost_is_negative_log_likelihood(self):
        d = np.array([1, 0, 0, 1, 1, 0, 0, 0, 1, 0])
        p = d.mean()
        nll = -stats.bernoulli(p).logpmf(d).sum()
        assert segment_cost_qis(d, 0, len(d)) == pytest.approx(nll, rel=1e-12)

    @pytest.mark.parametrize("lam", [0.5, 3.0, 9.0])
    @pytest.mark.parametrize("min_size", [1, 2])
    def test_pelt_and_exhaustive_match_brute_force(self, lam, min_size):
        rng = np.random.default_rng(int(lam * 10) + min_size)
        for _ in range(15):
            n = int(rng.integers(2, 11))
            x = np.concatenate([rng.exponential(1.0, n // 2), rng.exponential(8.0, n - n // 2)])
            ref, _ = brute_force_segmentation(x, lam, min_size)
            for det in (detect_pelt(x, lam, min_size), detect_exhaustive(x, lam, min_size)):
                assert penalized_cost(x, det.indices, lam) == pytest.approx(ref, abs=1e-9)

    def test_pelt_matches_unpruned_dynamic_program(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            x = np.concatenate([rng.exponential(s, 40) for s in (1, 5, 1.5)])
            got = detect_pelt(x, 4.0)
            assert penalized_cost(x, got.indices, 4.0) == pytest.approx(optimal_partitioning(list(x), 4.0), abs=1e-8)

    def test_bernoulli_pelt_matches_brute_force(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            d = (rng.random(10) < rng.choice([0.1, 0.8], 10)).astype(float)
            ref, _ = brute_force_segmentation(d, 1.5, 1, BERNOULLI)
            got = detect_pelt(d, 1.5, kind=BERNOULLI)
            assert penalized_cost(d, got.indices, 1.5, BERNOULLI) == pytest.approx(ref, abs=1e-9)

    def test_bottomup_never_beats_the_optimum(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = np.concatenate([rng.exponential(1.0, 30), rng.exponential(6.0, 30)])
            opt = penalized_cost(x, detect_pelt(x, 5.0).indices, 5.0)
            assert penalized_cost(x, detect_bottomup(x, 5.0).indices, 5.0) >= opt - 1e-9


class TestEstimators:
    def test_timestamp_mle_matches_numerical_optimum(self):
        cfg = SensorConfig(bins_per_frame=100, bin_width=1e-9)
        T = cfg.frame_period
        rng = np.random.default_rng(1)
        t = np.minimum(rng.exponential(1 / 2e7, 300), T)
        det = t < T

        def nll(log_phi):
            lam = np.exp(log_phi)
            # censored exponential: density for detections, survival for empty frames
            return -(det.sum() * np.log(lam) - lam * t.sum())

        opt = optimize.minimize_scalar(nll, bounds=(5, 25), method="bounded", options={"xatol": 1e-10})
        assert estimate_flux(t, cfg) == pytest.approx(np.exp(opt.x), rel=1e-6)

    def test_qis_mle_matches_numerical_optimum(self):
        cfg = SensorConfig(bins_per_frame=100, bin_width=1e-9)
        d = np.array([1] * 30 + [0] * 70)

        def nll(phi):
            p = -np.expm1(-phi * cfg.frame_period)
            return -(30 * np.log(p) + 70 * np.log1p(-p))

        opt = optimize.minimize_scalar(nll, bounds=(1e3, 1e8), method="bounded", options={"xatol": 1e-6})
        assert estimate_flux_qis(d, cfg) == pytest.approx(opt.x, rel=1e-6)

    def test_interarrival_matches_manual_walk(self):
        cfg = SensorConfig(bins_per_frame=10, bin_width=1.0)
        frames = [3, 10, 10, 0, 7, 10]
        s = to_interarrival(frames, cfg)
        # 3; then two empty frames (20) + 0; then 7; trailing 10 unobserved
        np.testing.assert_array_equal(s.measurements, [3.0, 20.0, 7.0])
        np.testing.assert_array_equal(s.frame_index_of, [0, 3, 4])
        assert s.trailing_dead_time == 10.0


class TestOnline:
    def test_lomax_matches_quadrature(self):
        a, b = 2.5, 40.0
        for y in (0.0, 1.0, 17.0, 250.0):
            def integrand(lam):
                return stats.gamma(a, scale=1 / b).pdf(lam) * lam * np.exp(-lam * y)
            ref, _ = integrate.quad(integrand, 0, np.inf, epsabs=1e-14, epsrel=1e-12)
            assert lomax_predictive(y, a, b) == pytest.approx(ref, abs=1e-8, rel=1e-8)

    def test_posterior_matches_naive_recursion(self):
        """Untruncated run-length recursion written with Python lists."""
        a0, b0, hazard = 1.0, 100.0, 40.0
        h = 1 / hazard
        rng = np.random.default_rng(3)
        xs = np.concatenate([rng.exponential(50, 25), rng.exponential(400, 25)])
        st = OnlineDetectorState(prior_shape=a0, prior_scale=b0, hazard=hazard, max_run=200, lookbehind=10)
        # naive: dict run length -> (prob, count, sum); run length includes the newest point
        post = {0: (1.0, 0, 0.0)}
        for x in xs:
            new = {}
            reset = 0.0
            for r, (p, n, s) in post.items():
                pred = lomax_predictive(x, a0 + n, b0 + s)
                grow = p * pred * (1 - h)
                pr, nn, ss = new.get(r + 1, (0.0, n + 1, s + x))
                new[r + 1] = (pr + grow, n + 1, s + x)
                reset += p * h * lomax_predictive(x, a0, b0)
            pr, nn, ss = new.get(1, (0.0, 1, x))
            new[1] = (pr + reset, 1, x)
            z = sum(v[0] for v in new.values())
            post = {r: (p / z, n, s) for r, (p, n, s) in new.items()}
            detect_online([x], st)
            got = st.run_length_posterior()
            ref = np.zeros_like(got)
            for r, (p, _, _) in post.items():
                ref[min(r, st.max_run)] += p
            np.testing.assert_allclose(got, ref, atol=1e-12)


def naive_dbscan(points, eps, min_pts):
    """Textbook O(n^2) DBSCAN with the same visiting order."""
    n = len(points)
    d = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    nb = [np.flatnonzero(d[i] <= eps) for i in range(n)]
    core = [len(x) >= min_pts for x in nb]
    lab = [NOISE] * n
    c = 0
    for i in range(n):
        if lab[i] != NOISE or not core[i]:
            continue
        lab[i] = c
        stack = [i]
        while stack:
            j = stack.pop(0)
            if not core[j]:
                continue
            for k in nb[j]:
                if lab[k] == NOISE:
                    lab[k] = c
                    if core[k]:
                        stack.append(k)
        c += 1
    return np.array(lab)


class TestClustering:
    @pytest.mark.parametrize("seed", range(5))
    def test_dbscan_matches_naive(self, seed):
        rng = np.random.default_rng(seed)
        pts = np.concatenate([rng.normal(0, 2, (60, 3)), rng.normal(15, 2, (40, 3)), rng.uniform(-10, 30, (20, 3))])
        ev = np.round(pts).astype(int)
        got = cluster_dbscan(ev, 3.0, 6, time_scale=1.0)
        np.testing.assert_array_equal(got, naive_dbscan(ev.astype(float), 3.0, 6))

    def test_core_partition_matches_scikit_learn(self):
        sk = pytest.importorskip("sklearn.cluster")
        rng = np.random.default_rng(11)
        ev = np.round(np.concatenate([rng.normal(0, 2, (80, 3)), rng.normal(20, 2, (80, 3))])).astype(int)
        got = cluster_dbscan(ev, 3.0, 5, time_scale=1.0)
        ref = sk.DBSCAN(eps=3.0, min_samples=5).fit(ev.astype(float))
        core = ref.core_sample_indices_
        # same partition of core points (labels may be permuted)
        pairs = set(zip(got[core], ref.labels_[core]))
        assert len(pairs) == len(set(got[core])) == len(set(ref.labels_[core]))
        np.testing.assert_array_equal(got == NOISE, ref.labels_ == -1)


class TestAccumulation:
    def test_matches_python_loop(self):
        cfg = SensorConfig(bins_per_frame=20, bin_width=1e-9)
        rng = np.random.default_rng(4)
        data = rng.integers(0, 21, size=(6, 5, 7)).astype(cfg.index_dtype)
        ten = PhotonFrameTensor(data, cfg)
        mats = np.array([[[1, 0, dx], [0, 1, dy], [0, 0, 1]] for dx, dy in rng.integers(-2, 3, (6, 2))], float)
        acc = warp_accumulate(ten, mats)
        cnt = np.zeros((5, 7))
        dur = np.zeros((5, 7))
        for f in range(6):
            for r in range(5):
                for c in range(7):
                    x, y = c + mats[f, 0, 2], r + mats[f, 1, 2]
                    if 0 <= x < 7 and 0 <= y < 5:
                        cnt[int(y), int(x)] += data[f, r, c] != 20
                        dur[int(y), int(x)] += data[f, r, c]
        np.testing.assert_array_equal(acc.counts, cnt)
        np.testing.assert_array_equal(acc.durations, dur)
