import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from snschan.segmentation import (
    CHI2_975_1,
    SCORE_THRESHOLD,
    SegmentationResult,
    afm_segment,
    auc_score,
    mcd_consistency_c0,
    mcd_univariate,
    pass_segment,
    reweight_mcd,
    rfem_segment,
    score_distance,
    window_stats,
)


def exhaustive_mcd(window, h):
    """Minimum-variance h-subset by full enumeration (any subset, not just
    contiguous runs); first minimizer in lexicographic order wins."""
    window = np.sort(np.asarray(window, dtype=float))
    best = None
    for subset in itertools.combinations(range(window.size), h):
        vals = window[list(subset)]
        var = vals.var(ddof=1)
        if best is None or var < best[0] - 1e-15:
            best = (var, vals.mean())
    c0 = mcd_consistency_c0(h, window.size)
    return best[1], c0 * best[0]


class TestMcdUnivariate:
    def test_all_equal_window(self):
        mu, sig = mcd_univariate(np.full(8, 3.5), 6)
        assert mu == 3.5
        assert sig == 0.0

    def test_outlier_excluded(self):
        mu, sig = mcd_univariate(np.array([1.0, 1.0, 1.0, 1.0, 100.0]), 4)
        assert mu == 1.0
        assert sig == 0.0

    def test_integers_window_matches_exhaustive(self):
        window = np.arange(1.0, 9.0)
        mu, sig = mcd_univariate(window, 5)
        mu_ref, sig_ref = exhaustive_mcd(window, 5)
        assert mu == pytest.approx(mu_ref)
        assert sig == pytest.approx(sig_ref)

    @given(st.integers(6, 10), st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_matches_exhaustive_on_random_windows(self, w, seed):
        rng = np.random.default_rng(seed)
        window = rng.standard_normal(w) ** 2
        h = int(np.ceil(0.75 * w))
        mu, sig = mcd_univariate(window, h)
        mu_ref, sig_ref = exhaustive_mcd(window, h)
        assert mu == pytest.approx(mu_ref, rel=1e-10)
        assert sig == pytest.approx(sig_ref, rel=1e-10, abs=1e-12)

    def test_h_range_enforced(self):
        with pytest.raises(ValueError):
            mcd_univariate(np.arange(8.0), 4)
        with pytest.raises(ValueError):
            mcd_univariate(np.arange(8.0), 9)


class TestReweight:
    def test_no_rejection_gives_plain_moments(self):
        window = np.array([2.0, 2.2, 1.9, 2.1, 2.05, 1.95])
        mu0, sig0 = mcd_univariate(window, 5)
        mu, sig = reweight_mcd(window, mu0, sig0)
        c1 = 0.975 / stats.chi2.cdf(stats.chi2.ppf(0.975, 1), 3)
        assert mu == pytest.approx(window.mean())
        assert sig == pytest.approx(c1 * window.var(ddof=1))

    def test_outlier_rejected_by_chi2_cutoff(self):
        window = np.array([1.0, 1.0, 1.0, 1.0, 100.0])
        mu0, sig0 = mcd_univariate(window, 4)
        mu, _ = reweight_mcd(window, mu0, sig0)
        assert mu == 1.0
        assert CHI2_975_1 == pytest.approx(stats.chi2.ppf(0.975, 1))
        assert CHI2_975_1 == pytest.approx(5.0239, abs=1e-4)

    def test_symmetric_window_centered(self):
        window = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
        mu0, sig0 = mcd_univariate(window, 5)
        mu, _ = reweight_mcd(window, mu0, sig0)
        assert mu == pytest.approx(4.0)


class TestScoreDistance:
    def test_center_scores_zero(self):
        ws = window_stats(np.array([1.0, 1.1, 0.9, 1.05, 0.95, 1.0, 1.0, 1.0]))
        assert score_distance(ws.mu_mcd, ws) == 0.0

    def test_unit_deviation(self):
        ws = window_stats(np.array([1.0, 1.1, 0.9, 1.05, 0.95, 1.0, 1.0, 1.0]))
        p = ws.mu_mcd + np.sqrt(ws.sigma_mcd)
        assert score_distance(p, ws) == pytest.approx(1.0)

    def test_flag_threshold_matches_chi2_quantile(self):
        assert SCORE_THRESHOLD == pytest.approx(np.sqrt(stats.chi2.ppf(0.975, 1)))
        assert SCORE_THRESHOLD == pytest.approx(2.2414, abs=1e-4)


class TestPassSegment:
    def test_constant_profile_single_subarray(self):
        res = pass_segment(np.full(128, 2.0), 16)
        np.testing.assert_array_equal(res.breakpoints, [1, 129])
        assert res.n_subarrays == 1

    def test_step_profile_detected_within_tolerance(self):
        rng = np.random.default_rng(0)
        n, w = 256, 32
        hits = 0
        trials = 120
        for _ in range(trials):
            p = np.where(np.arange(1, n + 1) <= 128, 1.0, 9.0)
            snr_lin = 10 ** (15 / 10)
            noise = p / snr_lin * rng.standard_normal(n)
            profile = np.abs(p + noise)
            res = pass_segment(profile, w)
            interior = res.breakpoints[1:-1]
            if any(abs(int(c) - 129) <= w / 4 for c in interior):
                hits += 1
        assert hits / trials >= 0.95

    def test_narrow_glitch_filtered(self):
        n, w = 256, 32
        p = np.full(n, 1.0)
        p[100:100 + w // 8] = 50.0
        res = pass_segment(p, w)
        np.testing.assert_array_equal(res.breakpoints, [1, n + 1])

    def test_partition_is_exact(self):
        rng = np.random.default_rng(1)
        profile = np.abs(rng.standard_normal(200)) ** 2
        res = pass_segment(profile, 16)
        covered = np.concatenate(res.subarrays)
        np.testing.assert_array_equal(np.sort(covered), np.arange(200))

    def test_deterministic_and_scale_invariant(self):
        rng = np.random.default_rng(2)
        profile = np.abs(rng.standard_normal(180)) ** 2 + 0.1
        a = pass_segment(profile, 16)
        b = pass_segment(profile, 16)
        c = pass_segment(123.456 * profile, 16)
        np.testing.assert_array_equal(a.breakpoints, b.breakpoints)
        np.testing.assert_array_equal(a.breakpoints, c.breakpoints)
        np.testing.assert_allclose(a.scores, c.scores, rtol=1e-9)

    def test_window_validation(self):
        with pytest.raises(ValueError):
            pass_segment(np.ones(100), 10)   # not divisible by 4
        with pytest.raises(ValueError):
            pass_segment(np.ones(100), 4)    # too small
        with pytest.raises(ValueError):
            pass_segment(np.ones(10), 16)    # longer than profile

    def test_runtime_scales_linearly_in_n(self):
        import time
        w = 32
        rng = np.random.default_rng(3)
        p1 = np.abs(rng.standard_normal(2048)) ** 2
        p2 = np.abs(rng.standard_normal(4096)) ** 2
        pass_segment(p1, w)  # warm up
        t0 = time.perf_counter()
        for _ in range(5):
            pass_segment(p1, w)
        t1 = time.perf_counter()
        for _ in range(5):
            pass_segment(p2, w)
        t2 = time.perf_counter()
        assert (t2 - t1) <= 2.3 * (t1 - t0) + 0.05


class TestBaselines:
    def test_constant_profile(self):
        p = np.full(64, 3.0)
        np.testing.assert_array_equal(rfem_segment(p).breakpoints, [1, 65])
        np.testing.assert_array_equal(afm_segment(p).breakpoints, [1, 65])

    def test_noiseless_step_found_exactly(self):
        p = np.where(np.arange(1, 257) <= 128, 1.0, 9.0)
        for res in (rfem_segment(p), afm_segment(p, fit_width=16)):
            assert 129 in res.breakpoints[1:-1].tolist()

    def test_minimum_length(self):
        with pytest.raises(ValueError):
            rfem_segment(np.ones(2))


def pairwise_auc(scores, labels):
    """Mann-Whitney AUC by exhaustive pair counting with tie credit 0.5."""
    pos = scores[labels]
    neg = scores[~labels]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


class TestAucScore:
    def test_perfect_separation(self):
        # positives are elements within +-1 of the interior breakpoint 5
        scores = np.array([0, 0, 0, 5, 5, 5, 0, 0, 0, 0], dtype=float)
        truth = np.array([1, 5, 11])
        assert auc_score(scores, truth, match_tol=1) == 1.0

    def test_constant_scores_uninformative(self):
        scores = np.ones(10)
        truth = np.array([1, 5, 11])
        assert auc_score(scores, truth, match_tol=1) == 0.5

    def test_matches_pairwise_oracle(self):
        scores = np.array([0.1, 0.2, 0.9, 0.8, 0.3, 0.7, 0.2, 0.1, 0.0, 0.4])
        truth = np.array([1, 4, 11])   # interior breakpoint at 4
        tol = 1
        labels = np.abs(np.arange(1, 11)[:, None] - np.array([[4]])) <= tol
        labels = labels.any(axis=1)
        expected = pairwise_auc(scores, labels)
        expected = max(expected, 1 - expected)
        assert auc_score(scores, truth, tol) == pytest.approx(expected)

    def test_degenerate_truth_warns(self):
        with pytest.warns(RuntimeWarning):
            out = auc_score(np.arange(10.0), np.array([1, 11]), match_tol=1)
        assert out == 0.5

    def test_uses_outlier_sums_when_available(self):
        # zero score sequence would give 0.5; outlier sums must be preferred
        res = SegmentationResult(
            breakpoints=np.array([1, 6, 11]),
            scores=np.zeros(10),
            flags=np.zeros(10, dtype=int),
            outlier_sums=np.array([0, 0, 0, 0, 3, 3, 1, 0, 0, 0.0]),
        )
        assert auc_score(res, np.array([1, 6, 11]), match_tol=1) == 1.0
