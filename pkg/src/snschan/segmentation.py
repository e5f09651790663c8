"""Birth-death point detection on the per-element power profile.

PASS slides a window over the power sequence, estimates robust location and
scale of each window with a reweighted minimum covariance determinant
(univariate, exact via sorted contiguous subsets), scores the trailing
element by its Mahalanobis distance, and filters the flagged elements with a
W/4-of-W/2 persistence rule. RFEM and AFM are the two reference detectors,
and detections are scored against ground truth with a threshold-swept AUC.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

CHI2_975_1 = float(stats.chi2.ppf(0.975, 1))        # reweighting cutoff
SCORE_THRESHOLD = float(np.sqrt(CHI2_975_1))        # c_SD ~= 2.2414
_C1 = 0.975 / float(stats.chi2.cdf(CHI2_975_1, 3))  # reweighted consistency
_VAR_FLOOR_REL = 1e-12


@dataclass
class WindowStats:
    """Raw and reweighted MCD location/scale of one window."""

    mu0: float
    sigma0: float
    mu_mcd: float
    sigma_mcd: float
    h: int
    c0: float
    c1: float = _C1


@dataclass
class SegmentationResult:
    """Sorted breakpoints plus the per-element detection diagnostics."""

    breakpoints: np.ndarray     # 1-based, starts at 1, ends at N+1
    scores: np.ndarray          # per-element score distance (or baseline score)
    flags: np.ndarray           # d_n, 0/1
    outlier_sums: np.ndarray | None = None  # os_n (PASS only)

    @property
    def subarrays(self) -> list[np.ndarray]:
        """0-based element index sets partitioning {0..N-1}."""
        bp = self.breakpoints
        return [np.arange(bp[i] - 1, bp[i + 1] - 1) for i in range(len(bp) - 1)]

    @property
    def n_subarrays(self) -> int:
        return len(self.breakpoints) - 1

    def auc_score_sequence(self) -> np.ndarray:
        return self.outlier_sums if self.outlier_sums is not None else self.scores


def mcd_consistency_c0(h: int, w: int) -> float:
    """Raw MCD consistency factor (h/W) / P[chi2(3) < chi2_{h/W}(1)]."""
    alpha = h / w
    if alpha >= 1.0:
        return 1.0
    return alpha / float(stats.chi2.cdf(stats.chi2.ppf(alpha, 1), 3))


def _variance_floor(window: np.ndarray) -> float:
    mean = float(np.mean(window))
    return max(_VAR_FLOOR_REL * mean * mean, 1e-300)


def _mcd_batch(windows: np.ndarray, h: int) -> tuple[np.ndarray, np.ndarray]:
    """Raw univariate MCD over each row of a (B, W) array.

    For scalars the minimum-variance h-subset is contiguous in sorted order,
    so an exhaustive scan over the W - h + 1 sorted runs is exact. Ties go to
    the smallest starting index.
    """
    b, w = windows.shape
    if not (w + 2) / 2 <= h <= w:
        raise ValueError(f"h must satisfy (W+2)/2 <= h <= W, got h={h}, W={w}")
    srt = np.sort(windows, axis=1)
    cs = np.concatenate([np.zeros((b, 1)), np.cumsum(srt, axis=1)], axis=1)
    cs2 = np.concatenate([np.zeros((b, 1)), np.cumsum(srt**2, axis=1)], axis=1)
    n_runs = w - h + 1
    starts = np.arange(n_runs)
    sums = cs[:, starts + h] - cs[:, starts]          # (B, n_runs)
    sqs = cs2[:, starts + h] - cs2[:, starts]
    variances = (sqs - sums**2 / h) / (h - 1)
    variances = np.maximum(variances, 0.0)            # guard roundoff
    best = np.argmin(variances, axis=1)               # first minimum
    rows = np.arange(b)
    mu0 = sums[rows, best] / h
    c0 = mcd_consistency_c0(h, w)
    sigma0 = c0 * variances[rows, best]
    return mu0, sigma0


def _reweight_batch(
    windows: np.ndarray, mu0: np.ndarray, sigma0: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reweighted MCD mean/variance over each row given raw estimates."""
    floors = np.maximum(_VAR_FLOOR_REL * np.mean(windows, axis=1) ** 2, 1e-300)
    sig = np.maximum(sigma0, floors)
    d2 = (windows - mu0[:, None]) ** 2 / sig[:, None]
    keep = d2 < CHI2_975_1
    n_keep = keep.sum(axis=1)
    # every row keeps at least the h-subset core, so n_keep >= h >= 2
    mu = np.sum(windows * keep, axis=1) / n_keep
    ss = np.sum(keep * (windows - mu[:, None]) ** 2, axis=1)
    var = _C1 * ss / np.maximum(n_keep - 1, 1)
    return mu, var


def mcd_univariate(window: np.ndarray, h: int) -> tuple[float, float]:
    """Raw univariate MCD (mu0, sigma0) of one window with subset size h."""
    window = np.asarray(window, dtype=float)
    mu0, sigma0 = _mcd_batch(window[None, :], h)
    return float(mu0[0]), float(sigma0[0])


def reweight_mcd(window: np.ndarray, mu0: float, sigma0: float) -> tuple[float, float]:
    """Reweighted MCD (mu_mcd, sigma_mcd) of one window."""
    window = np.asarray(window, dtype=float)
    mu, var = _reweight_batch(window[None, :], np.array([mu0]), np.array([sigma0]))
    return float(mu[0]), float(var[0])


def window_stats(window: np.ndarray, h: int | None = None) -> WindowStats:
    """Full R-MCD statistics of one window (h defaults to ceil(0.75 W))."""
    window = np.asarray(window, dtype=float)
    w = window.size
    if h is None:
        h = int(np.ceil(0.75 * w))
    mu0, sigma0 = mcd_univariate(window, h)
    mu_mcd, sigma_mcd = reweight_mcd(window, mu0, sigma0)
    return WindowStats(mu0=mu0, sigma0=sigma0, mu_mcd=mu_mcd,
                       sigma_mcd=sigma_mcd, h=h, c0=mcd_consistency_c0(h, w))


def score_distance(p_last: float, stats_w: WindowStats, floor: float = 1e-300) -> float:
    """Mahalanobis distance of a sample from the reweighted window statistics."""
    sigma = max(stats_w.sigma_mcd, floor)
    return abs(p_last - stats_w.mu_mcd) / np.sqrt(sigma)


def pass_segment(profile: np.ndarray, w: int, h: int | None = None) -> SegmentationResult:
    """Power-adaptive subarray segmentation.

    The window covers elements n-W+1..n and tests element n, so elements
    1..W-1 inherit the first subarray. An element is accepted as a birth-death
    point iff it is flagged and the outlier sum over the next W/2 elements
    reaches W/4 (prorated near the array end); accepted points closer than
    W/4 keep the first.
    """
    p = np.asarray(profile, dtype=float)
    if p.ndim != 1:
        raise ValueError("profile must be 1-D")
    n = p.size
    if w > n:
        raise ValueError(f"window W={w} exceeds profile length N={n}")
    if w < 8 or w % 4 != 0:
        raise ValueError(f"W must be >= 8 and divisible by 4, got {w}")
    if h is None:
        h = int(np.ceil(0.75 * w))

    windows = np.lib.stride_tricks.sliding_window_view(p, w)  # (N-W+1, W)
    mu0, sigma0 = _mcd_batch(windows, h)
    mu_mcd, var_mcd = _reweight_batch(windows, mu0, sigma0)
    floors = np.maximum(_VAR_FLOOR_REL * np.mean(windows, axis=1) ** 2, 1e-300)
    var_mcd = np.maximum(var_mcd, floors)

    scores = np.zeros(n)
    scores[w - 1:] = np.abs(windows[:, -1] - mu_mcd) / np.sqrt(var_mcd)
    flags = (scores > SCORE_THRESHOLD).astype(int)

    # os_n over the available suffix, with the acceptance threshold prorated
    half = w // 2
    cs = np.concatenate([[0], np.cumsum(flags)])
    idx = np.arange(n)
    os_n = cs[np.minimum(idx + half, n)] - cs[idx]
    suffix = np.minimum(half, n - idx)
    threshold = (w / 4) * suffix / half
    accepted = np.flatnonzero((flags == 1) & (os_n >= threshold)) + 1  # 1-based

    merged: list[int] = []
    for idx in accepted:
        if not merged or idx - merged[-1] >= w / 4:
            merged.append(int(idx))
    interior = [i for i in merged if 1 < i <= n]
    breakpoints = np.array(sorted({1, *interior, n + 1}), dtype=int)
    return SegmentationResult(breakpoints=breakpoints, scores=scores,
                              flags=flags, outlier_sums=os_n.astype(float))


def rfem_segment(profile: np.ndarray, rel_threshold: float = 0.5) -> SegmentationResult:
    """Rising-and-falling-edges method: peaks of the first-order difference.

    The score at element n is |p_n - p_{n-1}|; local maxima above
    rel_threshold * max score become breakpoints.
    """
    p = np.asarray(profile, dtype=float)
    n = p.size
    if n < 3:
        raise ValueError("profile too short")
    scores = np.zeros(n)
    scores[1:] = np.abs(np.diff(p))
    peak = scores.max()
    flags = np.zeros(n, dtype=int)
    if peak > 0:
        thr = rel_threshold * peak
        for i in range(1, n):
            left = scores[i - 1] if i >= 1 else -np.inf
            right = scores[i + 1] if i + 1 < n else -np.inf
            if scores[i] > thr and scores[i] >= left and scores[i] >= right:
                flags[i] = 1
    interior = np.flatnonzero(flags) + 1
    breakpoints = np.array(sorted({1, *(int(i) for i in interior if 1 < i <= n), n + 1}))
    return SegmentationResult(breakpoints=breakpoints, scores=scores, flags=flags)


def afm_segment(profile: np.ndarray, fit_width: int | None = None,
                rel_threshold: float = 0.5) -> SegmentationResult:
    """Accumulation-function method: slope changes of the cumulative power.

    The score at element n is the difference of secant slopes of the
    accumulation function over fit_width elements before and after n.
    """
    p = np.asarray(profile, dtype=float)
    n = p.size
    if n < 3:
        raise ValueError("profile too short")
    if fit_width is None:
        fit_width = max(2, min(16, n // 4))
    acc = np.concatenate([[0.0], np.cumsum(p)])   # acc[i] = sum of first i
    scores = np.zeros(n)
    for i in range(fit_width, n - fit_width + 1):
        # candidate: new regime starts at 1-based element i+1 -> 0-based i
        left = (acc[i] - acc[i - fit_width]) / fit_width
        right = (acc[i + fit_width] - acc[i]) / fit_width
        scores[i] = abs(right - left)
    peak = scores.max()
    flags = np.zeros(n, dtype=int)
    if peak > 0:
        thr = rel_threshold * peak
        for i in range(1, n - 1):
            if scores[i] > thr and scores[i] >= scores[i - 1] and scores[i] >= scores[i + 1]:
                flags[i] = 1
    interior = np.flatnonzero(flags) + 1
    breakpoints = np.array(sorted({1, *(int(i) for i in interior if 1 < i <= n), n + 1}))
    return SegmentationResult(breakpoints=breakpoints, scores=scores, flags=flags)


def auc_score(
    predicted: SegmentationResult | np.ndarray,
    truth_bp: np.ndarray,
    match_tol: int,
    n_elements: int | None = None,
) -> float:
    """AUC of the per-element score against the true breakpoint labels.

    Elements within +-match_tol of an interior true breakpoint are positives.
    The continuous score (outlier sum when available, otherwise the score
    sequence) is threshold-swept; the rank-based AUC equals the Mann-Whitney
    statistic with midrank tie handling. Returns max(AUC, 1 - AUC) in
    [0.5, 1]; degenerate truth (no interior breakpoints) returns 0.5.
    """
    if isinstance(predicted, SegmentationResult):
        scores = predicted.auc_score_sequence()
    else:
        scores = np.asarray(predicted, dtype=float)
    n = scores.size if n_elements is None else n_elements
    truth_bp = np.asarray(truth_bp, dtype=int)
    interior = truth_bp[(truth_bp > 1) & (truth_bp <= n)]
    if interior.size == 0:
        warnings.warn("no interior truth breakpoints; AUC degenerates to 0.5",
                      RuntimeWarning, stacklevel=2)
        return 0.5
    elements = np.arange(1, n + 1)
    labels = np.any(np.abs(elements[:, None] - interior[None, :]) <= match_tol, axis=1)
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = stats.rankdata(scores)
    auc = (ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
    return float(np.clip(max(auc, 1.0 - auc), 0.5, 1.0))
