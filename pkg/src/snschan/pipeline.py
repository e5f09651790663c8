"""End-to-end composition: generate, measure power, segment, allocate,
receive, decouple, estimate, score."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .bcrb import bcrb_bound
from .channel import ChannelRealization
from .config import SystemConfig
from .dhbf import (
    MeasurementPlan,
    SubarrayObservations,
    build_combiners,
    decouple,
    make_allocation,
    prune_subarrays,
    simulate_reception,
)
from .estimator import (
    Codebook,
    EstimatorConfig,
    PosteriorState,
    absbl_mmv,
    bsbl_baseline,
    dft_codebook,
    nmse,
    offgrid_refine,
    somp_baseline,
)
from .scenario import ScenarioOptions, generate_scenario
from .segmentation import SegmentationResult, afm_segment, pass_segment, rfem_segment

ON_GRID_ALGORITHMS = ("ss_absbl_mmv", "ss_absbl", "ss_bsbl", "ss_somp")
OFF_GRID_ALGORITHMS = ("ss_og_absbl_mmv", "ss_og_absbl")
ARCHITECTURES = ("dhbf_mef_gaa", "dhbf_random", "fully_connected")
SEGMENTATION_VARIANTS = ("pass", "oracle", "equal4", "under", "over")


def measurement_noise_variance(chan: ChannelRealization, snr_db: float) -> float:
    """sigma_n^2 for a per-measurement SNR against the mean element power."""
    mean_power = float(np.mean(np.abs(chan.H) ** 2))
    return mean_power * 10.0 ** (-snr_db / 10.0)


def measure_power(chan: ChannelRealization, rng: np.random.Generator,
                  snr_db: float | None) -> np.ndarray:
    """Per-element power profile |sum_m (h_nm + w_nm)|^2 at the given SNR."""
    if snr_db is None:
        return chan.power.copy()
    sigma2 = measurement_noise_variance(chan, snr_db)
    noise = np.sqrt(sigma2 / 2.0) * (
        rng.standard_normal(chan.H.shape) + 1j * rng.standard_normal(chan.H.shape)
    )
    return np.abs((chan.H + noise).sum(axis=1)) ** 2


def _equal_breakpoints(n: int, parts: int) -> np.ndarray:
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return np.unique(edges + 1)


def _merge_pairs(breakpoints: np.ndarray) -> np.ndarray:
    interior = breakpoints[1:-1]
    return np.concatenate(([1], interior[1::2], [breakpoints[-1]]))


def _quarter_segments(breakpoints: np.ndarray) -> np.ndarray:
    out = [1]
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        span = b - a
        for q in range(1, 4):
            cut = a + int(round(q * span / 4))
            if a < cut < b:
                out.append(cut)
        out.append(b)
    return np.unique(out)


def segment_scene(
    profile: np.ndarray,
    chan: ChannelRealization,
    cfg: SystemConfig,
    variant: str = "pass",
    window: int | None = None,
) -> SegmentationResult:
    """Segmentation under one of the ablation variants.

    pass: detector output; oracle: ground-truth breakpoints; equal4: uniform
    4-way split; under: oracle with every other interior point dropped;
    over: oracle with each segment quartered.
    """
    w = cfg.SI_min if window is None else window
    if variant == "pass":
        return pass_segment(profile, w)
    if variant == "oracle":
        bp = chan.truth_breakpoints.copy()
    elif variant == "equal4":
        bp = _equal_breakpoints(cfg.N, 4)
    elif variant == "under":
        bp = _merge_pairs(chan.truth_breakpoints)
    elif variant == "over":
        bp = _quarter_segments(chan.truth_breakpoints)
    else:
        raise ValueError(f"unknown segmentation variant {variant!r}")
    n = profile.size
    return SegmentationResult(breakpoints=np.asarray(bp, dtype=int),
                              scores=np.zeros(n), flags=np.zeros(n, dtype=int))


@dataclass
class TrialMeasurement:
    """Everything the estimators need for one pilot-phase trial."""

    chan: ChannelRealization
    seg: SegmentationResult
    plan: MeasurementPlan
    observations: list[SubarrayObservations]
    sigma2: float


def measure_scene(
    chan: ChannelRealization,
    cfg: SystemConfig,
    rng: np.random.Generator,
    snr_db: float,
    architecture: str = "dhbf_mef_gaa",
    seg_variant: str = "pass",
    window: int | None = None,
    power_snr_db: float | None = None,
    profile: np.ndarray | None = None,
) -> TrialMeasurement:
    """Run power measurement, segmentation, allocation, reception, decoupling."""
    sigma2 = measurement_noise_variance(chan, snr_db)
    if architecture == "fully_connected":
        n = cfg.N
        seg = SegmentationResult(breakpoints=np.array([1, n + 1]),
                                 scores=np.zeros(n), flags=np.zeros(n, dtype=int))
        alloc = make_allocation(seg, [0], cfg.N_RF, strategy="mef_gaa")
    else:
        if profile is None:
            profile = measure_power(
                chan, rng, snr_db if power_snr_db is None else power_snr_db
            )
        seg = segment_scene(profile, chan, cfg, seg_variant, window)
        # twice the power-profile noise floor, capped so the strongest
        # subarray always survives at low SNR
        strongest = max(float(np.mean(profile[e])) for e in seg.subarrays)
        eta = min(2.0 * cfg.M * sigma2, 0.5 * strongest)
        on_mode = prune_subarrays(profile, seg, eta)
        strategy = "random" if architecture == "dhbf_random" else "mef_gaa"
        alloc = make_allocation(seg, on_mode, cfg.N_RF, strategy=strategy, rng=rng)
    plan = build_combiners(alloc, cfg, rng, sigma2)
    y = simulate_reception(chan.H, plan, rng)
    obs = decouple(y, plan)
    return TrialMeasurement(chan=chan, seg=seg, plan=plan, observations=obs,
                            sigma2=sigma2)


def _estimate_subarray(
    obs: SubarrayObservations,
    algorithm: str,
    est_cfg: EstimatorConfig,
    sigma2: float,
) -> tuple[np.ndarray, PosteriorState | None]:
    """Channel block estimate (N_sub, M) for one subarray.

    The receiver knows its own noise floor, so the Bayesian learners run
    with the true sigma2 fixed; EM noise learning stays available on the
    estimator's standalone surface.
    """
    n_sub = obs.elements.size
    m_count = obs.y.shape[1]
    if obs.y.shape[0] == 0 or n_sub == 0:
        return np.zeros((n_sub, m_count), dtype=complex), None
    book = dft_codebook(n_sub)
    psi = obs.phi @ book.D
    if algorithm == "ss_somp":
        rel_noise = np.sqrt(obs.y.size * sigma2) / max(np.linalg.norm(obs.y), 1e-300)
        x_hat = somp_baseline(obs.y, psi,
                              max_atoms=min(obs.y.shape[0], n_sub),
                              residual_tol=min(1.0, float(rel_noise)))
        return book.D @ x_hat, None
    cfg_fixed = replace(est_cfg, learn_noise=False)
    if algorithm in ("ss_absbl_mmv", "ss_og_absbl_mmv"):
        x_hat, state = absbl_mmv(obs.y, psi, cfg_fixed, sigma2=sigma2)
    elif algorithm in ("ss_absbl", "ss_og_absbl", "ss_bsbl"):
        runner = bsbl_baseline if algorithm == "ss_bsbl" else absbl_mmv
        cols = []
        state = None
        for m in range(m_count):
            x_m, state = runner(obs.y[:, m:m + 1], psi, cfg_fixed, sigma2=sigma2)
            cols.append(x_m[:, 0])
        x_hat = np.stack(cols, axis=1)
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if algorithm in OFF_GRID_ALGORITHMS:
        _, x_hat, h_hat = offgrid_refine(obs.y, obs.phi, book, x_hat, est_cfg)
        return h_hat, state
    return book.D @ x_hat, state


def estimate_channel(
    meas: TrialMeasurement,
    algorithm: str,
    est_cfg: EstimatorConfig | None = None,
) -> np.ndarray:
    """Assemble the full-array estimate from per-subarray runs."""
    if est_cfg is None:
        est_cfg = EstimatorConfig()
    chan = meas.chan
    h_hat = np.zeros_like(chan.H)
    for obs in meas.observations:
        block, _ = _estimate_subarray(obs, algorithm, est_cfg, meas.sigma2)
        h_hat[obs.elements] = block
    return h_hat


def estimate_with_trace(
    meas: TrialMeasurement,
    est_cfg: EstimatorConfig | None = None,
) -> list[np.ndarray]:
    """Per-iteration full-array estimates of the joint learner.

    Subarrays that converge early hold their final estimate in later
    iterations.
    """
    if est_cfg is None:
        est_cfg = EstimatorConfig()
    est_cfg = replace(est_cfg, track_history=True, learn_noise=False)
    chan = meas.chan
    histories = []
    for obs in meas.observations:
        n_sub = obs.elements.size
        if obs.y.shape[0] == 0 or n_sub == 0:
            histories.append((obs, None, []))
            continue
        book = dft_codebook(n_sub)
        psi = obs.phi @ book.D
        _, state = absbl_mmv(obs.y, psi, est_cfg, sigma2=meas.sigma2)
        histories.append((obs, book, state.history))
    n_iter = max((len(h) for _, _, h in histories), default=0)
    traces = []
    for t in range(n_iter):
        h_hat = np.zeros_like(chan.H)
        for obs, book, hist in histories:
            if not hist:
                continue
            x_t = hist[min(t, len(hist) - 1)]
            h_hat[obs.elements] = book.D @ x_t
        traces.append(h_hat)
    return traces


def bcrb_nmse_bound(meas: TrialMeasurement, est_cfg: EstimatorConfig | None = None) -> float:
    """BCRB on the NMSE: per-subarray bounds with the learned prior, summed
    and normalized by the realized channel energy."""
    if est_cfg is None:
        est_cfg = EstimatorConfig()
    total = 0.0
    for obs in meas.observations:
        n_sub = obs.elements.size
        if obs.y.shape[0] == 0 or n_sub == 0:
            continue
        book = dft_codebook(n_sub)
        psi = obs.phi @ book.D
        _, state = absbl_mmv(obs.y, psi, replace(est_cfg, learn_noise=False),
                             sigma2=meas.sigma2)
        v_s = np.zeros((n_sub, n_sub), dtype=complex)
        edges = np.cumsum([0] + [g.size for g in state.gamma])
        for g, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
            q = np.sqrt(np.maximum(state.gamma[g], 0.0))
            v_s[a:b, a:b] = q[:, None] * state.p_blocks[g] * q[None, :]
        # pruned blocks leave zero prior rows; bcrb_bound floors them
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            total += bcrb_bound(psi, v_s, state.sigma2, m_count=obs.y.shape[1])
    denom = float(np.linalg.norm(meas.chan.H) ** 2)
    return total / denom if denom > 0 else float("nan")


def run_trial(
    cfg: SystemConfig,
    rng: np.random.Generator,
    snr_db: float,
    algorithms: list[str],
    opts: ScenarioOptions | None = None,
    architecture: str = "dhbf_mef_gaa",
    seg_variant: str = "pass",
    est_cfg: EstimatorConfig | None = None,
) -> dict[str, float]:
    """One seeded end-to-end trial; NMSE per requested algorithm."""
    chan = generate_scenario(cfg, rng, opts)
    meas = measure_scene(chan, cfg, rng, snr_db, architecture=architecture,
                         seg_variant=seg_variant)
    out = {}
    for algo in algorithms:
        h_hat = estimate_channel(meas, algo, est_cfg)
        out[algo] = nmse(h_hat, chan.H)
    return out


def run_segmentation_trial(
    cfg: SystemConfig,
    rng: np.random.Generator,
    snr_db: float,
    detectors: list[str],
    opts: ScenarioOptions | None = None,
    window: int | None = None,
) -> dict[str, float]:
    """One seeded segmentation trial; AUC per detector against truth."""
    from .segmentation import auc_score

    chan = generate_scenario(cfg, rng, opts)
    profile = measure_power(chan, rng, snr_db)
    w = cfg.SI_min if window is None else window
    match_tol = max(1, w // 8)
    out = {}
    for det in detectors:
        if det == "pass":
            res = pass_segment(profile, w)
        elif det == "rfem":
            res = rfem_segment(profile)
        elif det == "afm":
            res = afm_segment(profile, fit_width=w // 2)
        else:
            raise ValueError(f"unknown detector {det!r}")
        out[det] = auc_score(res, chan.truth_breakpoints, match_tol)
    return out
