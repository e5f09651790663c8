"""Spatially non-stationary near-field multi-carrier channel synthesis.

A channel realization is a superposition of paths. Each path carries a
complex gain, a reference (distance, angle) seen from the array center, and
a non-negative per-element mask that is zero outside the path's visibility
region (BS-VR) and encodes spherical-wave amplitude taper plus, for paths
obstructed by a knife edge, diffraction ripple.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .diffraction import (
    GeometryInfeasibleError,
    Obstacle,
    diffraction_gain,
    diffraction_geometry,
    max_diffraction_intensity,
)

IDEAL = "ideal"
NONIDEAL = "nonideal"


class MaskConfigurationError(ValueError):
    """Diffraction intensity violates the mask positivity bound."""


@dataclass
class VisibilityMask:
    """Per-element mask of one path: weights, support, and provenance."""

    s: np.ndarray                          # non-negative weights, len N
    support: np.ndarray                    # bool, len N; s == 0 outside
    block_states: np.ndarray | None = None  # Markov block states (ideal paths)
    geometry: dict | None = None           # h, d1, d2, nu, A (non-ideal paths)


@dataclass
class PathParams:
    """One propagation path between a UE/scatterer and the array."""

    g: complex
    r: float
    theta: float
    kind: str = IDEAL
    obstacle: Obstacle | None = None
    t_d: float = 0.0
    mask: VisibilityMask | None = None

    def __post_init__(self) -> None:
        if self.r <= 0:
            raise ValueError(f"path distance must be positive, got {self.r}")
        if not (-np.pi < self.theta < np.pi):
            raise ValueError(f"theta must lie in (-pi, pi), got {self.theta}")
        if self.kind not in (IDEAL, NONIDEAL):
            raise ValueError(f"unknown path kind {self.kind!r}")
        if (self.obstacle is not None) != (self.kind == NONIDEAL):
            raise ValueError("obstacle must be present iff kind is non-ideal")


@dataclass
class ChannelRealization:
    """Channel matrix with per-path metadata and the derived power profile."""

    H: np.ndarray                   # (N, M) complex, column m = subcarrier m
    paths: list[PathParams]
    power: np.ndarray               # (N,) real, |sum_m H[n, m]|^2
    freqs: np.ndarray               # (M,) subcarrier frequencies [Hz]
    truth_breakpoints: np.ndarray   # 1-based, sorted, starts at 1, ends at N+1

    @property
    def N(self) -> int:
        return self.H.shape[0]

    @property
    def M(self) -> int:
        return self.H.shape[1]


def element_distances(r: float, theta: float, cfg: SystemConfig,
                      mode: str = "exact") -> np.ndarray:
    """Distance from the source at (r, theta) to every array element.

    exact: law of cosines sqrt(r^2 + (delta_n d)^2 - 2 delta_n d r sin(theta));
    taylor: second-order expansion r - delta_n d sin(theta)
    + (delta_n d cos(theta))^2 / (2 r), used by estimator-side dictionaries.
    """
    if r <= 0:
        raise ValueError(f"distance must be positive, got {r}")
    a = cfg.delta_n * cfg.d
    if mode == "exact":
        return np.sqrt(r**2 + a**2 - 2.0 * a * r * np.sin(theta))
    if mode == "taylor":
        return r - a * np.sin(theta) + (a * np.cos(theta)) ** 2 / (2.0 * r)
    raise ValueError(f"unknown mode {mode!r}")


def steering_vector(r: float, theta: float, cfg: SystemConfig,
                    mode: str = "exact", f: float | None = None) -> np.ndarray:
    """Near-field array response, element n = exp(-j k_w (r_n - r)) / sqrt(N).

    f selects the subcarrier frequency for the wavenumber (defaults to the
    carrier). The vector has unit l2 norm in both modes.
    """
    r_n = element_distances(r, theta, cfg, mode)
    k_w = cfg.wavenumber(f)
    return np.exp(-1j * k_w * (r_n - r)) / np.sqrt(cfg.N)


def ideal_mask(path: PathParams, cfg: SystemConfig) -> np.ndarray:
    """Spherical-wave amplitude taper r / r_n for an unobstructed path."""
    if path.kind != IDEAL:
        raise ValueError("ideal_mask requires an ideal path")
    r_n = element_distances(path.r, path.theta, cfg, "exact")
    return path.r / r_n


def nonideal_mask(path: PathParams, cfg: SystemConfig,
                  return_geometry: bool = False):
    """Mask of a knife-edge-obstructed path: (r / r_n) [t_d (sqrt(A_n)-1) + 1].

    t_d scales the diffraction ripple and must satisfy
    t_d < 1 / (1 - min_n A_n) so the mask stays positive.
    """
    if path.kind != NONIDEAL or path.obstacle is None:
        raise ValueError("nonideal_mask requires a non-ideal path with an obstacle")
    h, d1, d2, nu = diffraction_geometry(path.obstacle, path.theta, cfg)
    a_n = diffraction_gain(nu)
    bound = max_diffraction_intensity(a_n)
    if path.t_d >= bound:
        raise MaskConfigurationError(
            f"t_d = {path.t_d:.4g} violates the positivity bound {bound:.4g}"
        )
    r_n = element_distances(path.r, path.theta, cfg, "exact")
    s = (path.r / r_n) * (path.t_d * (np.sqrt(a_n) - 1.0) + 1.0)
    if return_geometry:
        return s, {"h": h, "d1": d1, "d2": d2, "nu": nu, "A": a_n}
    return s


def _expand_blocks(states: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Repeat block states to element resolution (last block may be short)."""
    full = np.repeat(states.astype(bool), cfg.SI_min)
    return full[: cfg.N]


def sample_vr(
    path: PathParams,
    cfg: SystemConfig,
    rng: np.random.Generator,
    p_stay_visible: float = 0.8,
    p_stay_blocked: float = 0.8,
    p_init_visible: float | None = None,
    power_threshold: float = 0.1,
    max_resample: int = 100,
) -> VisibilityMask:
    """Draw the path's visibility region and build its mask.

    Ideal paths: block-level first-order Markov chain over ceil(N / SI_min)
    blocks of SI_min elements, redrawn until at least one block is visible.
    Non-ideal paths: the VR is the set of elements whose mask exceeds
    power_threshold times the mask maximum (no stochastic birth-death).
    """
    if not (0.0 <= p_stay_visible <= 1.0 and 0.0 <= p_stay_blocked <= 1.0):
        raise ValueError("Markov probabilities must lie in [0, 1]")

    if path.kind == NONIDEAL:
        s_full, geometry = nonideal_mask(path, cfg, return_geometry=True)
        support = s_full > power_threshold * np.max(s_full)
        s = np.where(support, s_full, 0.0)
        return VisibilityMask(s=s, support=support, geometry=geometry)

    b_si = cfg.n_blocks_si
    p_vb = 1.0 - p_stay_visible
    p_bv = 1.0 - p_stay_blocked
    if p_init_visible is None:
        p_init_visible = 0.5 if p_vb + p_bv == 0 else p_bv / (p_vb + p_bv)

    states = np.zeros(b_si, dtype=bool)
    for _ in range(max_resample):
        states[0] = rng.random() < p_init_visible
        for b in range(1, b_si):
            stay = p_stay_visible if states[b - 1] else 1.0 - p_stay_blocked
            states[b] = rng.random() < stay
        if states.any():
            break
    else:
        warnings.warn(
            "visibility chain produced only blocked states; forcing one "
            "visible block", RuntimeWarning, stacklevel=2,
        )
        states[rng.integers(b_si)] = True

    support = _expand_blocks(states, cfg)
    s = np.where(support, ideal_mask(path, cfg), 0.0)
    return VisibilityMask(s=s, support=support, block_states=states.copy())


def _default_mask(path: PathParams, cfg: SystemConfig) -> VisibilityMask:
    """Deterministic fallback mask: full visibility (ideal) or threshold VR."""
    if path.kind == IDEAL:
        s = ideal_mask(path, cfg)
        return VisibilityMask(s=s, support=np.ones(cfg.N, dtype=bool))
    s_full, geometry = nonideal_mask(path, cfg, return_geometry=True)
    support = s_full > 0.1 * np.max(s_full)
    return VisibilityMask(s=np.where(support, s_full, 0.0), support=support,
                          geometry=geometry)


def path_channel(path: PathParams, cfg: SystemConfig) -> np.ndarray:
    """(N, M) contribution of one path: g e^{-j k_m r} b(r, theta; f_m) .* s."""
    if path.mask is None:
        path.mask = _default_mask(path, cfg)
    r_n = element_distances(path.r, path.theta, cfg, "exact")
    k_m = np.asarray(cfg.wavenumber(cfg.subcarrier_freqs))
    # g e^{-j k_m r} exp(-j k_m (r_n - r)) / sqrt(N) = g exp(-j k_m r_n) / sqrt(N)
    phases = np.exp(-1j * np.outer(r_n, k_m))
    return (path.g / np.sqrt(cfg.N)) * phases * path.mask.s[:, None]


def breakpoints_from_masks(paths: list[PathParams], cfg: SystemConfig) -> np.ndarray:
    """1-based indices where the visible-path set changes, plus 1 and N+1."""
    if paths:
        supports = np.stack([
            p.mask.support if p.mask is not None else np.ones(cfg.N, bool)
            for p in paths
        ])
        changed = np.any(supports[:, 1:] != supports[:, :-1], axis=0)
        interior = np.flatnonzero(changed) + 2  # change between n-1 and n -> n
    else:
        interior = np.array([], dtype=int)
    return np.concatenate(([1], interior, [cfg.N + 1])).astype(int)


def assemble_channel(cfg: SystemConfig, paths: list[PathParams]) -> ChannelRealization:
    """Superpose per-path contributions and derive the power profile.

    Column m of H is the channel at subcarrier f_m; the per-element power is
    p_n = |sum_m H[n, m]|^2, the coherent wideband composite.
    """
    if not paths:
        raise ValueError("assemble_channel requires at least one path")
    for p in paths:
        if p.mask is None:
            p.mask = _default_mask(p, cfg)
    H = np.zeros((cfg.N, cfg.M), dtype=complex)
    for p in paths:
        H += path_channel(p, cfg)
    power = np.abs(H.sum(axis=1)) ** 2
    return ChannelRealization(
        H=H, paths=paths, power=power, freqs=cfg.subcarrier_freqs,
        truth_breakpoints=breakpoints_from_masks(paths, cfg),
    )


def zero_padded_angular_spectrum(h_vr: np.ndarray, p0: int, r0: int) -> np.ndarray:
    """Length-(p0 + Q + r0) unnormalized DFT of h_vr padded with zeros.

    Energy convention: sum_k |out|^2 = S * sum_n |h_vr|^2 with S the padded
    length (unnormalized forward transform).
    """
    h_vr = np.asarray(h_vr)
    if h_vr.ndim != 1 or h_vr.size < 1:
        raise ValueError("h_vr must be a non-empty 1-D sequence")
    if p0 < 0 or r0 < 0:
        raise ValueError("pad lengths must be non-negative")
    padded = np.concatenate([
        np.zeros(p0, dtype=complex), h_vr.astype(complex), np.zeros(r0, dtype=complex)
    ])
    return np.fft.fft(padded)


def dirichlet_interpolation(h_vr: np.ndarray, p0: int, r0: int) -> np.ndarray:
    """Angular spectrum of the padded sequence via Dirichlet-kernel interpolation.

    Evaluates, for k = 0..S-1 with S = p0 + Q + r0,
    e^{-j 2 pi k p0 / S} sum_m (h_a(m)/Q) (1 - e^{-j 2 pi k Q / S})
    / (1 - e^{j (2 pi / Q)(m - k Q / S)}), where h_a is the length-Q DFT of
    h_vr; removable singularities at m = k Q / S take their limit value h_a(m).
    Equals the zero-padded DFT exactly; kept as the under-segmentation
    diagnostic showing how padding interpolates the angular representation.
    """
    h_vr = np.asarray(h_vr, dtype=complex)
    q = h_vr.size
    s = p0 + q + r0
    h_a = np.fft.fft(h_vr)                     # length-Q angular representation
    k = np.arange(s)[:, None]                  # (S, 1)
    m = np.arange(q)[None, :]                  # (1, Q)
    x = m - k * q / s                          # argument of the kernel
    denom = 1.0 - np.exp(1j * 2.0 * np.pi / q * x)
    numer = 1.0 - np.exp(-1j * 2.0 * np.pi * k * q / s)
    singular = np.isclose(denom, 0.0, atol=1e-12)
    ratio = np.where(singular, float(q), np.divide(numer, np.where(singular, 1.0, denom)))
    out = (np.exp(-1j * 2.0 * np.pi * k.ravel() * p0 / s)
           * (ratio @ h_a) / q)
    return out
