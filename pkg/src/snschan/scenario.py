"""Random scenario sampling and bit-exact JSON serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .channel import (
    IDEAL,
    NONIDEAL,
    ChannelRealization,
    PathParams,
    VisibilityMask,
    assemble_channel,
    sample_vr,
)
from .config import SystemConfig
from .diffraction import (
    GeometryInfeasibleError,
    Obstacle,
    diffraction_gain,
    diffraction_geometry,
    max_diffraction_intensity,
)


@dataclass(frozen=True)
class ScenarioOptions:
    """Distributions used when drawing random scenarios."""

    r_range: tuple[float, float] = (10.0, 100.0)
    theta_range: tuple[float, float] = (-2.0 * np.pi / 3.0, 2.0 * np.pi / 3.0)
    t_d: float = 1.0
    p_nonideal: float = 0.5        # chance that a UE's first path is obstructed
    p_stay_visible: float = 0.8
    p_stay_blocked: float = 0.8
    p_init_visible: float | None = None   # None = stationary distribution
    power_threshold: float = 0.1
    d1_frac_range: tuple[float, float] = (0.3, 0.7)
    h_ref_lambdas: float = 5.0     # h_ref ~ U(-5 lambda, 5 lambda)

    @classmethod
    def full_visibility(cls, **kwargs) -> "ScenarioOptions":
        """No spatial non-stationarity: every path sees the whole array."""
        return cls(t_d=0.0, p_nonideal=0.0, p_stay_visible=1.0,
                   p_init_visible=1.0, **kwargs)


def _sample_obstacle(r: float, theta: float, cfg: SystemConfig,
                     rng: np.random.Generator,
                     opts: ScenarioOptions) -> tuple[Obstacle, float]:
    """Draw a knife edge on the path and the largest legal intensity for it.

    The requested t_d is capped just below the positivity bound
    1/(1 - min_n A_n), which random geometries frequently violate for
    t_d > 1 because the per-element clearance sweeps into deep shadow.
    """
    for _ in range(50):
        d1 = rng.uniform(*opts.d1_frac_range) * r
        h_ref = rng.uniform(-opts.h_ref_lambdas, opts.h_ref_lambdas) * cfg.wavelength
        obstacle = Obstacle(h_ref=h_ref, d1_ref=d1, d2_ref=r - d1)
        try:
            _, _, _, nu = diffraction_geometry(obstacle, theta, cfg)
        except GeometryInfeasibleError:
            continue
        bound = max_diffraction_intensity(np.asarray(diffraction_gain(nu)))
        return obstacle, 0.99 * bound
    raise GeometryInfeasibleError("could not place a knife edge on the path")


def sample_paths(cfg: SystemConfig, rng: np.random.Generator,
                 opts: ScenarioOptions | None = None) -> list[PathParams]:
    """Draw K x L paths with gains CN(0,1) and sampled visibility regions.

    At most one path per UE is non-ideal; its diffraction intensity is
    min(opts.t_d, cap) with cap just below the geometry's positivity bound.
    """
    if opts is None:
        opts = ScenarioOptions()
    paths: list[PathParams] = []
    for _ in range(cfg.K):
        for l in range(cfg.L):
            g = (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2)
            r = rng.uniform(*opts.r_range)
            theta = rng.uniform(*opts.theta_range)
            nonideal = (l == 0 and opts.t_d > 0
                        and rng.random() < opts.p_nonideal)
            if nonideal:
                obstacle, t_cap = _sample_obstacle(r, theta, cfg, rng, opts)
                path = PathParams(g=g, r=r, theta=theta, kind=NONIDEAL,
                                  obstacle=obstacle,
                                  t_d=min(opts.t_d, t_cap))
            else:
                path = PathParams(g=g, r=r, theta=theta, kind=IDEAL)
            path.mask = sample_vr(
                path, cfg, rng,
                p_stay_visible=opts.p_stay_visible,
                p_stay_blocked=opts.p_stay_blocked,
                p_init_visible=opts.p_init_visible,
                power_threshold=opts.power_threshold,
            )
            paths.append(path)
    return paths


def generate_scenario(cfg: SystemConfig, rng: np.random.Generator,
                      opts: ScenarioOptions | None = None) -> ChannelRealization:
    """Sample paths and assemble the channel realization."""
    return assemble_channel(cfg, sample_paths(cfg, rng, opts))


def _complex_pair(z: complex) -> list[float]:
    return [float(np.real(z)), float(np.imag(z))]


def scenario_to_dict(cfg: SystemConfig, chan: ChannelRealization) -> dict:
    """JSON-ready scenario document (complex values as (re, im) pairs)."""
    paths = []
    for p in chan.paths:
        entry = {
            "g": _complex_pair(p.g),
            "r": p.r,
            "theta": p.theta,
            "kind": p.kind,
            "t_d": p.t_d,
            "obstacle": None if p.obstacle is None else {
                "h_ref": p.obstacle.h_ref,
                "d1_ref": p.obstacle.d1_ref,
                "d2_ref": p.obstacle.d2_ref,
            },
            "mask_s": [float(v) for v in p.mask.s] if p.mask is not None else None,
            "support": [int(v) for v in p.mask.support] if p.mask is not None else None,
        }
        paths.append(entry)
    return {
        "config": cfg.to_dict(),
        "paths": paths,
        "truth_breakpoints": [int(b) for b in chan.truth_breakpoints],
    }


def scenario_from_dict(doc: dict) -> tuple[SystemConfig, ChannelRealization]:
    """Rebuild the scenario; the channel matrix is re-synthesized from paths."""
    cfg = SystemConfig.from_dict(doc["config"])
    paths = []
    for entry in doc["paths"]:
        obstacle = entry["obstacle"]
        path = PathParams(
            g=complex(entry["g"][0], entry["g"][1]),
            r=entry["r"],
            theta=entry["theta"],
            kind=entry["kind"],
            obstacle=None if obstacle is None else Obstacle(**obstacle),
            t_d=entry["t_d"],
        )
        if entry["mask_s"] is not None:
            s = np.array(entry["mask_s"], dtype=float)
            support = np.array(entry["support"], dtype=bool)
            path.mask = VisibilityMask(s=s, support=support)
        paths.append(path)
    chan = assemble_channel(cfg, paths)
    chan.truth_breakpoints = np.array(doc["truth_breakpoints"], dtype=int)
    return cfg, chan


def save_scenario(path: str, cfg: SystemConfig, chan: ChannelRealization) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(cfg, chan), fh, indent=1)


def load_scenario(path: str) -> tuple[SystemConfig, ChannelRealization]:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))
