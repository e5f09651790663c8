"""Config-driven Monte Carlo experiment harness.

Every experiment derives one RNG stream per (sweep value, trial) from the
spec seed via SeedSequence spawn keys, so results are bit-reproducible
regardless of worker count or completion order. results.csv is the canonical
deterministic artifact: its runtime_ms column is zero unless timing is
explicitly enabled, since wall-clock values would break byte-level
reproducibility; measured runtimes always go to results.json and meta.json.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import SystemConfig
from .estimator import EstimatorConfig, nmse
from .pipeline import (
    ARCHITECTURES,
    ON_GRID_ALGORITHMS,
    OFF_GRID_ALGORITHMS,
    SEGMENTATION_VARIANTS,
    bcrb_nmse_bound,
    estimate_channel,
    estimate_with_trace,
    measure_power,
    measure_scene,
    run_segmentation_trial,
)
from .scenario import ScenarioOptions, generate_scenario


class ConfigError(ValueError):
    """The experiment spec is invalid."""


class ExperimentFailure(RuntimeError):
    """More than 10% of the trials raised errors."""


@dataclass
class ExperimentDef:
    sweep_param: str
    default_sweep: tuple
    algorithms: tuple[str, ...]
    allowed: tuple[str, ...]
    overrides: dict
    params: dict


_NMSE_ALGOS = ON_GRID_ALGORITHMS + OFF_GRID_ALGORITHMS
_DESK = {"N": 256, "M": 5, "K": 3, "L": 3, "SI_min": 32, "N_RF": 4, "P": 32}
_SEG_SCENE = {"N": 512, "M": 5, "K": 6, "L": 3, "SI_min": 64, "N_RF": 4, "P": 32}

EXPERIMENTS: dict[str, ExperimentDef] = {
    "nmse_vs_snr": ExperimentDef(
        "snr_db", (0.0, 5.0, 10.0, 15.0, 20.0),
        ("ss_absbl_mmv", "ss_absbl", "ss_bsbl", "ss_somp"), _NMSE_ALGOS,
        dict(_DESK), {"t_d": 1.0},
    ),
    "nmse_vs_pilots": ExperimentDef(
        "P", (16, 32, 64),
        ("ss_absbl_mmv", "ss_absbl", "ss_bsbl", "ss_somp"), _NMSE_ALGOS,
        dict(_DESK), {"snr_db": 10.0, "t_d": 1.0},
    ),
    "nmse_vs_paths": ExperimentDef(
        "L", (2, 4, 6, 8, 10),
        ("ss_absbl_mmv", "ss_absbl", "ss_somp"), _NMSE_ALGOS,
        dict(_DESK, P=64), {"snr_db": 15.0, "t_d": 1.0},
    ),
    "nmse_vs_distance": ExperimentDef(
        "distance_m", (1.5, 3.0, 6.0, 10.0, 20.0, 31.5),
        ("ss_absbl_mmv", "ss_absbl", "ss_somp", "bcrb"),
        _NMSE_ALGOS + ("bcrb",),
        dict(_DESK, N=128, K=1, P=20), {"snr_db": 10.0},
    ),
    "convergence": ExperimentDef(
        "snr_db", (10.0, 15.0),
        ("ss_absbl_mmv",), ("ss_absbl_mmv",),
        dict(_DESK, P=40), {"t_d": 1.0},
    ),
    "auc_vs_snr": ExperimentDef(
        "snr_db", (-5.0, 0.0, 5.0, 10.0, 15.0),
        ("pass", "rfem", "afm"), ("pass", "rfem", "afm"),
        dict(_SEG_SCENE), {"t_d": 1.5},
    ),
    "auc_vs_K": ExperimentDef(
        "K", (2, 4, 6, 8),
        ("pass", "rfem", "afm"), ("pass", "rfem", "afm"),
        dict(_SEG_SCENE), {"snr_db": 5.0, "t_d": 1.5},
    ),
    "auc_vs_td": ExperimentDef(
        "t_d", (0.5, 1.0, 1.5, 2.0),
        ("pass", "rfem", "afm"), ("pass", "rfem", "afm"),
        dict(_SEG_SCENE), {"snr_db": 5.0},
    ),
    "architecture_compare": ExperimentDef(
        "P", (16, 32),
        ARCHITECTURES, ARCHITECTURES,
        dict(_DESK), {"snr_db": 10.0, "estimator": "ss_absbl_mmv", "t_d": 1.0},
    ),
    "segmentation_ablation": ExperimentDef(
        "snr_db", (10.0,),
        SEGMENTATION_VARIANTS, SEGMENTATION_VARIANTS,
        dict(_DESK), {"estimator": "ss_absbl_mmv", "t_d": 1.0},
    ),
}


@dataclass
class ExperimentSpec:
    """One experiment request: what to sweep, how many trials, which seed."""

    experiment: str
    sweep: list = field(default_factory=list)
    trials: int = 100
    algorithms: list[str] = field(default_factory=list)
    overrides: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; "
                              f"known: {sorted(EXPERIMENTS)}")
        exp = EXPERIMENTS[self.experiment]
        if not self.sweep:
            self.sweep = list(exp.default_sweep)
        if not self.algorithms:
            self.algorithms = list(exp.algorithms)
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        unknown = [a for a in self.algorithms if a not in exp.allowed]
        if unknown:
            raise ConfigError(f"algorithms {unknown} not valid for "
                              f"{self.experiment}; allowed: {list(exp.allowed)}")
        merged_params = dict(exp.params)
        merged_params.update(self.params)
        self.params = merged_params
        merged_over = dict(exp.overrides)
        merged_over.update(self.overrides)
        self.overrides = merged_over

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment, "sweep": list(self.sweep),
            "trials": self.trials, "algorithms": list(self.algorithms),
            "overrides": dict(self.overrides), "params": dict(self.params),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        known = {"experiment", "sweep", "trials", "algorithms", "overrides",
                 "params", "seed"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown spec fields: {sorted(extra)}")
        if "experiment" not in doc:
            raise ConfigError("spec must name an experiment")
        return cls(**doc)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True,
                           separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def child_rng(self, sweep_idx: int, trial: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed,
                                    spawn_key=(sweep_idx, trial))
        return np.random.default_rng(ss)


@dataclass
class ResultTable:
    """Aggregated rows plus provenance metadata."""

    rows: list[dict]
    meta: dict

    CSV_HEADER = ("sweep_param", "sweep_value", "algorithm", "metric",
                  "mean", "stderr", "trials", "runtime_ms")

    def to_csv(self, include_runtime: bool = False) -> str:
        lines = [",".join(self.CSV_HEADER)]
        for r in self.rows:
            rt = r["runtime_ms"] if include_runtime else 0.0
            lines.append(",".join([
                str(r["sweep_param"]), _fmt(r["sweep_value"]), r["algorithm"],
                r["metric"], _fmt(r["mean"]), _fmt(r["stderr"]),
                str(r["trials"]), _fmt(rt),
            ]))
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, include_runtime: bool = False) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(self.to_csv(include_runtime))
        (out / "results.json").write_text(
            json.dumps({"rows": self.rows, "meta": self.meta}, indent=1,
                       sort_keys=True))
        (out / "meta.json").write_text(json.dumps(self.meta, indent=1,
                                                  sort_keys=True))


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".12g")


def _build_config(spec: ExperimentSpec, sweep_value) -> SystemConfig:
    fields = dict(spec.overrides)
    exp = EXPERIMENTS[spec.experiment]
    if exp.sweep_param in SystemConfig.__dataclass_fields__:
        fields[exp.sweep_param] = sweep_value
    fields.setdefault("seed", spec.seed)
    try:
        return SystemConfig(**fields)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


def _scenario_options(spec: ExperimentSpec, sweep_value) -> ScenarioOptions:
    exp = EXPERIMENTS[spec.experiment]
    t_d = spec.params.get("t_d", 1.0)
    if exp.sweep_param == "t_d":
        t_d = float(sweep_value)
    if spec.experiment == "nmse_vs_distance":
        r = float(sweep_value)
        return ScenarioOptions.full_visibility(r_range=(r, r))
    return ScenarioOptions(t_d=t_d, p_nonideal=0.5 if t_d > 0 else 0.0)


def _estimator_config(spec: ExperimentSpec) -> EstimatorConfig:
    kwargs = spec.params.get("estimator_config", {})
    return EstimatorConfig(**kwargs)


def run_single_trial(spec: ExperimentSpec, sweep_idx: int,
                     trial: int) -> list[tuple[str, str, float, float]]:
    """Execute one (sweep value, trial) cell; returns (algo, metric, value,
    runtime_ms) records."""
    exp = EXPERIMENTS[spec.experiment]
    value = spec.sweep[sweep_idx]
    rng = spec.child_rng(sweep_idx, trial)
    cfg = _build_config(spec, value)
    opts = _scenario_options(spec, value)
    snr_db = float(value) if exp.sweep_param == "snr_db" else \
        float(spec.params.get("snr_db", 10.0))
    est_cfg = _estimator_config(spec)
    records: list[tuple[str, str, float, float]] = []

    if spec.experiment in ("auc_vs_snr", "auc_vs_K", "auc_vs_td"):
        t0 = time.perf_counter()
        aucs = run_segmentation_trial(cfg, rng, snr_db, list(spec.algorithms),
                                      opts=opts)
        dt = (time.perf_counter() - t0) * 1e3 / max(len(aucs), 1)
        for det, auc in aucs.items():
            records.append((det, "auc", auc, dt))
        return records

    chan = generate_scenario(cfg, rng, opts)

    if spec.experiment == "convergence":
        meas = measure_scene(chan, cfg, rng, snr_db)
        for algo in spec.algorithms:
            t0 = time.perf_counter()
            traces = estimate_with_trace(meas, est_cfg)
            dt = (time.perf_counter() - t0) * 1e3
            for t, h_hat in enumerate(traces, start=1):
                records.append((algo, f"nmse_iter_{t:03d}",
                                nmse(h_hat, chan.H), dt / max(len(traces), 1)))
        return records

    if spec.experiment == "architecture_compare":
        estimator = spec.params.get("estimator", "ss_absbl_mmv")
        for arch in spec.algorithms:
            sub_rng = np.random.default_rng(rng.integers(2**63))
            t0 = time.perf_counter()
            meas = measure_scene(chan, cfg, sub_rng, snr_db, architecture=arch)
            h_hat = estimate_channel(meas, estimator, est_cfg)
            dt = (time.perf_counter() - t0) * 1e3
            records.append((arch, "nmse", nmse(h_hat, chan.H), dt))
        return records

    if spec.experiment == "segmentation_ablation":
        estimator = spec.params.get("estimator", "ss_absbl_mmv")
        profile = measure_power(chan, rng, snr_db)
        for variant in spec.algorithms:
            sub_rng = np.random.default_rng(rng.integers(2**63))
            t0 = time.perf_counter()
            meas = measure_scene(chan, cfg, sub_rng, snr_db,
                                 seg_variant=variant, profile=profile)
            h_hat = estimate_channel(meas, estimator, est_cfg)
            dt = (time.perf_counter() - t0) * 1e3
            records.append((variant, "nmse", nmse(h_hat, chan.H), dt))
        return records

    # nmse_vs_snr / nmse_vs_pilots / nmse_vs_paths / nmse_vs_distance
    architecture = spec.params.get(
        "architecture",
        "fully_connected" if spec.experiment == "nmse_vs_distance"
        else "dhbf_mef_gaa",
    )
    meas = measure_scene(chan, cfg, rng, snr_db, architecture=architecture)
    for algo in spec.algorithms:
        t0 = time.perf_counter()
        if algo == "bcrb":
            val = bcrb_nmse_bound(meas, est_cfg)
            metric = "nmse_bound"
        else:
            h_hat = estimate_channel(meas, algo, est_cfg)
            val = nmse(h_hat, chan.H)
            metric = "nmse"
        dt = (time.perf_counter() - t0) * 1e3
        records.append((algo, metric, val, dt))
    return records


def _trial_worker(payload: tuple[dict, int, int]):
    doc, sweep_idx, trial = payload
    spec = ExperimentSpec.from_dict(doc)
    try:
        return sweep_idx, trial, run_single_trial(spec, sweep_idx, trial), None
    except Exception as err:  # noqa: BLE001 - per-trial errors are recorded
        return sweep_idx, trial, None, f"{type(err).__name__}: {err}"


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ResultTable:
    """Run all (sweep value, trial) cells and aggregate the metric rows.

    Fails with ExperimentFailure when more than 10% of trials error; the
    surviving trials are aggregated either way.
    """
    exp = EXPERIMENTS[spec.experiment]
    t_start = time.perf_counter()
    tasks = [(spec.to_dict(), i, t)
             for i in range(len(spec.sweep)) for t in range(spec.trials)]
    results = {}
    errors: list[str] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for sweep_idx, trial, recs, err in pool.map(_trial_worker, tasks):
                results[(sweep_idx, trial)] = recs
                if err:
                    errors.append(f"sweep={spec.sweep[sweep_idx]} trial={trial}: {err}")
    else:
        for payload in tasks:
            sweep_idx, trial, recs, err = _trial_worker(payload)
            results[(sweep_idx, trial)] = recs
            if err:
                errors.append(f"sweep={spec.sweep[sweep_idx]} trial={trial}: {err}")

    agg: dict[tuple[int, str, str], list[tuple[float, float]]] = {}
    for (sweep_idx, _trial), recs in sorted(results.items()):
        if recs is None:
            continue
        for algo, metric, value, dt in recs:
            agg.setdefault((sweep_idx, algo, metric), []).append((value, dt))

    rows = []
    for (sweep_idx, algo, metric) in sorted(agg):
        vals = np.array([v for v, _ in agg[(sweep_idx, algo, metric)]])
        times = np.array([t for _, t in agg[(sweep_idx, algo, metric)]])
        n = vals.size
        stderr = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        rows.append({
            "sweep_param": exp.sweep_param,
            "sweep_value": spec.sweep[sweep_idx],
            "algorithm": algo,
            "metric": metric,
            "mean": float(vals.mean()),
            "stderr": stderr,
            "trials": int(n),
            "runtime_ms": float(times.mean()),
        })

    wall_ms = (time.perf_counter() - t_start) * 1e3
    meta = {
        "experiment": spec.experiment,
        "config_hash": spec.config_hash(),
        "seed": spec.seed,
        "version": __version__,
        "trials_requested": spec.trials * len(spec.sweep),
        "trials_errored": len(errors),
        "errors": errors[:20],
        "runtime_ms_total": wall_ms,
        "workers": workers,
    }
    table = ResultTable(rows=rows, meta=meta)
    if len(errors) > 0.1 * spec.trials * len(spec.sweep):
        raise ExperimentFailure(
            f"{len(errors)} of {spec.trials * len(spec.sweep)} trials failed; "
            f"first: {errors[0]}"
        )
    return table


def seed_report(spec: ExperimentSpec) -> list[dict]:
    """Derived child-stream identities per (sweep value, trial)."""
    out = []
    for i, v in enumerate(spec.sweep):
        for t in range(spec.trials):
            ss = np.random.SeedSequence(entropy=spec.seed, spawn_key=(i, t))
            out.append({
                "sweep_value": v, "trial": t,
                "spawn_key": [i, t],
                "state_word": int(ss.generate_state(1)[0]),
            })
    return out
