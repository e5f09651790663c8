"""Dynamic hybrid beamforming receiver: RF-chain allocation, SS-SM sampling,
pilot reception, and subarray decoupling.

A chain serving several subarrays activates exactly one of them per pilot
slot, cycling through its list; within one cycle the chain reuses one random
unit-modulus analog row, masked to the active subarray and scaled to unit
norm. Routing measurements back to the subarray active in their slot yields,
per subarray, an uncoupled linear observation of its channel block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .segmentation import SegmentationResult


class EmptySceneError(RuntimeError):
    """Every subarray fell below the power prune threshold."""


class InfeasiblePilotError(ValueError):
    """Fewer pilot slots than subarrays on some RF chain."""


@dataclass
class RfAllocation:
    """Subarray element sets and their assignment to RF chains."""

    subarrays: list[np.ndarray]   # 0-based element indices per on-mode subarray
    classes: list[list[int]]      # per chain, indices into subarrays
    on_mode: list[int]            # original subarray ordinals that survived pruning

    @property
    def n_chains(self) -> int:
        return len(self.classes)

    @property
    def chain_elements(self) -> list[np.ndarray]:
        """J_nRF: union of element indices served by each chain."""
        return [
            np.unique(np.concatenate([self.subarrays[j] for j in cls]))
            if cls else np.array([], dtype=int)
            for cls in self.classes
        ]

    @property
    def subarrays_per_chain(self) -> list[int]:
        return [len(cls) for cls in self.classes]

    @property
    def class_loads(self) -> list[int]:
        return [sum(len(self.subarrays[j]) for j in cls) for cls in self.classes]


@dataclass
class MeasurementPlan:
    """Per-slot combiners, the SS-SM schedule, and noise level."""

    combiners: np.ndarray        # (P, N_RF, N) complex, unit-norm rows
    schedule: np.ndarray         # (P, N_RF) int, active subarray or -1 (idle)
    alloc: RfAllocation
    noise_variance: float
    effective_pilots: np.ndarray  # per subarray, total measurements

    @property
    def n_pilots(self) -> int:
        return self.combiners.shape[0]


@dataclass
class SubarrayObservations:
    """Decoupled measurements of one subarray."""

    y: np.ndarray          # (T, M)
    phi: np.ndarray        # (T, N_sub) effective combiner
    elements: np.ndarray   # 0-based element indices in the full array


def prune_subarrays(power: np.ndarray, seg: SegmentationResult,
                    eta: float) -> list[int]:
    """Indices of subarrays whose mean element power exceeds eta."""
    if eta < 0:
        raise ValueError("eta must be non-negative")
    power = np.asarray(power, dtype=float)
    on = [i for i, elems in enumerate(seg.subarrays)
          if float(np.mean(power[elems])) > eta]
    if not on:
        raise EmptySceneError("all subarrays pruned; nothing to estimate")
    return on


def mef_gaa(sizes: list[int] | np.ndarray, n_rf: int) -> list[list[int]]:
    """Max-element-first greedy allocation of subarrays to RF chains.

    Subarrays are taken in descending size order and assigned to the class
    with the fewest elements (ties to the lowest class index). With fewer
    subarrays than chains, each subarray first gets a dedicated chain and
    surplus chains are distributed round-robin in descending size order.
    """
    sizes = list(sizes)
    if not sizes or n_rf < 1:
        raise ValueError("need at least one subarray and one RF chain")
    order = sorted(range(len(sizes)), key=lambda j: (-sizes[j], j))
    classes: list[list[int]] = [[] for _ in range(n_rf)]
    n_s = len(sizes)
    if n_s <= n_rf:
        for c, j in enumerate(order):
            classes[c].append(j)
        for extra in range(n_rf - n_s):
            classes[n_s + extra].append(order[extra % n_s])
        return classes
    loads = [0] * n_rf
    for j in order:
        k = loads.index(min(loads))
        classes[k].append(j)
        loads[k] += sizes[j]
    return classes


def random_allocation(sizes: list[int] | np.ndarray, n_rf: int,
                      rng: np.random.Generator) -> list[list[int]]:
    """Assign every subarray to a uniformly random chain (chains may idle)."""
    classes: list[list[int]] = [[] for _ in range(n_rf)]
    for j in range(len(sizes)):
        classes[int(rng.integers(n_rf))].append(j)
    return classes


def make_allocation(seg: SegmentationResult, on_mode: list[int],
                    n_rf: int, strategy: str = "mef_gaa",
                    rng: np.random.Generator | None = None) -> RfAllocation:
    """Build an RfAllocation for the on-mode subarrays of a segmentation."""
    subarrays = [seg.subarrays[i] for i in on_mode]
    sizes = [len(s) for s in subarrays]
    if strategy == "mef_gaa":
        classes = mef_gaa(sizes, n_rf)
    elif strategy == "random":
        if rng is None:
            raise ValueError("random allocation needs an rng")
        classes = random_allocation(sizes, n_rf, rng)
    else:
        raise ValueError(f"unknown allocation strategy {strategy!r}")
    return RfAllocation(subarrays=subarrays, classes=classes, on_mode=list(on_mode))


def build_combiners(alloc: RfAllocation, cfg: SystemConfig,
                    rng: np.random.Generator,
                    noise_variance: float) -> MeasurementPlan:
    """Draw per-slot analog combiners realizing the SS-SM schedule.

    Within each chain, one unit-modulus base row with i.i.d. U(0, 2pi) phases
    is drawn per decoupling cycle; slot p masks it to the cyclically active
    subarray and scales the row to unit l2 norm.
    """
    p_total = cfg.P
    ks = alloc.subarrays_per_chain
    if any(k > p_total for k in ks if k > 0):
        raise InfeasiblePilotError(
            f"P={p_total} pilots cannot cover a chain serving {max(ks)} subarrays"
        )
    n_rf = alloc.n_chains
    combiners = np.zeros((p_total, n_rf, cfg.N), dtype=complex)
    schedule = np.full((p_total, n_rf), -1, dtype=int)
    for c, cls in enumerate(alloc.classes):
        if not cls:
            continue
        k = len(cls)
        elems_chain = alloc.chain_elements[c]
        base = None
        for p in range(p_total):
            j = p % k
            if j == 0:
                phases = rng.uniform(0.0, 2.0 * np.pi, size=elems_chain.size)
                base = np.exp(1j * phases)
            sub = cls[j]
            sub_elems = alloc.subarrays[sub]
            mask = np.isin(elems_chain, sub_elems)
            row = np.zeros(cfg.N, dtype=complex)
            row[elems_chain[mask]] = base[mask] / np.sqrt(mask.sum())
            combiners[p, c] = row
            schedule[p, c] = sub
    eff = np.zeros(len(alloc.subarrays), dtype=int)
    for j in range(len(alloc.subarrays)):
        eff[j] = int(np.sum(schedule == j))
    if np.any(eff[np.array([len(s) > 0 for s in alloc.subarrays])] < 1):
        raise InfeasiblePilotError("some on-mode subarray receives no pilot")
    return MeasurementPlan(combiners=combiners, schedule=schedule, alloc=alloc,
                           noise_variance=noise_variance, effective_pilots=eff)


def simulate_reception(H: np.ndarray, plan: MeasurementPlan,
                       rng: np.random.Generator) -> np.ndarray:
    """Received pilot symbols y[m, p, c] = (U_p (h_m + n_{m,p}))_c.

    Pilot symbols are all one; the additive noise is CN(0, sigma_n^2 I_N) per
    (subcarrier, slot), so each scalar measurement sees CN(0, sigma_n^2)
    noise thanks to the unit-norm combiner rows.
    """
    n, m = H.shape
    p_total, n_rf, n_cols = plan.combiners.shape
    if n_cols != n:
        raise ValueError("plan and channel dimensions disagree")
    y = np.empty((m, p_total, n_rf), dtype=complex)
    sigma = np.sqrt(plan.noise_variance / 2.0)
    for p in range(p_total):
        if plan.noise_variance > 0:
            noise = sigma * (rng.standard_normal((n, m))
                             + 1j * rng.standard_normal((n, m)))
        else:
            noise = 0.0
        y[:, p, :] = ((H + noise).T @ plan.combiners[p].T)
    return y


def decouple(y: np.ndarray, plan: MeasurementPlan) -> list[SubarrayObservations]:
    """Route measurements to the subarray active in their slot.

    Returns one observation block per subarray in allocation order; rows are
    ordered by (chain, slot). Noiseless round trips satisfy
    y_sub = phi @ h_sub exactly.
    """
    m, p_total, n_rf = y.shape
    if (p_total, n_rf) != plan.schedule.shape:
        raise ValueError("observations do not match the plan schedule")
    out: list[SubarrayObservations] = []
    for j, elems in enumerate(plan.alloc.subarrays):
        rows = []
        obs = []
        for c in range(n_rf):
            for p in range(p_total):
                if plan.schedule[p, c] == j:
                    rows.append(plan.combiners[p, c, elems])
                    obs.append(y[:, p, c])
        phi = np.array(rows) if rows else np.zeros((0, elems.size), dtype=complex)
        y_sub = np.array(obs) if obs else np.zeros((0, m), dtype=complex)
        out.append(SubarrayObservations(y=y_sub, phi=phi, elements=elems))
    return out


def measurement_snr_sigma2(H: np.ndarray, snr_db: float) -> float:
    """Noise variance giving the requested per-measurement SNR.

    With unit-norm combiner rows of i.i.d. phases, the mean measurement
    signal power equals the mean per-element channel power, so
    sigma_n^2 = mean |H|^2 * 10^(-SNR/10).
    """
    mean_power = float(np.mean(np.abs(H) ** 2))
    return mean_power * 10.0 ** (-snr_db / 10.0)
