"""Cross-layer allocator: static MAC weights replace the KKT multipliers.

Each band goes to the user with the largest ``W_k * E_kb`` and receives an
equal share ``P_T / B`` of the budget. After interference control, the power
taken from interfering users is handed to the most rate-deficient HQoS user
that does not itself interfere with a primary.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from ..interference import PrimaryUserBand, overlap_factors
from ..mac import UserProfile, priority_rank
from .control import interference_control
from .kkt import assign_subbands
from .model import (DEGENERATE, POWER_REFINED, DEFAULT_RATE_MODEL, AllocationResult, RateModel,
                    SolverConfig, base_result, user_rates)


def cross_layer_metric(profiles: Sequence[UserProfile], quality: np.ndarray) -> np.ndarray:
    weights = np.array([p.absolute_weight for p in profiles], dtype=float)
    return weights[:, None] * np.asarray(quality, dtype=float)


def equal_power_allocation(profiles: Sequence[UserProfile], quality: np.ndarray,
                           total_power: float, cfg: SolverConfig | None = None,
                           rate_model: RateModel = DEFAULT_RATE_MODEL) -> AllocationResult:
    """Steps 1-3: equal power per band, assignment by largest W_k E_kb."""
    cfg = cfg or SolverConfig()
    E = np.asarray(quality, dtype=float)
    K, B = E.shape
    rho = assign_subbands(cross_layer_metric(profiles, E), cfg.assignment_mode,
                          priority_rank(list(profiles)))
    P = rho * (total_power / B)
    flags = {DEGENERATE} if np.any(~rho.any(axis=0)) else set()
    weights = np.array([p.absolute_weight for p in profiles])
    return base_result(profiles, rho, P, E, weights, rate_model=rate_model, flags=flags)


def qos_power_refinement(alloc: AllocationResult, primaries: Sequence[PrimaryUserBand],
                         profiles: Sequence[UserProfile], quality: np.ndarray,
                         rate_model: RateModel = DEFAULT_RATE_MODEL) -> AllocationResult:
    """Step 5: give the reduced power pool to an unsatisfied, non-interfering HQoS user."""
    pool = float(alloc.reductions.sum())
    if pool <= 0:
        return alloc
    conflict_bands = {b for p in primaries for b, ib in enumerate(overlap_factors(p).per_band) if ib != 0}
    rank = priority_rank(list(profiles))
    cands = []
    for k, prof in enumerate(profiles):
        if not prof.is_hqos or alloc.achieved_rates[k] >= alloc.targets[k]:
            continue
        bands = np.flatnonzero(alloc.rho[k])
        if bands.size == 0 or any(b in conflict_bands for b in bands):
            continue
        cands.append(k)
    if not cands:
        return alloc
    k = min(cands, key=lambda k: (alloc.achieved_rates[k] - alloc.targets[k], rank[k]))
    bands = np.flatnonzero(alloc.rho[k])
    b = int(bands[np.argmax(quality[k, bands])])
    power = alloc.power.copy()
    power[k, b] += pool
    lambdas = [p.lam for p in profiles]
    rates = rate_model.to_mbps(user_rates(power, alloc.reductions, alloc.overlap_fraction,
                                          quality, lambdas))
    return replace(alloc, power=power, achieved_rates=rates, flags=alloc.flags | {POWER_REFINED})


def suboptimal_allocate(profiles: Sequence[UserProfile], quality: np.ndarray, total_power: float,
                        primaries: Sequence[PrimaryUserBand] = (), cfg: SolverConfig | None = None,
                        rate_model: RateModel = DEFAULT_RATE_MODEL) -> AllocationResult:
    base = equal_power_allocation(profiles, quality, total_power, cfg, rate_model)
    return finish_suboptimal(base, primaries, profiles, quality, rate_model)


def finish_suboptimal(base: AllocationResult, primaries: Sequence[PrimaryUserBand],
                      profiles: Sequence[UserProfile], quality: np.ndarray,
                      rate_model: RateModel = DEFAULT_RATE_MODEL) -> AllocationResult:
    controlled = interference_control(base, primaries, profiles, quality, rate_model)
    return qos_power_refinement(controlled, primaries, profiles, quality, rate_model)
