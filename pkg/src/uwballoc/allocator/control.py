"""Interference power control applied after joint sub-band/power allocation.

For every primary user whose aggregate interference exceeds its threshold,
the user holding the overlapped sub-band lowers the power of the subcarriers
``[n_ud, n_up]`` inside the primary band:

* SQoS users switch those subcarriers off entirely.
* HQoS users lower them only as far as needed to meet the threshold, and
  never below the level at which their total rate would fall under the
  requested rate.

Subcarrier power inside a sub-band is uniform before control, ``P / N``.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np

from ..interference import OverlapFactors, PrimaryUserBand, overlap_factors
from ..mac import UserProfile, priority_rank
from .model import (STILL_OVER_THRESHOLD, AllocationResult, RateModel, DEFAULT_RATE_MODEL,
                    band_rate, overlap_power, user_rates)

W_TO_MW = 1e3
# rate margins below this share of the target are rounding noise
_MARGIN_RTOL = 1e-9


def _contributions(power: np.ndarray, po: np.ndarray, ov: OverlapFactors) -> np.ndarray:
    """Interference (mW) each user causes to one primary."""
    b = ov.band
    n = ov.n_subcarriers
    out_sum = ov.out_overlap_sum
    in_sum = ov.in_overlap_sum
    return W_TO_MW * (power[:, b] * out_sum + po[:, b] * in_sum) / n


def min_overlap_power(power: float, quality: float, lam: float, fraction: float,
                      required_band_rate: float) -> float:
    """Lowest sub-band-equivalent power on the overlapped subcarriers that
    keeps this band's spectral rate at ``required_band_rate``.

    Closed-form inverse of :func:`band_rate` in its overlap power; returns
    ``power`` when no reduction is possible and 0 when the subcarriers can be
    switched off.
    """
    if fraction <= 0 or power <= 0:
        return power
    current = math.log2(1.0 + power * quality)
    if required_band_rate >= current:
        return power
    if required_band_rate <= 0:
        return 0.0
    x = power * quality
    x_t = 2.0 ** required_band_rate - 1.0
    # effective SINR >= x_t  <=>  f e^{-x_o/lam} <= e^{-x_t/lam} - (1-f) e^{-x/lam}
    inner = -(1.0 - fraction) * math.exp(-(x - x_t) / lam)
    x_o = x_t - lam * math.log1p(inner) + lam * math.log(fraction)
    return float(min(max(x_o / quality, 0.0), power))


def hqos_reduction_cap(alloc: AllocationResult, k: int, b: int, quality: np.ndarray,
                       lambdas: Sequence[float], fraction: float,
                       rate_model: RateModel = DEFAULT_RATE_MODEL) -> float:
    """Largest power that may be removed from the overlapped subcarriers of
    (k, b) while user k's total rate stays at or above its target."""
    po = overlap_power(alloc)
    f_now = alloc.overlap_fraction
    rates = user_rates(alloc.power, alloc.reductions, f_now, quality, lambdas)
    target = float(rate_model.to_spectral(alloc.targets[k]))
    margin = rates[k] - target
    if margin <= _MARGIN_RTOL * target:
        # at the target up to rounding; nothing can be given up
        return 0.0
    p = alloc.power[k, b]
    this_band = band_rate(p, quality[k, b], po[k, b], f_now[k, b], lambdas[k])
    floor = min_overlap_power(p, quality[k, b], lambdas[k], fraction,
                              this_band - margin if margin > 0 else np.inf)
    return fraction * (p - floor)


def interference_ledger(alloc: AllocationResult, primaries: Sequence[PrimaryUserBand]):
    """(U, K) interference in mW for the allocation's current reductions."""
    po = overlap_power(alloc)
    return np.array([_contributions(alloc.power, po, overlap_factors(p)) for p in primaries]).reshape(
        len(primaries), alloc.n_users)


def interference_control(alloc: AllocationResult, primaries: Sequence[PrimaryUserBand],
                         profiles: Sequence[UserProfile], quality: np.ndarray,
                         rate_model: RateModel = DEFAULT_RATE_MODEL) -> AllocationResult:
    primaries = list(primaries)
    K, B = alloc.power.shape
    if not primaries:
        return replace(alloc, interference_before=np.zeros(0), interference_after=np.zeros(0),
                       user_interference_before=np.zeros((0, K)),
                       user_interference_after=np.zeros((0, K)), i_th=np.zeros(0))
    bands = [p.overlapped_band for p in primaries]
    if len(set(bands)) != len(bands):
        raise ValueError("at most one primary user per sub-band is supported")
    for p in primaries:
        if p.i_th_mw is None:
            raise ValueError("primary user has no interference threshold")

    lambdas = [p.lam for p in profiles]
    rank = priority_rank(list(profiles))
    before = interference_ledger(alloc, primaries)
    flags = set(alloc.flags)
    cap = np.full((K, B), np.nan) if alloc.reduction_cap is None else alloc.reduction_cap.copy()
    cur = alloc

    for u, primary in enumerate(primaries):
        ov = overlap_factors(primary)
        b = ov.band
        f = ov.overlapped_fraction
        i_th = float(primary.i_th_mw)
        contrib = _contributions(cur.power, overlap_power(cur), ov)
        if contrib.sum() <= i_th:
            continue
        holders = [k for k in range(K) if cur.rho[k, b] and cur.power[k, b] > 0]
        # lowest priority gives up power first
        holders.sort(key=lambda k: (profiles[k].is_hqos, -rank[k]))
        for k in holders:
            if f <= 0:
                break
            contrib = _contributions(cur.power, overlap_power(cur), ov)
            excess = contrib.sum() - i_th
            if excess <= 0:
                break
            p = cur.power[k, b]
            if not profiles[k].is_hqos:
                po_new = 0.0
            else:
                others = contrib.sum() - contrib[k]
                allowed_mw = i_th - others
                in_sum, out_sum = ov.in_overlap_sum, ov.out_overlap_sum
                if in_sum > 0:
                    po_needed = (allowed_mw / W_TO_MW * ov.n_subcarriers - p * out_sum) / in_sum
                else:
                    po_needed = p
                trial = replace(cur, overlap_fraction=_set(cur.overlap_fraction, k, b, f),
                                reductions=_set(cur.reductions, k, b, 0.0))
                max_red = hqos_reduction_cap(trial, k, b, quality, lambdas, f, rate_model)
                cap[k, b] = max_red
                po_floor = p - max_red / f
                po_new = min(p, max(po_needed, po_floor, 0.0))
            red = f * (p - po_new)
            cur = replace(cur, reductions=_set(cur.reductions, k, b, red),
                          overlap_fraction=_set(cur.overlap_fraction, k, b, f))

    after = interference_ledger(cur, primaries)
    i_th_vec = np.array([float(p.i_th_mw) for p in primaries])
    if np.any(after.sum(axis=1) > i_th_vec * (1 + 1e-9) + 1e-15):
        flags.add(STILL_OVER_THRESHOLD)
    rates = rate_model.to_mbps(user_rates(cur.power, cur.reductions, cur.overlap_fraction,
                                          quality, lambdas))
    return replace(cur, achieved_rates=rates,
                   interference_before=before.sum(axis=1), interference_after=after.sum(axis=1),
                   user_interference_before=before, user_interference_after=after,
                   i_th=i_th_vec, reduction_cap=cap, flags=frozenset(flags))


def _set(arr: np.ndarray, k: int, b: int, value: float) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out[k, b] = value
    return out
