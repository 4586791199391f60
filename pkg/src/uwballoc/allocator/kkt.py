"""KKT building blocks: sub-band selection function, assignment, water-filling."""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..errors import Infeasible
from .model import LagrangeState

LN2 = math.log(2.0)

# Exhaustive matching (exact tie-breaking) up to this many candidate assignments.
_MAX_ENUMERATED_MATCHINGS = 40_320


def compute_H(state: LagrangeState, quality: np.ndarray) -> np.ndarray:
    """Selection metric ``alpha [log2(y) - (1 - 1/y)/ln2]`` with ``y = alpha mu E``.

    Entries with ``y < 1`` would receive no power and are set to -inf; ``y = 1``
    gives exactly 0.
    """
    if not state.waterlevel > 0:
        raise ValueError("water level must be positive")
    alpha = np.asarray(state.alpha, dtype=float)[:, None]
    y = alpha * state.waterlevel * np.asarray(quality, dtype=float)
    H = np.full(y.shape, -np.inf)
    ok = y >= 1.0
    yk = y[ok]
    H[ok] = np.broadcast_to(alpha, y.shape)[ok] * (np.log2(yk) - (1.0 - 1.0 / yk) / LN2)
    return H


def _argmax_band(col: np.ndarray, rank: Sequence[int]) -> int | None:
    if not np.any(np.isfinite(col)):
        return None
    best = col.max()
    cands = np.flatnonzero(col == best)
    return int(min(cands, key=lambda k: (rank[k], k)))


def _matching(H: np.ndarray, rank: Sequence[int]) -> np.ndarray:
    K, B = H.shape
    gain = np.where(np.isfinite(H), H, 0.0)
    rho = np.zeros((K, B), dtype=np.int8)
    n_cands = math.perm(max(K, B), min(K, B))
    if n_cands <= _MAX_ENUMERATED_MATCHINGS:
        best_key = None
        best = None
        if K >= B:
            choices = itertools.permutations(range(K), B)  # user per band
            pairs_of = lambda c: list(zip(c, range(B)))
        else:
            choices = itertools.permutations(range(B), K)  # band per user
            pairs_of = lambda c: list(zip(range(K), c))
        for c in choices:
            pairs = pairs_of(c)
            total = math.fsum(gain[k, b] for k, b in pairs)
            owner = [K] * B
            for k, b in pairs:
                owner[b] = k
            tie = tuple(rank[k] if k < K else K for k in owner)
            key = (-total, tie)
            if best_key is None or key < best_key:
                best_key, best = key, pairs
        pairs = best
    else:
        rows, cols = linear_sum_assignment(gain, maximize=True)
        pairs = list(zip(rows, cols))
    for k, b in pairs:
        if np.isfinite(H[k, b]):
            rho[k, b] = 1
    return rho


def assign_subbands(H: np.ndarray, mode: str = "per_band_argmax",
                    rank: Sequence[int] | None = None) -> np.ndarray:
    """0/1 assignment matrix from a K x B selection metric.

    ``per_band_argmax`` hands each band to its largest-metric user (a user may
    win several bands). ``one_band_per_user`` solves a max-weight matching.
    Ties go to the lower ``rank`` (higher priority), then the lower index.
    Bands whose metric is -inf for every user stay unassigned.
    """
    H = np.asarray(H, dtype=float)
    K, B = H.shape
    if rank is None:
        rank = list(range(K))
    if mode == "per_band_argmax":
        rho = np.zeros((K, B), dtype=np.int8)
        for b in range(B):
            k = _argmax_band(H[:, b], rank)
            if k is not None:
                rho[k, b] = 1
        return rho
    if mode == "one_band_per_user":
        return _matching(H, rank)
    raise ValueError(f"unknown assignment mode {mode!r}")


def waterfill_power(rho: np.ndarray, alpha: np.ndarray, quality: np.ndarray,
                    total_power: float, tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Multi-level water-filling ``P = rho * max(0, alpha mu - 1/E)`` with sum P = P_T.

    The water level is bracketed by bisection to relative width ``tol`` and
    then made exact on the resulting active set.
    """
    if not total_power > 0:
        raise ValueError("total power must be positive")
    quality = np.asarray(quality, dtype=float)
    mask = (np.asarray(rho) > 0) & (quality > 0)
    if not mask.any():
        raise Infeasible("no sub-band is assigned")
    a = np.broadcast_to(np.asarray(alpha, dtype=float)[:, None], quality.shape)[mask]
    inv = 1.0 / quality[mask]

    def spent(mu):
        return np.maximum(0.0, a * mu - inv).sum()

    lo, hi = 0.0, float(np.max((total_power + inv) / a))
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if spent(mid) > total_power:
            hi = mid
        else:
            lo = mid
    mu = 0.5 * (lo + hi)
    for _ in range(len(a) + 1):
        active = a * mu - inv > 0
        if not active.any():
            active = inv == inv.min()
        mu_new = (total_power + inv[active].sum()) / a[active].sum()
        if np.array_equal(active, a * mu_new - inv > 0):
            mu = mu_new
            break
        mu = mu_new
    P = np.zeros(quality.shape)
    P[mask] = np.maximum(0.0, a * mu - inv)
    return P, float(mu)
