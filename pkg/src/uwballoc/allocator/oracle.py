"""Brute-force reference allocator for small instances (test oracle).

Enumerates every sub-band assignment; for each one, searches the power split
on a dense simplex grid and polishes the best grid point with SLSQP. The
objective is the SQoS sum rate (or the total rate when there are no SQoS
users) subject to HQoS targets, the power budget and, per primary, a linear
interference limit with uniform subcarrier power.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from ..errors import Infeasible
from ..interference import PrimaryUserBand, overlap_factors
from ..mac import UserProfile
from .model import DEFAULT_RATE_MODEL, AllocationResult, RateModel, base_result

_FEAS_TOL = 1e-9


def _assignments(K: int, B: int, mode: str):
    if mode == "per_band_argmax":
        yield from itertools.product(range(K), repeat=B)
    elif mode == "one_band_per_user":
        if K >= B:
            yield from itertools.permutations(range(K), B)
        else:
            for bands in itertools.permutations(range(B), K):
                owner = [-1] * B
                for k, b in enumerate(bands):
                    owner[b] = k
                yield tuple(owner)
    else:
        raise ValueError(f"unknown assignment mode {mode!r}")


def _simplex_grid(m: int, g: int) -> np.ndarray:
    """All points n/g with n >= 0 integer and sum(n) <= g."""
    pts = [c for c in itertools.product(range(g + 1), repeat=m) if sum(c) <= g]
    return np.asarray(pts, dtype=float) / g


def oracle_exhaustive(profiles: Sequence[UserProfile], quality: np.ndarray, total_power: float,
                      primaries: Sequence[PrimaryUserBand] = (), grid_points: int = 24,
                      mode: str = "per_band_argmax",
                      rate_model: RateModel = DEFAULT_RATE_MODEL) -> AllocationResult:
    E = np.asarray(quality, dtype=float)
    K, B = E.shape
    if K > 4 or B > 4:
        raise ValueError("oracle_exhaustive is limited to K <= 4 and B <= 4")
    P_T = float(total_power)
    hq = np.array([p.is_hqos for p in profiles], dtype=bool)
    target = rate_model.to_spectral([p.requested_rate for p in profiles])
    objective_users = ~hq if (~hq).any() else hq

    # interference cost per watt in each band, mW
    limits = []
    for p in primaries:
        ov = overlap_factors(p)
        limits.append((1e3 * ov.per_band / ov.n_subcarriers, float(p.i_th_mw)))

    best = None
    for owner in _assignments(K, B, mode):
        bands = [b for b in range(B) if owner[b] >= 0]
        m = len(bands)
        if m == 0:
            continue
        users = np.array([owner[b] for b in bands])
        e = E[users, bands]
        member = np.zeros((K, m))
        member[users, np.arange(m)] = 1.0
        if np.any(hq & (member.sum(axis=1) == 0)) and np.any(target[hq] > 0):
            continue
        cost = [(c[bands], lim) for c, lim in limits]

        def rates(frac):
            frac = np.atleast_2d(frac)
            return np.log2(1.0 + frac * P_T * e) @ member.T  # (n, K)

        def slack(frac):
            frac = np.atleast_2d(frac)
            r = rates(frac)
            s = [1.0 - frac.sum(axis=1)]
            s += [r[:, k] - target[k] for k in range(K) if hq[k]]
            s += [(lim - frac * P_T @ c) / max(lim, 1e-300) for c, lim in cost]
            return np.stack(s, axis=1)

        def obj(frac):
            return rates(frac)[:, objective_users].sum(axis=1)

        grid = _simplex_grid(m, grid_points)
        sl = slack(grid)
        feas = np.all(sl >= -_FEAS_TOL, axis=1)
        if feas.any():
            vals = np.where(feas, obj(grid), -np.inf)
            start = grid[int(np.argmax(vals))]
        else:
            start = grid[int(np.argmax(sl.min(axis=1)))]

        res = minimize(lambda x: -obj(x)[0], start, method="SLSQP",
                       bounds=[(0.0, 1.0)] * m,
                       constraints=[{"type": "ineq", "fun": lambda x: slack(x)[0]}],
                       options={"ftol": 1e-13, "maxiter": 500})
        cands = [start] + ([np.clip(res.x, 0.0, 1.0)] if np.all(np.isfinite(res.x)) else [])
        for x in cands:
            s = slack(x)[0]
            if s[0] < 0:
                x = x / x.sum()
                s = slack(x)[0]
            if np.all(s >= -_FEAS_TOL):
                val = float(obj(x)[0])
                if best is None or val > best[0] + 1e-12:
                    P = np.zeros((K, B))
                    P[users, bands] = x * P_T
                    best = (val, P)

    if best is None:
        raise Infeasible("no assignment meets the HQoS targets")
    P = best[1]
    rho = (P > 0).astype(np.int8)
    return base_result(profiles, rho, P, E, np.ones(K), rate_model=rate_model)


def random_instance(rng: np.random.Generator, n_users: int = 3, n_bands: int = 3,
                    total_power: float = 1.174e-4, log10_quality=(5.5, 6.5)):
    """Random (profiles, E, P_T) with at least one HQoS and one SQoS user.

    Quality values are log-uniform so that P_T / B lands between roughly 10
    and 25 dB of effective SINR, where HQoS targets actually bind.
    """
    from ..mac import QosClass
    from ..mcs import MCS_TABLE

    if n_users < 2:
        raise ValueError("need at least two users for a mixed-class instance")
    E = 10.0 ** rng.uniform(*log10_quality, size=(n_users, n_bands))
    classes = [QosClass.HQOS, QosClass.SQOS] + [
        QosClass.HQOS if rng.random() < 0.5 else QosClass.SQOS for _ in range(n_users - 2)]
    classes = [classes[i] for i in rng.permutation(n_users)]
    rates = [MCS_TABLE[int(rng.integers(len(MCS_TABLE)))].rate_mbps for _ in range(n_users)]
    profiles = [UserProfile(k, classes[k], rates[k]) for k in range(n_users)]
    return profiles, E, float(total_power)


def compare_with_oracle(n_instances: int = 200, seed: int = 0, n_users: int = 3,
                        n_bands: int = 3, mode: str = "per_band_argmax") -> dict:
    """Run :func:`optimal_allocate` and the oracle on random instances.

    The report holds the worst relative SQoS sum-rate shortfall and the worst
    relative power-budget error. It also counts instances where the oracle
    was feasible but the allocator missed an HQoS target.
    """
    from .model import SolverConfig
    from .optimal import optimal_allocate

    rng = np.random.default_rng(seed)
    cfg = SolverConfig(assignment_mode=mode)
    worst_gap = 0.0
    worst_power = 0.0
    misses = 0
    feasible = 0
    for _ in range(n_instances):
        profiles, E, P_T = random_instance(rng, n_users, n_bands)
        try:
            ref = oracle_exhaustive(profiles, E, P_T, mode=mode)
        except Infeasible:
            continue
        feasible += 1
        got = optimal_allocate(profiles, E, P_T, cfg=cfg)
        soft = ~got.hqos
        best = float(ref.achieved_rates[soft].sum())
        mine = float(got.achieved_rates[soft].sum())
        if best > 0:
            worst_gap = max(worst_gap, (best - mine) / best)
        worst_power = max(worst_power, float(abs(got.power.sum() - P_T) / P_T))
        hq = got.hqos
        if np.any(got.achieved_rates[hq] < got.targets[hq] * (1 - 1e-9)):
            misses += 1
    return {"instances": n_instances, "feasible": feasible, "max_sum_rate_gap": float(worst_gap),
            "max_power_error": worst_power, "hqos_target_misses": misses}
