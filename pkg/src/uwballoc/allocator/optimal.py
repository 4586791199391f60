"""Iterative KKT allocator.

Part 1 searches the HQoS multipliers alpha: each round computes the
selection metric H, assigns sub-bands, water-fills the power budget and
checks the HQoS rates; the most deficient HQoS user gets ``alpha += delta``.
The power budget is met exactly by the water-level bisection inside every
round.

The delta search stops at the first alpha that meets every target, which
over-serves HQoS users. A refinement pass (``SolverConfig.tighten_alpha``)
re-solves each visited assignment with the HQoS rates held exactly at their
targets, then runs a small local search over band owners. Part 2 is
:func:`interference_control`.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from ..errors import Infeasible
from ..interference import PrimaryUserBand
from ..mac import UserProfile, priority_rank
from .control import interference_control
from .kkt import assign_subbands, compute_H, waterfill_power
from .model import (DEGENERATE, INFEASIBLE_TARGETS, MAX_ITERS_EXCEEDED, DEFAULT_RATE_MODEL,
                    AllocationResult, LagrangeState, RateModel, SolverConfig, base_result)

_RATE_RTOL = 1e-9
_ALPHA_FLOOR = 1e-9
_STALL_ROUNDS = 200


def _spectral_rates(rho, power, quality) -> np.ndarray:
    return (rho * np.log2(1.0 + power * quality)).sum(axis=1)


class _Problem:
    def __init__(self, profiles, quality, total_power, cfg, rate_model):
        self.profiles = list(profiles)
        self.E = np.asarray(quality, dtype=float)
        self.P_T = float(total_power)
        self.cfg = cfg
        self.rank = priority_rank(self.profiles)
        self.hq = np.array([p.is_hqos for p in self.profiles], dtype=bool)
        self.target = rate_model.to_spectral([p.requested_rate for p in self.profiles])
        self.K, self.B = self.E.shape
        if len(self.profiles) != self.K:
            raise ValueError("one profile per quality-matrix row is required")

    def assign(self, alpha, mu) -> np.ndarray:
        H = compute_H(LagrangeState(alpha, mu), self.E)
        return assign_subbands(H, self.cfg.assignment_mode, self.rank)

    def initial_rho(self, alpha) -> np.ndarray:
        return assign_subbands(np.log(alpha[:, None] * self.E), self.cfg.assignment_mode, self.rank)

    def inner(self, alpha, mu=None):
        """Fixed point between the water level and the sub-band assignment."""
        rho = self.initial_rho(alpha) if mu is None else self.assign(alpha, mu)
        if not rho.any():
            rho = self.initial_rho(alpha)
        P, mu = waterfill_power(rho, alpha, self.E, self.P_T, self.cfg.waterlevel_bisect_tol)
        seen = {rho.tobytes()}
        for _ in range(50):
            nxt = self.assign(alpha, mu)
            if not nxt.any() or np.array_equal(nxt, rho):
                break
            P2, mu2 = waterfill_power(nxt, alpha, self.E, self.P_T, self.cfg.waterlevel_bisect_tol)
            rho, P, mu = nxt, P2, mu2
            key = rho.tobytes()
            if key in seen:
                break
            seen.add(key)
        rho = (rho & (P > 0)).astype(np.int8)
        return rho, P, mu

    def single_user_bound(self, k: int) -> float:
        """Best spectral rate user k could reach holding every band with all power."""
        rho = np.zeros((self.K, self.B), dtype=np.int8)
        rho[k] = 1
        alpha = np.ones(self.K)
        P, _ = waterfill_power(rho, alpha, self.E, self.P_T)
        return float(np.log2(1.0 + P[k] * self.E[k]).sum())


def _level_for_rate(e: np.ndarray, rate: float) -> float:
    """Water level L with sum_b log2(max(1, L e_b)) = rate (single user)."""
    e = np.sort(e[e > 0])[::-1]
    if rate <= 0:
        return float(1.0 / e[0])
    log_e = np.cumsum(np.log2(e))
    for n in range(1, e.size + 1):
        level = 2.0 ** ((rate - log_e[n - 1]) / n)
        if n == e.size or level * e[n] <= 1.0:
            return float(level)
    raise AssertionError("unreachable")


def _frozen_alpha_solve(pb: _Problem, rho):
    """Optimal power for a fixed assignment: every HQoS user water-fills to
    exactly its target, SQoS users share what is left at a common level.
    Returns (alpha, P, mu) or None when the targets exceed the budget."""
    if any(pb.hq[k] and not rho[k].any() for k in range(pb.K)):
        return None
    levels = np.ones(pb.K)
    P = np.zeros((pb.K, pb.B))
    for k in np.flatnonzero(pb.hq):
        bands = rho[k] > 0
        levels[k] = _level_for_rate(pb.E[k, bands], pb.target[k])
        P[k, bands] = np.maximum(0.0, levels[k] - 1.0 / pb.E[k, bands])
    left = pb.P_T - P.sum()
    if left < -1e-12 * pb.P_T:
        return None
    soft = rho * (~pb.hq)[:, None]
    if soft.any() and left > 1e-12 * pb.P_T:
        P_soft, mu = waterfill_power(soft, np.ones(pb.K), pb.E, left, pb.cfg.waterlevel_bisect_tol)
        P = np.where(soft > 0, P_soft, P)
        alpha = np.where(pb.hq, levels / mu, 1.0)
    elif soft.any():
        mu = float(np.min(1.0 / pb.E[soft > 0]))
        alpha = np.where(pb.hq, levels / mu, 1.0)
    else:
        # no SQoS band: the surplus raises every HQoS level proportionally
        P, mu = waterfill_power(rho, levels, pb.E, pb.P_T, pb.cfg.waterlevel_bisect_tol)
        alpha = levels
    return alpha, P, mu


def _neighbours(rho: np.ndarray, mode: str):
    """Assignments reachable by re-owning one or two bands, or by rotating the
    owners of three bands. Matching mode keeps one band per user."""
    K, B = rho.shape
    owner = [int(np.flatnonzero(rho[:, b])[0]) if rho[:, b].any() else -1 for b in range(B)]
    choices = []
    for r in (1, 2):
        for cols in itertools.combinations(range(B), r):
            for users in itertools.product(range(K), repeat=r):
                if any(owner[b] == k for b, k in zip(cols, users)):
                    continue
                new = list(owner)
                for b, k in zip(cols, users):
                    new[b] = k
                choices.append(new)
    for cols in itertools.combinations(range(B), 3):
        for shift in (1, 2):
            new = list(owner)
            for i, b in enumerate(cols):
                new[b] = owner[cols[(i + shift) % 3]]
            choices.append(new)
    for new in choices:
        held = [k for k in new if k >= 0]
        if mode == "one_band_per_user" and len(set(held)) != len(held):
            continue
        nxt = np.zeros_like(rho)
        for b, k in enumerate(new):
            if k >= 0:
                nxt[k, b] = 1
        if not np.array_equal(nxt, rho):
            yield nxt


def _local_search(pb: _Problem, best):
    """First-improvement descent over :func:`_neighbours`, each candidate
    scored by its fixed-assignment optimum, until no move raises the SQoS
    sum rate."""
    tried = {best[1].tobytes()}
    improved = True
    while improved:
        improved = False
        for cand in _neighbours(best[1], pb.cfg.assignment_mode):
            key = cand.tobytes()
            if key in tried:
                continue
            tried.add(key)
            solved = _frozen_alpha_solve(pb, cand)
            if solved is None:
                continue
            a2, P2, mu2 = solved
            obj = _spectral_rates(cand, P2, pb.E)[~pb.hq].sum()
            if obj > best[0] * (1 + 1e-9) + 1e-12:
                best = (obj, cand, a2, P2, mu2)
                improved = True
                break
    return best


def _literal_step3c(pb: _Problem):
    """Literal variant: the water level stays fixed and every alpha moves by
    +/- delta/2 to chase the power budget. Kept for comparison only."""
    cfg = pb.cfg
    d = cfg.delta
    alpha = np.ones(pb.K)
    alpha[pb.hq] += d
    rho0 = pb.initial_rho(alpha)
    _, mu = waterfill_power(rho0, alpha, pb.E, pb.P_T)
    flags = set()
    it = 0
    P = rho = None
    converged = False
    while it < cfg.max_outer_iters:
        rho = pb.assign(alpha, mu)
        rates = _spectral_rates(rho, np.maximum(0.0, rho * (alpha[:, None] * mu - 1.0 / pb.E)), pb.E)
        short = [k for k in range(pb.K) if pb.hq[k] and rates[k] < pb.target[k]]
        if short:
            k2 = min(short, key=lambda k: (rates[k] - pb.target[k], pb.rank[k]))
            alpha[k2] += d
            it += 1
            continue
        P = np.maximum(0.0, rho * (alpha[:, None] * mu - 1.0 / pb.E))
        spent = P.sum()
        if abs(spent - pb.P_T) <= cfg.power_tolerance * pb.P_T:
            converged = True
            break
        alpha = alpha + (d / 2 if spent < pb.P_T else -d / 2)
        alpha = np.maximum(alpha, _ALPHA_FLOOR)
        it += 1
    if P is None:
        P = np.maximum(0.0, rho * (alpha[:, None] * mu - 1.0 / pb.E))
    if not converged:
        flags.add(MAX_ITERS_EXCEEDED)
    if P.sum() > pb.P_T:
        P = P * (pb.P_T / P.sum())
    return rho, P, alpha, mu, flags, it


def optimal_joint_allocation(profiles: Sequence[UserProfile], quality: np.ndarray,
                             total_power: float, cfg: SolverConfig | None = None,
                             rate_model: RateModel = DEFAULT_RATE_MODEL) -> AllocationResult:
    """Part 1 only: joint sub-band and power allocation without primaries."""
    cfg = cfg or SolverConfig()
    pb = _Problem(profiles, quality, total_power, cfg, rate_model)
    if not np.all(np.isfinite(pb.E)) or np.any(pb.E <= 0):
        raise ValueError("quality matrix entries must be positive and finite")

    if cfg.algo_variant == "literal_step3c":
        rho, P, alpha, mu, flags, it = _literal_step3c(pb)
        rates = _spectral_rates(rho, P, pb.E)
        if np.any(rates[pb.hq] < pb.target[pb.hq] * (1 - _RATE_RTOL)):
            flags.add(INFEASIBLE_TARGETS)
        return base_result(profiles, rho, P, pb.E, alpha, mu, rate_model, flags, it)

    flags: set[str] = set()
    alpha = np.ones(pb.K)
    alpha[pb.hq] += cfg.delta
    active = np.array([pb.hq[k] and pb.single_user_bound(k) >= pb.target[k] for k in range(pb.K)])
    if np.any(pb.hq & ~active):
        flags.add(INFEASIBLE_TARGETS)

    visited: dict[bytes, np.ndarray] = {}
    best_rate = np.full(pb.K, -np.inf)
    stall = np.zeros(pb.K, dtype=int)
    mu = None
    it = 0
    while True:
        rho, P, mu = pb.inner(alpha, mu)
        visited.setdefault(rho.tobytes(), rho.copy())
        rates = _spectral_rates(rho, P, pb.E)
        short = [k for k in range(pb.K)
                 if active[k] and rates[k] < pb.target[k] * (1 - _RATE_RTOL)]
        if not short:
            break
        if it >= cfg.max_outer_iters:
            flags.add(MAX_ITERS_EXCEEDED)
            break
        k2 = min(short, key=lambda k: (rates[k] - pb.target[k], pb.rank[k]))
        if rates[k2] > best_rate[k2] * (1 + 1e-12) + 1e-15:
            best_rate[k2] = rates[k2]
            stall[k2] = 0
        else:
            stall[k2] += 1
            if stall[k2] >= _STALL_ROUNDS:
                # alpha growth no longer buys rate: targets jointly infeasible
                flags.add(INFEASIBLE_TARGETS)
                active[k2] = False
                continue
        alpha[k2] += cfg.delta
        it += 1

    if cfg.tighten_alpha and pb.hq.any() and (~pb.hq).any() and INFEASIBLE_TARGETS not in flags:
        best = None
        for cand in visited.values():
            solved = _frozen_alpha_solve(pb, cand)
            if solved is None:
                continue
            a2, P2, mu2 = solved
            obj = _spectral_rates(cand, P2, pb.E)[~pb.hq].sum()
            if best is None or obj > best[0] + 1e-12:
                best = (obj, cand, a2, P2, mu2)
        if best is not None:
            best = _local_search(pb, best)
            _, rho, alpha, P, mu = best
            rho = (rho & (P > 0)).astype(np.int8)

    if np.any(~rho.any(axis=0)):
        flags.add(DEGENERATE)
    rates = _spectral_rates(rho, P, pb.E)
    if np.any(rates[pb.hq] < pb.target[pb.hq] * (1 - _RATE_RTOL)):
        flags.add(INFEASIBLE_TARGETS)
    return base_result(profiles, rho, P, pb.E, alpha, mu, rate_model, flags, it)


def optimal_allocate(profiles: Sequence[UserProfile], quality: np.ndarray, total_power: float,
                     primaries: Sequence[PrimaryUserBand] = (), cfg: SolverConfig | None = None,
                     rate_model: RateModel = DEFAULT_RATE_MODEL) -> AllocationResult:
    base = optimal_joint_allocation(profiles, quality, total_power, cfg, rate_model)
    return interference_control(base, primaries, profiles, quality, rate_model)
