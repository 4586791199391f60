"""Data types shared by the allocators and the rate model used to score them."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..channel import SAMPLE_RATE_MHZ
from ..mac import UserProfile
from ..mcs import effective_sinr_two_level

DATA_SUBCARRIERS = 100
TOTAL_SUBCARRIERS = 128

# Flags carried by AllocationResult.flags
MAX_ITERS_EXCEEDED = "MaxItersExceeded"
INFEASIBLE_TARGETS = "InfeasibleTargets"
STILL_OVER_THRESHOLD = "StillOverThreshold"
DEGENERATE = "Degenerate"
POWER_REFINED = "PowerRefined"

ASSIGNMENT_MODES = ("per_band_argmax", "one_band_per_user")
ALGO_VARIANTS = ("bisect", "literal_step3c")


@dataclass(frozen=True)
class SolverConfig:
    delta: float = 0.05
    power_tolerance: float = 1e-4
    max_outer_iters: int = 10_000
    waterlevel_bisect_tol: float = 1e-10
    assignment_mode: str = "per_band_argmax"
    algo_variant: str = "bisect"
    # After the delta search, re-solve alpha on the visited assignments so
    # HQoS rate constraints are met with equality (alpha may drop below 1).
    tighten_alpha: bool = True

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        for name in ("power_tolerance", "waterlevel_bisect_tol"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if self.assignment_mode not in ASSIGNMENT_MODES:
            raise ValueError(f"assignment_mode must be one of {ASSIGNMENT_MODES}")
        if self.algo_variant not in ALGO_VARIANTS:
            raise ValueError(f"algo_variant must be one of {ALGO_VARIANTS}")


@dataclass(frozen=True)
class RateModel:
    """Maps log2(1 + SINR) in bit/s/Hz to Mbps over the data subcarriers."""

    subband_data_bandwidth_mhz: float = DATA_SUBCARRIERS / TOTAL_SUBCARRIERS * SAMPLE_RATE_MHZ

    def to_mbps(self, spectral):
        return np.asarray(spectral, dtype=float) * self.subband_data_bandwidth_mhz

    def to_spectral(self, mbps):
        return np.asarray(mbps, dtype=float) / self.subband_data_bandwidth_mhz


DEFAULT_RATE_MODEL = RateModel()


@dataclass(frozen=True)
class LagrangeState:
    alpha: np.ndarray  # per-user multiplier; 1 for SQoS users
    waterlevel: float  # mu, folds 1/(gamma ln 2)


def achieved_rate(power, quality, rate_model: RateModel | None = None):
    """Sub-band rate ``log2(1 + P E)``; in Mbps when a rate model is given."""
    power = np.asarray(power, dtype=float)
    quality = np.asarray(quality, dtype=float)
    if np.any(power < 0):
        raise ValueError("power must be non-negative")
    r = np.log2(1.0 + power * quality)
    if rate_model is not None:
        r = rate_model.to_mbps(r)
    return float(r) if np.ndim(r) == 0 else r


def band_rate(power: float, quality: float, overlap_power: float,
              overlap_fraction: float, lam: float) -> float:
    """Spectral rate of one sub-band whose overlapped subcarriers run at a
    reduced sub-band-equivalent power ``overlap_power``.

    The effective SINR of the two-level subcarrier profile is taken through
    the same EESM compression used to build the quality matrix.
    """
    if power <= 0:
        return 0.0
    if overlap_fraction <= 0 or overlap_power >= power:
        return float(np.log2(1.0 + power * quality))
    eff = effective_sinr_two_level(power * quality, max(overlap_power, 0.0) * quality,
                                   overlap_fraction, lam)
    return float(np.log2(1.0 + eff))


@dataclass(frozen=True, eq=False)
class AllocationResult:
    rho: np.ndarray  # (K, B) 0/1
    power: np.ndarray  # (K, B) W, allocated before interference reduction
    reductions: np.ndarray  # (K, B) W removed from overlapped subcarriers
    overlap_fraction: np.ndarray  # (K, B) share of subcarriers the reduction applies to
    rates_before: np.ndarray  # (K,) Mbps before interference control
    achieved_rates: np.ndarray  # (K,) Mbps after control
    targets: np.ndarray  # (K,) Mbps, requested rates
    hqos: np.ndarray  # (K,) bool
    alpha: np.ndarray  # (K,)
    waterlevel: float = float("nan")
    interference_before: np.ndarray = field(default_factory=lambda: np.zeros(0))  # (U,) mW
    interference_after: np.ndarray = field(default_factory=lambda: np.zeros(0))  # (U,) mW
    user_interference_before: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # (U, K) mW
    user_interference_after: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # (U, K) mW
    i_th: np.ndarray = field(default_factory=lambda: np.zeros(0))  # (U,) mW
    reduction_cap: np.ndarray | None = None  # (K, B) W, HQoS rate-preserving cap where evaluated
    flags: frozenset = frozenset()
    iterations: int = 0

    @property
    def n_users(self) -> int:
        return self.rho.shape[0]

    @property
    def n_bands(self) -> int:
        return self.rho.shape[1]

    @property
    def effective_power(self) -> np.ndarray:
        return self.power - self.reductions

    @property
    def total_power_used(self) -> float:
        return float(self.effective_power.sum())

    @property
    def satisfiable(self) -> np.ndarray:
        """HQoS users whose target was met before interference control."""
        return self.hqos & (self.rates_before >= self.targets * (1 - 1e-9))

    def with_flags(self, *flags: str) -> "AllocationResult":
        return replace(self, flags=self.flags | set(flags))


def overlap_power(alloc: AllocationResult) -> np.ndarray:
    """Sub-band-equivalent power level on the reduced subcarriers."""
    f = alloc.overlap_fraction
    safe = np.where(f > 0, f, 1.0)
    # (f P - red) / f is exactly 0 when red = f P, so annulment leaves no residue
    po = np.where(f > 0, (safe * alloc.power - alloc.reductions) / safe, alloc.power)
    return np.clip(po, 0.0, None)


def user_rates(power, reductions, overlap_fraction, quality,
               lambdas: Sequence[float]) -> np.ndarray:
    """Per-user spectral rate summed over sub-bands, honouring reductions."""
    power = np.asarray(power, dtype=float)
    K, B = power.shape
    f = np.asarray(overlap_fraction, dtype=float)
    red = np.asarray(reductions, dtype=float)
    out = np.zeros(K)
    for k in range(K):
        for b in range(B):
            p = power[k, b]
            if p <= 0:
                continue
            if f[k, b] > 0 and red[k, b] > 0:
                po = (f[k, b] * p - red[k, b]) / f[k, b]
                out[k] += band_rate(p, quality[k, b], po, f[k, b], lambdas[k])
            else:
                out[k] += np.log2(1.0 + p * quality[k, b])
    return out


def sqos_sum_rate(alloc: AllocationResult) -> float:
    """Sum of achieved SQoS rates in Mbps."""
    return float(alloc.achieved_rates[~alloc.hqos].sum())


def base_result(profiles: Sequence[UserProfile], rho, power, quality, alpha,
                waterlevel=float("nan"), rate_model: RateModel = DEFAULT_RATE_MODEL,
                flags=(), iterations=0) -> AllocationResult:
    """Result of a joint sub-band/power step, before any interference control."""
    rho = np.asarray(rho, dtype=np.int8)
    power = np.asarray(power, dtype=float)
    K, B = power.shape
    spectral = np.log2(1.0 + power * quality).sum(axis=1)
    rates = rate_model.to_mbps(spectral)
    return AllocationResult(
        rho=rho, power=power, reductions=np.zeros((K, B)), overlap_fraction=np.zeros((K, B)),
        rates_before=rates, achieved_rates=rates.copy(),
        targets=np.array([p.requested_rate for p in profiles], dtype=float),
        hqos=np.array([p.is_hqos for p in profiles], dtype=bool),
        alpha=np.asarray(alpha, dtype=float), waterlevel=float(waterlevel),
        flags=frozenset(flags), iterations=iterations,
    )
