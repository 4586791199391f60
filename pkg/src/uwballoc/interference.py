"""Spectral overlap between MB-OFDM subcarriers and a licensed (primary) band.

A subcarrier's normalized power spectrum is ``T_s * sinc^2(f * T_s)`` (unit
area). The overlap factor of subcarrier i is the share of that spectrum that
falls inside the primary band; a sub-band's factor is the sum over its
subcarriers. Interference caused by a power ``p`` on a subcarrier is
``p * I_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .channel import N_SUBCARRIERS, SAMPLE_RATE_MHZ, SUBCARRIER_SPACING_MHZ

SYMBOL_DURATION_NS = 1e3 / SUBCARRIER_SPACING_MHZ  # 242.42 ns
# Beyond ten subcarrier spacings the sidelobes carry < 1e-3 of the in-band share.
GUARD_MHZ = 10.0 * SUBCARRIER_SPACING_MHZ

QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-11


@dataclass(frozen=True)
class BandPlan:
    """Consecutive 528 MHz sub-bands; default is WiMedia band group 1."""

    n_bands: int = 3
    first_center_mhz: float = 3432.0
    n_subcarriers: int = N_SUBCARRIERS

    def center_mhz(self, band: int) -> float:
        if not 0 <= band < self.n_bands:
            raise IndexError(f"sub-band {band} outside 0..{self.n_bands - 1}")
        return self.first_center_mhz + SAMPLE_RATE_MHZ * band

    def center_ghz(self, band: int) -> float:
        return self.center_mhz(band) * 1e-3

    def edges_mhz(self, band: int) -> tuple[float, float]:
        c = self.center_mhz(band)
        return c - SAMPLE_RATE_MHZ / 2, c + SAMPLE_RATE_MHZ / 2

    def band_of(self, freq_mhz: float) -> int | None:
        for b in range(self.n_bands):
            lo, hi = self.edges_mhz(b)
            if lo <= freq_mhz < hi:
                return b
        return None

    def subcarrier_mhz(self, band: int) -> np.ndarray:
        offsets = np.arange(self.n_subcarriers) - self.n_subcarriers // 2
        return self.center_mhz(band) + offsets * SUBCARRIER_SPACING_MHZ


FIRST_CHANNEL = BandPlan()


@dataclass(frozen=True)
class PrimaryUserBand:
    center_ghz: float
    bandwidth_mhz: float
    i_th_mw: float | None = None
    plan: BandPlan = FIRST_CHANNEL

    def __post_init__(self):
        if self.bandwidth_mhz < 0:
            raise ValueError("primary bandwidth must be non-negative")
        if self.plan.band_of(self.center_mhz) is None:
            raise ValueError(f"primary centre {self.center_ghz} GHz is outside the band plan")

    @property
    def center_mhz(self) -> float:
        return self.center_ghz * 1e3

    @property
    def overlapped_band(self) -> int:
        return self.plan.band_of(self.center_mhz)

    def overlapped_subcarriers(self) -> np.ndarray:
        """Indices (within the overlapped sub-band) of subcarriers whose
        4.125 MHz bin intersects the primary band; empty when the band has
        zero width."""
        if self.bandwidth_mhz <= 0:
            return np.zeros(0, dtype=np.int64)
        f = self.plan.subcarrier_mhz(self.overlapped_band)
        reach = self.bandwidth_mhz / 2 + SUBCARRIER_SPACING_MHZ / 2
        return np.flatnonzero(np.abs(f - self.center_mhz) < reach)

    @property
    def n_ud(self) -> int | None:
        idx = self.overlapped_subcarriers()
        return int(idx[0]) if idx.size else None

    @property
    def n_up(self) -> int | None:
        idx = self.overlapped_subcarriers()
        return int(idx[-1]) if idx.size else None

    def with_threshold(self, i_th_mw: float) -> "PrimaryUserBand":
        return PrimaryUserBand(self.center_ghz, self.bandwidth_mhz, i_th_mw, self.plan)


def subcarrier_psd(f_mhz, symbol_duration_ns: float = SYMBOL_DURATION_NS):
    """Unit-area subcarrier PSD (1/MHz) at offset ``f_mhz`` from the subcarrier."""
    t_us = symbol_duration_ns * 1e-3
    return t_us * np.sinc(np.asarray(f_mhz) * t_us) ** 2


def _sinc2(u: float) -> float:
    if u == 0.0:
        return 1.0
    x = math.pi * u
    return (math.sin(x) / x) ** 2


def overlap_integral(distance_mhz: float, bandwidth_mhz: float,
                     symbol_duration_ns: float = SYMBOL_DURATION_NS) -> float:
    """Share of a subcarrier's spectrum inside a band of width ``bandwidth_mhz``
    whose centre lies ``distance_mhz`` away from the subcarrier."""
    if symbol_duration_ns <= 0:
        raise ValueError("symbol duration must be positive")
    if bandwidth_mhz <= 0:
        return 0.0
    t_us = symbol_duration_ns * 1e-3
    # In normalized frequency u = f * T_s the integrand is sinc^2(u) with
    # zeros at the non-zero integers; split there so every piece is smooth.
    a = (distance_mhz - bandwidth_mhz / 2) * t_us
    b = (distance_mhz + bandwidth_mhz / 2) * t_us
    knots = np.arange(math.floor(a) + 1, math.ceil(b))
    edges = np.concatenate(([a], knots[(knots > a) & (knots < b)], [b]))
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(_sinc2, lo, hi,
                                epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=100)
        total += val
    return min(max(total, 0.0), 1.0)


def subcarrier_overlap_factor(subcarrier_index: int, primary: PrimaryUserBand,
                              symbol_duration_ns: float = SYMBOL_DURATION_NS,
                              band: int | None = None) -> float:
    band = primary.overlapped_band if band is None else band
    f = primary.plan.subcarrier_mhz(band)[subcarrier_index]
    return overlap_integral(f - primary.center_mhz, primary.bandwidth_mhz, symbol_duration_ns)


def _outside_guard(band: int, primary: PrimaryUserBand, guard_mhz: float) -> bool:
    lo, hi = primary.plan.edges_mhz(band)
    p_lo = primary.center_mhz - primary.bandwidth_mhz / 2
    p_hi = primary.center_mhz + primary.bandwidth_mhz / 2
    gap = max(lo - p_hi, p_lo - hi, 0.0)
    return gap > guard_mhz


@dataclass(frozen=True, eq=False)
class OverlapFactors:
    band: int  # sub-band containing the primary
    per_subcarrier: np.ndarray  # I_i over that sub-band's subcarriers
    per_band: np.ndarray  # I_b for every sub-band of the plan
    overlapped: np.ndarray  # subcarrier indices [n_ud .. n_up]
    n_subcarriers: int = N_SUBCARRIERS

    @property
    def overlapped_fraction(self) -> float:
        return self.overlapped.size / self.n_subcarriers

    @property
    def in_overlap_sum(self) -> float:
        return float(self.per_subcarrier[self.overlapped].sum())

    @property
    def out_overlap_sum(self) -> float:
        return float(self.per_band[self.band] - self.in_overlap_sum)


def overlap_factors(primary: PrimaryUserBand, symbol_duration_ns: float = SYMBOL_DURATION_NS,
                    guard_mhz: float = GUARD_MHZ) -> OverlapFactors:
    # the threshold does not change the geometry; cache on geometry only
    geometry = PrimaryUserBand(primary.center_ghz, primary.bandwidth_mhz, None, primary.plan)
    return _overlap_factors(geometry, symbol_duration_ns, guard_mhz)


@lru_cache(maxsize=256)
def _overlap_factors(primary: PrimaryUserBand, symbol_duration_ns: float,
                     guard_mhz: float) -> OverlapFactors:
    plan = primary.plan
    band = primary.overlapped_band
    f = plan.subcarrier_mhz(band)
    per_sc = np.array([overlap_integral(fi - primary.center_mhz, primary.bandwidth_mhz,
                                        symbol_duration_ns) for fi in f])
    per_band = np.zeros(plan.n_bands)
    for b in range(plan.n_bands):
        if b == band:
            per_band[b] = per_sc.sum()
        elif not _outside_guard(b, primary, guard_mhz):
            per_band[b] = sum(subcarrier_overlap_factor(i, primary, symbol_duration_ns, band=b)
                              for i in range(plan.n_subcarriers))
    per_sc.setflags(write=False)
    per_band.setflags(write=False)
    ov = primary.overlapped_subcarriers()
    ov.setflags(write=False)
    return OverlapFactors(band, per_sc, per_band, ov, plan.n_subcarriers)


def band_interference_factor(band: int, primary: PrimaryUserBand,
                             symbol_duration_ns: float = SYMBOL_DURATION_NS) -> float:
    if not 0 <= band < primary.plan.n_bands:
        raise IndexError(f"sub-band {band} outside the band plan")
    return float(overlap_factors(primary, symbol_duration_ns).per_band[band])


def interference_power(power, factor):
    """Interference caused by ``power`` through overlap ``factor`` (same unit as power)."""
    power = np.asarray(power, dtype=float)
    if np.any(power < 0):
        raise ValueError("power must be non-negative")
    out = power * np.asarray(factor, dtype=float)
    return float(out) if out.ndim == 0 else out
