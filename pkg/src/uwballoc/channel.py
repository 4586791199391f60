"""Clustered UWB multipath channels (modified Saleh-Valenzuela).

The generator follows the IEEE 802.15.3a channel-modelling report: Poisson
cluster and ray arrivals, exponentially decaying mean power, independent
log-normal fading for every cluster and every ray, equiprobable tap signs,
per-realization energy normalization and a log-normal shadowing term that is
kept separate from the taps (``shadowing_gain``).

Delays are in ns, frequencies in GHz/MHz as named, powers in W unless a
``_dbm`` suffix says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import ZeroNoise

SAMPLE_RATE_MHZ = 528.0
N_SUBCARRIERS = 128
SUBCARRIER_SPACING_MHZ = SAMPLE_RATE_MHZ / N_SUBCARRIERS  # 4.125 MHz
FCC_PSD_CAP_DBM_MHZ = -41.3

# Taps beyond one OFDM symbol of 128 samples alias in the 128-point
# frequency grid; anything from 127 samples on is dropped.
_DEFAULT_MAX_DELAY_NS = 127 * 1e3 / SAMPLE_RATE_MHZ


@dataclass(frozen=True)
class CmProfile:
    name: str
    cluster_arrival_rate: float  # 1/ns
    ray_arrival_rate: float  # 1/ns
    cluster_decay: float  # ns
    ray_decay: float  # ns
    cluster_fading_std_db: float
    ray_fading_std_db: float
    shadowing_std_db: float
    max_delay: float = _DEFAULT_MAX_DELAY_NS

    def __post_init__(self):
        for attr in ("cluster_arrival_rate", "ray_arrival_rate", "cluster_decay",
                     "ray_decay", "max_delay"):
            value = getattr(self, attr)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{attr} must be strictly positive, got {value}")
        for attr in ("cluster_fading_std_db", "ray_fading_std_db", "shadowing_std_db"):
            if getattr(self, attr) < 0:
                raise ValueError(f"{attr} must be non-negative")


# Parameter sets from the 802.15.3a final report (Foerster, 02/490r1).
CM_PROFILES: dict[str, CmProfile] = {
    "CM1": CmProfile("CM1", 0.0233, 2.5, 7.1, 4.3, 3.3941, 3.3941, 3.0),
    "CM2": CmProfile("CM2", 0.4, 0.5, 5.5, 6.7, 3.3941, 3.3941, 3.0),
    "CM3": CmProfile("CM3", 0.0667, 2.1, 14.0, 7.9, 3.3941, 3.3941, 3.0),
    "CM4": CmProfile("CM4", 0.0667, 2.1, 24.0, 12.0, 3.3941, 3.3941, 3.0),
}


def cm_profile(name: str, **overrides) -> CmProfile:
    try:
        base = CM_PROFILES[name.upper()]
    except KeyError:
        raise ValueError(f"unknown channel model {name!r}; expected one of {sorted(CM_PROFILES)}") from None
    return replace(base, **overrides) if overrides else base


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    shadowing_gain: float  # linear power gain G
    cluster: np.ndarray  # int, cluster index z per tap
    ray: np.ndarray  # int, ray index p within its cluster
    delay: np.ndarray  # ns, T(z) + tau(z, p)
    gain: np.ndarray  # signed real amplitude alpha(z, p)
    seed: int | None = None

    @property
    def n_taps(self) -> int:
        return int(self.gain.size)

    def energy(self) -> float:
        """Multipath energy before shadowing."""
        return float(np.sum(self.gain ** 2))

    def rms_delay_spread(self) -> float:
        p = self.gain ** 2
        p = p / p.sum()
        mean = np.sum(p * self.delay)
        return float(np.sqrt(np.sum(p * (self.delay - mean) ** 2)))

    def same_as(self, other: "ChannelRealization") -> bool:
        return (self.shadowing_gain == other.shadowing_gain
                and np.array_equal(self.cluster, other.cluster)
                and np.array_equal(self.ray, other.ray)
                and np.array_equal(self.delay, other.delay)
                and np.array_equal(self.gain, other.gain))


def _arrivals(rng: np.random.Generator, rate: float, horizon: float) -> np.ndarray:
    """Arrival times of a Poisson process starting with an arrival at 0,
    truncated to ``t < horizon``."""
    times = [0.0]
    t = 0.0
    # Draw in blocks; the expected count is rate * horizon.
    block = max(8, int(rate * horizon * 1.2) + 8)
    while True:
        gaps = rng.exponential(1.0 / rate, size=block)
        steps = t + np.cumsum(gaps)
        keep = steps[steps < horizon]
        times.extend(keep.tolist())
        if keep.size < block:
            return np.asarray(times)
        t = float(steps[-1])


def generate_channel(profile: CmProfile, seed: int) -> ChannelRealization:
    rng = np.random.default_rng(seed)
    gam, gam_r = profile.cluster_decay, profile.ray_decay
    s1, s2 = profile.cluster_fading_std_db, profile.ray_fading_std_db
    ln10 = math.log(10.0)
    # Mean-power offset so that E[10^((xi+beta)/10)] follows the exponential
    # decay profile (log-normal bias removal from the report).
    bias = (s1 ** 2 + s2 ** 2) * ln10 / 20.0

    clusters, rays, delays, gains = [], [], [], []
    cluster_starts = _arrivals(rng, profile.cluster_arrival_rate, 10.0 * gam)
    for z, tc in enumerate(cluster_starts):
        xi = s1 * rng.standard_normal()
        tr = _arrivals(rng, profile.ray_arrival_rate, 10.0 * gam_r)
        mu = (-10.0 * tc / gam - 10.0 * tr / gam_r) / ln10 - bias
        beta = mu + s2 * rng.standard_normal(tr.size)
        sign = 2.0 * rng.integers(0, 2, size=tr.size) - 1.0
        amp = sign * 10.0 ** ((xi + beta) / 20.0)
        clusters.append(np.full(tr.size, z))
        rays.append(np.arange(tr.size))
        delays.append(tc + tr)
        gains.append(amp)

    cluster = np.concatenate(clusters)
    ray = np.concatenate(rays)
    delay = np.concatenate(delays)
    gain = np.concatenate(gains)

    keep = delay < profile.max_delay
    cluster, ray, delay, gain = cluster[keep], ray[keep], delay[keep], gain[keep]
    gain = gain / math.sqrt(float(np.sum(gain ** 2)))

    shadow_db = profile.shadowing_std_db * rng.standard_normal()
    return ChannelRealization(
        shadowing_gain=float(10.0 ** (shadow_db / 10.0)),
        cluster=cluster.astype(np.int64), ray=ray.astype(np.int64),
        delay=delay, gain=gain, seed=seed,
    )


def subcarrier_frequencies_mhz(band_center_ghz: float, n_subcarriers: int = N_SUBCARRIERS,
                               spacing_mhz: float = SUBCARRIER_SPACING_MHZ) -> np.ndarray:
    """Absolute subcarrier frequencies; index n_subcarriers // 2 sits on the band centre."""
    offsets = np.arange(n_subcarriers) - n_subcarriers // 2
    return band_center_ghz * 1e3 + offsets * spacing_mhz


def frequency_response(ch: ChannelRealization, band_center_ghz: float,
                       n_subcarriers: int = N_SUBCARRIERS,
                       spacing_mhz: float = SUBCARRIER_SPACING_MHZ,
                       on_grid: bool = True) -> np.ndarray:
    """Complex subcarrier gains ``sqrt(G) * sum(alpha * exp(-j 2 pi f tau))``.

    With ``on_grid`` the tap delays are first rounded to the 528 MHz sample
    grid, which makes the mean of ``|H|^2`` over a 128-point grid equal the
    binned tap energy exactly.
    """
    tau = ch.delay
    if on_grid:
        tau = np.round(tau * SAMPLE_RATE_MHZ * 1e-3) / (SAMPLE_RATE_MHZ * 1e-3)
    f_mhz = subcarrier_frequencies_mhz(band_center_ghz, n_subcarriers, spacing_mhz)
    # MHz * ns = 1e-3 cycles
    phase = np.exp(-2j * np.pi * np.outer(f_mhz, tau) * 1e-3)
    return math.sqrt(ch.shadowing_gain) * (phase @ ch.gain)


@dataclass(frozen=True)
class LinkBudget:
    tx_psd_dbm_mhz: float = FCC_PSD_CAP_DBM_MHZ
    # -174 dBm/Hz thermal floor plus a 6.6 dB receiver noise figure
    noise_psd_dbm_mhz: float = -107.4
    # short line-of-sight link; puts subcarrier SINR near 30 dB at P_T / 3
    pathloss_db: float = 36.0
    primary_interference_psd_dbm_mhz: float | None = None

    def __post_init__(self):
        if self.tx_psd_dbm_mhz > FCC_PSD_CAP_DBM_MHZ + 1e-12:
            raise ValueError(f"tx PSD {self.tx_psd_dbm_mhz} dBm/MHz exceeds the "
                             f"{FCC_PSD_CAP_DBM_MHZ} dBm/MHz cap")

    @property
    def pathloss_linear(self) -> float:
        return 10.0 ** (-self.pathloss_db / 10.0)

    def subband_power_w(self, bandwidth_mhz: float = SAMPLE_RATE_MHZ) -> float:
        """Transmit power of one sub-band at the configured PSD."""
        return 10.0 ** (self.tx_psd_dbm_mhz / 10.0) * 1e-3 * bandwidth_mhz


def _dbm_mhz_to_w(psd_dbm_mhz: float | None, bandwidth_mhz: float) -> float:
    if psd_dbm_mhz is None:
        return 0.0
    return 10.0 ** (psd_dbm_mhz / 10.0) * 1e-3 * bandwidth_mhz


def per_subcarrier_sinr(gains: Sequence[complex] | np.ndarray, budget: LinkBudget,
                        overlapped: Iterable[int] = (),
                        spacing_mhz: float = SUBCARRIER_SPACING_MHZ) -> np.ndarray:
    """SINR per watt of power on each subcarrier, linear (1/W)."""
    h2 = np.abs(np.asarray(gains)) ** 2
    noise = np.full(h2.shape, _dbm_mhz_to_w(budget.noise_psd_dbm_mhz, spacing_mhz))
    idx = np.fromiter(overlapped, dtype=np.int64)
    if idx.size:
        noise[idx] += _dbm_mhz_to_w(budget.primary_interference_psd_dbm_mhz, spacing_mhz)
    if np.any(noise <= 0):
        raise ZeroNoise("noise plus interference power is zero on some subcarrier")
    return h2 * budget.pathloss_linear / noise
