"""WiMedia MCS table and exponential effective SINR mapping (EESM).

All SINR values handled here are linear. Convert dB at the boundary with
:func:`db_to_linear`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInput, NonPositiveLambda, UnknownMode


class Modulation(str, Enum):
    QPSK = "QPSK"
    DCM = "DCM"


@dataclass(frozen=True)
class McsMode:
    rate_mbps: float
    modulation: Modulation
    code_rate: Fraction
    fds: bool
    tds_factor: int
    bits_per_symbol: int
    lam: float  # EESM scaling factor, linear SINR domain


MCS_TABLE: tuple[McsMode, ...] = (
    McsMode(53.3, Modulation.QPSK, Fraction(1, 3), True, 2, 100, 1.49),
    McsMode(80.0, Modulation.QPSK, Fraction(1, 2), True, 2, 100, 1.57),
    McsMode(110.0, Modulation.QPSK, Fraction(11, 32), False, 2, 200, 1.42),
    McsMode(160.0, Modulation.QPSK, Fraction(1, 2), False, 2, 200, 1.57),
    McsMode(200.0, Modulation.QPSK, Fraction(5, 8), False, 2, 200, 1.82),
    McsMode(320.0, Modulation.DCM, Fraction(1, 2), False, 1, 200, 1.85),
    McsMode(400.0, Modulation.DCM, Fraction(5, 8), False, 1, 200, 1.82),
    McsMode(480.0, Modulation.DCM, Fraction(3, 4), False, 1, 200, 1.80),
)

RATE_MIN_MBPS = MCS_TABLE[0].rate_mbps
RATE_MAX_MBPS = MCS_TABLE[-1].rate_mbps

# Rates are matched with a small absolute slack so that 53.3 typed by hand
# still finds the 53.3 row.
_RATE_MATCH_TOL = 1e-6


def mode_for_rate(rate_mbps: float) -> McsMode:
    for mode in MCS_TABLE:
        if abs(mode.rate_mbps - float(rate_mbps)) <= _RATE_MATCH_TOL:
            return mode
    raise UnknownMode(f"{rate_mbps} Mbps is not a WiMedia data rate")


def db_to_linear(value_db):
    return 10.0 ** (np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value):
    return 10.0 * np.log10(np.asarray(value, dtype=float))


def effective_sinr(sinrs: Sequence[float] | np.ndarray, lam: float) -> float:
    """Compress per-subcarrier SINRs into one effective SINR.

    ``-lam * ln(mean(exp(-sinr / lam)))``, evaluated relative to the
    smallest SINR so that large SINRs do not underflow to zero. The result is
    clipped into ``[min(sinrs), max(sinrs)]`` to absorb last-ulp rounding.
    """
    x = np.asarray(sinrs, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInput("effective_sinr needs at least one SINR value")
    if not lam > 0:
        raise NonPositiveLambda(f"lambda must be positive, got {lam}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("SINR values must be finite and non-negative")
    lo = float(x.min())
    hi = float(x.max())
    # mean(exp(-(x-lo)/lam)) = 1 + mean(expm1(...)); log1p keeps the
    # large-lambda limit accurate.
    shifted = np.expm1(-(x - lo) / lam)
    value = lo - lam * np.log1p(shifted.mean())
    return float(min(max(value, lo), hi))


def effective_sinr_two_level(sinr_full: float, sinr_reduced: float,
                             reduced_fraction: float, lam: float) -> float:
    """EESM of a sub-band where a fraction of subcarriers runs at a lower SINR.

    Used when interference control lowers the power of only the subcarriers
    overlapping a primary user; ``reduced_fraction`` is n_overlapped / N.
    """
    f = float(reduced_fraction)
    if f <= 0.0:
        return float(sinr_full)
    if f >= 1.0:
        return float(sinr_reduced)
    lo = min(sinr_full, sinr_reduced)
    s = (1.0 - f) * np.expm1(-(sinr_full - lo) / lam) + f * np.expm1(-(sinr_reduced - lo) / lam)
    return float(lo - lam * np.log1p(s))


def mcs_table_csv(modes: Iterable[McsMode] = MCS_TABLE) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rate_mbps", "modulation", "code_rate", "fds", "tds",
                     "bits_per_symbol", "lambda"])
    for m in modes:
        writer.writerow([f"{m.rate_mbps:g}", m.modulation.value, str(m.code_rate),
                         "yes" if m.fds else "no", m.tds_factor, m.bits_per_symbol,
                         f"{m.lam:.2f}"])
    return buf.getvalue()
