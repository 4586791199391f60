"""Two-class service model: class weights, rate-driven service weights and
the resulting absolute user weight used as a static priority."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .errors import RateOutOfTable
from .mcs import RATE_MAX_MBPS, RATE_MIN_MBPS, mode_for_rate


class QosClass(str, Enum):
    HQOS = "HQoS"
    SQOS = "SQoS"

    @classmethod
    def parse(cls, value: "str | QosClass") -> "QosClass":
        if isinstance(value, cls):
            return value
        for member in cls:
            if member.value.lower() == str(value).lower():
                return member
        raise ValueError(f"unknown QoS class {value!r} (expected HQoS or SQoS)")


CLASS_WEIGHT = {QosClass.HQOS: 2, QosClass.SQOS: 1}


def service_weight(rate_mbps: float) -> float:
    if not (RATE_MIN_MBPS <= rate_mbps <= RATE_MAX_MBPS):
        raise RateOutOfTable(
            f"rate {rate_mbps} Mbps outside [{RATE_MIN_MBPS}, {RATE_MAX_MBPS}]")
    return 1.0 + (rate_mbps - RATE_MIN_MBPS) / (RATE_MAX_MBPS - RATE_MIN_MBPS)


def absolute_weight(qos_class: QosClass | str, s_k: float) -> float:
    return CLASS_WEIGHT[QosClass.parse(qos_class)] * s_k


@dataclass(frozen=True)
class UserProfile:
    id: int
    qos_class: QosClass
    requested_rate: float  # Mbps, one of the MCS rates
    delay_tolerance: float = 10.0  # ms

    def __post_init__(self):
        object.__setattr__(self, "qos_class", QosClass.parse(self.qos_class))
        mode_for_rate(self.requested_rate)
        if self.delay_tolerance < 0:
            raise ValueError("delay tolerance must be non-negative")

    @property
    def is_hqos(self) -> bool:
        return self.qos_class is QosClass.HQOS

    @property
    def class_weight(self) -> int:
        return CLASS_WEIGHT[self.qos_class]

    @property
    def service_weight(self) -> float:
        return service_weight(self.requested_rate)

    @property
    def absolute_weight(self) -> float:
        return self.class_weight * self.service_weight

    @property
    def lam(self) -> float:
        return mode_for_rate(self.requested_rate).lam


def _priority_key(user: UserProfile):
    return (-user.absolute_weight, user.delay_tolerance, user.id)


def priority_order(users: Iterable[UserProfile]) -> list[UserProfile]:
    """Highest priority first: larger weight, then lower delay tolerance, then lower id."""
    return sorted(users, key=_priority_key)


def priority_rank(users: list[UserProfile]) -> list[int]:
    """Rank (0 = highest priority) of each user, in input order."""
    order = sorted(range(len(users)), key=lambda i: _priority_key(users[i]))
    rank = [0] * len(users)
    for r, i in enumerate(order):
        rank[i] = r
    return rank
