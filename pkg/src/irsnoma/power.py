"""Network power consumption, sum energy efficiency and Jain fairness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PowerModelConfig:
    # per AP, W
    p_circuit_tx: float = 3.250
    p_led: float = 2.758
    p_amp: float = 0.280
    p_filter_tx: float = 0.0025
    p_dac: float = 0.175
    # per mirror, W
    p_element: float = 0.100
    # per receiver, W
    p_circuit_rx: float = 0.0019
    p_filter_rx: float = 0.0025
    p_tia: float = 2.500
    p_adc: float = 0.095
    p_max: float = 5.0
    # False reproduces the literal single-AP / single-receiver accounting
    per_device: bool = True

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if k != "per_device" and v < 0:
                raise ValueError(f"{k} must be non-negative")

    @property
    def ap_electronics(self) -> float:
        return self.p_circuit_tx + self.p_led + self.p_amp + self.p_filter_tx + self.p_dac

    @property
    def receiver_electronics(self) -> float:
        return self.p_circuit_rx + self.p_filter_rx + self.p_tia + self.p_adc


@dataclass(frozen=True)
class PowerBreakdown:
    p_ap: float
    p_irs: float
    p_rec: float
    p_total: float


def total_power(p_elec: float, n_aps: int, n_mirrors: int, n_users: int,
                cfg: PowerModelConfig = PowerModelConfig()) -> PowerBreakdown:
    """Transmit, IRS steering and receiver power, in watts.

    ``p_elec`` is counted once for the network. With ``cfg.per_device`` the
    AP and receiver electronics are multiplied by the number of APs and users.
    """
    if min(n_aps, n_mirrors, n_users) < 0:
        raise ValueError("device counts must be non-negative")
    l_mult, k_mult = (n_aps, n_users) if cfg.per_device else (min(n_aps, 1), min(n_users, 1))
    p_ap = p_elec + l_mult * cfg.ap_electronics
    p_irs = n_mirrors * cfg.p_element
    p_rec = k_mult * cfg.receiver_electronics
    return PowerBreakdown(p_ap, p_irs, p_rec, p_ap + p_irs + p_rec)


def see(sum_rate: float, p_total: float) -> float:
    """Sum energy efficiency in bit/J."""
    if p_total <= 0:
        raise ZeroDivisionError("total power must be positive")
    return sum_rate / p_total


def jain(rates) -> float:
    """Jain's index ``(sum R)^2 / (K sum R^2)``; an all-zero vector counts as fair (1)."""
    r = np.asarray(rates, dtype=float)
    sq = float(np.dot(r, r))
    if sq == 0.0:
        return 1.0
    return float(r.sum()) ** 2 / (r.size * sq)


def objective(fairness: float, see_value: float) -> float:
    return fairness * see_value
