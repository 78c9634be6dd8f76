"""Power-domain NOMA with a fixed SIC decoding order and the IM/DD rate bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SIMPLEX_TOL = 1e-9
IMDD_FACTOR = math.e / (2 * math.pi)


class SimplexError(ValueError):
    pass


@dataclass(frozen=True)
class LinkParams:
    p_elec: float = 2.0          # W
    bandwidth: float = 20e6      # Hz
    noise_psd: float = 1e-21     # A^2/Hz
    responsivity: float = 0.5    # A/W

    def __post_init__(self):
        for name in ("p_elec", "bandwidth", "noise_psd", "responsivity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @classmethod
    def from_optical(cls, p_opt: float, q: float = 1.0, **kw) -> "LinkParams":
        return cls(p_elec=p_opt / q, **kw)

    @property
    def noise_power(self) -> float:
        return self.bandwidth * self.noise_psd


def check_simplex(alpha, tol: float = SIMPLEX_TOL) -> np.ndarray:
    a = np.asarray(alpha, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise SimplexError("power coefficients must be a non-empty vector")
    if np.any(~np.isfinite(a)) or np.any(a < -tol) or np.any(a > 1 + tol):
        raise SimplexError(f"coefficients {a} outside [0, 1]")
    if abs(a.sum() - 1.0) > tol:
        raise SimplexError(f"coefficients sum to {a.sum():.12g}, expected 1")
    return a


def sort_users_by_gain(gains) -> np.ndarray:
    """Decoding order: user indices from weakest to strongest combined gain.

    Ties keep ascending user index (stable sort).
    """
    return np.argsort(np.abs(np.asarray(gains, dtype=float)), kind="stable")


def enforce_inverse_order(alpha_raw, order) -> np.ndarray:
    """Permute ``alpha_raw`` so weaker users get larger coefficients.

    The largest coefficient goes to ``order[0]`` (weakest), the next to
    ``order[1]`` and so on; the multiset of values is unchanged.
    """
    a = check_simplex(alpha_raw)
    order = np.asarray(order)
    out = np.empty_like(a)
    out[order] = np.sort(a)[::-1]
    return out


def sinr(alpha, gains, link: LinkParams, order=None) -> np.ndarray:
    """Per-user SINR after perfect SIC, indexed by user (not by decoding position).

    A user is interfered with by every user decoded after it, i.e. later in
    ``order``; the last user in the order sees noise only.
    """
    alpha = np.asarray(alpha, dtype=float)
    h = np.asarray(gains, dtype=float)
    if order is None:
        order = sort_users_by_gain(h)
    order = np.asarray(order)
    s = (link.responsivity * h) ** 2 * link.p_elec                 # (R_p H_k)^2 P_e
    a_ord = alpha[order]
    # tail[i] = sum of alpha over decoding positions > i
    tail = np.concatenate([np.cumsum(a_ord[::-1])[::-1][1:], [0.0]])
    out = np.empty_like(h)
    out[order] = s[order] * a_ord / (s[order] * tail + link.noise_power)
    return out


def rate(gamma, bandwidth: float):
    """IM/DD achievable rate ``B log2(1 + e/(2 pi) * gamma)`` in bit/s."""
    return bandwidth * np.log2(1.0 + IMDD_FACTOR * np.asarray(gamma, dtype=float))


def sum_rate(rates) -> float:
    return float(np.sum(rates))
