"""Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.

For an integer order ``alpha`` and sampling rate ``q < 1`` the RDP bound is
``log(A_alpha) / (alpha - 1)`` with

    A_alpha = sum_{i=0}^{alpha} C(alpha, i) (1 - q)^(alpha - i) q^i exp((i^2 - i) / (2 sigma^2)),

evaluated here in log space.  Fractional orders take the larger value of the
two neighbouring integer orders, which is a valid upper bound because RDP is
non-decreasing in the order.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import ParameterError

DEFAULT_ORDERS = tuple(sorted({1.25, 1.5, 2.0, 3.0, 4.0, 8.0, 16.0, 32.0, 64.0} | {float(a) for a in range(2, 65)}))


@dataclass(frozen=True)
class RdpCurve:
    orders: tuple
    values: tuple

    def __post_init__(self):
        if len(self.orders) != len(self.values):
            raise ParameterError("orders and values differ in length")

    def __mul__(self, steps):
        return RdpCurve(self.orders, tuple(v * steps for v in self.values))

    __rmul__ = __mul__


def _log_add(x, y):
    if x == -math.inf:
        return y
    if y == -math.inf:
        return x
    hi, lo = max(x, y), min(x, y)
    return hi + math.log1p(math.exp(lo - hi))


def _log_binom(n, k):
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


@lru_cache(maxsize=4096)
def _rdp_int(q, sigma, alpha):
    if q == 1.0:
        return alpha / (2.0 * sigma**2)
    log_q, log_1mq = math.log(q), math.log1p(-q)
    log_a = -math.inf
    for i in range(alpha + 1):
        term = _log_binom(alpha, i) + i * log_q + (alpha - i) * log_1mq + (i * i - i) / (2.0 * sigma**2)
        log_a = _log_add(log_a, term)
    return max(log_a, 0.0) / (alpha - 1)


def _check(q, sigma):
    if not 0.0 < q <= 1.0:
        raise ParameterError(f"sampling rate q={q} must lie in (0, 1]")
    if not sigma > 0.0:
        raise ParameterError(f"noise multiplier sigma={sigma} must be positive")


def rdp_subsampled_gaussian(q, sigma, orders=DEFAULT_ORDERS) -> RdpCurve:
    """RDP of one step of the subsampled Gaussian mechanism at each order."""
    q, sigma = float(q), float(sigma)
    _check(q, sigma)
    orders = tuple(float(a) for a in orders)
    if any(a <= 1.0 for a in orders):
        raise ParameterError("all Renyi orders must exceed 1")
    values = []
    for alpha in orders:
        if q == 1.0:
            values.append(alpha / (2.0 * sigma**2))
            continue
        lo, hi = math.floor(alpha), math.ceil(alpha)
        if lo == hi:
            values.append(_rdp_int(q, sigma, int(alpha)))
        elif lo < 2:
            values.append(_rdp_int(q, sigma, hi))
        else:
            values.append(max(_rdp_int(q, sigma, lo), _rdp_int(q, sigma, hi)))
    return RdpCurve(orders, tuple(values))


def rdp_to_epsilon(curve: RdpCurve, delta):
    """Convert an RDP curve to epsilon at ``delta``; returns ``(epsilon, best_order)``."""
    if not 0.0 < delta < 1.0:
        raise ParameterError("delta must lie in (0, 1)")
    orders = np.asarray(curve.orders)
    eps = np.asarray(curve.values) + math.log(1.0 / delta) / (orders - 1.0)
    best = int(np.argmin(eps))
    return float(eps[best]), float(orders[best])


def dpsgd_epsilon(q, sigma, steps, delta, orders=DEFAULT_ORDERS) -> float:
    """Epsilon after ``steps`` DP-SGD steps with rate ``q`` and noise ``sigma``."""
    if steps == 0:
        return 0.0
    return rdp_to_epsilon(rdp_subsampled_gaussian(q, sigma, orders) * steps, delta)[0]


def compose_epsilon(ledger, orders=DEFAULT_ORDERS):
    """Total (epsilon, delta) spent by the mechanisms recorded in ``ledger``.

    Subsampled-Gaussian steps compose in RDP and are converted once at the
    ledger's delta target; every other entry adds its own epsilon and delta,
    in ledger order.
    """
    counts = Counter()
    linear = []
    for entry in ledger.entries:
        if entry.mechanism == "subsampled_gaussian":
            counts[(float(entry.params["q"]), float(entry.params["sigma"]))] += 1
        else:
            linear.append(entry)
    eps, delta = 0.0, 0.0
    if counts:
        total = np.zeros(len(orders))
        for (q, sigma), n in sorted(counts.items()):
            total += np.asarray(rdp_subsampled_gaussian(q, sigma, orders).values) * n
        eps, _ = rdp_to_epsilon(RdpCurve(tuple(orders), tuple(total)), ledger.delta_target)
        delta = ledger.delta_target
    for entry in linear:
        eps += float(entry.params["epsilon"])
        delta += float(entry.params.get("delta", 0.0))
    return eps, delta
