"""zCDP accounting, calibrated Gaussian / GOE noise and the noise utility bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ._validation import check_positive, check_unit_interval


class Statistic(IntEnum):
    """Released statistics, also used as RNG stream identifiers."""

    VALUE_SUM = 0          # phi_1: optimistic regression target
    PESSIMISTIC_SUM = 1    # phi_2: pessimistic regression target
    SQUARED_VALUE_SUM = 2  # phi_3: second-moment regression target
    GRAM = 3               # K_1: Gram matrix perturbation


ENV_STREAM = 4


@dataclass(frozen=True)
class ZcdpBudget:
    rho_total: float
    statistic_count: int

    @property
    def rho_per_statistic(self) -> float:
        return self.rho_total / self.statistic_count


@dataclass(frozen=True)
class DpReport:
    epsilon: float
    delta_prime: float
    rho: float


@dataclass(frozen=True)
class NoiseCalibration:
    """Every privacy-derived constant of one run."""

    rho: float
    H: int
    K: int
    d: int
    delta: float
    c1: float = 1.0
    c2: float = 1.0

    @property
    def budget(self) -> ZcdpBudget:
        return per_statistic_budget(self.rho, self.H, self.K)

    @property
    def rho0(self) -> float:
        return self.budget.rho_per_statistic

    @property
    def sigma2_value_sum(self) -> float:
        return gaussian_sigma2_for_zcdp(2.0 * self.H, self.rho0)

    @property
    def sigma2_squared_value_sum(self) -> float:
        return gaussian_sigma2_for_zcdp(2.0 * self.H ** 2, self.rho0)

    @property
    def sigma2_goe_entry(self) -> float:
        return 1.0 / (4.0 * self.rho0)

    @property
    def L(self) -> float:
        return utility_L(self.rho, self.H, self.K, self.d, self.delta)

    @property
    def lambda_tilde(self) -> float:
        return utility_lambda_tilde(self.rho, self.H, self.K, self.d, self.delta, self.c1, self.c2)

    def sigma2(self, statistic: Statistic) -> float:
        if statistic == Statistic.SQUARED_VALUE_SUM:
            return self.sigma2_squared_value_sum
        if statistic == Statistic.GRAM:
            return self.sigma2_goe_entry
        return self.sigma2_value_sum


def per_statistic_budget(rho: float, H: int, K: int) -> ZcdpBudget:
    """Split ``rho`` evenly over the ``4HK`` released statistics."""
    check_positive("rho", rho)
    if H < 1 or K < 1:
        raise ValueError(f"H and K must be >= 1, got H={H}, K={K}")
    return ZcdpBudget(float(rho), 4 * H * K)


def gaussian_sigma2_for_zcdp(l2_sensitivity: float, rho0: float) -> float:
    """Variance ``Delta^2 / (2 rho0)`` making the Gaussian mechanism rho0-zCDP."""
    check_positive("l2_sensitivity", l2_sensitivity)
    check_positive("rho0", rho0)
    return l2_sensitivity ** 2 / (2.0 * rho0)


def zcdp_to_dp(rho: float, delta_prime: float) -> DpReport:
    if rho < 0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    check_unit_interval("delta_prime", delta_prime)
    eps = rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta_prime))
    return DpReport(eps, delta_prime, rho)


def dp_to_zcdp(epsilon: float, delta_prime: float) -> float:
    """Largest rho whose (eps, delta')-DP conversion equals ``epsilon``."""
    check_positive("epsilon", epsilon)
    check_unit_interval("delta_prime", delta_prime)
    ell = math.log(1.0 / delta_prime)
    # sqrt(ell + eps) - sqrt(ell) == eps / (sqrt(ell + eps) + sqrt(ell)), cancellation-free
    root = epsilon / (math.sqrt(ell + epsilon) + math.sqrt(ell))
    return root * root


def compose_zcdp(rho_list) -> float:
    return math.fsum(rho_list)


def utility_L(rho: float, H: int, K: int, d: int, delta: float) -> float:
    """High-probability bound on the norm of every value-sum noise vector."""
    for name, v in (("rho", rho), ("H", H), ("K", K), ("d", d)):
        check_positive(name, v)
    check_unit_interval("delta", delta)
    return 4.0 * H * math.sqrt(d * H * K / rho * math.log(10.0 * d * K * H / delta))


def utility_lambda_tilde(rho: float, H: int, K: int, d: int, delta: float,
                         c1: float = 1.0, c2: float = 1.0) -> float:
    """Regulariser dominating the GOE perturbation's spectral norm w.h.p."""
    for name, v in (("rho", rho), ("H", H), ("K", K), ("d", d), ("c1", c1), ("c2", c2)):
        check_positive(name, v)
    check_unit_interval("delta", delta)
    ratio = math.log(5.0 * c1 * H / delta) / (c2 * d)
    # a negative log (c1 tiny) has no real 2/3 power; the bound then uses |.|
    return math.sqrt(8.0 * d * H * K / rho) * (2.0 + abs(ratio) ** (2.0 / 3.0))


def sample_gaussian_vector(d: int, sigma2: float, rng) -> np.ndarray:
    if sigma2 < 0:
        raise ValueError(f"sigma2 must be >= 0, got {sigma2}")
    if sigma2 == 0:
        return np.zeros(d)
    return rng.normal(0.0, math.sqrt(sigma2), size=d)


def sample_goe(d: int, rho0: float, rng) -> np.ndarray:
    """Symmetric perturbation ``(Z + Z^T) / sqrt(2)`` with ``Z_ij ~ N(0, 1/(4 rho0))``."""
    check_positive("rho0", rho0)
    Z = rng.normal(0.0, math.sqrt(1.0 / (4.0 * rho0)), size=(d, d))
    return (Z + Z.T) / math.sqrt(2.0)


def noise_stream(seed: int, statistic: int, k: int, h: int) -> np.random.Generator:
    """Independent counter-based stream for one released statistic at ``(k, h)``."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(int(statistic), int(k), int(h)))
    return np.random.Generator(np.random.Philox(ss))


def env_stream(seed: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(ENV_STREAM,))
    return np.random.Generator(np.random.Philox(ss))


def accountant_report(cal: NoiseCalibration, delta_prime: float, noise_reuse: str = "fresh") -> str:
    """Text block recorded in run metadata."""
    rep = zcdp_to_dp(compose_zcdp([cal.rho0] * cal.budget.statistic_count), delta_prime)
    rows = [
        ("rho_total", cal.rho),
        ("rho_per_statistic", cal.rho0),
        ("epsilon", rep.epsilon),
        ("delta_prime", delta_prime),
        ("L", cal.L),
        ("lambda_tilde", cal.lambda_tilde),
        ("c1", cal.c1),
        ("c2", cal.c2),
        ("noise_reuse", noise_reuse),
    ]
    return "\n".join(f"{k} = {format(v, '.17g') if isinstance(v, float) else v}" for k, v in rows)
