from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from services.proofs import compute_fake_bid


@dataclass(frozen=True)
class UniformityResult:
    statistic: float
    p_value: float
    counts: tuple[int, ...]

    def uniform(self, alpha: float = 0.01) -> bool:
        return self.p_value > alpha


@dataclass(frozen=True)
class RestartCheck:
    mean: float
    bound: float
    standard_error: float

    @property
    def passed(self) -> bool:
        return self.mean <= self.bound + 3 * self.standard_error


def fake_bid_uniformity(rho: bytes, m: int, samples: int) -> UniformityResult:
    """Chi-square goodness of fit of compute_fake_bid over nonces 0..samples-1."""
    draws = np.fromiter((compute_fake_bid(rho, nonce, m) for nonce in range(samples)), dtype=np.int64, count=samples)
    counts = np.bincount(draws, minlength=m + 1)[1:]
    result = stats.chisquare(counts)
    return UniformityResult(float(result.statistic), float(result.pvalue), tuple(int(count) for count in counts))


def restart_bound(m: int, b_max: int, f_fake: int) -> float:
    """Expected restarts are at most (m / b_max)^f."""
    return (m / b_max) ** f_fake


def check_restarts(instances: Sequence[tuple[int, int, int]], f_fake: int) -> RestartCheck:
    """instances are (m, b_max, restarts) triples from independent runs."""
    restarts = np.array([instance[2] for instance in instances], dtype=float)
    bounds = np.array([restart_bound(m, b_max, f_fake) for m, b_max, _ in instances])
    error = float(stats.sem(restarts)) if len(restarts) > 1 else 0.0
    return RestartCheck(float(restarts.mean()), float(bounds.mean()), error)
