"""Test of H0: no observation noise against H1: Lambda != 0."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .sampling import SamplingScheme, block_means


class DegenerateSeriesError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseTestComponents:
    sum_sq_fine: float
    sum_sq_coarse: float
    quartic_denom: float


@dataclass(frozen=True)
class NoiseTestResult:
    z: float
    p_value: float
    components: NoiseTestComponents

    def reject_at(self, level: float) -> bool:
        return self.z >= critical_value(level)

    def as_dict(self) -> dict:
        return {"z": self.z, "p_value": self.p_value, **vars(self.components)}


def critical_value(level: float) -> float:
    """Upper ``level`` point of N(0, 1)."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    return float(norm.isf(level))


def upper_tail(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def component_sum_series(raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    return raw if raw.ndim == 1 else raw.sum(axis=1)


def noise_test_components(raw, scheme: SamplingScheme) -> NoiseTestComponents:
    s = component_sum_series(raw)
    n = s.shape[0] - 1
    if n < 3:
        raise ValueError("need at least 3 increments")
    fine = float(np.sum(np.diff(s) ** 2))
    # 0 <= 2i <= n-2, i.e. two-step increments starting at even indices
    coarse = float(np.sum((s[2:n + 1:2] - s[0:n - 1:2]) ** 2))
    sbar = block_means(s, scheme.p, scheme.k)
    quartic = float(np.sum(np.diff(sbar[1:scheme.k]) ** 4))
    return NoiseTestComponents(fine, coarse, quartic)


def noise_test(raw, scheme: SamplingScheme) -> NoiseTestResult:
    """Statistic comparing one-step and two-step realised variation of the component sum."""
    if scheme.k < 3:
        raise ValueError("need at least 3 blocks")
    comp = noise_test_components(raw, scheme)
    if not comp.quartic_denom > 0:
        raise DegenerateSeriesError(
            "block means of the component sum do not vary (zero quartic variation); "
            "the statistic is undefined for constant or block-periodic data")
    z = math.sqrt(2.0 * scheme.p / (3.0 * comp.quartic_denom)) * (comp.sum_sq_fine - comp.sum_sq_coarse)
    return NoiseTestResult(z=z, p_value=upper_tail(z), components=comp)
