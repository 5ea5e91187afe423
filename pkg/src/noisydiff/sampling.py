"""Block scheme (p, k, delta) and non-overlapping local means."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SchemeError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingScheme:
    """n increments at step h, cut into k blocks of p samples."""

    n: int
    h: float
    tau: float
    p: int
    k: int

    def __post_init__(self):
        if self.p < 1 or self.k < 1:
            raise SchemeError("block length and count must be positive")
        if self.k * self.p > self.n:
            raise SchemeError(f"{self.k} blocks of {self.p} exceed the {self.n} increments")

    @property
    def delta(self) -> float:
        return self.p * self.h

    @property
    def used(self) -> int:
        return self.k * self.p

    @property
    def dropped(self) -> int:
        return self.n - self.k * self.p


def _pick_block_length(n: int, h: float, tau: float) -> int:
    target = h ** (-1.0 / tau)
    p0 = int(round(target))
    # largest divisor of n within one of the target, so no samples are dropped
    near = [q for q in range(p0 + 2, p0 - 3, -1) if q >= 2 and n % q == 0 and abs(q - target) <= 1.0]
    p = near[0] if near else p0
    return max(p, 2)


def derive_scheme(n: int, h: float, tau: float, p_override: int | None = None) -> SamplingScheme:
    """Block length p ~ h^(-1/tau), preferring a nearby divisor of n.

    >>> s = derive_scheme(100, 0.01, 2.0)
    >>> (s.p, s.k, s.dropped)
    (10, 10, 0)
    """
    n = int(n)
    if not h > 0:
        raise SchemeError("h must be positive")
    if p_override is None:
        if n < 3:
            raise SchemeError("need at least 3 increments")
        if not 1.0 < tau <= 2.0:
            raise SchemeError(f"tau must lie in (1, 2], got {tau}")
        p = _pick_block_length(n, h, tau)
    else:
        p = int(p_override)
        if p < 1:
            raise SchemeError("block length must be positive")
    k = n // p
    if k < 3:
        raise SchemeError(f"scheme infeasible: only {k} blocks of length {p} fit into n = {n}")
    return SamplingScheme(n=n, h=float(h), tau=float(tau), p=p, k=k)


@dataclass(frozen=True)
class LocalMeanSeries:
    means: np.ndarray
    scheme: SamplingScheme


def block_means(raw, p: int, k: int) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    squeeze = raw.ndim == 1
    if squeeze:
        raw = raw[:, None]
    if raw.shape[0] < k * p:
        raise SchemeError(f"need {k * p} samples, got {raw.shape[0]}")
    # contiguous last axis so numpy reduces pairwise
    blocks = np.ascontiguousarray(raw[: k * p].reshape(k, p, -1).transpose(0, 2, 1))
    out = blocks.sum(axis=-1) / p
    return out[:, 0] if squeeze else out


def local_means(raw, scheme: SamplingScheme) -> LocalMeanSeries:
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    return LocalMeanSeries(block_means(raw, scheme.p, scheme.k), scheme)
