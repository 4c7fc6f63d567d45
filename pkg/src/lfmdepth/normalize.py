"""Percentile-based affine-invariant depth normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyInputError(ValueError):
    pass


class DegenerateMapError(ValueError):
    pass


@dataclass
class DepthMap:
    """Depth field with a per-pixel validity mask.

    ``values`` are meters for metric maps and dimensionless once normalized.
    Invalid pixels carry arbitrary values and are ignored downstream.
    """

    values: np.ndarray
    valid: np.ndarray | None = None
    units: str = "m"

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"depth map must be 2D, got shape {self.values.shape}")
        if self.valid is None:
            self.valid = np.isfinite(self.values)
            if self.units == "m":
                self.valid &= self.values > 0
        else:
            self.valid = np.asarray(self.valid, dtype=bool)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PercentileStats:
    d2: float
    d98: float

    def check(self) -> None:
        if not self.d98 > self.d2:
            raise DegenerateMapError(f"degenerate percentiles d2={self.d2} d98={self.d98}")


def percentiles(d: DepthMap, lo: float = 2.0, hi: float = 98.0) -> PercentileStats:
    vals = d.values[d.valid]
    if vals.size == 0:
        raise EmptyInputError("depth map has no valid pixels")
    if vals.size < 2:
        raise EmptyInputError("need at least two valid pixels for percentiles")
    d2, d98 = np.percentile(vals.astype(np.float64), [lo, hi], method="linear")
    stats = PercentileStats(float(d2), float(d98))
    stats.check()
    return stats


def normalize(d: DepthMap, stats: PercentileStats | None = None, clamp: bool = True) -> DepthMap:
    """Map d2 -> -1 and d98 -> +1; tails are clamped unless ``clamp`` is False."""
    stats = stats or percentiles(d)
    stats.check()
    span = stats.d98 - stats.d2
    out = 2.0 * ((d.values.astype(np.float64) - stats.d2) / span - 0.5)
    if clamp:
        out = np.clip(out, -1.0, 1.0)
    out = np.where(d.valid, out, 0.0)
    return DepthMap(out, d.valid.copy(), units="normalized")


def denormalize(dn: DepthMap, stats: PercentileStats) -> DepthMap:
    stats.check()
    out = (dn.values.astype(np.float64) / 2.0 + 0.5) * (stats.d98 - stats.d2) + stats.d2
    return DepthMap(out, dn.valid.copy(), units="m")
