"""Gray-level discretization and first-order (histogram) features."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, asdict

import numpy as np


@dataclass(frozen=True)
class DiscretizationConfig:
    mode: str = "fixed_bin_width"
    bin_width: float = 25.0
    bin_count: int = 32

    def __post_init__(self):
        if self.mode not in ("fixed_bin_width", "fixed_bin_count"):
            raise ValueError(f"unknown discretization mode {self.mode!r}")
        if not (math.isfinite(self.bin_width) and self.bin_width > 0):
            raise ValueError("bin_width must be > 0")
        if int(self.bin_count) != self.bin_count or self.bin_count < 2:
            raise ValueError("bin_count must be an integer >= 2")

    def to_dict(self) -> dict:
        return asdict(self)


def discretize(values, config: DiscretizationConfig = DiscretizationConfig()) -> tuple[np.ndarray, int]:
    """Map intensities to gray levels ``1..n_levels``.

    Fixed bin width bins are anchored at the minimum of ``values``, so adding a
    constant to every value leaves the levels unchanged.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot discretize an empty set of values")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.ones(x.shape, dtype=np.int64), 1
    if config.mode == "fixed_bin_width":
        bins = np.floor((x - lo) / config.bin_width).astype(np.int64) + 1
        return bins, int(bins.max())
    n = int(config.bin_count)
    bins = np.floor((x - lo) / (hi - lo) * n).astype(np.int64) + 1
    np.minimum(bins, n, out=bins)
    return bins, n


@dataclass(frozen=True)
class FirstOrderFeatures:
    energy: float
    total_energy: float
    entropy: float
    minimum: float
    p10: float
    p90: float
    maximum: float
    mean: float
    median: float
    interquartile_range: float
    range: float
    mean_absolute_deviation: float
    robust_mean_absolute_deviation: float
    root_mean_squared: float
    skewness: float
    kurtosis: float
    variance: float
    uniformity: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


FIRST_ORDER_NAMES = tuple(f.name for f in fields(FirstOrderFeatures))


def compute_first_order(values, pixel_area: float = 1.0,
                        disc: DiscretizationConfig = DiscretizationConfig()) -> FirstOrderFeatures:
    """The 18 first-order features of a set of ROI intensities.

    Values are sorted first so every feature is a function of the multiset of
    values only (bit-for-bit independent of pixel order).
    """
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    n = x.size
    if n == 0:
        raise ValueError("first-order features need at least one value")

    energy = float(np.sum(x * x))
    mean = float(np.sum(x) / n)
    d = x - mean
    m2 = float(np.sum(d * d) / n)
    m3 = float(np.sum(d ** 3) / n)
    m4 = float(np.sum(d ** 4) / n)
    if m2 > 0:
        skewness = m3 / m2 ** 1.5
        kurtosis = m4 / m2 ** 2
    else:
        skewness = kurtosis = 0.0

    p10, p25, median, p75, p90 = np.percentile(x, [10, 25, 50, 75, 90])
    robust = x[(x >= p10) & (x <= p90)]
    # tiny ROIs can have no value inside [p10, p90]
    robust_mad = float(np.mean(np.abs(robust - robust.mean()))) if robust.size else 0.0

    levels, n_levels = discretize(x, disc)
    counts = np.bincount(levels, minlength=n_levels + 1)[1:]
    p = counts[counts > 0] / n
    entropy = float(-np.sum(p * np.log2(p)))
    uniformity = float(np.sum(p * p))

    return FirstOrderFeatures(
        energy=energy,
        total_energy=pixel_area * energy,
        entropy=entropy + 0.0,
        minimum=float(x[0]),
        p10=float(p10),
        p90=float(p90),
        maximum=float(x[-1]),
        mean=mean,
        median=float(median),
        interquartile_range=float(p75 - p25),
        range=float(x[-1] - x[0]),
        mean_absolute_deviation=float(np.mean(np.abs(d))),
        robust_mean_absolute_deviation=robust_mad,
        root_mean_squared=math.sqrt(energy / n),
        skewness=skewness,
        kurtosis=kurtosis,
        variance=m2,
        uniformity=uniformity,
    )
