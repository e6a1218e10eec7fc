"""Order-insensitive ensemble statistics and power-law fits."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np
from scipy import stats as sps

Z95 = 1.959963984540054


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    n: int

    @property
    def ci95(self) -> tuple:
        return (self.mean - Z95 * self.se, self.mean + Z95 * self.se)

    def zscore(self, target: float) -> float:
        if self.se == 0:
            return 0.0 if self.mean == target else math.inf
        return (self.mean - target) / self.se

    def within(self, target: float, sigmas: float = 3.0) -> bool:
        return abs(self.mean - target) <= sigmas * self.se

    def as_dict(self) -> dict:
        d = asdict(self)
        d["ci95"] = list(self.ci95)
        return d


def fsum_mean(values: Sequence[float]) -> float:
    vals = [float(v) for v in values]
    return math.fsum(vals) / len(vals)


def estimate(values: Sequence[float]) -> Estimate:
    """Sample mean with its standard error; exactly rounded sums make the
    result independent of the order of ``values``."""
    vals = sorted(float(v) for v in values)
    n = len(vals)
    if n == 0:
        raise ValueError("no samples")
    m = math.fsum(vals) / n
    if n == 1:
        return Estimate(m, 0.0, 1)
    var = math.fsum((v - m) ** 2 for v in vals) / (n - 1)
    return Estimate(m, math.sqrt(var / n), n)


@dataclass(frozen=True)
class PowerFit:
    slope: float
    intercept: float
    r2: float
    slope_se: float

    @property
    def slope_ci95(self) -> tuple:
        return (self.slope - Z95 * self.slope_se, self.slope + Z95 * self.slope_se)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["slope_ci95"] = list(self.slope_ci95)
        return d


def loglog_fit(x: Sequence[float], y: Sequence[float]) -> PowerFit:
    """Least-squares fit of log y = slope * log x + intercept."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if len(lx) < 2:
        raise ValueError("need at least two points")
    if len(lx) == 2:
        slope = (ly[1] - ly[0]) / (lx[1] - lx[0])
        return PowerFit(float(slope), float(ly[0] - slope * lx[0]), 1.0, 0.0)
    res = sps.linregress(lx, ly)
    return PowerFit(float(res.slope), float(res.intercept), float(res.rvalue**2), float(res.stderr))


def observed_order(steps: Sequence[float], errors: Sequence[float]) -> PowerFit:
    """Convergence order as the log-log slope of error against step size."""
    return loglog_fit(steps, errors)
