"""Statistical toolkit: exponential rate fits, Monte Carlo aggregation,
two-sample tests and 1D Wasserstein distances on equal-size samples."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

# Grid points whose mean is below this many standard errors are dropped
# from rate fits: log of a noise-dominated mean biases the slope.
SIGNAL_TO_NOISE_CUTOFF = 4.0


@dataclass
class TimeSeries:
    """A value per grid time, with an optional standard error per point."""

    times: np.ndarray
    values: np.ndarray
    stderrs: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.stderrs is None:
            self.stderrs = np.zeros_like(self.values)
        else:
            self.stderrs = np.asarray(self.stderrs, dtype=float)
        if not (self.times.shape == self.values.shape == self.stderrs.shape):
            raise ValueError("times, values and stderrs must have equal length")
        if self.times.ndim != 1:
            raise ValueError("series must be one-dimensional")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(self.stderrs < 0):
            raise ValueError("stderrs must be nonnegative")

    def __len__(self) -> int:
        return self.times.size


@dataclass
class RateFit:
    """Fitted exponential decay rate with its standard error.

    ``lambda_hat`` is positive for decaying data. ``times`` holds the grid
    points that actually entered the weighted fit.
    """

    lambda_hat: float
    stderr: float
    lambda_theory: float
    times: np.ndarray
    intercept: float = 0.0

    def ci95(self) -> tuple[float, float]:
        half = 1.959963984540054 * self.stderr
        return (self.lambda_hat - half, self.lambda_hat + half)

    def relative_error(self) -> float:
        return abs(self.lambda_hat - self.lambda_theory) / abs(self.lambda_theory)


def fit_exponential_rate(series: TimeSeries, lambda_theory: float = math.nan) -> RateFit:
    """Weighted least squares of log(values) against times.

    Weights are values^2 / stderrs^2 (the delta-method variance of the log),
    uniform when the series carries no standard errors.  Points whose value
    is below SIGNAL_TO_NOISE_CUTOFF standard errors are excluded, as are
    points with a zero stderr when the rest of the series has noise (their
    weight would be infinite).

    Raises ValueError on nonpositive values or fewer than 3 usable points.
    """
    t = series.times
    v = series.values
    s = series.stderrs
    if np.any(v <= 0):
        raise ValueError("rate fit requires strictly positive values")
    if len(series) < 3:
        raise ValueError("rate fit requires at least 3 grid points")

    if np.all(s == 0):
        keep = np.ones_like(v, dtype=bool)
        w = np.ones_like(v)
    else:
        keep = (s > 0) & (v >= SIGNAL_TO_NOISE_CUTOFF * s)
        w = np.zeros_like(v)
        w[keep] = (v[keep] / s[keep]) ** 2
    if keep.sum() < 3:
        raise ValueError("fewer than 3 grid points above the noise floor")

    x = t[keep]
    y = np.log(v[keep])
    w = w[keep]
    wsum = w.sum()
    xbar = (w * x).sum() / wsum
    ybar = (w * y).sum() / wsum
    sxx = (w * (x - xbar) ** 2).sum()
    sxy = (w * (x - xbar) * (y - ybar)).sum()
    slope = sxy / sxx
    intercept = ybar - slope * xbar
    slope_var = 1.0 / sxx if np.any(s > 0) else _ols_slope_var(x, y, slope, intercept)
    return RateFit(
        lambda_hat=-slope,
        stderr=math.sqrt(slope_var),
        lambda_theory=lambda_theory,
        times=x,
        intercept=intercept,
    )


def _ols_slope_var(x, y, slope, intercept):
    # Unweighted fallback: residual-based slope variance.
    resid = y - (intercept + slope * x)
    dof = max(x.size - 2, 1)
    sxx = ((x - x.mean()) ** 2).sum()
    return float((resid @ resid) / dof / sxx)


def wasserstein_1d(x, y, p: int = 2) -> float:
    """Exact order-p Wasserstein distance between two equal-size empirical
    measures on the line: match sorted order statistics."""
    if p not in (1, 2, 4):
        raise ValueError(f"unsupported order p={p}; use 1, 2 or 4")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValueError("empty sample")
    if x.size != y.size:
        raise ValueError(f"sample sizes differ: {x.size} vs {y.size}")
    d = np.abs(np.sort(x) - np.sort(y))
    return float(np.mean(d**p) ** (1.0 / p))


def ks_statistic(x, y) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: sup |F_x - F_y|."""
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    if x.size == 0 or y.size == 0:
        raise ValueError("empty sample")
    grid = np.concatenate([x, y])
    cx = np.searchsorted(x, grid, side="right") / x.size
    cy = np.searchsorted(y, grid, side="right") / y.size
    return float(np.abs(cx - cy).max())


def ks_threshold(n: int, m: int, alpha: float = 1e-3) -> float:
    """Asymptotic two-sample rejection threshold at significance alpha."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c * math.sqrt((n + m) / (n * m))


def mc_mean_stderr(values) -> tuple[float, float]:
    """Sample mean and standard error over replicas (needs at least 2)."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("need at least 2 replicas for a standard error")
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(values.size))
    return mean, stderr


@dataclass
class RunningMeanVar:
    """Mergeable running mean/variance (count, mean, M2 form).

    Tracks a vector of statistics so one accumulator covers a whole time
    grid.  Merging batches in a fixed order is exactly reproducible.
    """

    count: int = 0
    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    m2: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def update_batch(self, rows: np.ndarray) -> None:
        """Fold in a (replicas, width) batch of observations."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        k = rows.shape[0]
        if k == 0:
            return
        bmean = rows.mean(axis=0)
        bm2 = ((rows - bmean) ** 2).sum(axis=0)
        self._merge_moments(k, bmean, bm2)

    def merge(self, other: "RunningMeanVar") -> None:
        if other.count:
            self._merge_moments(other.count, other.mean, other.m2)

    def _merge_moments(self, k, bmean, bm2):
        if self.count == 0:
            self.count = int(k)
            self.mean = np.array(bmean, dtype=float, copy=True)
            self.m2 = np.array(bm2, dtype=float, copy=True)
            return
        total = self.count + k
        delta = bmean - self.mean
        self.mean = self.mean + delta * (k / total)
        self.m2 = self.m2 + bm2 + delta**2 * (self.count * k / total)
        self.count = total

    def stderr(self) -> np.ndarray:
        if self.count < 2:
            raise ValueError("need at least 2 replicas for a standard error")
        return np.sqrt(self.m2 / (self.count - 1) / self.count)


def angle_average_check(tol: float = 1e-12) -> float:
    """Quadrature of (cos^4 + sin^4)/(2*pi) over one period.

    The value enters the contraction-rate derivation and must equal 3/4;
    a deviation beyond ``tol`` raises.
    """
    value, quad_err = integrate.quad(
        lambda a: (math.cos(a) ** 4 + math.sin(a) ** 4) / (2.0 * math.pi),
        -math.pi,
        math.pi,
        epsabs=1e-14,
        epsrel=1e-14,
    )
    if abs(value - 0.75) > tol:
        raise ArithmeticError(
            f"angle average {value!r} deviates from 3/4 beyond {tol}"
        )
    return float(value)
