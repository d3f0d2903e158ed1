"""Streaming statistics and small regression helpers."""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericalError


@dataclass
class RunningStats:
    """Welford accumulator with Chan's merge; mergeable in any grouping."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def push(self, x):
        x = float(x)
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)
        return self

    def extend(self, xs):
        for x in xs:
            self.push(x)
        return self

    def merge(self, other):
        """Combined statistics of two disjoint streams (returns a new object)."""
        n = self.count + other.count
        if n == 0:
            return RunningStats()
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / n
        m2 = self.m2 + other.m2 + delta * delta * self.count * other.count / n
        return RunningStats(n, mean, m2)

    @property
    def variance(self):
        return self.m2 / (self.count - 1) if self.count > 1 else float("nan")

    @property
    def stderr(self):
        return math.sqrt(self.variance / self.count) if self.count > 1 else float("nan")


def linear_fit(x, y, sigma=None):
    """Least-squares line ``y = intercept + slope x``.

    Returns
    -------
    dict
        ``slope``, ``intercept``, their standard errors and ``r2``. With
        ``sigma`` the fit is weighted and errors are absolute; otherwise they
        are scaled by the residual variance.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if len(x) < 2 or len(x) != len(y):
        raise ConfigError("a line fit needs at least two points")
    if np.ptp(x) == 0:
        raise NumericalError("slope undefined: all abscissae coincide")
    w = np.ones_like(x) if sigma is None else 1.0 / np.asarray(sigma, float) ** 2
    A = np.stack([np.ones_like(x), x], axis=1)
    cov = np.linalg.inv(A.T @ (w[:, None] * A))
    coef = cov @ (A.T @ (w * y))
    resid = y - A @ coef
    if sigma is None:
        dof = len(x) - 2
        s2 = float(resid @ resid) / dof if dof > 0 else float("nan")
        cov = cov * s2
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else float("nan")
    return {
        "intercept": float(coef[0]),
        "slope": float(coef[1]),
        "intercept_se": float(math.sqrt(cov[0, 0])),
        "slope_se": float(math.sqrt(cov[1, 1])),
        "r2": r2,
    }


def loglog_slope(x, y, sigma=None):
    """Line fit of ``log|y|`` against ``log x``; relative errors map to log errors."""
    x = np.asarray(x, float)
    y = np.abs(np.asarray(y, float))
    if np.any(x <= 0) or np.any(y <= 0):
        raise NumericalError("log-log fit needs positive values")
    s = None if sigma is None else np.asarray(sigma, float) / y
    return linear_fit(np.log(x), np.log(y), s)
