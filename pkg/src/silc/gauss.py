"""Diagonal-Gaussian primitives: fitting, Mahalanobis distance, chi-square quantiles.

Everything downstream (prototype memories, validation thresholds) reduces to
three operations on diagonal Gaussians:

    fit_diag_gaussian   mean + per-axis population variance, floored
    diag_mahalanobis    sqrt(sum((x - mu)^2 / var))
    chi2_quantile       inverse CDF of the chi-square distribution

Validation compares a *squared* Mahalanobis distance against the chi-square
quantile q directly (equivalent to comparing the distance against sqrt(q),
without paying a square root per query).

The quantile is computed from scratch: a series / continued-fraction
evaluation of the regularized lower incomplete gamma function P(a, x)
(Numerical Recipes style), inverted by bracketing + bisection to 1e-12 in
CDF space. No scipy dependency in the core package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ContractViolation

DEFAULT_VARIANCE_FLOOR = 1e-6

_GAMMA_EPS = 1e-15
_GAMMA_MAX_ITER = 500


@dataclass(frozen=True)
class GaussianComponent:
    """One mode of a multimodal prototype: diagonal Gaussian (mean, variance).

    Variances are strictly positive; fitting enforces a floor so degenerate
    (constant) dimensions keep finite precision.
    """

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        variance = np.asarray(self.variance, dtype=np.float64)
        if mean.ndim != 1 or variance.ndim != 1 or mean.shape != variance.shape:
            raise ContractViolation(
                f"mean/variance must be equal-length 1-D vectors, got {mean.shape} vs {variance.shape}"
            )
        if mean.size < 1:
            raise ContractViolation("components must have dimension >= 1")
        if not np.all(variance > 0.0):
            raise ContractViolation("every variance entry must be > 0")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)

    @property
    def dim(self) -> int:
        return self.mean.size


def diag_mahalanobis(x, comp: GaussianComponent) -> float:
    """Mahalanobis distance of ``x`` from a diagonal-Gaussian component.

    Returns sqrt(sum_i (x_i - mu_i)^2 / var_i); zero iff x equals the mean.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != comp.mean.shape:
        raise ContractViolation(
            f"query dimension {x.shape} does not match component dimension {comp.mean.shape}"
        )
    d = x - comp.mean
    return float(np.sqrt(np.sum(d * d / comp.variance)))


def fit_diag_gaussian(points, variance_floor: float = DEFAULT_VARIANCE_FLOOR) -> GaussianComponent:
    """Fit a diagonal Gaussian to a point set.

    Mean is the arithmetic mean; variance is the per-dimension *population*
    variance (divide by N), clamped below by ``variance_floor``. Population
    variance is the right summary here: a component describes exactly its
    cluster members, and stays defined for N=1 via the floor.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ContractViolation("need at least one point of fixed dimension")
    if not (variance_floor > 0.0):
        raise ContractViolation("variance_floor must be positive")
    mean = pts.mean(axis=0)
    var = np.maximum(pts.var(axis=0), variance_floor)
    return GaussianComponent(mean=mean, variance=var)


def _gammainc_lower_series(a: float, x: float) -> float:
    """P(a, x) by power series; preferred region x < a + 1."""
    if x <= 0.0:
        return 0.0
    gln = math.lgamma(a)
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_GAMMA_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _GAMMA_EPS:
            break
    return total * math.exp(-x + a * math.log(x) - gln)


def _gammainc_upper_contfrac(a: float, x: float) -> float:
    """Q(a, x) by modified Lentz continued fraction; preferred region x >= a + 1."""
    gln = math.lgamma(a)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _GAMMA_MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_EPS:
            break
    return math.exp(-x + a * math.log(x) - gln) * h


def regularized_gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) for a > 0, x >= 0."""
    if a <= 0.0:
        raise ContractViolation("shape parameter a must be positive")
    if x < 0.0:
        raise ContractViolation("x must be nonnegative")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gammainc_lower_series(a, x)
    return 1.0 - _gammainc_upper_contfrac(a, x)


def chi2_cdf(x: float, dof: int) -> float:
    """CDF of the chi-square distribution with ``dof`` degrees of freedom."""
    return regularized_gamma_p(dof / 2.0, x / 2.0)


@lru_cache(maxsize=4096)
def chi2_quantile(dof: int, confidence: float) -> float:
    """Inverse chi-square CDF: q such that CDF(q; dof) = confidence.

    Solved by bracketing and bisection on the incomplete-gamma CDF, run to
    1e-12 in CDF space (and well below 1e-9 in q). Valid for
    1 <= dof <= 4096 and confidence strictly inside (0, 1). Cached: the same
    (dimension, confidence) threshold is hit on every validation query.
    """
    if not isinstance(dof, (int, np.integer)) or not 1 <= dof <= 4096:
        raise ContractViolation(f"dof must be an integer in [1, 4096], got {dof!r}")
    if not 0.0 < confidence < 1.0:
        raise ContractViolation(f"confidence must lie in (0, 1), got {confidence!r}")

    lo = 0.0
    # Wilson-Hilferty gives a decent start; doubling from there always brackets.
    hi = max(1.0, dof + 10.0 * math.sqrt(2.0 * dof))
    while chi2_cdf(hi, dof) < confidence:
        hi *= 2.0

    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        err = chi2_cdf(mid, dof) - confidence
        if err < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-11 and abs(err) < 1e-12:
            break
    return 0.5 * (lo + hi)
