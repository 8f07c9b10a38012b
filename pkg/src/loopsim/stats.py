"""Self-contained significance testing: Student-t p-values without scipy.

The two-sided p-value for a t statistic with df degrees of freedom is
I_x(df/2, 1/2) with x = df / (df + t^2), where I is the regularized
incomplete beta function, evaluated here with the standard continued
fraction (modified Lentz iteration).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_MAX_ITER = 300
_EPS = 3.0e-16
_FPMIN = 1.0e-300

DEFAULT_ALPHA = 0.05
DEFAULT_CORRECTIONS = 12


def log_beta(a: float, b: float) -> float:
    return math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)


def _beta_cont_frac(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta, Lentz's method."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        num = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + num * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + num / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        num = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + num * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + num / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"shape parameters must be positive, got a={a}, b={b}")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(a * math.log(x) + b * math.log1p(-x) - log_beta(a, b))
    # The continued fraction converges fast only on one side of the mean;
    # use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) on the other.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cont_frac(a, b, x) / a
    return 1.0 - front * _beta_cont_frac(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for T ~ Student-t with df degrees of freedom."""
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t))


def student_t_cdf(t: float, df: float) -> float:
    p = student_t_two_sided_p(t, df)
    return 1.0 - 0.5 * p if t >= 0 else 0.5 * p


def student_t_sf(t: float, df: float) -> float:
    return 1.0 - student_t_cdf(t, df)


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    df: float
    p_value: float
    degenerate: bool = False

    def significant(
        self,
        alpha: float = DEFAULT_ALPHA,
        corrections: int = DEFAULT_CORRECTIONS,
    ) -> bool:
        """Bonferroni-corrected significance: p < alpha / corrections."""
        if corrections < 1:
            raise ConfigError(f"corrections must be >= 1, got {corrections}")
        return self.p_value < alpha / corrections


def paired_t_test(before, after) -> TTestResult:
    """Dependent-samples t-test on per-user (after - before) differences."""
    b = np.asarray(before, dtype=float)
    a = np.asarray(after, dtype=float)
    if b.shape != a.shape or b.ndim != 1:
        raise ValueError(f"before/after must be aligned 1-d vectors, got {b.shape} vs {a.shape}")
    n = b.size
    if n < 2:
        raise ValueError(f"need at least 2 paired observations, got {n}")
    diff = a - b
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    df = float(n - 1)
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, df, 1.0, degenerate=True)
        return TTestResult(math.copysign(math.inf, mean), df, 0.0, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, df, student_t_two_sided_p(t, df))


def welch_t_test(sample_a, sample_b) -> TTestResult:
    """Independent-samples t-test without equal-variance assumption."""
    x = np.asarray(sample_a, dtype=float)
    y = np.asarray(sample_b, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.size < 2 or y.size < 2:
        raise ValueError("need two 1-d samples with at least 2 observations each")
    vx = float(x.var(ddof=1))
    vy = float(y.var(ddof=1))
    nx, ny = x.size, y.size
    se2 = vx / nx + vy / ny
    mean_diff = float(x.mean() - y.mean())
    if se2 == 0.0:
        if mean_diff == 0.0:
            return TTestResult(0.0, float(nx + ny - 2), 1.0, degenerate=True)
        return TTestResult(math.copysign(math.inf, mean_diff), float(nx + ny - 2), 0.0, degenerate=True)
    t = mean_diff / math.sqrt(se2)
    df = se2 * se2 / ((vx / nx) ** 2 / (nx - 1) + (vy / ny) ** 2 / (ny - 1))
    return TTestResult(t, df, student_t_two_sided_p(t, df))
