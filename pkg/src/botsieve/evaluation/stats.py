"""Paired t-test and Pearson correlation with exact t-distribution p-values.

Two-sided p-values come from the regularized incomplete beta function,
evaluated by Lentz's continued fraction; no statistics package needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from ..errors import DegenerateInput

_TINY = 1e-300
_EPS = 1e-16


def _betacf(a: float, b: float, x: float) -> float:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, 20000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float, xc: Optional[float] = None) -> float:
    """Regularized incomplete beta I_x(a, b). ``xc`` may pass 1 - x computed without cancellation."""
    if xc is None:
        xc = 1.0 - x
    if x <= 0.0:
        return 0.0
    if xc <= 0.0:
        return 1.0
    log_front = (a * math.log(x) + b * math.log(xc)
                 - (math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(log_front) * _betacf(b, a, xc) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0
    t2 = t * t
    return min(1.0, max(0.0, betainc(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2))))


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs)


@dataclass(frozen=True)
class PairedTTest:
    t: float
    df: int
    p: float
    cohens_d: float


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> PairedTTest:
    """Paired t-test of ``a`` against ``b``; Cohen's d uses the SD of the differences."""
    if len(a) != len(b):
        raise ValueError("paired series must have equal length")
    n = len(a)
    if n < 2:
        raise DegenerateInput("paired t-test needs at least two pairs")
    diffs = [float(x) - float(y) for x, y in zip(a, b)]
    mean = _mean(diffs)
    var = math.fsum((d - mean) ** 2 for d in diffs) / (n - 1)
    if var == 0.0:
        raise DegenerateInput("differences are constant; t is undefined")
    sd = math.sqrt(var)
    t = mean / (sd / math.sqrt(n))
    return PairedTTest(t, n - 1, t_two_sided_p(t, n - 1), mean / sd)


@dataclass(frozen=True)
class Correlation:
    r: float
    p: float


def pearson(a: Sequence[float], b: Sequence[float]) -> Correlation:
    if len(a) != len(b):
        raise ValueError("series must have equal length")
    n = len(a)
    if n < 3:
        raise DegenerateInput("Pearson correlation p-value needs at least three points")
    ma, mb = _mean(a), _mean(b)
    da = [float(x) - ma for x in a]
    db = [float(y) - mb for y in b]
    saa = math.fsum(x * x for x in da)
    sbb = math.fsum(y * y for y in db)
    if saa == 0.0 or sbb == 0.0:
        raise DegenerateInput("correlation is undefined for a constant series")
    r = math.fsum(x * y for x, y in zip(da, db)) / math.sqrt(saa * sbb)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return Correlation(r, 0.0)
    df = n - 2
    # With t = r*sqrt(df/(1-r^2)), df/(df+t^2) reduces to 1 - r^2.
    p = betainc(df / 2.0, 0.5, 1.0 - r * r, r * r)
    return Correlation(r, min(1.0, max(0.0, p)))


@dataclass(frozen=True)
class StatResult:
    t_statistic: float
    degrees_of_freedom: int
    p_value: float
    cohens_d: float
    pearson_r: float
    pearson_p: float


def compare_series(a: Sequence[float], b: Sequence[float]) -> StatResult:
    tt = paired_t_test(a, b)
    corr = pearson(a, b)
    return StatResult(tt.t, tt.df, tt.p, tt.cohens_d, corr.r, corr.p)
