"""Difference between finite-horizon EMS times and eps-committors.

On an eigenvector with eigenvalue ``lam`` the Cesaro average over ``N``
steps acts as ``(1/N)(1 - lam**N)/(1 - lam)`` and the geometric average
with ``eps = 2/(N + 1)`` (same mean horizon) as ``eps/(1 - (1 - eps) lam)``.
``h(lam, N)`` is the modulus of their difference.
"""
import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError, WeightViolation

# Below these thresholds the second-order expansion in 1 - lam is used.
SERIES_DELTA = 1e-8
SERIES_ND = 1e-4


def _check_N(N):
    if int(N) != N or N < 1:
        raise ValidationError(f"N must be a positive integer, got {N}")
    return int(N)


def _one_minus_power(lam, N):
    """``1 - lam**N`` without cancellation for real ``lam`` near 1."""
    if lam.imag == 0.0:
        x = lam.real
        if x > 0.0:
            return complex(-math.expm1(N * math.log1p(x - 1.0)))
        return complex(1.0 - x ** N)
    r, th = abs(lam), math.atan2(lam.imag, lam.real)
    return 1.0 - (r ** N) * complex(math.cos(N * th), math.sin(N * th))


def h_lambda_N(lam, N):
    """Difference term ``h(lam, N)`` for ``|lam| <= 1``.

    Examples
    --------
    >>> h_lambda_N(1.0, 50)
    0.0
    >>> h_lambda_N(0.9, 10_000) < 1e-3
    True
    """
    N = _check_N(N)
    lam = complex(lam)
    if abs(lam) > 1.0 + 1e-12:
        raise ValidationError(f"|lambda| = {abs(lam)} exceeds 1")
    delta = 1.0 - lam
    if delta == 0:
        return 0.0
    if abs(delta) < SERIES_DELTA and N * abs(delta) < SERIES_ND:
        # first-order terms cancel; -delta^2 (N^2 - 1) / 12 is the leading one
        return abs(delta * delta) * (N * N - 1) / 12.0
    eps = 2.0 / (N + 1)
    cesaro = _one_minus_power(lam, N) / (N * delta)
    geometric = eps / (delta + eps * lam)
    return abs(cesaro - geometric)


def combined_difference_bound(lambdas, alphas, beta, N):
    """Weighted bound ``beta * sum_i alphas[i] * h(lambdas[i], N)``."""
    lambdas = list(lambdas)
    alphas = np.asarray(alphas, dtype=float).ravel()
    if alphas.size != len(lambdas):
        raise WeightViolation("need one weight per eigenvalue")
    if np.any(alphas < 0) or np.any(alphas > 1) or not 0.0 <= beta <= 1.0:
        raise WeightViolation("weights must lie in [0, 1]")
    return float(beta * sum(a * h_lambda_N(l, N) for a, l in zip(alphas, lambdas) if a))


@dataclass(frozen=True)
class DifferenceCurve:
    lam: complex
    points: tuple  # (N, h) pairs


def difference_curve_sweep(lambdas, Ns, out=None):
    """Evaluate ``h`` over an ``N`` grid for every eigenvalue.

    A complex eigenvalue also gets the curve of its modulus, so the two can
    be compared. With ``out`` the curves are written as CSV with columns
    ``re_lambda,im_lambda,N,h``.
    """
    lambdas = [complex(l) for l in lambdas]
    Ns = [_check_N(N) for N in Ns]
    if not lambdas or not Ns:
        raise ValidationError("eigenvalue and N grids must be non-empty")
    targets = []
    for lam in lambdas:
        targets.append(lam)
        if lam.imag != 0.0:
            targets.append(complex(abs(lam)))
    curves = [DifferenceCurve(lam, tuple((N, h_lambda_N(lam, N)) for N in Ns))
              for lam in targets]
    if out is not None:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["re_lambda", "im_lambda", "N", "h"])
            for c in curves:
                for N, h in c.points:
                    w.writerow([repr(c.lam.real), repr(c.lam.imag), N, repr(h)])
    return curves
