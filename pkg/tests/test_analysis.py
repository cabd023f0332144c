import csv
from fractions import Fraction

import numpy as np
import pytest

from stochbasin.analysis import combined_difference_bound, difference_curve_sweep, h_lambda_N
from stochbasin.errors import ValidationError, WeightViolation

from oracles import h_direct


def test_examples():
    assert h_lambda_N(1.0, 50) == 0.0
    assert h_lambda_N(0.0, 1) == 0.0
    assert h_lambda_N(0.9, 10_000) < 1e-3


@pytest.mark.parametrize("lam", [0.9, 0.5, -0.7, -1.0, 0.99, 0.3 + 0.4j, np.exp(0.2j)])
@pytest.mark.parametrize("N", [1, 2, 7, 100, 2000])
def test_matches_direct_sums(lam, N):
    assert h_lambda_N(lam, N) == pytest.approx(h_direct(lam, N), abs=1e-13)


def test_series_branch_against_exact_rationals():
    # double-precision closed forms cancel catastrophically here
    for d in (Fraction(1, 10**9), Fraction(3, 10**9)):
        for N in (10, 1000):
            lam = 1 - d
            cesaro = (1 - lam**N) / (N * d)
            eps = Fraction(2, N + 1)
            exact = abs(cesaro - eps / (1 - (1 - eps) * lam))
            assert h_lambda_N(float(lam), N) == pytest.approx(float(exact), rel=1e-6)


def test_long_horizon_grid():
    for lam in (0.999, 0.99, 0.5, -0.5, -0.999, 0.9 + 0.3j, 0.99 * np.exp(0.01j)):
        assert h_lambda_N(lam, 10**7) < 1e-4


def test_rejects_bad_input():
    for bad in (0, -3, 2.5):
        with pytest.raises(ValidationError):
            h_lambda_N(0.5, bad)
    with pytest.raises(ValidationError):
        h_lambda_N(1.1, 5)


def test_combined_bound():
    lams = [0.9, 0.5]
    assert combined_difference_bound(lams, [1, 0], 1.0, 100) == pytest.approx(
        h_lambda_N(0.9, 100))
    assert combined_difference_bound(lams, [0.5, 0.5], 0.0, 100) == 0.0
    with pytest.raises(WeightViolation):
        combined_difference_bound(lams, [1.5, 0], 1.0, 10)
    with pytest.raises(WeightViolation):
        combined_difference_bound(lams, [0.5], 1.0, 10)
    with pytest.raises(WeightViolation):
        combined_difference_bound(lams, [0.5, 0.5], 2.0, 10)
    assert combined_difference_bound([], [], 1.0, 10) == 0.0


def test_sweep_csv(tmp_path):
    out = tmp_path / "h.csv"
    curves = difference_curve_sweep([0.9, 0.8 + 0.3j], [1, 10, 100], out=out)
    assert [c.lam for c in curves] == [0.9, 0.8 + 0.3j, abs(0.8 + 0.3j)]
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["re_lambda", "im_lambda", "N", "h"]
    assert len(rows) == 1 + 3 * 3
    assert float(rows[1 + 3][1]) == 0.3
    with pytest.raises(ValidationError):
        difference_curve_sweep([], [10])
    with pytest.raises(ValidationError):
        difference_curve_sweep([0.5], [])
