"""Recompute the frozen reference constants with arbitrary-precision arithmetic.

The unit tests compare against literals so they stay fast and self-contained;
this module checks those literals themselves.
"""
import mpmath as mp
import pytest

from test_stats import QUANTILE_ORACLE
from test_tad import (CP_TREND_Z15_T03, CP_TWO_SIDED_Z0, CP_TWO_SIDED_Z15_T03, K_ORACLE,
                      N_TARGET_ORACLE, ONE_SAMPLE_ORACLE, T_ORACLE)

mp.mp.dps = 40


def phi(x):
    return mp.ncdf(x)


def z(p):
    return -mp.sqrt(2) * mp.erfinv(1 - 2 * mp.mpf(repr(p) if isinstance(p, float) else p))


@pytest.mark.parametrize("p, frozen", sorted(QUANTILE_ORACLE.items()))
def test_quantile_literals(p, frozen):
    assert abs(z(p) - frozen) < 1e-15


def test_sizing_literals():
    k = (z(0.975) + z(0.8)) ** 2
    assert abs(k - K_ORACLE) < 1e-14
    assert abs(100 * k / (2 * 25) - ONE_SAMPLE_ORACLE) < 1e-12
    target = 400 * k / (2 * 4)
    assert abs(target - N_TARGET_ORACLE) < 1e-11
    n_step = mp.ceil((target - 30) * mp.mpf("0.5"))
    assert n_step == 182
    assert abs((30 + n_step) / target - T_ORACLE) < 1e-15


def test_conditional_power_literals():
    def two_sided(zv, t, alpha):
        zc = z(1 - mp.mpf(alpha) / 2)
        return (phi(zv / mp.sqrt(t * (1 - t)) - zc / mp.sqrt(1 - t))
                + phi(-zv / mp.sqrt(t * (1 - t)) - zc / mp.sqrt(1 - t)))

    def trend(zv, t, alpha):
        return phi(zv / mp.sqrt(t * (1 - t)) - z(1 - mp.mpf(alpha)) / mp.sqrt(1 - t))

    assert abs(two_sided(0, mp.mpf("0.5"), "0.05") - CP_TWO_SIDED_Z0) < 1e-15
    assert abs(two_sided(mp.mpf("1.5"), mp.mpf("0.3"), "0.05") - CP_TWO_SIDED_Z15_T03) < 1e-15
    assert abs(trend(mp.mpf("1.5"), mp.mpf("0.3"), "0.05") - CP_TREND_Z15_T03) < 1e-15
