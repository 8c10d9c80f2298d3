import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from conftest import fake_fit
from lmmpower.design import Structure
from lmmpower.inference import (
    ROUNDED_CRITERION,
    ContractError,
    aic,
    chisq1_quantile,
    chisq1_sf,
    chisq_sf,
    detection_threshold,
    lrt,
    lrt_from_deviances,
    wilson_ci,
)

M, ZC, NIS, NSS, IO = list(Structure)


def quad_sf(x):
    """Upper tail of chi-square(1) by integrating its density."""
    dens = lambda t: math.exp(-t / 2) / math.sqrt(2 * math.pi * t)
    if x == 0:
        return 1.0
    val, _ = integrate.quad(dens, x, math.inf, epsabs=1e-14, epsrel=1e-12)
    return val


@pytest.mark.parametrize("x,p", [(3.8415, 0.05), (1.6424, 0.2)])
def test_sf_against_quadrature(x, p):
    assert abs(chisq1_sf(x) - p) < 1e-3
    assert abs(chisq1_sf(x) - quad_sf(x)) < 1e-10


def test_sf_at_zero():
    assert chisq1_sf(0) == 1.0
    with pytest.raises(ValueError):
        chisq1_sf(-1e-12)


@settings(max_examples=100, deadline=None)
@given(a=st.floats(0, 60), b=st.floats(0, 60))
def test_sf_strictly_decreasing(a, b):
    if a == b:
        return
    lo, hi = min(a, b), max(a, b)
    if hi - lo < 1e-9:
        return
    assert 0 < chisq1_sf(hi) < chisq1_sf(lo) <= 1


@pytest.mark.parametrize("p,x", [(0.05, 3.8415), (0.2, 1.6424)])
def test_quantile_values(p, x):
    assert abs(chisq1_quantile(p) - x) < 1e-3


def test_quantile_round_trip():
    rng = np.random.default_rng(0)
    for p in rng.uniform(1e-6, 1 - 1e-6, 20):
        assert abs(chisq1_sf(chisq1_quantile(p)) - p) < 1e-8


@pytest.mark.parametrize("p", [0, 1, -0.1, 1.5])
def test_quantile_domain(p):
    with pytest.raises(ValueError):
        chisq1_quantile(p)


@pytest.mark.parametrize("df", [1, 2, 3, 4, 7])
def test_general_df_tail(df):
    for x in (0.0, 0.3, 1.0, 2.5, 6.0, 15.0, 40.0):
        assert chisq_sf(x, df) == pytest.approx(stats.chi2.sf(x, df), rel=1e-10, abs=1e-15)


def test_df_zero_is_one():
    assert chisq_sf(5.0, 0) == 1.0


def test_thresholds():
    assert detection_threshold() == pytest.approx(3.841458820694124, abs=1e-9)
    assert detection_threshold(rounded=True) == ROUNDED_CRITERION == 3.85


def test_lrt_examples():
    r = lrt_from_deviances(1000.0, 996.0, 1)
    assert r.statistic == 4.0 and r.exceeds(3.85) and r.significant_at(0.05)
    r = lrt_from_deviances(1000.0, 1000.0, 1)
    assert r.statistic == 0 and r.p_value == 1.0
    r = lrt_from_deviances(1000.0, 1000.0 + 1e-9, 1)
    assert r.statistic == 0.0


def test_lrt_on_fits():
    r = lrt(fake_fit(IO, 1005.0), fake_fit(NIS, 1000.0))
    assert r.df == 1 and r.statistic == 5.0
    assert r.p_value == pytest.approx(chisq1_sf(5.0))
    r = lrt(fake_fit(ZC, 1000.0), fake_fit(M, 990.0))
    assert r.df == 2 and r.p_value == pytest.approx(math.exp(-5.0))
    r = lrt(fake_fit(IO, 1003.0, fixed_slope=False), fake_fit(IO, 1000.0))
    assert r.df == 1


def test_lrt_contracts():
    with pytest.raises(ContractError):
        lrt(fake_fit(NIS, 1000.0), fake_fit(NSS, 1000.0))
    with pytest.raises(ContractError):
        lrt(fake_fit(M, 990.0), fake_fit(ZC, 1000.0))  # swapped pair
    with pytest.raises(ContractError):
        lrt(fake_fit(IO, 1000.0, converged=False), fake_fit(M, 990.0))


def test_aic():
    f = fake_fit(IO, 1000.0, fixed_slope=False)  # 4 params
    assert aic(f) == 1008.0
    assert aic(fake_fit(NIS, 1000.0)) - aic(fake_fit(IO, 1000.0)) == 2.0
    assert aic(fake_fit(IO, 1002.0)) == aic(fake_fit(NIS, 1000.0))
    with pytest.raises(ContractError):
        aic(fake_fit(IO, 1000.0, converged=False))


def test_aic_definition_five_params():
    class Fit:
        deviance, n_free_params, converged = 1000.0, 5, True
    assert aic(Fit) == 1010.0


def test_wilson_table_row():
    lo, hi = wilson_ci(304, 10000)
    assert abs(lo - 0.0272) <= 0.0015 and abs(hi - 0.0340) <= 0.0015


def test_wilson_edges():
    assert wilson_ci(0, 100)[0] == 0.0
    assert wilson_ci(100, 100)[1] == 1.0
    lo, hi = wilson_ci(50, 100)
    assert abs((0.5 - lo) - (hi - 0.5)) < 1e-12


@pytest.mark.parametrize("args", [(-1, 10), (11, 10), (0, 0), (1.5, 10)])
def test_wilson_domain(args):
    with pytest.raises(ValueError):
        wilson_ci(*args)


@settings(max_examples=100, deadline=None)
@given(k=st.integers(0, 200), n=st.integers(1, 200), m=st.integers(2, 10))
def test_wilson_properties(k, n, m):
    k = min(k, n)
    lo, hi = wilson_ci(k, n)
    assert 0 <= lo <= k / n <= hi <= 1
    lo2, hi2 = wilson_ci(k * m, n * m)
    assert hi2 - lo2 < hi - lo


def test_wilson_matches_scipy():
    res = stats.binomtest(304, 10000).proportion_ci(method="wilson")
    lo, hi = wilson_ci(304, 10000)
    assert lo == pytest.approx(res.low, abs=1e-10) and hi == pytest.approx(res.high, abs=1e-10)
