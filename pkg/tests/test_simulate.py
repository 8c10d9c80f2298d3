import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmmpower.design import PRESETS, ExperimentDesign
from lmmpower.simulate import (
    GeneratingParams,
    SeedSpec,
    chol2x2,
    sample_random_effects,
    simulate_dataset,
)

LARGE = PRESETS["large"]


def test_chol_zero_slope():
    assert np.array_equal(chol2x2(100, 0, 0.6), [[100, 0], [0, 0]])


def test_chol_independent():
    assert np.array_equal(chol2x2(100, 120, 0), [[100, 0], [0, 120]])


def test_chol_correlated_product():
    L = chol2x2(100, 120, 0.6)
    assert L[0, 1] == 0
    np.testing.assert_allclose(L @ L.T, [[10000, 7200], [7200, 14400]], rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(sd0=st.floats(0, 1e4), sd1=st.floats(0, 1e4), rho=st.floats(-1, 1))
def test_chol_reconstructs_covariance(sd0, sd1, rho):
    L = chol2x2(sd0, sd1, rho)
    target = np.array([[sd0**2, rho * sd0 * sd1], [rho * sd0 * sd1, sd1**2]])
    np.testing.assert_allclose(L @ L.T, target, rtol=1e-12, atol=1e-12 * max(1.0, sd0 * sd1, sd0**2, sd1**2))


@pytest.mark.parametrize("args", [(-1, 1, 0), (1, -1, 0), (1, 1, 1.01), (1, 1, math.nan)])
def test_chol_domain_errors(args):
    with pytest.raises(ValueError):
        chol2x2(*args)


def test_params_validation():
    with pytest.raises(ValueError):
        GeneratingParams(tau11=-1)
    with pytest.raises(ValueError):
        GeneratingParams(rho_i=1.5)
    GeneratingParams(sigma=0)  # allowed for simulation


def test_zero_slope_sd_gives_exact_zero_slopes():
    d = sample_random_effects(LARGE, GeneratingParams(), SeedSpec(3, 7))
    assert np.all(d.subject_effects[:, 1] == 0)
    assert np.all(d.item_effects[:, 1] == 0)
    assert d.subject_effects.shape == (50, 2) and d.item_effects.shape == (20, 2)


def test_draws_are_deterministic():
    p = GeneratingParams().with_slope_sd(80)
    a = sample_random_effects(LARGE, p, SeedSpec(5, 11))
    b = sample_random_effects(LARGE, p, SeedSpec(5, 11))
    assert np.array_equal(a.subject_effects, b.subject_effects)
    assert np.array_equal(a.item_effects, b.item_effects)


def test_subject_intercept_mean_clt():
    d = sample_random_effects(ExperimentDesign(100_000, 1), GeneratingParams(), SeedSpec(2, 0))
    assert abs(d.subject_effects[:, 0].mean()) < 3 * 100 / math.sqrt(1e5)


def test_subject_draw_covariance():
    p = GeneratingParams(tau11=120)
    d = sample_random_effects(ExperimentDesign(200_000, 1), p, SeedSpec(2, 1))
    np.testing.assert_allclose(np.cov(d.subject_effects.T), p.subject_cov(), rtol=0.02, atol=150)


def test_noise_free_limit():
    p = GeneratingParams(beta1=25, tau00=0, omega00=0, sigma=0)
    data = simulate_dataset(LARGE, p, SeedSpec(1, 0))
    assert set(data.y.tolist()) == {1987.5, 2012.5}
    assert np.all(data.y == 2000 + 25 * data.x)


@pytest.mark.parametrize("beta1", [25.0, 0.0])
def test_mean_condition_difference(beta1):
    p = GeneratingParams(beta1=beta1)
    diffs = []
    for k in range(200):
        d = simulate_dataset(LARGE, p, SeedSpec(17, k))
        diffs.append(d.y[d.x > 0].mean() - d.y[d.x < 0].mean())
    diffs = np.array(diffs)
    se = diffs.std(ddof=1) / math.sqrt(len(diffs))
    assert abs(diffs.mean() - beta1) < 3 * se


def test_dataset_byte_identical():
    p = GeneratingParams(beta1=25).with_slope_sd(60)
    a = simulate_dataset(LARGE, p, SeedSpec(99, 4))
    b = simulate_dataset(LARGE, p, SeedSpec(99, 4))
    assert a.y.tobytes() == b.y.tobytes()


def test_streams_and_substreams_differ():
    p = GeneratingParams()
    base = simulate_dataset(LARGE, p, SeedSpec(1, 10)).y
    nxt = simulate_dataset(LARGE, p, SeedSpec(1, 11)).y
    redraw = simulate_dataset(LARGE, p, SeedSpec(1, 10).redraw()).y
    other_master = simulate_dataset(LARGE, p, SeedSpec(2, 10)).y
    for other in (nxt, redraw, other_master):
        assert not np.array_equal(base, other)
        assert abs(np.corrcoef(base, other)[0, 1]) < 0.15


def test_counter_blocks_do_not_overlap():
    # a redraw starts in a counter block far beyond anything one dataset consumes
    g0 = SeedSpec(1, 10).generator()
    g0.standard_normal(5000)
    g1 = SeedSpec(1, 10).redraw().generator()
    assert not np.array_equal(g0.standard_normal(100), g1.standard_normal(100))


def test_seed_bounds():
    with pytest.raises(ValueError):
        SeedSpec(-1, 0)
    with pytest.raises(ValueError):
        SeedSpec(0, 1 << 64)
    SeedSpec((1 << 64) - 1, (1 << 64) - 1)


def test_marginal_variance():
    p = GeneratingParams()
    target = p.tau00**2 + p.omega00**2 + p.sigma**2
    v = np.mean([simulate_dataset(LARGE, p, SeedSpec(31, k)).y.var(ddof=1) for k in range(100)])
    assert abs(v / target - 1) < 0.05
