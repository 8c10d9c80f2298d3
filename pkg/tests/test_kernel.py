"""Compiled and pure-Python kernels must agree bit for bit."""
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from lmmpower import kernel
from lmmpower.design import ExperimentDesign, ModelSpec, enumerate_structures, pack_theta
from lmmpower.fitter import INITIAL_STEP, profiled_deviance, sufficient_stats
from lmmpower.simulate import GeneratingParams, SeedSpec, simulate_dataset

BACKENDS = kernel.backends()
needs_ext = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernel not built")


def _cases(n=30, seed=4):
    rng = np.random.default_rng(seed)
    for k in range(n):
        design = ExperimentDesign(int(rng.integers(3, 40)), int(rng.integers(2, 15)))
        params = GeneratingParams(beta1=25).with_slope_sd(float(rng.uniform(0, 120)))
        stats = sufficient_stats(simulate_dataset(design, params, SeedSpec(seed, k)))
        s = enumerate_structures()[k % 5]
        theta = rng.uniform(0, 1.5, len(s.theta_positions))
        yield stats, ModelSpec(s, bool(k % 2)), theta


def test_backend_flag_is_consistent():
    assert kernel.BACKEND in BACKENDS
    assert kernel.deviance is BACKENDS[kernel.BACKEND].deviance


@needs_ext
def test_deviance_parity():
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    for stats, spec, theta in _cases():
        packed = tuple(pack_theta(theta, spec.structure))
        assert py.deviance(packed, stats.values, spec.n_fixed) == cy.deviance(packed, stats.values, spec.n_fixed)
        a = py.solution(packed, stats.values, spec.n_fixed)
        b = cy.solution(packed, stats.values, spec.n_fixed)
        assert a[0] == b[0] and a[1] == b[1] and tuple(a[2]) == tuple(b[2])


@needs_ext
def test_nelder_mead_parity():
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    for stats, spec, _ in list(_cases(12, seed=8)):
        pos = spec.structure.theta_positions
        x0 = [1.0 if q in (0, 2, 3, 5) else 0.0 for q in pos]
        a = py.nelder_mead(stats.values, pos, spec.n_fixed, x0, INITIAL_STEP, 1e-8, 10_000)
        b = cy.nelder_mead(stats.values, pos, spec.n_fixed, x0, INITIAL_STEP, 1e-8, 10_000)
        assert tuple(a[0]) == tuple(b[0])
        assert a[1:] == b[1:]


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_reduced_matches_dense_pls(name):
    impl = BACKENDS[name]
    rng = np.random.default_rng(3)
    for k in range(20):
        design = ExperimentDesign(int(rng.integers(2, 9)), int(rng.integers(2, 6)))
        data = simulate_dataset(design, GeneratingParams(beta1=10).with_slope_sd(50), SeedSpec(3, k))
        spec = ModelSpec(enumerate_structures()[k % 5], bool(k % 3))
        theta = rng.uniform(0, 2, spec.n_theta)
        dense = profiled_deviance(theta, data, spec)
        fast = impl.deviance(tuple(pack_theta(theta, spec.structure)), sufficient_stats(data).values, spec.n_fixed)
        assert math.isclose(fast, dense, rel_tol=1e-10, abs_tol=1e-9)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_sign_of_diagonal_is_irrelevant(name):
    stats, spec, _ = next(_cases(1))
    a = BACKENDS[name].deviance((0.5, 0.2, 1.0, 1.0, 0.0, 0.3), stats.values, 2)
    b = BACKENDS[name].deviance((-0.5, -0.2, 1.0, 1.0, 0.0, -0.3), stats.values, 2)
    assert math.isclose(a, b, rel_tol=1e-13)


def test_environment_forces_fallback():
    code = ("from lmmpower import kernel; from lmmpower.fitter import fit_ml;"
            "from lmmpower.design import *; from lmmpower.simulate import *;"
            "d = simulate_dataset(ExperimentDesign(6, 4), GeneratingParams(), SeedSpec(1, 0));"
            "print(kernel.BACKEND, fit_ml(d, ModelSpec(Structure.MAXIMAL)).converged)")
    env = dict(os.environ, LMMPOWER_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["python", "True"]
