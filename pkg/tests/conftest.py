import math

import numpy as np
import pytest

from lmmpower.design import PRESETS, ModelSpec, Structure
from lmmpower.fitter import CovarianceEstimates, FitResult
from lmmpower.harness import run_scan, run_worst_case

MASTER_SEED = 1
ACCEPTANCE_LINES: list[str] = []


def fake_fit(structure: Structure, deviance: float, fixed_slope: bool = True,
             converged: bool = True) -> FitResult:
    spec = ModelSpec(structure, fixed_slope)
    return FitResult(spec, (0.0,) * spec.n_fixed, CovarianceEstimates(), deviance, converged,
                     False, spec.n_free_params, (0.0,) * spec.n_theta)


def fits_from_deviances(devs: dict) -> dict:
    return {ModelSpec(s, True): fake_fit(s, d) for s, d in devs.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(20170511)


@pytest.fixture(scope="session")
def worst_case_large():
    return run_worst_case(PRESETS["large"], 2000, MASTER_SEED)


@pytest.fixture(scope="session")
def scan_large():
    return run_scan(PRESETS["large"], 2000, MASTER_SEED)


@pytest.fixture(scope="session")
def scan_small():
    return run_scan(PRESETS["small"], 2000, MASTER_SEED)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def finite(x) -> bool:
    return math.isfinite(x)
