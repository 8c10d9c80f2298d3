"""Maximum-likelihood fitting of the five crossed random-effect structures.

Three routes to the same deviance:

``deviance_direct``
    Dense marginal Gaussian likelihood with ``V = Z G Z' + sigma^2 I``.
    Only for small problems; serves as the oracle.
``profiled_deviance``
    Penalized least squares on explicit ``X``/``Z`` matrices with a Cholesky
    factor of ``Lambda' Z' Z Lambda + I``; beta and sigma^2 profiled out.
``fit_ml``
    Nelder-Mead over theta on the balanced-design reduction in
    :mod:`lmmpower.kernel`, which needs only a few sufficient statistics.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg

from . import kernel
from .design import (
    DIAGONAL_POSITIONS,
    Dataset,
    ModelSpec,
    Structure,
    build_matrices,
    pack_theta,
    relative_covariance_factor,
)

DIRECT_MAX_N = 500
SINGULAR_TOL = 1e-6
FTOL = 1e-8
MAX_EVALS = 10_000
INITIAL_STEP = 0.2
RESTART_STEP = 0.1
RESTART_JITTER = 0.05
# penalized RSS below this fraction of the centred total SS is rounding noise: an exact fit
DEGENERATE_RSS = 1e-12


class FitError(ArithmeticError):
    """Numerical failure while evaluating a deviance."""


@dataclass(frozen=True)
class CovarianceEstimates:
    """SDs and correlations of the random effects; absent terms are zero."""

    tau00: float = 0.0
    tau11: float = 0.0
    rho_s: float = 0.0
    omega00: float = 0.0
    omega11: float = 0.0
    rho_i: float = 0.0
    sigma: float = 1.0

    @classmethod
    def from_params(cls, params) -> "CovarianceEstimates":
        return cls(params.tau00, params.tau11, params.rho_s,
                   params.omega00, params.omega11, params.rho_i, params.sigma)

    def restricted(self, structure: Structure) -> "CovarianceEstimates":
        """Zero out the components a structure does not estimate."""
        return CovarianceEstimates(
            self.tau00,
            self.tau11 if structure.subject_slope else 0.0,
            self.rho_s if structure.correlated and structure.subject_slope else 0.0,
            self.omega00,
            self.omega11 if structure.item_slope else 0.0,
            self.rho_i if structure.correlated and structure.item_slope else 0.0,
            self.sigma,
        )


@dataclass(frozen=True)
class FitResult:
    spec: ModelSpec
    beta: tuple[float, ...]
    covariance: CovarianceEstimates
    deviance: float
    converged: bool
    singular: bool
    n_free_params: int
    theta: tuple[float, ...]
    n_evals: int = 0

    @property
    def covariance_estimates(self) -> tuple[float, ...]:
        c = self.covariance
        return (c.tau00, c.tau11, c.rho_s, c.omega00, c.omega11, c.rho_i, c.sigma)

    def to_dict(self) -> dict:
        return {
            "structure": self.spec.structure.value,
            "fixed_slope": self.spec.fixed_slope,
            "beta": list(self.beta),
            "covariance": asdict(self.covariance),
            "deviance": self.deviance,
            "converged": self.converged,
            "singular": self.singular,
            "n_free_params": self.n_free_params,
            "theta": list(self.theta),
            "n_evals": self.n_evals,
        }


# ---------------------------------------------------------------------------
# theta <-> covariance
# ---------------------------------------------------------------------------


def _factor_summary(l00, l10, l11, sigma):
    n0 = abs(l00)
    n1 = math.hypot(l10, l11)
    rho = (l00 * l10) / (n0 * n1) if n0 > 0 and n1 > 0 else 0.0
    return sigma * n0, sigma * n1, max(-1.0, min(1.0, rho))


def theta_to_covariance(theta, sigma2: float, spec: ModelSpec | Structure) -> CovarianceEstimates:
    """SDs are sigma times the row norms of each factor; rho is the row cosine."""
    structure = spec.structure if isinstance(spec, ModelSpec) else spec
    t = pack_theta(theta, structure)
    sigma = math.sqrt(sigma2)
    s0, s1, rs = _factor_summary(t[0], t[1], t[2], sigma)
    i0, i1, ri = _factor_summary(t[3], t[4], t[5], sigma)
    return CovarianceEstimates(s0, s1, rs, i0, i1, ri, sigma)


def covariance_to_theta(cov: CovarianceEstimates, spec: ModelSpec | Structure) -> np.ndarray:
    """Free theta entries (relative Cholesky factors) reproducing ``cov`` under ``spec``."""
    structure = spec.structure if isinstance(spec, ModelSpec) else spec
    c = cov.restricted(structure)
    if not c.sigma > 0:
        raise ValueError("sigma must be positive to form relative factors")
    packed = np.zeros(6)
    for off, sd0, sd1, rho in ((0, c.tau00, c.tau11, c.rho_s), (3, c.omega00, c.omega11, c.rho_i)):
        packed[off] = sd0 / c.sigma
        packed[off + 1] = rho * sd1 / c.sigma
        packed[off + 2] = sd1 * math.sqrt(max(0.0, 1.0 - rho * rho)) / c.sigma
    return packed[list(structure.theta_positions)]


# ---------------------------------------------------------------------------
# dense oracle
# ---------------------------------------------------------------------------


def _random_effect_cov(cov: CovarianceEstimates, spec: ModelSpec, ns: int, ni: int) -> np.ndarray:
    c = cov.restricted(spec.structure)

    def block(sd0, sd1, rho, slope):
        if not slope:
            return np.array([[sd0 * sd0]])
        off = rho * sd0 * sd1
        return np.array([[sd0 * sd0, off], [off, sd1 * sd1]])

    gs = block(c.tau00, c.tau11, c.rho_s, spec.structure.subject_slope)
    gi = block(c.omega00, c.omega11, c.rho_i, spec.structure.item_slope)
    return linalg.block_diag(np.kron(np.eye(ns), gs), np.kron(np.eye(ni), gi))


def deviance_direct(dataset: Dataset, spec: ModelSpec, beta, covariance: CovarianceEstimates) -> float:
    """-2 log-likelihood from the dense marginal covariance of y."""
    if dataset.n > DIRECT_MAX_N:
        raise ValueError(f"dense deviance refused for n={dataset.n} > {DIRECT_MAX_N}")
    mats = build_matrices(dataset, spec)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (mats.X.shape[1],):
        raise ValueError(f"beta must have {mats.X.shape[1]} entries")
    G = _random_effect_cov(covariance, spec, dataset.n_subjects, dataset.n_items)
    V = mats.Z @ G @ mats.Z.T + covariance.sigma**2 * np.eye(dataset.n)
    try:
        cf = linalg.cho_factor(V, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("marginal covariance is not positive definite") from exc
    r = dataset.y - mats.X @ beta
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    return float(dataset.n * math.log(2 * math.pi) + logdet + r @ linalg.cho_solve(cf, r))


def profile_direct(dataset: Dataset, spec: ModelSpec, theta) -> tuple[float, np.ndarray, float]:
    """Minimize :func:`deviance_direct` over (beta, sigma^2) at fixed theta by GLS.

    Returns ``(deviance, beta, sigma2)``.  Independent of the PLS code path.
    """
    if dataset.n > DIRECT_MAX_N:
        raise ValueError(f"dense deviance refused for n={dataset.n} > {DIRECT_MAX_N}")
    mats = build_matrices(dataset, spec)
    lam = relative_covariance_factor(theta, spec, dataset)
    W = mats.Z @ lam @ lam.T @ mats.Z.T + np.eye(dataset.n)
    Wi = np.linalg.inv(W)
    X, y = mats.X, dataset.y
    beta = np.linalg.solve(X.T @ Wi @ X, X.T @ Wi @ y)
    r = y - X @ beta
    sigma2 = float(r @ Wi @ r) / dataset.n
    c = theta_to_covariance(theta, sigma2, spec)
    return deviance_direct(dataset, spec, beta, c), beta, sigma2


# ---------------------------------------------------------------------------
# penalized least squares
# ---------------------------------------------------------------------------


def profiled_deviance(theta, dataset: Dataset, spec: ModelSpec) -> float:
    """Profiled ML deviance at theta from the dense PLS normal equations."""
    return _pls(theta, dataset, spec)[0]


def _pls(theta, dataset: Dataset, spec: ModelSpec):
    theta = np.asarray(theta, dtype=float)
    if np.any(theta[[k for k, q in enumerate(spec.structure.theta_positions)
                     if q in DIAGONAL_POSITIONS]] < 0):
        raise ValueError("diagonal theta entries must be non-negative")
    mats = build_matrices(dataset, spec)
    X, y = mats.X, dataset.y
    ZL = mats.Z @ relative_covariance_factor(theta, spec, dataset)
    q, p, n = ZL.shape[1], X.shape[1], dataset.n
    A = np.empty((q + p, q + p))
    A[:q, :q] = ZL.T @ ZL + np.eye(q)
    A[:q, q:] = ZL.T @ X
    A[q:, :q] = A[:q, q:].T
    A[q:, q:] = X.T @ X
    rhs = np.concatenate([ZL.T @ y, X.T @ y])
    try:
        L = linalg.cholesky(A, lower=True)
    except linalg.LinAlgError as exc:
        raise FitError("penalized normal equations are singular") from exc
    sol = linalg.cho_solve((L, True), rhs)
    u, beta = sol[:q], sol[q:]
    resid = y - X @ beta - ZL @ u
    r2 = float(resid @ resid + u @ u)
    if not r2 > 0:
        raise FitError("penalized residual sum of squares is not positive")
    logdet = 2.0 * float(np.sum(np.log(np.diag(L)[:q])))
    return logdet + n * (1.0 + math.log(2 * math.pi * r2 / n)), beta, r2


# ---------------------------------------------------------------------------
# fast path
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SufficientStats:
    """Everything the balanced-design kernel needs about one dataset."""

    values: tuple[float, ...]
    ybar: float
    n: int

    @property
    def n_subjects(self) -> int:
        return int(self.values[9])

    @property
    def n_items(self) -> int:
        return int(self.values[10])


def sufficient_stats(dataset: Dataset) -> SufficientStats:
    ybar = float(np.mean(dataset.y))
    y = dataset.y - ybar
    x = dataset.x
    xy = x * y

    def scatter(idx, levels):
        g = np.stack([np.bincount(idx, y, levels), np.bincount(idx, xy, levels)], axis=1)
        g -= g.mean(axis=0)
        return g.T @ g

    gs = scatter(dataset.subject_idx, dataset.n_subjects)
    gi = scatter(dataset.item_idx, dataset.n_items)
    values = (
        float(y @ y), float(y.sum()), float(xy.sum()),
        gs[0, 0], gs[0, 1], gs[1, 1], gi[0, 0], gi[0, 1], gi[1, 1],
        float(dataset.n_subjects), float(dataset.n_items),
    )
    return SufficientStats(tuple(float(v) for v in values), ybar, dataset.n)


def reduced_deviance(theta, stats: SufficientStats | Dataset, spec: ModelSpec) -> float:
    """Profiled deviance through the balanced-design kernel."""
    if isinstance(stats, Dataset):
        stats = sufficient_stats(stats)
    return kernel.deviance(pack_theta(theta, spec.structure), stats.values, spec.n_fixed)


def _start(spec: ModelSpec) -> list[float]:
    return [1.0 if q in DIAGONAL_POSITIONS else 0.0 for q in spec.structure.theta_positions]


def fit_ml(dataset: Dataset | SufficientStats, spec: ModelSpec, *,
           max_evals: int = MAX_EVALS, ftol: float = FTOL) -> FitResult:
    """ML fit by Nelder-Mead on theta, restarted once from a jittered optimum.

    Never raises for numerical trouble: a non-finite deviance or an exhausted
    evaluation budget yields ``converged=False``.
    """
    stats = dataset if isinstance(dataset, SufficientStats) else sufficient_stats(dataset)
    pos = spec.structure.theta_positions
    p = spec.n_fixed
    x1, f1, e1, c1 = kernel.nelder_mead(stats.values, pos, p, _start(spec), INITIAL_STEP, ftol, max_evals)
    x2_start = [v + (RESTART_JITTER if k % 2 == 0 else -RESTART_JITTER) for k, v in enumerate(x1)]
    x2, f2, e2, c2 = kernel.nelder_mead(stats.values, pos, p, x2_start, RESTART_STEP, ftol, max_evals)
    x, f = (x2, f2) if f2 < f1 else (x1, f1)
    evals = e1 + e2

    dev, r2, beta_c = kernel.solution(pack_theta(x, spec.structure), stats.values, p)
    exact = r2 <= DEGENERATE_RSS * stats.values[0]
    if not math.isfinite(f) or beta_c is None or exact:
        return FitResult(spec, (math.nan,) * p, CovarianceEstimates(sigma=math.nan), math.inf,
                         False, False, spec.n_free_params, tuple(x), evals)
    beta = (beta_c[0] + stats.ybar,) + tuple(beta_c[1:])
    cov = theta_to_covariance(x, r2 / stats.n, spec)
    singular = any(abs(v) <= SINGULAR_TOL for v, q in zip(x, pos) if q in DIAGONAL_POSITIONS)
    return FitResult(spec, beta, cov, dev, bool(c1 or c2), singular,
                     spec.n_free_params, tuple(float(v) for v in x), evals)


def fit_all(dataset: Dataset | SufficientStats, structures=None,
            hypotheses=(False, True)) -> dict[ModelSpec, FitResult]:
    """Fit every requested structure under each fixed-effect hypothesis."""
    from .design import enumerate_structures

    stats = dataset if isinstance(dataset, SufficientStats) else sufficient_stats(dataset)
    out = {}
    for s in structures or enumerate_structures():
        for h in hypotheses:
            spec = ModelSpec(s, h)
            out[spec] = fit_ml(stats, spec)
    return out
