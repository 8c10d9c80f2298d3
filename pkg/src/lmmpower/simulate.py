"""Draw datasets from the crossed random-intercept/random-slope generating process.

Randomness comes from numpy's counter-based Philox generator.  A draw is
keyed by ``(master_seed, stream_id)`` and the redraw attempt selects a
disjoint block of the counter space, so iteration ``k`` sees the same
numbers no matter how work is split across workers.  Normal deviates use
numpy's ziggurat sampler (``Generator.standard_normal``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .design import Dataset, ExperimentDesign

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class GeneratingParams:
    beta0: float = 2000.0
    beta1: float = 0.0
    tau00: float = 100.0
    tau11: float = 0.0
    rho_s: float = 0.6
    omega00: float = 100.0
    omega11: float = 0.0
    rho_i: float = 0.6
    sigma: float = 300.0

    def __post_init__(self):
        for name in ("tau00", "tau11", "omega00", "omega11", "sigma"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite non-negative SD, got {v!r}")
        for name in ("rho_s", "rho_i"):
            v = getattr(self, name)
            if not abs(v) <= 1:
                raise ValueError(f"{name} must lie in [-1, 1], got {v!r}")

    def with_slope_sd(self, sd: float) -> "GeneratingParams":
        """Both random-slope SDs set to ``sd``."""
        return replace(self, tau11=sd, omega11=sd)

    def with_effect(self, beta1: float) -> "GeneratingParams":
        return replace(self, beta1=beta1)

    def subject_cov(self) -> np.ndarray:
        c = self.rho_s * self.tau00 * self.tau11
        return np.array([[self.tau00**2, c], [c, self.tau11**2]])

    def item_cov(self) -> np.ndarray:
        c = self.rho_i * self.omega00 * self.omega11
        return np.array([[self.omega00**2, c], [c, self.omega11**2]])


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_id: int
    substream: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id", "substream"):
            v = getattr(self, name)
            if not 0 <= v <= _U64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def redraw(self) -> "SeedSpec":
        return replace(self, substream=self.substream + 1)

    def generator(self) -> np.random.Generator:
        bitgen = np.random.Philox(
            key=np.array([self.master_seed, self.stream_id], dtype=np.uint64),
            counter=np.array([0, 0, 0, self.substream], dtype=np.uint64),
        )
        return np.random.Generator(bitgen)


@dataclass(frozen=True, eq=False)
class RandomEffectsDraw:
    subject_effects: np.ndarray  # (n_subjects, 2): intercept, slope
    item_effects: np.ndarray  # (n_items, 2)


def chol2x2(sd0: float, sd1: float, rho: float) -> np.ndarray:
    """Lower-triangular L with L @ L.T = [[sd0^2, rho sd0 sd1], [rho sd0 sd1, sd1^2]]."""
    if sd0 < 0 or sd1 < 0 or not (math.isfinite(sd0) and math.isfinite(sd1)):
        raise ValueError(f"standard deviations must be finite and non-negative: {sd0}, {sd1}")
    if not abs(rho) <= 1:
        raise ValueError(f"correlation outside [-1, 1]: {rho}")
    return np.array([[sd0, 0.0], [rho * sd1, sd1 * math.sqrt(1.0 - rho * rho)]])


def _draw(rng: np.random.Generator, design: ExperimentDesign, params: GeneratingParams):
    ls = chol2x2(params.tau00, params.tau11, params.rho_s)
    li = chol2x2(params.omega00, params.omega11, params.rho_i)
    subj = rng.standard_normal((design.n_subjects, 2)) @ ls.T
    item = rng.standard_normal((design.n_items, 2)) @ li.T
    return RandomEffectsDraw(subj, item)


def sample_random_effects(
    design: ExperimentDesign, params: GeneratingParams, seed: SeedSpec
) -> RandomEffectsDraw:
    return _draw(seed.generator(), design, params)


def simulate_dataset(design: ExperimentDesign, params: GeneratingParams, seed: SeedSpec) -> Dataset:
    """One sample: random effects first, then residuals, from the same stream."""
    rng = seed.generator()
    effects = _draw(rng, design, params)
    s, i, x = design.index_vectors()
    eps = rng.standard_normal(design.n_obs) * params.sigma
    S, I = effects.subject_effects, effects.item_effects
    y = (params.beta0 + S[s, 0] + I[i, 0]) + (params.beta1 + S[s, 1] + I[i, 1]) * x + eps
    return Dataset(y, s, i, x)
