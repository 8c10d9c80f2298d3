"""Chi-square tails and quantiles, likelihood-ratio tests, AIC and Wilson intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass

ROUNDED_CRITERION = 3.85


class ContractError(ValueError):
    """A caller broke an operation's precondition (unconverged fit, non-nested pair...)."""


def chisq1_sf(x: float) -> float:
    """Upper tail of chi-square(1): 2 (1 - Phi(sqrt(x))) = erfc(sqrt(x / 2))."""
    if not x >= 0:
        raise ValueError(f"chi-square statistic must be >= 0, got {x!r}")
    return math.erfc(math.sqrt(0.5 * x))


def chisq_sf(x: float, df: int) -> float:
    """Upper tail of chi-square(df) for integer df >= 0 (df = 0 gives 1).

    Odd and even df are built up from the df = 1 and df = 2 closed forms with
    Q(k + 2) = Q(k) + (x/2)^(k/2) exp(-x/2) / Gamma(k/2 + 1).
    """
    if df < 0 or int(df) != df:
        raise ValueError(f"df must be a non-negative integer, got {df!r}")
    if not x >= 0:
        raise ValueError(f"chi-square statistic must be >= 0, got {x!r}")
    if df == 0:
        return 1.0
    h = 0.5 * x
    if df % 2:
        q, k = chisq1_sf(x), 1
    else:
        q, k = math.exp(-h), 2
    while k < df:
        if h > 0:
            q += math.exp(0.5 * k * math.log(h) - h - math.lgamma(0.5 * k + 1.0))
        k += 2
    return min(1.0, q)


def chisq1_quantile(p: float) -> float:
    """x with chisq1_sf(x) = p, by safeguarded Newton on z = sqrt(x)."""
    if not 0 < p < 1:
        raise ValueError(f"tail probability must be in (0, 1), got {p!r}")
    lo, hi = 0.0, 40.0  # erfc(40 / sqrt 2) underflows well below any double p
    z = 2.0
    dens = math.sqrt(2.0 / math.pi)
    for _ in range(200):
        g = math.erfc(z / math.sqrt(2.0)) - p
        if g > 0:
            lo = z
        else:
            hi = z
        step = g / (dens * math.exp(-0.5 * z * z))
        z_new = z + step
        if not lo < z_new < hi:
            z_new = 0.5 * (lo + hi)
        if abs(z_new - z) <= 1e-15 * max(1.0, z) or hi - lo <= 1e-15:
            z = z_new
            break
        z = z_new
    return z * z


def detection_threshold(rounded: bool = False) -> float:
    """Deviance-gap threshold for the fixed-effect test at alpha = 0.05."""
    return ROUNDED_CRITERION if rounded else chisq1_quantile(0.05)


@dataclass(frozen=True)
class LrtResult:
    statistic: float
    df: int
    p_value: float

    def significant_at(self, alpha: float) -> bool:
        return self.p_value < alpha

    def exceeds(self, threshold: float) -> bool:
        return self.statistic > threshold


def lrt_from_deviances(dev_null: float, dev_alt: float, df: int) -> LrtResult:
    stat = max(0.0, dev_null - dev_alt)
    return LrtResult(stat, df, chisq_sf(stat, df))


def lrt(fit_null, fit_alt) -> LrtResult:
    """Deviance-difference test of ``fit_null`` nested in ``fit_alt``."""
    if not (fit_null.converged and fit_alt.converged):
        raise ContractError("likelihood-ratio test needs two converged fits")
    if not fit_null.spec.nested_in(fit_alt.spec):
        raise ContractError(f"{fit_null.spec.label} is not nested in {fit_alt.spec.label}")
    df = fit_alt.n_free_params - fit_null.n_free_params
    return lrt_from_deviances(fit_null.deviance, fit_alt.deviance, df)


def aic(fit) -> float:
    if not fit.converged:
        raise ContractError("AIC of an unconverged fit")
    return fit.deviance + 2.0 * fit.n_free_params


def wilson_ci(successes: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1 or not 0 <= successes <= trials or int(successes) != successes:
        raise ValueError(f"invalid binomial counts {successes}/{trials}")
    if not 0 < level < 1:
        raise ValueError(f"confidence level must be in (0, 1), got {level!r}")
    z2 = chisq1_quantile(1.0 - level)
    n = float(trials)
    phat = successes / n
    denom = 1.0 + z2 / n
    centre = (phat + z2 / (2 * n)) / denom
    half = math.sqrt(z2 * (phat * (1 - phat) / n + z2 / (4 * n * n))) / denom
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == trials else min(1.0, centre + half)
    return lo, hi
