"""Choose a random-effect structure from the five candidate fits, then test the fixed effect.

Backward LRT path::

    Maximal --(df 2)--> ZeroCorrelation --(df 1)--> NoItemSlope    --(df 1)--> InterceptsOnly
                                        \\-(df 1)--> NoSubjectSlope --/

NoItemSlope and NoSubjectSlope are not nested in each other, so instead of
comparing them directly both single-slope drops are tested from
ZeroCorrelation and the better-supported one (larger p) is kept.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass

from .design import Dataset, ModelSpec, Structure, enumerate_structures
from .fitter import FitResult, SufficientStats, fit_ml, sufficient_stats
from .inference import ContractError, aic, lrt

M, ZC, NIS, NSS, IO = enumerate_structures()


class RedrawRequired(RuntimeError):
    """A required fit did not converge; the Monte Carlo sample must be redrawn."""


class Criterion(str, enum.Enum):
    LRT = "lrt"
    AIC = "aic"

    @property
    def label(self) -> str:
        return "selected-LRT" if self is Criterion.LRT else "selected-AIC"


@dataclass(frozen=True)
class SelectionConfig:
    criterion: Criterion = Criterion.LRT
    alpha_lrt: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "criterion", Criterion(self.criterion))
        if not 0 < self.alpha_lrt <= 1:
            raise ValueError(f"alpha_lrt must be in (0, 1], got {self.alpha_lrt!r}")


@dataclass(frozen=True)
class TraceStep:
    comparison: str
    statistic: float
    df: int
    p: float
    decision: str


@dataclass(frozen=True)
class SelectionOutcome:
    chosen_structure: Structure
    fixed_effect_significant: bool | None
    trace: tuple[TraceStep, ...]

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["comparison", "stat", "df", "p", "decision"])
        for t in self.trace:
            w.writerow([t.comparison, f"{t.statistic:.6f}", t.df, f"{t.p:.6f}", t.decision])
        return buf.getvalue()


def _by_structure(fits) -> dict[Structure, FitResult]:
    out = {}
    for key, fit in fits.items():
        s = key.structure if isinstance(key, ModelSpec) else Structure(key)
        if isinstance(key, ModelSpec) and not key.fixed_slope:
            continue
        out[s] = fit
    missing = set(enumerate_structures()) - set(out)
    if missing:
        raise ContractError(f"missing H1 fits for {sorted(m.value for m in missing)}")
    for s, fit in out.items():
        if not fit.converged:
            raise ContractError(f"{s.value} fit did not converge")
    return out


def backward_lrt(fits, alpha_lrt: float = 0.2) -> tuple[Structure, tuple[TraceStep, ...]]:
    """Backward elimination; a reduction is accepted when its LRT p-value exceeds alpha_lrt."""
    f = _by_structure(fits)
    trace = []

    def step(simple, complex_):
        r = lrt(f[simple], f[complex_])
        ok = r.p_value > alpha_lrt
        trace.append(TraceStep(f"{complex_.value}>{simple.value}", r.statistic, r.df, r.p_value,
                               "reduce" if ok else "keep"))
        return ok, r.p_value

    ok, _ = step(ZC, M)
    if not ok:
        return M, tuple(trace)
    ok_item, p_item = step(NIS, ZC)
    ok_subj, p_subj = step(NSS, ZC)
    if ok_item and ok_subj:
        current = NIS if p_item >= p_subj else NSS
    elif ok_item:
        current = NIS
    elif ok_subj:
        current = NSS
    else:
        return ZC, tuple(trace)
    ok, _ = step(IO, current)
    return (IO if ok else current), tuple(trace)


def select_backward_lrt(fits, config: SelectionConfig = SelectionConfig()) -> Structure:
    return backward_lrt(fits, config.alpha_lrt)[0]


def aic_table(fits) -> tuple[Structure, tuple[TraceStep, ...]]:
    """Minimum-AIC structure; trace rows carry (AIC, n params, Akaike weight)."""
    f = _by_structure(fits)
    order = enumerate_structures()
    # ties go to fewer parameters, then to enumeration order
    best = min(order, key=lambda s: (aic(f[s]), f[s].n_free_params, order.index(s)))
    a_min = aic(f[best])
    rel = {s: math.exp(-0.5 * (aic(f[s]) - a_min)) for s in order}
    total = sum(rel.values())
    trace = tuple(
        TraceStep(s.value, aic(f[s]), f[s].n_free_params, rel[s] / total,
                  "chosen" if s is best else "rejected")
        for s in order
    )
    return best, trace


def select_aic(fits) -> Structure:
    return aic_table(fits)[0]


def aic_prefers_reduction(fit_simple: FitResult, fit_complex: FitResult) -> bool:
    """Pairwise AIC decision; a tie keeps the simpler model."""
    return aic(fit_simple) <= aic(fit_complex)


def select(fits, config: SelectionConfig = SelectionConfig()) -> tuple[Structure, tuple[TraceStep, ...]]:
    if config.criterion is Criterion.AIC:
        return aic_table(fits)
    return backward_lrt(fits, config.alpha_lrt)


def test_fixed_effect(dataset: Dataset | SufficientStats, chosen_structure: Structure,
                      criterion_threshold: float, fits=None) -> bool:
    """Deviance gap between H0 and H1 fits of the chosen structure exceeds the threshold.

    Reuses ``fits`` (keyed by :class:`ModelSpec`) when they contain both
    hypotheses; otherwise fits them.  Raises :class:`RedrawRequired` when
    either fit fails to converge.
    """
    results = []
    for h in (False, True):
        spec = ModelSpec(chosen_structure, h)
        fit = fits.get(spec) if fits else None
        if fit is None:
            fit = fit_ml(dataset, spec)
        if not fit.converged:
            raise RedrawRequired(f"{spec.label} did not converge")
        results.append(fit)
    return lrt(results[0], results[1]).exceeds(criterion_threshold)


test_fixed_effect.__test__ = False  # keep pytest from collecting it


def select_and_test(dataset: Dataset | SufficientStats, config: SelectionConfig,
                    threshold: float) -> SelectionOutcome:
    stats = dataset if isinstance(dataset, SufficientStats) else sufficient_stats(dataset)
    fits = {ModelSpec(s, True): fit_ml(stats, ModelSpec(s, True)) for s in enumerate_structures()}
    bad = [spec.label for spec, fit in fits.items() if not fit.converged]
    if bad:
        raise RedrawRequired(f"unconverged fits: {', '.join(bad)}")
    chosen, trace = select(fits, config)
    significant = test_fixed_effect(stats, chosen, threshold, fits)
    return SelectionOutcome(chosen, significant, trace)
