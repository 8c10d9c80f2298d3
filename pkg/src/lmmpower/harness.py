"""Monte Carlo experiments: worst-case table, slope-SD scans and their outputs.

Every iteration owns a random stream keyed by ``(master_seed, stream_id)``
with ``stream_id = arm * ARM_STRIDE + index``; a redraw moves to the next
substream of the same key.  Results therefore do not depend on how
iterations are spread over worker processes.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .design import ExperimentDesign, ModelSpec, Structure, enumerate_structures
from .fitter import fit_all, sufficient_stats
from .inference import detection_threshold, wilson_ci
from .selection import Criterion, SelectionConfig, aic_table, backward_lrt
from .simulate import GeneratingParams, SeedSpec, simulate_dataset

log = logging.getLogger(__name__)

ARM_TYPE1 = 0
ARM_POWER = 1
ARM_STRIDE = 1 << 32
MAX_REDRAWS = 100
EFFECT = 25.0
STRUCTURE_LABELS = tuple(s.value for s in enumerate_structures())
CRITERION_LABELS = (Criterion.LRT.label, Criterion.AIC.label)
LABELS = STRUCTURE_LABELS + CRITERION_LABELS

WORST_CASE_HEADER = ["label", "n_iter", "type1", "type1_lo", "type1_hi",
                     "power", "power_lo", "power_hi", "redraws"]
SCAN_HEADER = ["step", "slope_sd", "structure_or_criterion", "h0_reject", "h1_reject", "selected"]


class HarnessAbort(RuntimeError):
    """Too many consecutive unconverged samples for one iteration."""


@dataclass(frozen=True)
class IterationOutcome:
    stream_id: int
    redraws: int
    dev_h0: tuple[float, ...]
    dev_h1: tuple[float, ...]
    reject: dict[str, bool]
    selected: dict[str, Structure]

    def statistic(self, structure: Structure) -> float:
        k = enumerate_structures().index(structure)
        return max(0.0, self.dev_h0[k] - self.dev_h1[k])


def run_iteration(design: ExperimentDesign, params: GeneratingParams, seed: SeedSpec,
                  selection_config: SelectionConfig = SelectionConfig(),
                  threshold: float | None = None) -> IterationOutcome:
    """Simulate, fit all ten models, redraw on any nonconvergence, record decisions."""
    if threshold is None:
        threshold = detection_threshold()
    structures = enumerate_structures()
    original = seed
    for redraws in range(MAX_REDRAWS + 1):
        stats = sufficient_stats(simulate_dataset(design, params, seed))
        fits = fit_all(stats, structures)
        if all(f.converged for f in fits.values()):
            break
        log.debug("stream %d substream %d: unconverged fit, redrawing", seed.stream_id, seed.substream)
        seed = seed.redraw()
    else:
        raise HarnessAbort(
            f"stream {original.stream_id}: more than {MAX_REDRAWS} consecutive redraws "
            f"(params={params})"
        )
    dev_h0 = tuple(fits[ModelSpec(s, False)].deviance for s in structures)
    dev_h1 = tuple(fits[ModelSpec(s, True)].deviance for s in structures)
    reject = {s.value: max(0.0, d0 - d1) > threshold for s, d0, d1 in zip(structures, dev_h0, dev_h1)}
    h1 = {s: fits[ModelSpec(s, True)] for s in structures}
    selected = {
        Criterion.LRT.label: backward_lrt(h1, selection_config.alpha_lrt)[0],
        Criterion.AIC.label: aic_table(h1)[0],
    }
    for label, s in selected.items():
        reject[label] = reject[s.value]
    return IterationOutcome(original.stream_id, redraws, dev_h0, dev_h1, reject, selected)


def _run_batch(args) -> list[IterationOutcome]:
    design, param_list, master_seed, stream_ids, alpha, threshold = args
    config = SelectionConfig(alpha_lrt=alpha)
    return [run_iteration(design, p, SeedSpec(master_seed, sid), config, threshold)
            for p, sid in zip(param_list, stream_ids)]


def run_many(design: ExperimentDesign, jobs: Sequence[tuple[GeneratingParams, int]], master_seed: int,
             selection_config: SelectionConfig = SelectionConfig(), threshold: float | None = None,
             workers: int = 1, chunk: int = 50) -> list[IterationOutcome]:
    """Run ``(params, stream_id)`` jobs, in order, on ``workers`` processes."""
    if threshold is None:
        threshold = detection_threshold()
    batches = []
    for start in range(0, len(jobs), chunk):
        part = jobs[start:start + chunk]
        batches.append((design, [p for p, _ in part], master_seed, [s for _, s in part],
                        selection_config.alpha_lrt, threshold))
    if workers <= 1 or len(batches) <= 1:
        results = [_run_batch(b) for b in batches]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_batch, batches))
    return [o for batch in results for o in batch]


# ---------------------------------------------------------------------------
# worst case
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Rate:
    value: float
    lo: float
    hi: float

    @classmethod
    def of(cls, k: int, n: int) -> "Rate":
        lo, hi = wilson_ci(k, n)
        return cls(k / n, lo, hi)


@dataclass(frozen=True)
class CellSummary:
    label: str
    n_iterations: int
    rejections_h0: int
    rejections_h1: int
    type1: Rate
    power: Rate
    redraw_count: int


@dataclass(frozen=True)
class WorstCaseResult:
    summaries: tuple[CellSummary, ...]
    type1_runs: tuple[IterationOutcome, ...]
    power_runs: tuple[IterationOutcome, ...]

    def summary(self, label: str) -> CellSummary:
        for s in self.summaries:
            if s.label == label:
                return s
        raise KeyError(label)


def summarize(label: str, type1_runs: Sequence[IterationOutcome],
              power_runs: Sequence[IterationOutcome]) -> CellSummary:
    n = len(type1_runs)
    if len(power_runs) != n or n == 0:
        raise ValueError("both arms need the same positive number of iterations")
    k0 = sum(o.reject[label] for o in type1_runs)
    k1 = sum(o.reject[label] for o in power_runs)
    redraws = sum(o.redraws for o in type1_runs) + sum(o.redraws for o in power_runs)
    return CellSummary(label, n, k0, k1, Rate.of(k0, n), Rate.of(k1, n), redraws)


def run_worst_case(design: ExperimentDesign, n_iter: int, master_seed: int,
                   params: GeneratingParams | None = None, effect: float = EFFECT,
                   selection_config: SelectionConfig = SelectionConfig(),
                   threshold: float | None = None, workers: int = 1,
                   include_selected: bool = True) -> WorstCaseResult:
    """Both random-slope SDs at zero; Type I from beta1 = 0, power from beta1 = effect."""
    if n_iter < 100:
        raise ValueError("worst-case runs need n_iter >= 100")
    base = (params or GeneratingParams()).with_slope_sd(0.0)
    jobs = [(base.with_effect(0.0), ARM_TYPE1 * ARM_STRIDE + k) for k in range(n_iter)]
    jobs += [(base.with_effect(effect), ARM_POWER * ARM_STRIDE + k) for k in range(n_iter)]
    out = run_many(design, jobs, master_seed, selection_config, threshold, workers)
    t1, pw = out[:n_iter], out[n_iter:]
    labels = LABELS if include_selected else STRUCTURE_LABELS
    return WorstCaseResult(tuple(summarize(lab, t1, pw) for lab in labels), tuple(t1), tuple(pw))


def paired_difference_se(a: Sequence[bool], b: Sequence[bool]) -> float:
    """Monte Carlo SE of mean(a) - mean(b) for flags observed on the same samples."""
    n = len(a)
    d = [float(x) - float(y) for x, y in zip(a, b)]
    mean = sum(d) / n
    var = sum((v - mean) ** 2 for v in d) / (n - 1)
    return math.sqrt(var / n)


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScanRecord:
    step: int
    slope_sd: float
    h0_reject: dict[str, bool]
    h1_reject: dict[str, bool]
    selected: dict[str, Structure]
    selected_power_arm: dict[str, Structure]
    stream_ids: tuple[int, int]
    redraws: tuple[int, int] = field(default=(0, 0))


def scan_grid(n_steps: int, sd_max: float = 120.0) -> list[float]:
    return [sd_max * k / (n_steps - 1) for k in range(n_steps)]


def run_scan(design: ExperimentDesign, n_steps: int, master_seed: int, sd_max: float = 120.0,
             selection_config: SelectionConfig = SelectionConfig(),
             params: GeneratingParams | None = None, effect: float = EFFECT,
             threshold: float | None = None, workers: int = 1,
             min_steps: int = 100) -> list[ScanRecord]:
    """One beta1 = 0 and one beta1 = effect iteration per slope-SD step."""
    if n_steps < min_steps:
        raise ValueError(f"scans need at least {min_steps} steps")
    base = params or GeneratingParams()
    grid = scan_grid(n_steps, sd_max)
    jobs = [(base.with_slope_sd(sd).with_effect(0.0), ARM_TYPE1 * ARM_STRIDE + k)
            for k, sd in enumerate(grid)]
    jobs += [(base.with_slope_sd(sd).with_effect(effect), ARM_POWER * ARM_STRIDE + k)
             for k, sd in enumerate(grid)]
    out = run_many(design, jobs, master_seed, selection_config, threshold, workers)
    return [
        ScanRecord(k, sd, t1.reject, pw.reject, t1.selected, pw.selected,
                   (t1.stream_id, pw.stream_id), (t1.redraws, pw.redraws))
        for k, (sd, t1, pw) in enumerate(zip(grid, out[:n_steps], out[n_steps:]))
    ]


@dataclass(frozen=True)
class ScanCurve:
    bin_centers: tuple[float, ...]
    rate: tuple[float | None, ...]
    ci_lo: tuple[float | None, ...]
    ci_hi: tuple[float | None, ...]
    n_per_bin: tuple[int, ...]
    bin_width: float


def bin_smooth(records: Iterable[ScanRecord], bin_width: float,
               field: Callable[[ScanRecord], bool], sd_max: float = 120.0) -> ScanCurve:
    """Per-bin proportion of ``field`` with Wilson intervals; empty bins are ``None``."""
    nbins = sd_max / bin_width
    if bin_width <= 0 or abs(nbins - round(nbins)) > 1e-9:
        raise ValueError(f"bin width {bin_width} does not divide {sd_max}")
    nbins = int(round(nbins))
    hits = [0] * nbins
    counts = [0] * nbins
    for r in records:
        b = min(int(r.slope_sd / bin_width), nbins - 1)
        counts[b] += 1
        hits[b] += bool(field(r))
    rate, lo, hi = [], [], []
    for k, n in zip(hits, counts):
        if n == 0:
            rate.append(None)
            lo.append(None)
            hi.append(None)
        else:
            a, b = wilson_ci(k, n)
            rate.append(k / n)
            lo.append(a)
            hi.append(b)
    centers = tuple((j + 0.5) * bin_width for j in range(nbins))
    return ScanCurve(centers, tuple(rate), tuple(lo), tuple(hi), tuple(counts), bin_width)


def h0_field(label: str) -> Callable[[ScanRecord], bool]:
    return lambda r: r.h0_reject[label]


def h1_field(label: str) -> Callable[[ScanRecord], bool]:
    return lambda r: r.h1_reject[label]


def selected_field(criterion_label: str, structures: Iterable[Structure]) -> Callable[[ScanRecord], bool]:
    wanted = frozenset(structures)
    return lambda r: r.selected[criterion_label] in wanted


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _open_for_write(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_csv(results: Sequence, path, kind: str | None = None) -> Path:
    """Write worst-case summaries or scan records; ``kind`` is needed only for empty input."""
    if kind is None:
        if not results:
            raise ValueError("kind ('worst-case' or 'scan') required for empty results")
        kind = "scan" if isinstance(results[0], ScanRecord) else "worst-case"
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        if kind == "worst-case":
            w.writerow(WORST_CASE_HEADER)
            for s in results:
                w.writerow([s.label, s.n_iterations, _fmt(s.type1.value), _fmt(s.type1.lo),
                            _fmt(s.type1.hi), _fmt(s.power.value), _fmt(s.power.lo),
                            _fmt(s.power.hi), s.redraw_count])
        elif kind == "scan":
            w.writerow(SCAN_HEADER)
            for r in results:
                for label in LABELS:
                    sel = r.selected[label].value if label in r.selected else ""
                    w.writerow([r.step, _fmt(r.slope_sd), label, int(r.h0_reject[label]),
                                int(r.h1_reject[label]), sel])
        else:
            raise ValueError(f"unknown CSV kind {kind!r}")
    return Path(path)


_PALETTE = ("#1f4e99", "#c0392b", "#27864a", "#8e44ad", "#d35400")


def emit_svg(curves: Sequence[tuple[str, ScanCurve]], path, title: str = "",
             y_label: str = "rate", y_max: float | None = None,
             reference: float | None = None, sd_max: float = 120.0) -> Path:
    """Line chart of binned rates with Wilson ribbons; optional horizontal reference line."""
    W, H = 640, 400
    left, right, top, bottom = 64, 150, 36, 52
    pw, ph = W - left - right, H - top - bottom
    if y_max is None:
        vals = [v for _, c in curves for v in c.ci_hi if v is not None]
        if reference is not None:
            vals.append(reference)
        y_max = max(vals + [1e-3]) * 1.1

    def px(x):
        return left + pw * x / sd_max

    def py(y):
        return top + ph * (1.0 - min(y, y_max) / y_max)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.2f}" y="22" text-anchor="middle" font-family="sans-serif" '
        f'font-size="15">{title}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
    ]
    for k in range(7):
        x = sd_max * k / 6
        out.append(f'<line x1="{px(x):.2f}" y1="{top + ph}" x2="{px(x):.2f}" y2="{top + ph + 5}" stroke="#333"/>')
        out.append(f'<text x="{px(x):.2f}" y="{top + ph + 18}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="11">{x:g}</text>')
    for k in range(6):
        y = y_max * k / 5
        out.append(f'<line x1="{left - 5}" y1="{py(y):.2f}" x2="{left}" y2="{py(y):.2f}" stroke="#333"/>')
        out.append(f'<text x="{left - 8}" y="{py(y) + 4:.2f}" text-anchor="end" '
                   f'font-family="sans-serif" font-size="11">{y:.3f}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{H - 12}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="12">random-slope SD</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.2f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="12" transform="rotate(-90 16 {top + ph / 2:.2f})">{y_label}</text>')
    if reference is not None:
        out.append(f'<line x1="{left}" y1="{py(reference):.2f}" x2="{left + pw}" '
                   f'y2="{py(reference):.2f}" stroke="#555" stroke-dasharray="6 4"/>')
    for j, (name, c) in enumerate(curves):
        color = _PALETTE[j % len(_PALETTE)]
        pts = [(x, r, a, b) for x, r, a, b in zip(c.bin_centers, c.rate, c.ci_lo, c.ci_hi) if r is not None]
        if pts:
            upper = " ".join(f"{px(x):.2f},{py(b):.2f}" for x, _, _, b in pts)
            lower = " ".join(f"{px(x):.2f},{py(a):.2f}" for x, _, a, _ in reversed(pts))
            out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.18" stroke="none"/>')
            line = " ".join(f"{px(x):.2f},{py(r):.2f}" for x, r, _, _ in pts)
            out.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = top + 14 + 18 * j
        out.append(f'<line x1="{left + pw + 10}" y1="{ly}" x2="{left + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 35}" y="{ly + 4}" font-family="sans-serif" '
                   f'font-size="11">{name}</text>')
    out.append("</svg>")
    with _open_for_write(path) as fh:
        fh.write("\n".join(out) + "\n")
    return Path(path)
