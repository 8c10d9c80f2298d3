"""Command-line entry point: ``lmmpower {simulate,fit,select,worst-case,scan}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from collections import Counter
from pathlib import Path

from . import kernel
from .design import PRESETS, Dataset, ModelSpec, Structure
from .fitter import fit_ml
from .harness import (
    LABELS,
    bin_smooth,
    emit_csv,
    emit_svg,
    h0_field,
    h1_field,
    run_scan,
    run_worst_case,
    selected_field,
)
from .inference import detection_threshold
from .selection import Criterion, RedrawRequired, SelectionConfig, select_and_test
from .simulate import GeneratingParams, SeedSpec, simulate_dataset

log = logging.getLogger("lmmpower")

DEFAULTS = {
    "seed": 1,
    "iters": 2000,
    "steps": 4000,
    "preset": "large",
    "criterion": "lrt",
    "alpha_lrt": 0.2,
    "criterion_paper_rounding": False,
    "paper_scale": False,
    "out": "results",
    "threads": 1,
    "bin_width": 10.0,
    "sd_max": 120.0,
    "slope_sd": 0.0,
    "beta1": 0.0,
    "stream": 0,
    "structure": "Maximal",
    "h0": False,
    "with_selection": False,
    "log_level": "WARNING",
}
FULL_SCALE = {"iters": 10_000, "steps": 20_000}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", type=Path, help="JSON file of option values; command-line flags win")
    g.add_argument("--seed", type=int, help="master seed (default 1)")
    g.add_argument("--iters", type=int, help="iterations per arm for worst-case (default 2000)")
    g.add_argument("--steps", type=int, help="slope-SD steps for scan (default 4000)")
    g.add_argument("--preset", choices=sorted(PRESETS), help="large = 50x20, small = 30x10")
    g.add_argument("--criterion", choices=[c.value for c in Criterion], help="selection criterion")
    g.add_argument("--alpha-lrt", type=float, dest="alpha_lrt", help="backward LRT alpha (default 0.2)")
    g.add_argument("--criterion-paper-rounding", action="store_const", const=True,
                   dest="criterion_paper_rounding", help="use 3.85 instead of the exact 0.05 quantile")
    g.add_argument("--paper-scale", action="store_const", const=True, dest="paper_scale",
                   help="10,000 iterations / 20,000 steps")
    g.add_argument("--out", help="output directory (default ./results)")
    g.add_argument("--threads", type=int, help="worker processes (default 1)")
    g.add_argument("--log-level", dest="log_level", help="logging level (default WARNING)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="lmmpower",
        description="Crossed random-effects LMMs: fitting, structure selection and power simulation.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s 0.1.0 (kernel: {kernel.BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write one simulated dataset as CSV")
    p.add_argument("--slope-sd", type=float, dest="slope_sd", help="tau11 = omega11 (default 0)")
    p.add_argument("--beta1", type=float, help="condition effect (default 0)")
    p.add_argument("--stream", type=int, help="stream id (default 0)")

    p = sub.add_parser("fit", parents=[common], help="fit one structure to a CSV dataset, print JSON")
    p.add_argument("dataset", type=Path)
    p.add_argument("--structure", help="Maximal, ZeroCorrelation, NoItemSlope, NoSubjectSlope, InterceptsOnly")
    p.add_argument("--h0", action="store_const", const=True, help="omit the condition fixed effect")

    p = sub.add_parser("select", parents=[common], help="select a structure for a CSV dataset")
    p.add_argument("dataset", type=Path)

    p = sub.add_parser("worst-case", parents=[common], help="Type I / power with zero random slopes")
    p.add_argument("--with-selection", action="store_const", const=True, dest="with_selection",
                   help="add selected-LRT and selected-AIC rows")

    p = sub.add_parser("scan", parents=[common], help="Type I / power across random-slope SDs")
    p.add_argument("--bin-width", type=float, dest="bin_width", help="bin width for curves (default 10)")
    p.add_argument("--sd-max", type=float, dest="sd_max", help="largest slope SD (default 120)")
    return parser


def resolve_options(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config, then explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SystemExit(f"lmmpower: cannot read config {args.config}: {exc}")
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise SystemExit(f"lmmpower: unknown config keys {sorted(unknown)}")
        opts.update(cfg)
    explicit = {k: v for k, v in vars(args).items() if v is not None and k != "config"}
    if opts.get("paper_scale") or explicit.get("paper_scale"):
        opts.update(FULL_SCALE)
    opts.update(explicit)
    return opts


def _threshold(opts) -> float:
    return detection_threshold(bool(opts["criterion_paper_rounding"]))


def _config(opts) -> SelectionConfig:
    return SelectionConfig(Criterion(opts["criterion"]), float(opts["alpha_lrt"]))


def cmd_simulate(opts) -> int:
    design = PRESETS[opts["preset"]]
    params = GeneratingParams(beta1=float(opts["beta1"])).with_slope_sd(float(opts["slope_sd"]))
    data = simulate_dataset(design, params, SeedSpec(int(opts["seed"]), int(opts["stream"])))
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.csv"
    data.to_csv(path)
    print(path)
    return 0


def cmd_fit(opts) -> int:
    data = Dataset.from_csv(opts["dataset"])
    spec = ModelSpec(Structure.parse(opts["structure"]), not opts["h0"])
    print(json.dumps(fit_ml(data, spec).to_dict(), indent=2))
    return 0


def cmd_select(opts) -> int:
    data = Dataset.from_csv(opts["dataset"])
    try:
        outcome = select_and_test(data, _config(opts), _threshold(opts))
    except RedrawRequired as exc:
        print(f"lmmpower: {exc}", file=sys.stderr)
        return 2
    result = {
        "criterion": opts["criterion"],
        "chosen_structure": outcome.chosen_structure.value,
        "fixed_effect_significant": outcome.fixed_effect_significant,
        "trace": [t.__dict__ for t in outcome.trace],
    }
    print(json.dumps(result, indent=2))
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "selection_trace.csv").write_text(outcome.trace_csv())
    return 0


def cmd_worst_case(opts) -> int:
    t0 = time.perf_counter()
    res = run_worst_case(
        PRESETS[opts["preset"]], int(opts["iters"]), int(opts["seed"]),
        selection_config=_config(opts), threshold=_threshold(opts),
        workers=int(opts["threads"]), include_selected=bool(opts["with_selection"]),
    )
    path = emit_csv(list(res.summaries), Path(opts["out"]) / "worst_case.csv", kind="worst-case")
    redraws = Counter(o.redraws for o in res.type1_runs + res.power_runs)
    log.info("redraw distribution: %s", dict(sorted(redraws.items())))
    print(f"{'model':<16} {'Type I (95% CI)':<28} {'power (95% CI)':<28}")
    for s in res.summaries:
        print(f"{s.label:<16} {s.type1.value:.4f} ({s.type1.lo:.4f}, {s.type1.hi:.4f})   "
              f"{s.power.value:.3f} ({s.power.lo:.3f}, {s.power.hi:.3f})")
    print(f"wrote {path} [{time.perf_counter() - t0:.1f}s, kernel={kernel.BACKEND}]")
    return 0


def cmd_scan(opts) -> int:
    t0 = time.perf_counter()
    criterion = Criterion(opts["criterion"])
    sd_max = float(opts["sd_max"])
    records = run_scan(
        PRESETS[opts["preset"]], int(opts["steps"]), int(opts["seed"]), sd_max=sd_max,
        selection_config=_config(opts), threshold=_threshold(opts), workers=int(opts["threads"]),
    )
    out = Path(opts["out"])
    emit_csv(records, out / "scan.csv", kind="scan")
    w = float(opts["bin_width"])
    sel = criterion.label

    def curves(fieldf):
        return [(lab, bin_smooth(records, w, fieldf(lab), sd_max)) for lab in ("Maximal", sel)]

    tag = f"{opts['preset']}, {sel}"
    emit_svg(curves(h0_field), out / "scan_type1.svg", f"Type I error rate ({tag})",
             "Type I error rate", reference=0.05, sd_max=sd_max)
    emit_svg(curves(h1_field), out / "scan_power.svg", f"Power ({tag})", "power",
             y_max=1.0, sd_max=sd_max)
    reduced = (Structure.ZERO_CORRELATION, Structure.NO_ITEM_SLOPE, Structure.NO_SUBJECT_SLOPE)
    groups = [("Maximal", (Structure.MAXIMAL,)), ("reduced", reduced),
              ("InterceptsOnly", (Structure.INTERCEPTS_ONLY,))]
    emit_svg([(name, bin_smooth(records, w, selected_field(sel, ss), sd_max)) for name, ss in groups],
             out / "scan_selection.svg", f"Selection rates ({tag})", "selection rate",
             y_max=1.0, sd_max=sd_max)
    print(f"wrote {out}/scan.csv and 3 SVG panels "
          f"[{len(records)} steps, {time.perf_counter() - t0:.1f}s, kernel={kernel.BACKEND}]")
    for lab in LABELS:
        c0 = bin_smooth(records, w, h0_field(lab), sd_max)
        c1 = bin_smooth(records, w, h1_field(lab), sd_max)
        log.info("%s type1 %s power %s", lab, c0.rate, c1.rate)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "worst-case": cmd_worst_case,
    "scan": cmd_scan,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    opts = resolve_options(args)
    logging.basicConfig(level=str(opts["log_level"]).upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](opts)
    except (ValueError, OSError) as exc:
        print(f"lmmpower: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
