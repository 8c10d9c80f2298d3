import json
import subprocess
import sys

import pytest

from lmmpower.cli import build_parser, main, resolve_options


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_simulate_fit_select(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--out", str(tmp_path), "--seed", "3",
                       "--slope-sd", "40", "--beta1", "25", "--preset", "small")
    assert code == 0
    data = tmp_path / "dataset.csv"
    assert data.read_text().startswith("y,subject,item,x\n")
    assert len(data.read_text().splitlines()) == 601

    code, out, _ = run(capsys, "fit", str(data), "--structure", "ZeroCorrelation")
    fit = json.loads(out)
    assert code == 0 and fit["structure"] == "ZeroCorrelation" and fit["converged"]
    assert len(fit["beta"]) == 2

    code, out, _ = run(capsys, "fit", str(data), "--structure", "InterceptsOnly", "--h0")
    assert json.loads(out)["n_free_params"] == 4

    code, out, _ = run(capsys, "select", str(data), "--out", str(tmp_path), "--criterion", "aic")
    sel = json.loads(out)
    assert code == 0 and sel["criterion"] == "aic"
    trace = (tmp_path / "selection_trace.csv").read_text().splitlines()
    assert trace[0] == "comparison,stat,df,p,decision" and len(trace) == 6


def test_simulate_is_reproducible(tmp_path, capsys):
    run(capsys, "simulate", "--out", str(tmp_path / "a"), "--seed", "8")
    run(capsys, "simulate", "--out", str(tmp_path / "b"), "--seed", "8")
    assert (tmp_path / "a/dataset.csv").read_bytes() == (tmp_path / "b/dataset.csv").read_bytes()


def test_worst_case_and_scan(tmp_path, capsys):
    code, out, _ = run(capsys, "worst-case", "--iters", "100", "--preset", "small",
                       "--out", str(tmp_path), "--with-selection")
    assert code == 0 and "InterceptsOnly" in out
    rows = (tmp_path / "worst_case.csv").read_text().splitlines()
    assert rows[0] == "label,n_iter,type1,type1_lo,type1_hi,power,power_lo,power_hi,redraws"
    assert len(rows) == 8

    code, _, _ = run(capsys, "scan", "--steps", "120", "--preset", "small", "--out", str(tmp_path),
                     "--bin-width", "20")
    assert code == 0
    for name in ("scan.csv", "scan_type1.svg", "scan_power.svg", "scan_selection.svg"):
        assert (tmp_path / name).stat().st_size > 0


def test_config_file_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 77, "iters": 300, "preset": "small", "alpha_lrt": 0.1}))
    parser = build_parser()
    opts = resolve_options(parser.parse_args(["worst-case", "--config", str(cfg), "--iters", "150"]))
    assert opts["seed"] == 77 and opts["preset"] == "small" and opts["alpha_lrt"] == 0.1
    assert opts["iters"] == 150
    opts = resolve_options(parser.parse_args(["scan", "--paper-scale"]))
    assert opts["steps"] == 20_000
    opts = resolve_options(parser.parse_args(["scan", "--paper-scale", "--steps", "500"]))
    assert opts["steps"] == 500


def test_config_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sed": 1}))
    with pytest.raises(SystemExit):
        resolve_options(build_parser().parse_args(["worst-case", "--config", str(cfg)]))


def test_bad_input_reports_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("y,subject,item,x\n1,0,0,0.3\n")
    code, _, err = run(capsys, "fit", str(bad))
    assert code == 1 and "lmmpower:" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "lmmpower", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("simulate", "fit", "worst-case", "scan", "select"):
        assert cmd in res.stdout
