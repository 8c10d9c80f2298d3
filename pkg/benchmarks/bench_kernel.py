"""Compare the compiled and pure-Python deviance kernels.

    python benchmarks/bench_kernel.py [--iterations 20] [--evals 20000]

Reports deviance evaluations per second, time per single fit and time per
Monte Carlo iteration (ten fits) for each available backend, and checks
that both backends return identical fits.
"""
import argparse
import contextlib
import time

from lmmpower import kernel
from lmmpower.design import PRESETS, ModelSpec, Structure, pack_theta
from lmmpower.fitter import fit_all, fit_ml, sufficient_stats
from lmmpower.simulate import GeneratingParams, SeedSpec, simulate_dataset


@contextlib.contextmanager
def use_backend(module):
    saved = kernel.deviance, kernel.solution, kernel.nelder_mead
    kernel.deviance, kernel.solution, kernel.nelder_mead = module.deviance, module.solution, module.nelder_mead
    try:
        yield
    finally:
        kernel.deviance, kernel.solution, kernel.nelder_mead = saved


def timed(fn, repeat):
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=20, help="Monte Carlo iterations to time")
    ap.add_argument("--evals", type=int, default=20_000, help="raw deviance evaluations to time")
    args = ap.parse_args()

    params = GeneratingParams(beta1=25).with_slope_sd(40)
    stats = [sufficient_stats(simulate_dataset(PRESETS["large"], params, SeedSpec(1, k)))
             for k in range(args.iterations)]
    spec = ModelSpec(Structure.MAXIMAL, True)
    theta = tuple(pack_theta([0.3, 0.1, 0.2, 0.3, 0.1, 0.2], spec.structure))

    rows, fits = [], {}
    for name, module in sorted(kernel.backends().items()):
        evals = args.evals if name != "python" else max(1, args.evals // 10)
        per_eval = timed(lambda: module.deviance(theta, stats[0].values, 2), evals)
        with use_backend(module):
            per_fit = timed(lambda: fit_ml(stats[0], spec), 5)
            t0 = time.perf_counter()
            fits[name] = [fit_all(s) for s in stats]
            per_iter = (time.perf_counter() - t0) / len(stats)
        rows.append((name, 1.0 / per_eval, per_fit * 1e3, per_iter * 1e3))

    print(f"{'backend':<8} {'evals/s':>12} {'ms/fit':>10} {'ms/iteration':>14}")
    for name, eps, mf, mi in rows:
        print(f"{name:<8} {eps:>12,.0f} {mf:>10.3f} {mi:>14.3f}")
    if len(rows) == 2:
        print(f"speed-up per iteration: {rows[1][3] / rows[0][3]:.1f}x")
        same = fits["python"] == fits["cython"]
        print(f"identical fits across backends: {same}")


if __name__ == "__main__":
    main()
