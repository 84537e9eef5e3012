"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each backend is imported directly, so FEDSEL_BACKEND does not matter here.
The full-experiment timing runs in a subprocess per backend.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from fedsel import _pykernels

try:
    from fedsel import _ckernels
except ImportError:
    _ckernels = None

EXPERIMENT = (
    "import time; from fedsel.config import ExperimentConfig; from fedsel.harness import run_repeats;"
    "t=time.perf_counter(); run_repeats(ExperimentConfig(repeats=3).validate()); print(time.perf_counter()-t)"
)


def _case_kl(rng):
    k, m, n = 10, 250, 10
    z = rng.normal(size=(k, m, n))
    p = np.exp(z) / np.exp(z).sum(axis=2, keepdims=True)
    return lambda mod: mod.pairwise_kl(p)


def _case_sgd(rng):
    n, d, rows = 10, 16, 300
    x = rng.normal(size=(rows, d))
    y = rng.integers(0, n, size=rows)
    w = rng.normal(scale=0.05, size=(d + 1) * n)
    orders = np.stack([rng.permutation(rows) for _ in range(20)])
    return lambda mod: mod.softmax_sgd(w, x, y, orders, n, 64, 0.001)


def _best(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def _experiment_seconds(backend):
    env = dict(os.environ, FEDSEL_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", EXPERIMENT], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1

    rng = np.random.default_rng(0)
    print(f"{'case':<38}{'python':>12}{'cython':>12}{'speedup':>10}")
    for name, make in (("pairwise_kl K=10 M=250 N=10", _case_kl),
                       ("softmax_sgd 300x16, 20 epochs, b=64", _case_sgd)):
        run = make(rng)
        diff = np.max(np.abs(run(_pykernels) - run(_ckernels)))
        py = _best(lambda: run(_pykernels), args.repeat)
        cy = _best(lambda: run(_ckernels), args.repeat)
        print(f"{name:<38}{py * 1e3:>10.3f}ms{cy * 1e3:>10.3f}ms{py / cy:>9.1f}x   max|diff| {diff:.1e}")

    py = _experiment_seconds("python")
    cy = _experiment_seconds("cython")
    print(f"{'default experiment, 3 repeats':<38}{py:>11.2f}s{cy:>11.2f}s{py / cy:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
