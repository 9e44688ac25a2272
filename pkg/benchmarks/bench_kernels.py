"""Compare the compiled and pure-Python kernels on realistic workloads.

    python benchmarks/bench_kernels.py [--repeat 5]

Reports best-of-N wall time per kernel and backend, and checks that both
backends return bit-identical results.
"""

import argparse
import importlib
import timeit

import numpy as np

from pnrtomo._kernels import _pykernels
from pnrtomo.detector import DetectorParams, noclick_table
from pnrtomo.simulator import sample_ready_clicks


def composition_inputs(m):
    # per-branch factors y_g[k] as theoretical_povm builds them
    table = noclick_table(DetectorParams.calibrated(), m)
    return np.ascontiguousarray(table * 0.25)


def click_inputs(n, mean=10.0, seed=0):
    rng = np.random.default_rng(seed)
    return sample_ready_clicks(DetectorParams.calibrated(), mean, n, rng)


def cases():
    y = composition_inputs(60)
    clicks = click_inputs(200_000)
    return [
        ("composition_sum m=60", "composition_sum", (y, 60)),
        ("composition_sum m=100", "composition_sum", (composition_inputs(100), 100)),
        ("dead_time_scan smart D=10 n=2e5", "dead_time_scan", (clicks, 10, 1)),
        ("dead_time_scan naive D=10 n=2e5", "dead_time_scan", (clicks, 10, 0)),
    ]


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    try:
        compiled = importlib.import_module("pnrtomo._kernels._ckernels")
    except ImportError:
        compiled = None
        print("compiled kernels not built; timing the pure-Python backend only")
    print(f"{'kernel':36s} {'python [s]':>12s} {'cython [s]':>12s} {'speedup':>9s}  identical")
    for label, name, inputs in cases():
        py_fn = getattr(_pykernels, name)
        t_py = min(timeit.repeat(lambda: py_fn(*inputs), number=1, repeat=args.repeat))
        if compiled is None:
            print(f"{label:36s} {t_py:12.4f} {'-':>12s} {'-':>9s}  -")
            continue
        c_fn = getattr(compiled, name)
        t_c = min(timeit.repeat(lambda: c_fn(*inputs), number=1, repeat=args.repeat))
        ok = same(py_fn(*inputs), c_fn(*inputs))
        print(f"{label:36s} {t_py:12.4f} {t_c:12.4f} {t_py / t_c:8.1f}x  {ok}")


if __name__ == "__main__":
    main()
