"""Compiled kernels against the numpy fallback.

Each backend runs in its own subprocess (the backend is fixed at import)
with BLAS pinned to one thread. Prints a table and optionally writes JSON.

    python3 benchmarks/bench_backends.py [--out bench.json] [--trials 100]
"""
import argparse
import json
import os
import subprocess
import sys

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

WORKER = r"""
import json, sys, time
import numpy as np
from misslayer import kernels
from misslayer.activations import relu_layer_forward, relu_layer_backward, rbf_layer_forward
from misslayer.density import GmmParams
from misslayer.verification import bench_layer_cost, steady_allocator

trials = int(sys.argv[1])
steady_allocator()
rng = np.random.default_rng(0)
B, D, k, t = 256, 784, 3, 256
gmm = GmmParams(rng.standard_normal(k), rng.standard_normal((k, D)), 0.3 * rng.standard_normal((k, D)))
x = rng.standard_normal((B, D))
miss = rng.random((B, D)) < 0.5
xm = np.where(miss, np.nan, x)
W = rng.standard_normal((D, t)) / np.sqrt(D)
b = np.zeros(t)
c = rng.standard_normal((64, D))
lw = np.zeros((64, D))
z = rng.standard_normal(1_000_000) * 3
_, cache = relu_layer_forward(W, b, gmm, xm, miss)
G = rng.standard_normal((B, t))

def median_ms(fn):
    for _ in range(3):
        fn()
    ts = []
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return 1e3 * float(np.median(ts))

rows = {
    "erf 1e6": median_ms(lambda: kernels.erf(z)),
    "nr 1e6": median_ms(lambda: kernels.nr(z)),
    "log_coeffs 256x784 k=3": median_ms(lambda: kernels.log_coeffs(xm, miss.view(np.uint8), gmm.means, gmm.variances, 1e-6)),
    "relu layer fwd 256x784->256": median_ms(lambda: relu_layer_forward(W, b, gmm, xm, miss)),
    "relu layer bwd": median_ms(lambda: relu_layer_backward(cache, G)),
    "rbf layer fwd 256x784->64": median_ms(lambda: rbf_layer_forward(c, lw, gmm, xm, miss)),
}
cost = bench_layer_cost(784, 1, 256, trials=max(trials, 100))
print(json.dumps({"backend": kernels.BACKEND, "ms": rows, "k1_ratio": cost["ratio"]}))
"""


def run_backend(name, trials):
    env = dict(os.environ, MISSLAYER_BACKEND=name, **{v: "1" for v in THREAD_VARS})
    res = subprocess.run([sys.executable, "-c", WORKER, str(trials)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--out")
    args = ap.parse_args(argv)
    results = {name: run_backend(name, args.trials) for name in ("compiled", "python")}
    if results["compiled"]["backend"] != "compiled":
        print("compiled extension not available; both columns use the numpy fallback")
    py, cc = results["python"]["ms"], results["compiled"]["ms"]
    print(f"{'kernel':<30} {'numpy ms':>10} {'compiled ms':>12} {'speedup':>8}")
    for key in py:
        print(f"{key:<30} {py[key]:>10.2f} {cc[key]:>12.2f} {py[key] / cc[key]:>8.2f}")
    print(f"{'layer cost ratio, k=1':<30} {results['python']['k1_ratio']:>10.2f} "
          f"{results['compiled']['k1_ratio']:>12.2f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return results


if __name__ == "__main__":
    main()
