"""Benchmark: compiled kernels vs the pure-NumPy fallback.

Times the two layers where training spends its time: the raw kernel calls
(decoder forward over a candidate batch + bound scoring) and full greedy
encoding of a batch of data. Run from the repo root:

    python3 benchmarks/bench_backends.py
"""

import time

import numpy as np

from bbsc import _core_py
from bbsc import beta_process as bp
from bbsc import likelihood as lk
from bbsc import nn, pursuit

try:
    from bbsc import _core
except ImportError:
    _core = None


def timeit(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(kernels, net, Z, x):
    F = np.ascontiguousarray(kernels.forward_batch(Z, net._weights, net._biases, net._acts))

    def fwd():
        for _ in range(200):
            kernels.forward_batch(Z, net._weights, net._biases, net._acts)

    def scores():
        for _ in range(200):
            kernels.bern_scores(F, x)

    return timeit(fwd) / 200, timeit(scores) / 200


def bench_encode(kernels, net, X, post):
    import bbsc.backend as backend

    saved = (backend.forward_batch, backend.bern_scores,
             backend.gauss_marginal_scores, backend.poiss_scores)
    backend.forward_batch = kernels.forward_batch
    backend.bern_scores = kernels.bern_scores
    backend.gauss_marginal_scores = kernels.gauss_marginal_scores
    backend.poiss_scores = kernels.poiss_scores
    try:
        prior = bp.CodeLogPrior(post)

        def run():
            pursuit.batch_encode(
                X, lambda i, row: lk.BernoulliEvaluator(row, net, prior), net.input_dim)

        per_batch = timeit(run, repeats=3)
    finally:
        (backend.forward_batch, backend.bern_scores,
         backend.gauss_marginal_scores, backend.poiss_scores) = saved
    return per_batch


def run_regime(label, k, d, hidden, batch):
    rng = np.random.default_rng(0)
    net = nn.init_network(k, hidden, d, nn.Activation.SIGMOID, rng)
    Z = (rng.random((k, k)) < 0.3).astype(float)  # one pursuit round's candidates
    x = (rng.random(d) < 0.5).astype(float)
    X = (rng.random((batch, d)) < 0.5).astype(float)
    post = bp.BetaPosterior(np.full(k, 0.5), np.full(k, 2.0))

    print(f"\n{label}: decoder {k} -> {hidden or '()'} -> {d}, "
          f"candidate batch {k}, encode batch {batch}")
    print(f"{'backend':<10} {'forward/call':>14} {'scores/call':>14} {'encode/batch':>14}")

    rows = []
    for name, kernels in (("cython", _core), ("python", _core_py)):
        if kernels is None:
            print(f"{name:<10} {'(not built)':>14}")
            continue
        fwd, sc = bench_kernels(kernels, net, Z, x)
        enc = bench_encode(kernels, net, X, post)
        rows.append((name, fwd, sc, enc))
        print(f"{name:<10} {fwd * 1e6:>11.1f} us {sc * 1e6:>11.1f} us {enc * 1e3:>11.1f} ms")

    if len(rows) == 2:
        _, f1, s1, e1 = rows[0]
        _, f2, s2, e2 = rows[1]
        print(f"{'speedup':<10} {f2 / f1:>13.2f}x {s2 / s1:>13.2f}x {e2 / e1:>13.2f}x")


def main():
    # small problems are bound by per-call overhead, large ones by the
    # matmul and the transcendentals in the scores
    run_regime("small (synthetic-recovery scale)", k=8, d=16, hidden=(), batch=256)
    run_regime("large (image scale)", k=16, d=196, hidden=(64,), batch=256)


if __name__ == "__main__":
    main()
