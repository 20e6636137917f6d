"""Compare the compiled and numpy kernel backends.

Run with ``python3 benchmarks/bench_kernels.py``; add ``--quick`` for a
short smoke run. Times are the best of several repeats, in milliseconds.
"""

import argparse
import timeit

import numpy as np

from hrp import kernels, temporal


def _best_ms(fn, repeat, number):
    return 1e3 * min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def _cases(quick):
    rng = np.random.default_rng(0)
    B, L, F, m = (64, 10, 14, 16) if quick else (256, 25, 14, 32)
    X = rng.normal(size=(B, L, F))
    W = rng.uniform(-0.2, 0.2, size=(4 * m, m + F))
    b = np.zeros(4 * m)
    dh = rng.normal(size=(B, m))
    n = 300 if quick else 2000
    H = rng.normal(size=(n, m))
    return X, W, b, dh, H, f"B={B} L={L} F={F} m={m}", f"n={n} d={m}"


def _epoch(quick):
    """One training epoch on random windows, run under whichever backend is active."""
    rng = np.random.default_rng(1)
    n = 512 if quick else 4096
    X, y = rng.normal(size=(n, 25, 14)), rng.uniform(0, 125, n)
    cfg = temporal.TrainConfig(hidden_size=32, epochs=1, learning_rate=1e-2)
    return lambda: temporal.train_extractor(X, y, cfg)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args(argv)
    repeat, number = (3, 2) if args.quick else (5, 3)
    X, W, b, dh, H, lstm_shape, gp_shape = _cases(args.quick)
    backends = kernels.available_backends()

    train_epoch = _epoch(args.quick)
    rows = []
    for name, impl in backends.items():
        cache = kernels.lstm_forward(X, W, b, impl=impl)[:4]
        fwd = _best_ms(lambda: kernels.lstm_forward(X, W, b, impl=impl), repeat, number)
        bwd = _best_ms(lambda: kernels.lstm_backward(dh, W, cache, impl=impl), repeat, number)
        gram = _best_ms(lambda: kernels.se_kernel_matrix(H, H, 1.0, 1.0, impl=impl), repeat, 1)

        def epoch(impl=impl):
            saved = kernels._impl
            kernels._impl = impl
            try:
                train_epoch()
            finally:
                kernels._impl = saved
        ep = _best_ms(epoch, 2 if args.quick else 3, 1)
        rows.append((name, fwd, bwd, gram, ep))

    print(f"lstm: {lstm_shape}   gram: {gp_shape}   active backend: {kernels.BACKEND}")
    print(f"{'backend':<8} {'forward':>10} {'backward':>10} {'gram':>10} {'epoch':>10}   (ms)")
    for name, *vals in rows:
        print(f"{name:<8} " + " ".join(f"{v:>10.2f}" for v in vals))
    if len(rows) == 2:
        py, cy = rows[0][1:], rows[1][1:]
        print("speedup  " + " ".join(f"{p / c:>9.2f}x" for p, c in zip(py, cy)))


if __name__ == "__main__":
    main()
