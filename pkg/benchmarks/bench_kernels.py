"""Compare the numba and pure-numpy inference kernels.

    python3 benchmarks/bench_kernels.py [--rows 1000] [--iters 300]

Both backends run the same problem; the script checks that they agree and
prints the best-of-N wall time per kernel.  Compilation is excluded by a
warm-up call.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from ngm import kernels
from ngm.numerics import ACT_CODES, init_mlp


def problem(rows: int, d: int = 10, bins: int = 20, hidden: int = 30, seed: int = 0):
    """Binned chain-sized network: ``d`` features of ``bins`` units each."""
    rng = np.random.default_rng(seed)
    n_in = d * bins
    p = init_mlp([n_in, hidden, d], rng, activation="tanh")
    acts = [ACT_CODES[a] for a in p.activations]
    gstart = np.arange(d) * bins
    gend = gstart + bins
    centers = np.linspace(-2, 2, bins)
    dec = np.zeros((n_in, d))
    for f in range(d):
        dec[gstart[f]:gend[f], f] = centers
    z0 = rng.normal(size=(rows, n_in))
    learn = np.zeros((rows, n_in), dtype=bool)
    learn[:, bins:] = True                      # first feature known
    ow = np.ones((rows, d))
    ow[:, 0] = 0.0
    return p, acts, z0, learn, gstart, gend, dec, ow


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description="numba vs numpy kernel timings")
    ap.add_argument("--rows", type=int, default=1000)
    ap.add_argument("--iters", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed")
    p, acts, z0, learn, gs, ge, dec, ow = problem(a.rows)
    ws, bs = p.weights, p.biases
    x0 = z0.copy()
    enc_plain = _enc_plain(ws, z0)

    cases = {
        "forward": lambda nb: kernels.forward(ws, bs, acts, z0, use_numba=nb),
        "map_descent": lambda nb: kernels.map_descent(ws, bs, acts, z0, learn, gs, ge, dec, ow,
                                                      lr=1e-2, max_iter=a.iters, tol=0.0,
                                                      use_numba=nb),
        "fixed_point": lambda nb: kernels.fixed_point(ws, bs, acts, x0, learn, enc_plain,
                                                      max_iter=a.iters, tol=0.0, use_numba=nb),
    }
    print(f"rows={a.rows} iters={a.iters} best of {a.repeat}")
    print(f"{'kernel':<12} {'numpy s':>10} {'numba s':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, fn in cases.items():
        ref = fn(False)
        got = fn(True)                           # warm-up compiles
        # compare the primary array; convergence flags at tol=0 hinge on exact zeros
        diff = float(np.max(np.abs(_tuple(ref)[0] - _tuple(got)[0])))
        t_np = best_of(lambda: fn(False), a.repeat)
        t_nb = best_of(lambda: fn(True), a.repeat)
        print(f"{name:<12} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>7.1f}x {diff:>11.2e}")


def _enc_plain(ws, z0):
    # output -> input map for a fixed-point sweep on a square plain network
    n_in, n_out = z0.shape[1], ws[-1].shape[0]
    enc = np.zeros((n_out, n_in))
    enc[np.arange(n_out), np.arange(n_out) * (n_in // n_out)] = 1.0
    return enc


def _tuple(x):
    return x if isinstance(x, tuple) else (x,)


if __name__ == "__main__":
    main()
