"""Timing comparison of the compiled and pure-python kernel backends.

Runs each hot kernel on identical inputs through both implementations,
checks that the outputs agree, and prints a small table with the
speedup.  Usage:

    python benchmarks/benchmark_kernels.py [--repeats N]
"""

import argparse
import math
import time

import numpy as np

from capsde._kernels import _fallback

try:
    from capsde._kernels import _compiled
except ImportError:
    _compiled = None


def _time(fn, *args, repeats=3):
    best = math.inf
    out = None
    for _ in range(repeats):
        started = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - started)
    return best, out


def _report(name, tp, tc, agree):
    if tc is None:
        print(f"{name:24s} python {tp * 1e3:9.2f} ms   compiled     n/a")
        return
    status = "agree" if agree else "DISAGREE"
    print(f"{name:24s} python {tp * 1e3:9.2f} ms   compiled "
          f"{tc * 1e3:9.2f} ms   speedup {tp / tc:6.1f}x   [{status}]")


def bench_march_log(repeats):
    n_space, n_steps = 1000, 2000
    x = np.linspace(-4.0, 4.0, n_space + 1)
    dx = x[1] - x[0]
    term = np.where(x >= math.log(1.25), 1.0, 0.0)
    einv = np.exp(-x)
    f_tab = np.linspace(0.0, 1.0, 4097)
    args = (term, einv, 2.455, 0.09, 1.0 / n_steps, dx, n_steps, f_tab, 1.0,
            0.0, 1.0, True, None)
    tp, outp = _time(_fallback.march_log_lattice, *args, repeats=repeats)
    tc = outc = None
    if _compiled is not None:
        tc, outc = _time(_compiled.march_log_lattice, *args, repeats=repeats)
    agree = outc is not None and np.allclose(outp[0], outc[0], atol=1e-12)
    _report("march_log_lattice", tp, tc, agree)


def bench_march_toy(repeats):
    n_space, n_steps = 1600, 45000
    x = np.linspace(-2.75, 5.25, n_space + 1)
    dx = x[1] - x[0]
    term = np.clip((x - 1.25) / dx * 0.5 + 0.5, 0.0, 1.0)
    dt = 1.0 / n_steps
    s_hi = 1.0 - np.arange(n_steps) * dt
    s_lo = s_hi - dt
    dbar = (s_hi ** 3 - s_lo ** 3) / (6.0 * dt)
    args = (term, dbar, dt, dx, 0.0, 1.0, 45)
    tp, outp = _time(_fallback.march_toy_lattice, *args, repeats=repeats)
    tc = outc = None
    if _compiled is not None:
        tc, outc = _time(_compiled.march_toy_lattice, *args, repeats=repeats)
    agree = outc is not None and np.allclose(outp[0], outc[0], atol=1e-12)
    _report("march_toy_lattice", tp, tc, agree)


def _toy_surface():
    n_time, n_space = 400, 800
    t = np.linspace(0.0, 1.0, n_time + 1)
    x = np.linspace(-2.75, 5.25, n_space + 1)
    s = np.maximum(1.0 - t, 1e-3)
    vals = np.clip((x[None, :] - 1.25) / s[:, None], 0.0, 1.0)
    return vals, t, x


def bench_feedback(repeats):
    vals, t, x = _toy_surface()
    noise = np.random.default_rng(1).standard_normal((500, 4096))
    args = (vals, t[0], t[1] - t[0], x[0], x[1] - x[0], 0, 0.0, 0.0,
            np.zeros(2), 0.0, 1.0, 1.375, 0.5, 1e-3, 1e-3, noise)
    tp, outp = _time(_fallback.feedback_euler_block, *args, repeats=repeats)
    tc = outc = None
    if _compiled is not None:
        tc, outc = _time(_compiled.feedback_euler_block, *args,
                         repeats=repeats)
    agree = outc is not None and np.allclose(outp[0], outc[0], atol=1e-10)
    _report("feedback_euler_block", tp, tc, agree)


def bench_malliavin(repeats):
    vals, t, x = _toy_surface()
    grad = np.gradient(vals, x[1] - x[0], axis=1)
    noise = np.random.default_rng(2).standard_normal((400, 4096))
    args = (vals, grad, t[0], t[1] - t[0], x[0], x[1] - x[0], 1.0,
            1.375, 0.5, 1e-3, noise)
    tp, outp = _time(_fallback.malliavin_block, *args, repeats=repeats)
    tc = outc = None
    if _compiled is not None:
        tc, outc = _time(_compiled.malliavin_block, *args, repeats=repeats)
    agree = outc is not None and np.allclose(outp[0], outc[0], atol=1e-10)
    _report("malliavin_block", tp, tc, agree)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    if _compiled is None:
        print("compiled backend not available; timing python only")
    bench_march_log(args.repeats)
    bench_march_toy(args.repeats)
    bench_feedback(args.repeats)
    bench_malliavin(args.repeats)


if __name__ == "__main__":
    main()
