#!/usr/bin/env python3
"""Timing comparison of the jitted kernels against the pure-numpy
fallback on the package's hot paths.

Both paths consume identical counter-based draws, so each pair is also
checked for agreement while being timed.  Run from the repo root:

    python benchmarks/bench_backends.py [--quick]
"""

import argparse
import time

import numpy as np

import specdiff as sd
import specdiff.correlate
import specdiff.ou
import specdiff.pulsesim
from specdiff.backend import USE_NUMBA

SIGMA = 0.723e9


def timed(fn, repeat=3):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def with_backend(module, use_numba, fn):
    old = module.USE_NUMBA
    module.USE_NUMBA = use_numba
    try:
        return timed(fn)
    finally:
        module.USE_NUMBA = old


def bench_sequence(n_repeats):
    em = sd.EmitterModel(sigma_inhom_hz=SIGMA, gamma_hom_hz=SIGMA / 100,
                         lifetime_ns=150.0, a_per_pulse=0.015, beta=0.1)
    seq = sd.PulseSequence.two_colour(0.0, 0.7 * SIGMA, 3.0, 900.0, 160.0,
                                      n_repeats)
    run = lambda: sd.run_sequence(em, seq, seed=1)
    t_nb, a = with_backend(specdiff.pulsesim, True, run)
    t_np, b = with_backend(specdiff.pulsesim, False, run)
    assert np.array_equal(a.pulse_index, b.pulse_index)
    return f"pulse sequence ({seq.n_pulses:.0e} pulses)", t_nb, t_np


def bench_rc(shots):
    em = sd.EmitterModel(sigma_inhom_hz=3.8e9 / sd.FWHM_PER_SIGMA,
                         gamma_hom_hz=32e6, lifetime_ns=120.0,
                         a_per_pulse=0.045)
    run = lambda: sd.run_rc_sequence(em, 0.0, 0.0, 0.05, 0.02, 0.0,
                                     shots=shots, seed=2, cap=20_000)
    t_nb, a = with_backend(specdiff.pulsesim, True, run)
    t_np, b = with_backend(specdiff.pulsesim, False, run)
    assert np.array_equal(a.n_checks, b.n_checks)
    return f"resonance check ({shots} shots)", t_nb, t_np


def bench_bath(n_traj):
    run = lambda: sd.bath_autocorrelation(1000, 0.05, 20, n_traj, seed=3)
    t_nb, a = with_backend(specdiff.ou, True, run)
    t_np, b = with_backend(specdiff.ou, False, run)
    assert np.allclose(a[0], b[0], rtol=1e-12)
    return f"charge bath ({n_traj} trajectories)", t_nb, t_np


def bench_histogram(n_repeats):
    em = sd.EmitterModel(sigma_inhom_hz=SIGMA, gamma_hom_hz=SIGMA / 100,
                         lifetime_ns=150.0, a_per_pulse=0.015, beta=0.1)
    seq = sd.PulseSequence.two_colour(0.0, 0.0, 3.0, 900.0, 160.0, n_repeats)
    stream = sd.run_sequence(em, seq, seed=4)
    run = lambda: sd.g2_pulsed(stream, long_lag_window=(200, 400))
    t_nb, a = with_backend(specdiff.correlate, True, run)
    t_np, b = with_backend(specdiff.correlate, False, run)
    assert np.array_equal(a.counts, b.counts)
    return f"pair histogram ({len(stream)} events)", t_nb, t_np


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true",
                        help="smaller problem sizes")
    args = parser.parse_args()
    if not USE_NUMBA:
        parser.error("run with the numba backend available "
                     "(unset SPECDIFF_BACKEND)")

    q = 10 if args.quick else 1
    rows = [
        bench_sequence(1_000_000 // q),
        bench_rc(3000 // q),
        bench_bath(3000 // q),
        bench_histogram(1_000_000 // q),
    ]
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'numba':>9}  {'numpy':>9}  {'speedup':>8}")
    for name, t_nb, t_np in rows:
        print(f"{name:<{width}}  {t_nb * 1e3:8.1f}ms  {t_np * 1e3:8.1f}ms  "
              f"{t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
