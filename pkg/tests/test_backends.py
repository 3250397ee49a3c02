"""The jitted scalar kernels and the vectorized numpy twins consume the
same counter-addressed draws, so integer outputs (event membership,
channels, counts, heralds) must agree exactly and float outputs to the
last-ulp differences of SIMD transcendentals."""

import os
import subprocess
import sys

import numpy as np
import pytest

import specdiff as sd
from specdiff import rng
from specdiff.backend import USE_NUMBA
from specdiff.pulsesim import _SeqTables, _bg_counts, _sim_chunk_np
from specdiff.correlate import _pair_hist_np
from specdiff.ou import _bath_acf_sums_numpy

requires_numba = pytest.mark.skipif(not USE_NUMBA,
                                    reason="numba backend not active")

SIGMA = 0.723e9


def make_emitter(**kw):
    base = dict(sigma_inhom_hz=SIGMA, gamma_hom_hz=7.23e6, lifetime_ns=150.0,
                a_per_pulse=0.045, beta=0.15)
    base.update(kw)
    return sd.EmitterModel(**base)


@requires_numba
class TestSimChunkTwins:
    def test_same_events(self):
        em = make_emitter()
        seq = sd.PulseSequence.two_colour(0.0, 0.7 * SIGMA, 1.0, 900.0,
                                          160.0, 40_000, hbt_split=False)
        tables = _SeqTables(em, seq)
        key = rng.stream_key(99, 0)
        delta0 = float(rng.normal_array(rng.stream_key(99, 1),
                                        np.array([0], dtype=np.uint64))[0])
        n = seq.n_pulses
        counts = _bg_counts(key, 0, n, tables)

        from specdiff.pulsesim import _sim_chunk_nb
        cap = n + int(counts.sum())
        out = (np.empty(cap), np.empty(cap, np.int64),
               np.empty(cap, np.int16), np.empty(cap, np.uint8), np.empty(n))
        cnt, d_nb = _sim_chunk_nb(np.uint64(key), 0, n, delta0, tables.c,
                                  tables.snoise, tables.d, tables.amp,
                                  tables.invw, tables.poff, tables.woff,
                                  tables.wlen, tables.chan, tables.period,
                                  tables.lifetime, tables.hbt, counts,
                                  *out)
        order = np.argsort(out[0][:cnt], kind="stable")
        t_np, p_np, c_np, o_np, d_np, deltas = _sim_chunk_np(
            key, 0, n, delta0, tables, counts)

        assert cnt == t_np.size
        np.testing.assert_array_equal(out[1][:cnt][order], p_np)
        np.testing.assert_array_equal(out[2][:cnt][order], c_np)
        np.testing.assert_array_equal(out[3][:cnt][order], o_np)
        np.testing.assert_allclose(out[0][:cnt][order], t_np, rtol=0,
                                   atol=1e-6)
        assert d_nb == pytest.approx(d_np, rel=1e-9, abs=1e-12)
        np.testing.assert_allclose(out[4], deltas, rtol=0, atol=1e-9)

    def test_run_sequence_backend_dispatch(self, monkeypatch):
        em = make_emitter()
        seq = sd.PulseSequence.single_laser(0.0, 1.0, 900.0, 160.0, 30_000,
                                            hbt_split=True)
        a = sd.run_sequence(em, seq, seed=123)
        import specdiff.pulsesim as ps
        monkeypatch.setattr(ps, "USE_NUMBA", False)
        b = sd.run_sequence(em, seq, seed=123)
        np.testing.assert_array_equal(a.pulse_index, b.pulse_index)
        np.testing.assert_array_equal(a.channel, b.channel)
        np.testing.assert_array_equal(a.origin, b.origin)
        np.testing.assert_allclose(a.time_ns, b.time_ns, rtol=0, atol=1e-6)


@requires_numba
class TestRCTwins:
    def test_same_outcomes(self):
        em = sd.EmitterModel(sigma_inhom_hz=1.6e9, gamma_hom_hz=32e6,
                             lifetime_ns=120.0, a_per_pulse=0.045, beta=0.05)
        kw = dict(check_power=0.05, probe_power=0.02, tau_dark_ns=100.0,
                  shots=600, seed=17, cap=5000)
        a = sd.run_rc_sequence(em, 0.0, 0.1 * 1.6e9, **kw)

        import specdiff.pulsesim as ps
        old = ps.USE_NUMBA
        try:
            ps.USE_NUMBA = False
            b = sd.run_rc_sequence(em, 0.0, 0.1 * 1.6e9, **kw)
        finally:
            ps.USE_NUMBA = old
        np.testing.assert_array_equal(a.n_checks, b.n_checks)
        np.testing.assert_array_equal(a.heralded, b.heralded)
        np.testing.assert_array_equal(a.probe_detected, b.probe_detected)


@requires_numba
class TestHistogramTwins:
    def test_same_histograms(self):
        em = make_emitter()
        seq = sd.PulseSequence.two_colour(0.0, 0.3 * SIGMA, 2.0, 900.0,
                                          160.0, 60_000)
        stream = sd.run_sequence(em, seq, seed=31)
        order = np.argsort(stream.pulse_index, kind="stable")
        pulse = stream.pulse_index[order]
        chan = stream.channel[order]
        from specdiff.correlate import _pair_hist_nb
        h_nb = np.zeros(201, dtype=np.int64)
        h0_nb = np.zeros(2, dtype=np.int64)
        _pair_hist_nb(pulse, chan, 200, h_nb, h0_nb)
        h_np, h0_np = _pair_hist_np(pulse, chan, 200)
        np.testing.assert_array_equal(h_nb, h_np)
        np.testing.assert_array_equal(h0_nb, h0_np)

    def test_curve_identical_through_dispatch(self, monkeypatch):
        em = make_emitter()
        seq = sd.PulseSequence.single_laser(0.0, 2.0, 900.0, 160.0, 80_000,
                                            hbt_split=True)
        stream = sd.run_sequence(em, seq, seed=41)
        a = sd.g2_pulsed(stream, long_lag_window=(100, 200))
        import specdiff.correlate as co
        monkeypatch.setattr(co, "USE_NUMBA", False)
        b = sd.g2_pulsed(stream, long_lag_window=(100, 200))
        np.testing.assert_array_equal(a.counts, b.counts)
        np.testing.assert_allclose(a.values, b.values, rtol=1e-12)


@requires_numba
class TestBathTwins:
    def test_same_sums(self):
        sum_p = np.zeros(13)
        sum_q = np.zeros(13)
        _bath_acf_sums_numpy(400, 0.08, 12, 70, 0, 2718, sum_p, sum_q)

        from specdiff.ou import _bath_acf_sums_nb
        charges = np.empty(400, dtype=np.int8)
        perm = np.empty(400, dtype=np.int64)
        sum_p2 = np.zeros(13)
        sum_q2 = np.zeros(13)
        _bath_acf_sums_nb(400, 0.08, 12, 70, 0, np.uint64(2718), charges,
                          perm, sum_p2, sum_q2)
        np.testing.assert_allclose(sum_p, sum_p2, rtol=1e-12)
        np.testing.assert_allclose(sum_q, sum_q2, rtol=1e-12)

    def test_fractional_scramble_twins(self):
        # frac * n < 1 exercises the Bernoulli branch
        sum_p = np.zeros(6)
        sum_q = np.zeros(6)
        _bath_acf_sums_numpy(50, 0.01, 5, 64, 0, 99, sum_p, sum_q)
        from specdiff.ou import _bath_acf_sums_nb
        charges = np.empty(50, dtype=np.int8)
        perm = np.empty(50, dtype=np.int64)
        sum_p2 = np.zeros(6)
        sum_q2 = np.zeros(6)
        _bath_acf_sums_nb(50, 0.01, 5, 64, 0, np.uint64(99), charges, perm,
                          sum_p2, sum_q2)
        np.testing.assert_allclose(sum_p, sum_p2, rtol=1e-12)


class TestEnvFlag:
    def test_env_selects_numpy_backend(self):
        code = ("import specdiff; print(specdiff.active_backend())")
        env = dict(os.environ, SPECDIFF_BACKEND="numpy")
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "numpy"

    def test_bad_env_value_rejected(self):
        code = "import specdiff"
        env = dict(os.environ, SPECDIFF_BACKEND="cuda")
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True)
        assert out.returncode != 0

    def test_numpy_backend_stream_matches(self):
        # a small stream simulated in a numpy-backend subprocess equals
        # the in-process result event for event
        code = (
            "import numpy as np, specdiff as sd\n"
            "em = sd.EmitterModel(sigma_inhom_hz=0.723e9, gamma_hom_hz=7.23e6,"
            " lifetime_ns=150.0, a_per_pulse=0.045, beta=0.15)\n"
            "seq = sd.PulseSequence.two_colour(0.0, 0.5e9, 1.0, 900.0, 160.0, 8000)\n"
            "s = sd.run_sequence(em, seq, seed=77)\n"
            "print(len(s), int(s.pulse_index.sum()), int(s.channel.sum()),"
            " int(s.origin.sum()))\n"
        )
        env = dict(os.environ, SPECDIFF_BACKEND="numpy")
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True, check=True)
        em = make_emitter()
        seq = sd.PulseSequence.two_colour(0.0, 0.5e9, 1.0, 900.0, 160.0, 8000)
        s = sd.run_sequence(em, seq, seed=77)
        want = f"{len(s)} {int(s.pulse_index.sum())} {int(s.channel.sum())} {int(s.origin.sum())}"
        assert out.stdout.strip() == want


@requires_numba
class TestThreadIndependence:
    def test_run_sequence_thread_count(self):
        em = make_emitter()
        seq = sd.PulseSequence.two_colour(0.0, 0.5 * SIGMA, 1.0, 900.0,
                                          160.0, 60_000)
        a = sd.run_sequence(em, seq, seed=9, chunk_repeats=7000, threads=1)
        b = sd.run_sequence(em, seq, seed=9, chunk_repeats=7000, threads=4)
        np.testing.assert_array_equal(a.pulse_index, b.pulse_index)
        np.testing.assert_array_equal(a.channel, b.channel)
        np.testing.assert_array_equal(a.origin, b.origin)
        np.testing.assert_array_equal(a.time_ns, b.time_ns)

    def test_rc_thread_count(self):
        em = sd.EmitterModel(sigma_inhom_hz=1.6e9, gamma_hom_hz=32e6,
                             lifetime_ns=120.0, a_per_pulse=0.045)
        kw = dict(check_power=0.05, probe_power=0.02, tau_dark_ns=0.0,
                  shots=900, seed=13, cap=5000)
        a = sd.run_rc_sequence(em, 0.0, 0.0, threads=1, **kw)
        b = sd.run_rc_sequence(em, 0.0, 0.0, threads=5, **kw)
        np.testing.assert_array_equal(a.n_checks, b.n_checks)
        np.testing.assert_array_equal(a.probe_detected, b.probe_detected)


class TestPhotonRecordView:
    def test_indexing(self):
        em = make_emitter()
        seq = sd.PulseSequence.single_laser(0.0, 1.0, 900.0, 160.0, 20_000)
        stream = sd.run_sequence(em, seq, seed=2)
        rec = stream[0]
        assert rec.global_time_ns == float(stream.time_ns[0])
        assert rec.pulse_index == int(stream.pulse_index[0])
        assert rec.origin in (0, 1)
