import math

import numpy as np
import pytest

import specdiff as sd
from specdiff import (
    CorrelationCurve,
    EmitterModel,
    EventStream,
    PulseSequence,
    g2_pulsed,
    run_sequence,
    two_colour_correlate,
)

SIGMA = 0.723e9


def make_emitter(**kw):
    base = dict(sigma_inhom_hz=SIGMA, gamma_hom_hz=SIGMA / 100,
                lifetime_ns=150.0, a_per_pulse=0.045)
    base.update(kw)
    return EmitterModel(**base)


def background_only_stream(n_pulses=300_000, rate_per_ns=4e-4, seed=3):
    em = make_emitter(bg_rate_per_ns=rate_per_ns)
    seq = PulseSequence.single_laser(0.0, 0.0, 900.0, 160.0, n_pulses,
                                     hbt_split=True)
    return run_sequence(em, seq, seed=seed)


class TestG2Pulsed:
    def test_poisson_stream_is_flat(self):
        stream = background_only_stream()
        curve = g2_pulsed(stream, long_lag_window=(200, 400))
        assert np.all(curve.stderr[curve.counts > 0] > 0)
        dev = np.abs(curve.values - 1.0)
        assert np.all(dev[curve.counts > 0] < 3 * curve.stderr[curve.counts > 0])
        assert curve.values[0] == pytest.approx(1.0, abs=3 * curve.stderr[0])

    def test_ideal_single_emitter_antibunches(self):
        # frozen spectral environment, no background: at most one photon
        # per pulse, so zero-lag cross-detector pairs never occur
        em = make_emitter(a_per_pulse=0.0, gamma_hom_hz=0.3 * SIGMA)
        seq = PulseSequence.single_laser(0.0, 1.0, 900.0, 160.0, 250_000,
                                         hbt_split=True)
        stream = run_sequence(em, seq, seed=12)
        assert len(stream) > 4000
        curve = g2_pulsed(stream, long_lag_window=(200, 400))
        assert curve.values[0] == 0.0
        assert curve.counts[0] == 0
        inner = (curve.lags >= 1) & (curve.counts > 0)
        z = (curve.values[inner] - 1.0) / curve.stderr[inner]
        assert np.max(np.abs(z)) < 3.5

    def test_antibunching_with_background(self):
        # background coincidences put g2(0) between 0 and 1
        em = make_emitter(a_per_pulse=0.0, gamma_hom_hz=0.3 * SIGMA, beta=0.15)
        seq = PulseSequence.single_laser(0.0, 1.0, 900.0, 160.0, 400_000,
                                         hbt_split=True)
        stream = run_sequence(em, seq, seed=14)
        curve = g2_pulsed(stream, long_lag_window=(200, 400))
        assert 0.0 < curve.values[0] < 0.6

    def test_diffusing_emitter_recovers_rate(self):
        em = make_emitter(a_per_pulse=0.015)
        seq = PulseSequence.single_laser(0.0, 3.0, 900.0, 160.0, 3_000_000)
        stream = run_sequence(em, seq, seed=7)
        curve = g2_pulsed(stream, long_lag_window=(200, 400))
        pos = curve.lags >= 1
        sub = CorrelationCurve(curve.lags[pos], curve.values[pos],
                               curve.stderr[pos], curve.normalization,
                               curve.counts[pos])
        fit = sd.fit_A([(sub, 0.0, 0.0)], beta=0.0)
        assert fit.converged
        assert fit.params["A"] == pytest.approx(0.045, rel=0.10)

    def test_positive_correlation_at_small_lags(self):
        em = make_emitter(a_per_pulse=0.015)
        seq = PulseSequence.single_laser(0.0, 3.0, 900.0, 160.0, 1_000_000)
        stream = run_sequence(em, seq, seed=9)
        curve = g2_pulsed(stream, long_lag_window=(200, 400))
        small = (curve.lags >= 1) & (curve.lags <= 5)
        assert np.all(curve.values[small] - 3 * curve.stderr[small] > 1.0)

    def test_rejects_bad_inputs(self):
        stream = background_only_stream(n_pulses=1000)
        with pytest.raises(ValueError):
            g2_pulsed(stream, long_lag_window=(400, 200))
        with pytest.raises(ValueError):
            g2_pulsed(stream, long_lag_window=(200, 2000))
        tiny = EventStream(time_ns=np.array([1.0]), pulse_index=np.array([0]),
                           channel=np.array([0]), origin=np.array([0]),
                           n_pulses=10)
        with pytest.raises(ValueError):
            g2_pulsed(tiny, long_lag_window=(2, 5), max_lag=5)


class TestTwoColour:
    def test_degenerate_case_matches_g2(self):
        # same frequency on both channels: the cross-correlation at odd
        # lags estimates the same quantity as the all-pair g2
        em = make_emitter(a_per_pulse=0.02)
        seq = PulseSequence.two_colour(0.0, 0.0, 3.0, 900.0, 160.0, 1_000_000)
        stream = run_sequence(em, seq, seed=21)
        tc = two_colour_correlate(stream, 0, 1, long_lag_window=(201, 401),
                                  max_lag=401)
        g2 = g2_pulsed(stream, long_lag_window=(200, 400), max_lag=401)
        odd = np.arange(1, 120, 2)
        for n in odd:
            i_tc = np.where(tc.lags == n)[0][0]
            i_g2 = np.where(g2.lags == n)[0][0]
            if tc.counts[i_tc] == 0:
                continue
            diff = abs(tc.values[i_tc] - g2.values[i_g2])
            assert diff < 3 * math.hypot(tc.stderr[i_tc], g2.stderr[i_g2])

    def test_anticorrelation_depth_ordering(self):
        # a larger frequency separation digs a deeper early-lag hole
        em = make_emitter(a_per_pulse=0.015)
        depths = {}
        for i, dsig in enumerate((0.97, 1.46)):
            seq = PulseSequence.two_colour(0.0, dsig * SIGMA, 3.0, 900.0,
                                           160.0, 2_000_000)
            stream = run_sequence(em, seq, seed=33 + i)
            curve = two_colour_correlate(stream, 0, 1,
                                         long_lag_window=(200, 400))
            early = (curve.lags >= 1) & (curve.lags <= 9)
            lam_flat = curve.normalization * (seq.n_pulses - curve.lags[early])
            depths[dsig] = curve.counts[early].sum() / lam_flat.sum()
        assert depths[1.46] < depths[0.97] < 1.0

    def test_consistency_with_model_at_four_detunings(self):
        # estimator vs closed-form correlation at the four separations,
        # within 3 stderr at every populated lag
        a_true = 0.045
        power = 3.0
        em = make_emitter(a_per_pulse=a_true / power, beta=0.1)
        from specdiff.emitter import background_rate_per_ns
        lam_win = background_rate_per_ns(em, power, 0.0, 1060.0) * 1060.0
        worst = 0.0
        for i, dsig in enumerate((0.0, 0.49, 0.97, 1.46)):
            seq = PulseSequence.two_colour(0.0, dsig * SIGMA, power, 900.0,
                                           160.0, 2_500_000)
            stream = run_sequence(em, seq, seed=355 + i)
            curve = two_colour_correlate(stream, 0, 1,
                                         long_lag_window=(151, 251),
                                         max_lag=251)
            cc = stream.channel_counts()
            nh = seq.n_pulses / 2
            beta = sd.compute_beta(cc[0] / nh - lam_win, cc[1] / nh - lam_win,
                                   lam_win)
            keep = (curve.lags >= 1) & (curve.lags <= 149) & (curve.counts > 0)
            model = sd.correlation_model(0.0, dsig, a_true, beta,
                                         curve.lags[keep])
            z = np.abs(curve.values[keep] - model) / curve.stderr[keep]
            worst = max(worst, float(z.max()))
        assert worst < 3.0

    def test_time_reversal_symmetry(self):
        em = make_emitter(a_per_pulse=0.02, beta=0.1)
        seq = PulseSequence.two_colour(0.0, 0.7 * SIGMA, 2.0, 900.0, 160.0,
                                       500_000)
        stream = run_sequence(em, seq, seed=61)
        ab = two_colour_correlate(stream, 0, 1, long_lag_window=(100, 200),
                                  max_lag=200)
        ba = two_colour_correlate(stream, 1, 0, long_lag_window=(100, 200),
                                  max_lag=200)
        np.testing.assert_array_equal(ab.counts, ba.counts[::-1])
        np.testing.assert_allclose(ab.values, ba.values[::-1], rtol=1e-9,
                                   atol=1e-12)

    def test_normalization_invariant_under_thinning(self):
        em = make_emitter(a_per_pulse=0.02)
        seq = PulseSequence.two_colour(0.0, 0.0, 3.0, 900.0, 160.0, 2_000_000)
        stream = run_sequence(em, seq, seed=71)
        full = two_colour_correlate(stream, 0, 1, long_lag_window=(150, 300),
                                    max_lag=300)
        keep = np.random.default_rng(5).random(len(stream)) < 0.5
        thin_stream = EventStream(stream.time_ns[keep],
                                  stream.pulse_index[keep],
                                  stream.channel[keep], stream.origin[keep],
                                  stream.n_pulses)
        thin = two_colour_correlate(thin_stream, 0, 1,
                                    long_lag_window=(150, 300), max_lag=300)
        mask = (full.counts > 3) & (thin.counts > 3) & (full.lags >= 1)
        z = (full.values[mask] - thin.values[mask]) / np.hypot(
            full.stderr[mask], thin.stderr[mask])
        assert np.max(np.abs(z)) < 3.5

    def test_interleaved_structure_only_odd_lags(self):
        em = make_emitter(a_per_pulse=0.02)
        seq = PulseSequence.two_colour(0.0, 0.5 * SIGMA, 2.0, 900.0, 160.0,
                                       300_000)
        stream = run_sequence(em, seq, seed=81)
        curve = two_colour_correlate(stream, 0, 1, long_lag_window=(100, 200))
        even = (curve.lags % 2 == 0)
        assert curve.counts[even].sum() == 0

    def test_missing_channel_rejected(self):
        stream = background_only_stream(n_pulses=5000)
        with pytest.raises(ValueError):
            two_colour_correlate(stream, 0, 7, long_lag_window=(100, 200))

    def test_empty_window_rejected(self):
        em = make_emitter(a_per_pulse=0.02)
        seq = PulseSequence.two_colour(0.0, 0.0, 1.0, 900.0, 160.0, 2_000)
        stream = run_sequence(em, seq, seed=91)
        with pytest.raises(ValueError):
            two_colour_correlate(stream, 0, 1, long_lag_window=(100, 100))


class TestCurveIO:
    def test_csv_roundtrip(self, tmp_path):
        curve = CorrelationCurve(
            lags=np.array([1, 2, 3]), values=np.array([0.5, 1.0, 1.5]),
            stderr=np.array([0.05, 0.1, 0.2]), normalization=2.0,
            counts=np.array([100, 100, 56]),
        )
        path = tmp_path / "curve.csv"
        curve.to_csv(path)
        text = path.read_text().splitlines()
        assert text[0] == "lag,value,stderr"
        back = CorrelationCurve.from_csv(path)
        np.testing.assert_array_equal(back.lags, curve.lags)
        np.testing.assert_allclose(back.values, curve.values, rtol=1e-15)
        np.testing.assert_allclose(back.stderr, curve.stderr, rtol=1e-15)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            CorrelationCurve(lags=np.array([1, 2]), values=np.array([1.0]),
                             stderr=np.array([0.1]), normalization=1.0,
                             counts=np.array([5]))


class TestBootstrapErrors:
    def test_bootstrap_matches_poisson_on_uncorrelated(self):
        stream = background_only_stream(n_pulses=200_000)
        kw = dict(long_lag_window=(150, 300), max_lag=300)
        cp = g2_pulsed(stream, **kw)
        cb = g2_pulsed(stream, stderr_method="bootstrap", bootstrap_seed=1,
                       **kw)
        np.testing.assert_allclose(cb.values, cp.values)
        m = (cp.lags >= 1) & (cp.counts > 10)
        ratio = np.median(cb.stderr[m] / cp.stderr[m])
        assert 0.7 < ratio < 1.4

    def test_bootstrap_two_colour(self):
        em = make_emitter(a_per_pulse=0.01, beta=0.1)
        seq = PulseSequence.two_colour(0.0, 0.3 * SIGMA, 2.0, 900.0, 160.0,
                                       200_000)
        stream = run_sequence(em, seq, seed=9)
        kw = dict(long_lag_window=(150, 300), max_lag=300)
        tp = two_colour_correlate(stream, 0, 1, **kw)
        tb = two_colour_correlate(stream, 0, 1, stderr_method="bootstrap",
                                  **kw)
        m = tp.counts > 10
        assert 0.6 < np.median(tb.stderr[m] / tp.stderr[m]) < 1.6

    def test_unknown_method_rejected(self):
        stream = background_only_stream(n_pulses=5000)
        with pytest.raises(ValueError):
            g2_pulsed(stream, long_lag_window=(100, 200),
                      stderr_method="jackknife")

    def test_too_short_stream_rejected(self):
        stream = background_only_stream(n_pulses=900)
        with pytest.raises(ValueError):
            g2_pulsed(stream, long_lag_window=(100, 300), max_lag=300,
                      stderr_method="bootstrap")
