import numpy as np
import pytest

import specdiff as sd
from specdiff import EventStream


def sample_stream():
    em = sd.EmitterModel(sigma_inhom_hz=0.723e9, gamma_hom_hz=7.23e6,
                         lifetime_ns=150.0, a_per_pulse=0.045, beta=0.2)
    seq = sd.PulseSequence.two_colour(0.0, 0.5e9, 1.0, 900.0, 160.0, 40_000)
    return sd.run_sequence(em, seq, seed=5)


class TestBinaryFormat:
    def test_roundtrip(self, tmp_path):
        stream = sample_stream()
        path = tmp_path / "events.bin"
        stream.to_binary(path)
        back = EventStream.from_binary(path)
        assert back.n_pulses == stream.n_pulses
        np.testing.assert_array_equal(back.pulse_index, stream.pulse_index)
        np.testing.assert_array_equal(back.channel, stream.channel)
        np.testing.assert_array_equal(back.origin, stream.origin)
        np.testing.assert_allclose(back.time_ns, stream.time_ns, atol=0.5)
        back.validate()

    def test_layout(self, tmp_path):
        stream = sample_stream()
        path = tmp_path / "events.bin"
        stream.to_binary(path)
        raw = path.read_bytes()
        assert raw[:8] == b"SDIFFEV1"
        assert int(np.frombuffer(raw[8:12], "<u4")[0]) == 1
        assert int(np.frombuffer(raw[12:16], "<u4")[0]) == stream.n_pulses
        assert (len(raw) - 16) == 16 * len(stream)

    def test_deterministic_bytes(self, tmp_path):
        stream = sample_stream()
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        stream.to_binary(p1)
        stream.to_binary(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 24)
        with pytest.raises(ValueError):
            EventStream.from_binary(path)


class TestCsvFormat:
    def test_roundtrip(self, tmp_path):
        stream = sample_stream()
        path = tmp_path / "events.csv"
        stream.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "time_ns,pulse_index,channel,origin"
        back = EventStream.from_csv(path, n_pulses=stream.n_pulses)
        np.testing.assert_array_equal(back.pulse_index, stream.pulse_index)
        np.testing.assert_array_equal(back.channel, stream.channel)
        np.testing.assert_allclose(back.time_ns, stream.time_ns, atol=0.5)


class TestValidation:
    def test_column_lengths(self):
        with pytest.raises(ValueError):
            EventStream(time_ns=np.array([1.0, 2.0]),
                        pulse_index=np.array([0]),
                        channel=np.array([0]), origin=np.array([0]),
                        n_pulses=5)

    def test_unsorted_times_flagged(self):
        s = EventStream(time_ns=np.array([5.0, 1.0]),
                        pulse_index=np.array([0, 1]),
                        channel=np.array([0, 0]),
                        origin=np.array([0, 0]), n_pulses=5)
        with pytest.raises(ValueError):
            s.validate()

    def test_out_of_range_pulse_flagged(self):
        s = EventStream(time_ns=np.array([1.0]), pulse_index=np.array([9]),
                        channel=np.array([0]), origin=np.array([0]),
                        n_pulses=5)
        with pytest.raises(ValueError):
            s.validate()

    def test_channel_counts(self):
        stream = sample_stream()
        counts = stream.channel_counts()
        assert sum(counts.values()) == len(stream)
        assert set(counts) == {0, 1}


class TestStreamingWriters:
    def test_chunked_binary_matches_in_memory(self, tmp_path):
        from specdiff.events import BinaryEventWriter
        from specdiff.pulsesim import stream_sequence_events
        em = sd.EmitterModel(sigma_inhom_hz=0.723e9, gamma_hom_hz=7.23e6,
                             lifetime_ns=150.0, a_per_pulse=0.045, beta=0.2)
        seq = sd.PulseSequence.two_colour(0.0, 0.5e9, 1.0, 900.0, 160.0,
                                          30_000)
        stream = sd.run_sequence(em, seq, seed=5)
        whole = tmp_path / "whole.bin"
        stream.to_binary(whole)
        chunked = tmp_path / "chunked.bin"
        with BinaryEventWriter(chunked, seq.n_pulses) as w:
            for chunk in stream_sequence_events(em, seq, seed=5,
                                                chunk_repeats=4096):
                w.append(*chunk)
        assert whole.read_bytes() == chunked.read_bytes()

    def test_csv_writer_counts(self, tmp_path):
        from specdiff.events import CsvEventWriter
        path = tmp_path / "ev.csv"
        with CsvEventWriter(path) as w:
            w.append(np.array([1.2, 3.9]), np.array([0, 1]),
                     np.array([0, 1]), np.array([0, 1]))
        assert w.n_events == 2
        assert path.read_text().splitlines()[1] == "1,0,0,0"
