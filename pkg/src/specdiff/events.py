"""Time-tagged, pulse-indexed detection records and their file formats.

Binary layout: a 16-byte header (8-byte magic, u32 format version, u32
pulse count) followed by little-endian 16-byte records
(u64 time_ns, u32 pulse_index, u16 channel, u8 origin, u8 pad).
Times are rounded to integer nanoseconds on write; in memory they keep
the sub-ns resolution of the lifetime draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PhotonRecord", "EventStream", "BinaryEventWriter",
           "CsvEventWriter", "ORIGIN_SIGNAL", "ORIGIN_BACKGROUND"]

ORIGIN_SIGNAL = 0
ORIGIN_BACKGROUND = 1


@dataclass(frozen=True)
class PhotonRecord:
    """One detection event.  `origin` is simulation truth (signal or
    background) and must stay hidden from estimators."""

    global_time_ns: float
    pulse_index: int
    channel_label: int
    origin: int

_MAGIC = b"SDIFFEV1"
_VERSION = 1

_RECORD_DTYPE = np.dtype([
    ("time_ns", "<u8"),
    ("pulse_index", "<u4"),
    ("channel", "<u2"),
    ("origin", "u1"),
    ("pad", "u1"),
])


@dataclass
class EventStream:
    """Columnar photon records, sorted by arrival time.

    `origin` tags each record as emitter signal or background; it is
    simulation truth for validation and must not inform estimators.
    """

    time_ns: np.ndarray
    pulse_index: np.ndarray
    channel: np.ndarray
    origin: np.ndarray
    n_pulses: int

    def __post_init__(self):
        self.time_ns = np.asarray(self.time_ns, dtype=np.float64)
        self.pulse_index = np.asarray(self.pulse_index, dtype=np.int64)
        self.channel = np.asarray(self.channel, dtype=np.int16)
        self.origin = np.asarray(self.origin, dtype=np.uint8)
        n = self.time_ns.size
        if not (self.pulse_index.size == self.channel.size == self.origin.size == n):
            raise ValueError("event columns must have equal length")
        if self.n_pulses < 1:
            raise ValueError(f"n_pulses must be >= 1, got {self.n_pulses}")

    def __len__(self) -> int:
        return self.time_ns.size

    def __getitem__(self, i: int) -> PhotonRecord:
        return PhotonRecord(
            global_time_ns=float(self.time_ns[i]),
            pulse_index=int(self.pulse_index[i]),
            channel_label=int(self.channel[i]),
            origin=int(self.origin[i]),
        )

    def validate(self) -> None:
        """Check the record invariants (sortedness, index ranges)."""
        if len(self) == 0:
            return
        if np.any(np.diff(self.time_ns) < 0):
            raise ValueError("records must be sorted by time")
        if self.pulse_index.min() < 0 or self.pulse_index.max() >= self.n_pulses:
            raise ValueError("pulse_index out of range")
        if np.any((self.origin != ORIGIN_SIGNAL) & (self.origin != ORIGIN_BACKGROUND)):
            raise ValueError("origin must be 0 (signal) or 1 (background)")

    def channel_counts(self) -> dict:
        """Records per channel label."""
        labels, counts = np.unique(self.channel, return_counts=True)
        return {int(l): int(c) for l, c in zip(labels, counts)}

    # --- binary format ------------------------------------------------

    @staticmethod
    def _pack(time_ns, pulse_index, channel, origin) -> np.ndarray:
        rec = np.empty(len(time_ns), dtype=_RECORD_DTYPE)
        rec["time_ns"] = np.round(np.asarray(time_ns)).astype(np.uint64)
        rec["pulse_index"] = np.asarray(pulse_index).astype(np.uint32)
        rec["channel"] = np.asarray(channel).astype(np.uint16)
        rec["origin"] = np.asarray(origin).astype(np.uint8)
        rec["pad"] = 0
        return rec

    def to_binary(self, path) -> None:
        with BinaryEventWriter(path, self.n_pulses) as writer:
            writer.append(self.time_ns, self.pulse_index, self.channel,
                          self.origin)

    @classmethod
    def from_binary(cls, path) -> "EventStream":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != _MAGIC:
                raise ValueError(f"not an event-stream file (magic {magic!r})")
            version = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
            if version != _VERSION:
                raise ValueError(f"unsupported format version {version}")
            n_pulses = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
            rec = np.fromfile(fh, dtype=_RECORD_DTYPE)
        return cls(
            time_ns=rec["time_ns"].astype(np.float64),
            pulse_index=rec["pulse_index"].astype(np.int64),
            channel=rec["channel"].astype(np.int16),
            origin=rec["origin"].copy(),
            n_pulses=n_pulses,
        )

    # --- CSV ------------------------------------------------------------

    def to_csv(self, path) -> None:
        with CsvEventWriter(path) as writer:
            writer.append(self.time_ns, self.pulse_index, self.channel,
                          self.origin)

    @classmethod
    def from_csv(cls, path, n_pulses: int) -> "EventStream":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2,
                          dtype=np.float64)
        if data.size == 0:
            data = data.reshape(0, 4)
        return cls(
            time_ns=data[:, 0],
            pulse_index=data[:, 1].astype(np.int64),
            channel=data[:, 2].astype(np.int16),
            origin=data[:, 3].astype(np.uint8),
            n_pulses=n_pulses,
        )


class BinaryEventWriter:
    """Incremental writer for the binary format; memory stays bounded by
    the chunk size regardless of run length."""

    def __init__(self, path, n_pulses: int):
        self._fh = open(path, "wb")
        self._fh.write(_MAGIC)
        self._fh.write(np.uint32(_VERSION).tobytes())
        self._fh.write(np.uint32(n_pulses).tobytes())
        self.n_events = 0

    def append(self, time_ns, pulse_index, channel, origin) -> None:
        rec = EventStream._pack(time_ns, pulse_index, channel, origin)
        rec.tofile(self._fh)
        self.n_events += rec.size

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class CsvEventWriter:
    """Incremental writer for the CSV export."""

    def __init__(self, path):
        self._fh = open(path, "w")
        self._fh.write("time_ns,pulse_index,channel,origin\n")
        self.n_events = 0

    def append(self, time_ns, pulse_index, channel, origin) -> None:
        t = np.round(np.asarray(time_ns)).astype(np.uint64)
        for i in range(t.size):
            self._fh.write(
                f"{t[i]},{int(pulse_index[i])},{int(channel[i])},{int(origin[i])}\n"
            )
        self.n_events += t.size

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
