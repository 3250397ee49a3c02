"""Normalized pulse-resolved correlation estimators.

Coincidences are histogrammed against pulse separation and normalized to
the mean rate over a long-lag window where the emitter has fully
rethermalized.  The zero-lag bin follows the Hanbury Brown-Twiss
convention: only pairs on distinct detector channels count (falling back
to same-channel pairs when the stream carries a single channel), scaled
so an uncorrelated stream reads 1 there too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .backend import USE_NUMBA, njit
from .events import EventStream

__all__ = ["CorrelationCurve", "g2_pulsed", "two_colour_correlate"]


@dataclass
class CorrelationCurve:
    """Normalized coincidence rate versus pulse separation."""

    lags: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    normalization: float
    counts: np.ndarray

    def __post_init__(self):
        n = len(self.lags)
        if not (len(self.values) == len(self.stderr) == len(self.counts) == n):
            raise ValueError("curve columns must have equal length")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("lag,value,stderr\n")
            for lag, v, s in zip(self.lags, self.values, self.stderr):
                fh.write(f"{int(lag)},{float(v)!r},{float(s)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "CorrelationCurve":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.size == 0:
            raise ValueError(f"no correlation rows in {path}")
        snr = np.zeros(data.shape[0])
        np.divide(data[:, 1], data[:, 2], out=snr, where=data[:, 2] > 0)
        return cls(lags=data[:, 0].astype(np.int64), values=data[:, 1],
                   stderr=data[:, 2], normalization=float("nan"),
                   counts=np.round(snr * snr).astype(np.int64))


@njit(cache=True, nogil=True)
def _pair_hist_nb(pulse, chan, max_lag, hist, hist0):
    """All-pair histogram over pulse separations 1..max_lag plus the
    zero-lag split into cross-channel (hist0[0]) and same-channel
    (hist0[1]) pairs.  `pulse` must be nondecreasing."""
    n = pulse.size
    for i in range(n):
        j = i + 1
        while j < n:
            lag = pulse[j] - pulse[i]
            if lag > max_lag:
                break
            if lag == 0:
                if chan[j] != chan[i]:
                    hist0[0] += 1
                else:
                    hist0[1] += 1
            else:
                hist[lag] += 1
            j += 1


def _pair_hist_np(pulse, chan, max_lag):
    """Vectorized twin of _pair_hist_nb."""
    n = pulse.size
    hist = np.zeros(max_lag + 1, dtype=np.int64)
    hist0 = np.zeros(2, dtype=np.int64)
    if n < 2:
        return hist, hist0
    starts = np.searchsorted(pulse, pulse, side="right")
    idx = np.arange(n)
    # same-pulse pairs: j in (i, starts[i])
    c0 = starts - idx - 1
    if c0.sum():
        rows = np.repeat(idx, c0)
        offs = np.arange(int(c0.sum())) - np.repeat(np.cumsum(c0) - c0, c0)
        js = rows + 1 + offs
        cross = chan[js] != chan[rows]
        hist0[0] = int(cross.sum())
        hist0[1] = int((~cross).sum())
    # lagged pairs: j in [starts[i], end_i) with pulse[j] - pulse[i] <= max_lag
    ends = np.searchsorted(pulse, pulse + max_lag, side="right")
    c1 = ends - starts
    if c1.sum():
        rows = np.repeat(idx, c1)
        offs = np.arange(int(c1.sum())) - np.repeat(np.cumsum(c1) - c1, c1)
        js = starts[rows] + offs
        lags = pulse[js] - pulse[rows]
        hist = np.bincount(lags, minlength=max_lag + 1).astype(np.int64)
        hist[0] = 0
    return hist, hist0


def _pair_hist(pulse, chan, max_lag):
    if USE_NUMBA:
        hist = np.zeros(max_lag + 1, dtype=np.int64)
        hist0 = np.zeros(2, dtype=np.int64)
        _pair_hist_nb(pulse, chan, max_lag, hist, hist0)
        return hist, hist0
    return _pair_hist_np(pulse, chan, max_lag)


def _auto_blocks(n_pulses, max_lag, requested):
    """Contiguous block count for the resampling error estimate; blocks
    must be much longer than max_lag so dropped boundary pairs stay few."""
    largest = n_pulses // (2 * max_lag) if max_lag else requested
    n_blocks = max(4, min(requested, largest))
    if n_pulses < 4 * max_lag:
        raise ValueError(
            "stream too short for block-bootstrap errors at this max_lag"
        )
    return n_blocks


def _bootstrap_stderr(block_hists, block_pairs, window_mask, values_scale,
                      n_resamples, seed):
    """Bootstrap the normalized curve over contiguous pulse blocks.

    block_hists: (B, L) coincidence counts per block; block_pairs: (B, L)
    pulse-pair opportunities per block.  Each resample redraws blocks
    with replacement and renormalizes to its own plateau, so plateau
    uncertainty is included (unlike the per-bin Poisson errors).
    """
    rng_local = np.random.default_rng(seed)
    n_blocks = block_hists.shape[0]
    out = np.empty((n_resamples, block_hists.shape[1]))
    for r in range(n_resamples):
        pick = rng_local.integers(0, n_blocks, size=n_blocks)
        h = block_hists[pick].sum(axis=0)
        pc = block_pairs[pick].sum(axis=0)
        rate = np.divide(h, pc, out=np.zeros_like(out[r]), where=pc > 0)
        plw = rate[window_mask & (h > 0)]
        plateau = plw.mean() if plw.size else np.nan
        out[r] = rate * values_scale / plateau
    return np.nanstd(out, axis=0, ddof=1)


def _check_window(long_lag_window, max_lag):
    w0, w1 = int(long_lag_window[0]), int(long_lag_window[1])
    if not (1 <= w0 < w1 <= max_lag):
        raise ValueError(
            f"long-lag window {long_lag_window} must satisfy 1 <= lo < hi <= "
            f"max_lag ({max_lag})"
        )
    return w0, w1


def _sorted_by_pulse(stream: EventStream):
    order = np.argsort(stream.pulse_index, kind="stable")
    return stream.pulse_index[order], stream.channel[order]


def g2_pulsed(stream: EventStream, long_lag_window=(200, 400),
              max_lag: int = None, stderr_method: str = "poisson",
              n_bootstrap: int = 200, bootstrap_blocks: int = 32,
              bootstrap_seed: int = 0) -> CorrelationCurve:
    """Pulsed second-order correlation versus pulse separation.

    All detection pairs enter the nonzero-lag bins regardless of channel;
    the plateau over long_lag_window normalizes the curve to 1 at long
    separations.  stderr_method "poisson" (default) takes per-bin
    counting errors; "bootstrap" resamples contiguous pulse blocks,
    which also propagates plateau uncertainty.
    """
    if stderr_method not in ("poisson", "bootstrap"):
        raise ValueError(f"unknown stderr_method {stderr_method!r}")
    if len(stream) < 2:
        raise ValueError("need at least two events to correlate")
    if max_lag is None:
        max_lag = int(long_lag_window[1])
    w0, w1 = _check_window(long_lag_window, max_lag)
    if max_lag >= stream.n_pulses:
        raise ValueError("max_lag must be below the pulse count")
    pulse, chan = _sorted_by_pulse(stream)
    hist, hist0 = _pair_hist(pulse, chan, max_lag)

    n_pulses = stream.n_pulses
    lags = np.arange(max_lag + 1)
    pair_count = (n_pulses - lags).astype(np.float64)
    rate = hist / pair_count
    # bins that are structurally empty (e.g. forbidden lag parities of an
    # interleaved sequence) carry no counts and are excluded from the
    # plateau; for populated bins the exclusion bias is O(lam e^-lam)
    plw = rate[w0:w1 + 1][hist[w0:w1 + 1] > 0]
    if plw.size == 0:
        raise ValueError("no coincidences in the long-lag window")
    plateau = float(plw.mean())

    counts = hist.copy()
    labels, per_chan = np.unique(chan, return_counts=True)
    if labels.size >= 2:
        counts[0] = hist0[0]
        top = np.sort(per_chan)[-2:]
        kappa = (top[0] * top[1]) / float(chan.size) ** 2
    else:
        counts[0] = hist0[1]
        kappa = 0.5
    rate[0] = counts[0] / pair_count[0] / kappa if kappa > 0 else 0.0

    values = rate / plateau
    if stderr_method == "bootstrap":
        n_blocks = _auto_blocks(n_pulses, max_lag, bootstrap_blocks)
        edges = np.linspace(0, n_pulses, n_blocks + 1).astype(np.int64)
        bh = np.zeros((n_blocks, max_lag + 1), dtype=np.int64)
        bp = np.zeros((n_blocks, max_lag + 1))
        for b in range(n_blocks):
            i0, i1 = np.searchsorted(pulse, edges[b]), np.searchsorted(
                pulse, edges[b + 1])
            h, _ = _pair_hist(pulse[i0:i1], chan[i0:i1], max_lag)
            bh[b] = h
            bp[b] = np.maximum(edges[b + 1] - edges[b] - lags, 0)
        window_mask = (lags >= w0) & (lags <= w1)
        stderr = _bootstrap_stderr(bh, bp, window_mask, 1.0, n_bootstrap,
                                   bootstrap_seed)
        stderr[0] = values[0] / math.sqrt(counts[0]) if counts[0] > 0 else 0.0
    else:
        stderr = np.where(counts > 0,
                          values / np.sqrt(np.maximum(counts, 1)), 0.0)
    return CorrelationCurve(lags=lags, values=values, stderr=stderr,
                            normalization=plateau, counts=counts)


def _tc_hist(pa, pb, max_lag, same_channel):
    """Signed-lag cross histogram between two sorted pulse-index sets."""
    size = 2 * max_lag + 1
    lo = np.searchsorted(pb, pa - max_lag, side="left")
    hi = np.searchsorted(pb, pa + max_lag, side="right")
    c = hi - lo
    total = int(c.sum())
    if not total:
        return np.zeros(size, dtype=np.int64)
    rows = np.repeat(np.arange(pa.size), c)
    offs = np.arange(total) - np.repeat(np.cumsum(c) - c, c)
    js = lo[rows] + offs
    dl = pb[js] - pa[rows]
    if same_channel:
        dl = dl[js != rows]
    hist = np.bincount(dl + max_lag, minlength=size).astype(np.int64)
    if same_channel:
        hist[max_lag] = 0  # same-channel zero lag is excluded
    return hist


def two_colour_correlate(stream: EventStream, channel_a: int, channel_b: int,
                         long_lag_window=(200, 400), max_lag: int = None,
                         stderr_method: str = "poisson",
                         n_bootstrap: int = 200, bootstrap_blocks: int = 32,
                         bootstrap_seed: int = 0) -> CorrelationCurve:
    """Cross-correlation between two detection channels versus signed
    pulse separation (positive lag: the channel_b event comes later).

    For the interleaved two-frequency sequence only alternating pulse
    pairs carry counts, so odd lags hold the physics.  The zero-lag bin
    uses distinct channels by construction.  stderr_method as in
    g2_pulsed.
    """
    if stderr_method not in ("poisson", "bootstrap"):
        raise ValueError(f"unknown stderr_method {stderr_method!r}")
    if max_lag is None:
        max_lag = int(long_lag_window[1])
    w0, w1 = _check_window(long_lag_window, max_lag)
    if max_lag >= stream.n_pulses:
        raise ValueError("max_lag must be below the pulse count")
    present = set(stream.channel_counts())
    for label, name in ((channel_a, "channel_a"), (channel_b, "channel_b")):
        if label not in present:
            raise ValueError(f"{name}={label} has no events in the stream")

    order = np.argsort(stream.pulse_index, kind="stable")
    pulse = stream.pulse_index[order]
    chan = stream.channel[order]
    pa = pulse[chan == channel_a]
    pb = pulse[chan == channel_b]

    lags = np.arange(-max_lag, max_lag + 1)
    hist = _tc_hist(pa, pb, max_lag, channel_a == channel_b)

    n_pulses = stream.n_pulses
    pair_count = (n_pulses - np.abs(lags)).astype(np.float64)
    rate = hist / pair_count
    window_mask = (np.abs(lags) >= w0) & (np.abs(lags) <= w1) & (hist > 0)
    if not window_mask.any():
        raise ValueError("no coincidences in the long-lag window")
    plateau = float(rate[window_mask].mean())
    values = rate / plateau
    if stderr_method == "bootstrap":
        n_blocks = _auto_blocks(n_pulses, max_lag, bootstrap_blocks)
        edges = np.linspace(0, n_pulses, n_blocks + 1).astype(np.int64)
        bh = np.zeros((n_blocks, lags.size), dtype=np.int64)
        bp = np.zeros((n_blocks, lags.size))
        for b in range(n_blocks):
            a0, a1 = np.searchsorted(pa, edges[b]), np.searchsorted(pa, edges[b + 1])
            b0, b1 = np.searchsorted(pb, edges[b]), np.searchsorted(pb, edges[b + 1])
            bh[b] = _tc_hist(pa[a0:a1], pb[b0:b1], max_lag,
                             channel_a == channel_b)
            bp[b] = np.maximum(edges[b + 1] - edges[b] - np.abs(lags), 0)
        win = (np.abs(lags) >= w0) & (np.abs(lags) <= w1)
        stderr = _bootstrap_stderr(bh, bp, win, 1.0, n_bootstrap,
                                   bootstrap_seed)
    else:
        stderr = np.where(hist > 0, values / np.sqrt(np.maximum(hist, 1)), 0.0)
    return CorrelationCurve(lags=lags, values=values, stderr=stderr,
                            normalization=plateau, counts=hist)
