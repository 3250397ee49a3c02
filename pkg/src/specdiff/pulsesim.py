"""Event-stream simulation: pulse sequences, resonance-check runs, and
excited-state spin mixing.

Per pulse the simulator (1) advances the emitter detuning by one exact
mean-reverting kernel step with rate A(P) plus any dark-interval
contribution from the preceding gap, (2) emits at most one signal photon
with probability p_exc * eta_det, time-stamped pulse start plus an
exponential lifetime delay and kept only if it lands in the detection
window, and (3) adds Poisson background counts across the window.

Randomness is counter-based: draw (key, pulse*32 + slot) is a pure
function, so the jitted scalar kernel and the vectorized numpy kernel
consume identical draws and chunk boundaries, chunk sizes, and thread
scheduling cannot change the result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.signal import lfilter

from . import rng
from .backend import USE_NUMBA, njit
from .emitter import (
    EmitterModel,
    PulseSequence,
    SpinMixModel,
    background_rate_per_ns,
)
from .events import EventStream

__all__ = [
    "run_sequence",
    "stream_sequence_events",
    "RCOutcomes",
    "run_rc_sequence",
    "rc_ple_scan",
    "SpinMixResult",
    "simulate_spin_mixing",
    "mixing_populations",
]

_SLOTS = 32       # draw slots per pulse (see kernel docstrings)
_BG_CAP = 8       # background counts per window are capped here
_STREAM_MAIN = 0
_STREAM_INIT = 1


def _poisson_cdf(lam: float, kmax: int) -> np.ndarray:
    """P(X <= k) for k = 0..kmax."""
    if lam < 0:
        raise ValueError(f"Poisson rate must be >= 0, got {lam}")
    pmf = math.exp(-lam)
    out = np.empty(kmax + 1)
    cdf = pmf
    out[0] = cdf
    for k in range(1, kmax + 1):
        pmf *= lam / k
        cdf += pmf
        out[k] = min(cdf, 1.0)
    return out


class _SeqTables:
    """Per-position kernel arrays for one repeating pulse pattern."""

    def __init__(self, emitter: EmitterModel, seq: PulseSequence):
        L = seq.pattern_length
        sigma = emitter.sigma_inhom_hz
        g = emitter.gamma_sigma

        a_step = np.empty(L)
        d = np.empty(L)
        amp = np.empty(L)
        invw = np.empty(L)
        poff = np.empty(L)
        woff = np.empty(L)
        wlen = np.empty(L)
        chan = np.empty(L, dtype=np.int16)
        lam = np.empty(L)

        p0 = seq.pulses[0]
        w0_off, w0_len = seq.window_for(p0)
        bg_ns = background_rate_per_ns(emitter, p0.power, w0_off, w0_len)

        t_cursor = 0.0
        for j, pulse in enumerate(seq.pulses):
            # diffusion before this pulse's emission: the pulse itself
            # plus the dark gap after the previous pulse (cyclic; the
            # phantom gap before global pulse 0 is invisible because the
            # initial detuning is stationary)
            prev_dark = seq.pulses[(j - 1) % L].dark_after_ns
            a_step[j] = (emitter.a_at_power(pulse.power)
                         + emitter.alpha_dark_per_us * prev_dark * 1e-3)
            d[j] = pulse.frequency_offset_hz / sigma
            s_pow = pulse.power
            amp[j] = (emitter.p_max * (s_pow / (1.0 + s_pow)) * emitter.eta_det
                      if s_pow > 0 else 0.0)
            width = g * math.sqrt(1.0 + s_pow)
            invw[j] = 2.0 / width
            poff[j] = t_cursor
            woff[j], wlen[j] = seq.window_for(pulse)
            chan[j] = pulse.channel_label
            lam[j] = bg_ns * wlen[j]
            t_cursor += pulse.period_ns

        if np.any(lam > 1.0):
            raise ValueError(
                "background rate exceeds one expected count per window; "
                f"the per-window cap of {_BG_CAP} would bias the stream"
            )
        self.c = np.exp(-a_step)
        self.snoise = np.sqrt(-np.expm1(-2.0 * a_step))
        self.d = d
        self.amp = amp
        self.invw = invw
        self.poff = poff
        self.woff = woff
        self.wlen = wlen
        self.chan = chan
        self.bg_cdf = np.stack([_poisson_cdf(l, _BG_CAP) for l in lam])
        self.period = seq.period_ns
        self.lifetime = emitter.lifetime_ns
        self.hbt = seq.hbt_split


def _bg_counts(key: int, gp0: int, n: int, tables: _SeqTables) -> np.ndarray:
    """Background counts per pulse (slot 3), shared by both kernels."""
    L = tables.c.size
    counters = (np.arange(gp0, gp0 + n, dtype=np.uint64) * np.uint64(_SLOTS)
                + np.uint64(3))
    u = rng.u01_array(key, counters)
    j = np.tile(np.arange(L), n // L)
    counts = np.sum(u[:, None] >= tables.bg_cdf[j], axis=1)
    return np.minimum(counts, _BG_CAP).astype(np.int8)


@njit(cache=True, nogil=True)
def _chain_boundaries_nb(key, n, delta_in, c, snoise, chunk_pulses, out):
    """Detuning at every chunk boundary (same slot-0 draws the chunk
    kernels will consume), so chunks can be filled in parallel without
    changing any result."""
    L = c.size
    delta = delta_in
    for i in range(n):
        if i % chunk_pulses == 0:
            out[i // chunk_pulses] = delta
        j = i % L
        delta = c[j] * delta + snoise[j] * rng.normal(
            key, np.uint64(i * _SLOTS))
    return delta


@njit(cache=True, nogil=True)
def _sim_chunk_nb(key, gp0, n, delta_in, c, snoise, d, amp, invw, poff, woff,
                  wlen, chan, period, lifetime, hbt, bg_counts,
                  out_t, out_p, out_c, out_o, out_delta):
    """Scalar per-pulse loop.  Slot layout per pulse: 0 noise, 1 detect,
    2 emission delay, 3 background count (precomputed), 4..11 background
    times, 12 signal detector, 13..20 background detectors."""
    L = c.size
    delta = delta_in
    cursor = 0
    for i in range(n):
        gp = gp0 + i
        j = gp % L
        base = gp * _SLOTS
        delta = c[j] * delta + snoise[j] * rng.normal(key, np.uint64(base))
        out_delta[i] = delta
        t0 = (gp // L) * period + poff[j]
        u = rng.u01(key, np.uint64(base + 1))
        dev = (d[j] - delta) * invw[j]
        p = amp[j] / (1.0 + dev * dev)
        if u < p:
            e = -lifetime * math.log(rng.u01(key, np.uint64(base + 2)))
            if woff[j] <= e < woff[j] + wlen[j]:
                if hbt:
                    ch = 0 if rng.u01(key, np.uint64(base + 12)) < 0.5 else 1
                else:
                    ch = chan[j]
                out_t[cursor] = t0 + e
                out_p[cursor] = gp
                out_c[cursor] = ch
                out_o[cursor] = 0
                cursor += 1
        k = bg_counts[i]
        for b in range(k):
            ub = rng.u01(key, np.uint64(base + 4 + b))
            if hbt:
                ch = 0 if rng.u01(key, np.uint64(base + 13 + b)) < 0.5 else 1
            else:
                ch = chan[j]
            out_t[cursor] = t0 + woff[j] + ub * wlen[j]
            out_p[cursor] = gp
            out_c[cursor] = ch
            out_o[cursor] = 1
            cursor += 1
    return cursor, delta


def _sim_chunk_np(key, gp0, n, delta_in, tables: _SeqTables, bg_counts):
    """Vectorized twin of _sim_chunk_nb over whole repeats."""
    t = tables
    L = t.c.size
    R = n // L
    gps = np.arange(gp0, gp0 + n, dtype=np.int64)
    base = gps.astype(np.uint64) * np.uint64(_SLOTS)
    j_idx = np.tile(np.arange(L), R)

    xi = rng.normal_array(key, base).reshape(R, L)
    w = np.empty((R, L))
    for j in range(L):
        prev = w[:, j - 1] if j > 0 else 0.0
        w[:, j] = t.c[j] * prev + t.snoise[j] * xi[:, j]
    c_full = float(np.prod(t.c))
    dend, _ = lfilter([1.0], [1.0, -c_full], w[:, -1],
                      zi=np.array([c_full * delta_in]))
    prev_bound = np.empty(R)
    prev_bound[0] = delta_in
    prev_bound[1:] = dend[:-1]
    delta = (w + np.cumprod(t.c)[None, :] * prev_bound[:, None]).reshape(n)

    dev = (t.d[j_idx] - delta) * t.invw[j_idx]
    p = t.amp[j_idx] / (1.0 + dev * dev)
    u = rng.u01_array(key, base + np.uint64(1))
    e = -t.lifetime * np.log(rng.u01_array(key, base + np.uint64(2)))
    woffj = t.woff[j_idx]
    sig = (u < p) & (e >= woffj) & (e < woffj + t.wlen[j_idx])
    t0 = (gps // L) * t.period + t.poff[j_idx]

    st = t0[sig] + e[sig]
    sp = gps[sig]
    if t.hbt:
        us = rng.u01_array(key, base[sig] + np.uint64(12))
        sc = np.where(us < 0.5, 0, 1).astype(np.int16)
    else:
        sc = t.chan[j_idx[sig]]

    kcounts = bg_counts.astype(np.int64)
    total_bg = int(kcounts.sum())
    if total_bg:
        rows = np.repeat(np.arange(n), kcounts)
        starts = np.concatenate(([0], np.cumsum(kcounts)))[:-1]
        b_within = (np.arange(total_bg) - np.repeat(starts, kcounts)).astype(np.uint64)
        ub = rng.u01_array(key, base[rows] + np.uint64(4) + b_within)
        bt = t0[rows] + woffj[rows] + ub * t.wlen[j_idx[rows]]
        bp = gps[rows]
        if t.hbt:
            ud = rng.u01_array(key, base[rows] + np.uint64(13) + b_within)
            bc = np.where(ud < 0.5, 0, 1).astype(np.int16)
        else:
            bc = t.chan[j_idx[rows]]
    else:
        bt = np.empty(0)
        bp = np.empty(0, dtype=np.int64)
        bc = np.empty(0, dtype=np.int16)

    times = np.concatenate([st, bt])
    pulses = np.concatenate([sp, bp])
    chans = np.concatenate([sc, bc]).astype(np.int16)
    origins = np.concatenate([
        np.zeros(st.size, dtype=np.uint8),
        np.ones(bt.size, dtype=np.uint8),
    ])
    order = np.argsort(times, kind="stable")
    delta_out = float(dend[-1]) if R else delta_in
    return (times[order], pulses[order], chans[order], origins[order],
            delta_out, delta)


def _run_chunk(key, gp0, n, delta_in, tables, return_detunings):
    """One chunk on the active backend; returns (events, delta_out, dets)."""
    counts = _bg_counts(key, gp0, n, tables)
    if USE_NUMBA:
        cap = n + int(counts.sum())
        out_t = np.empty(cap)
        out_p = np.empty(cap, dtype=np.int64)
        out_c = np.empty(cap, dtype=np.int16)
        out_o = np.empty(cap, dtype=np.uint8)
        out_d = np.empty(n)
        cnt, delta = _sim_chunk_nb(
            np.uint64(key), gp0, n, delta_in, tables.c, tables.snoise,
            tables.d, tables.amp, tables.invw, tables.poff, tables.woff,
            tables.wlen, tables.chan, tables.period, tables.lifetime,
            tables.hbt, counts, out_t, out_p, out_c, out_o, out_d,
        )
        order = np.argsort(out_t[:cnt], kind="stable")
        events = (out_t[:cnt][order], out_p[:cnt][order],
                  out_c[:cnt][order], out_o[:cnt][order])
        dets = out_d if return_detunings else None
    else:
        *events, delta, dchunk = _sim_chunk_np(key, gp0, n, delta_in, tables,
                                               counts)
        events = tuple(events)
        dets = dchunk if return_detunings else None
    return events, delta, dets


def run_sequence(emitter: EmitterModel, seq: PulseSequence, seed: int, *,
                 return_detunings: bool = False,
                 chunk_repeats: Optional[int] = None, threads: int = 1):
    """Simulate one pulse sequence into a time-sorted EventStream.

    Deterministic given (emitter, seq, seed): the detuning starts from a
    stationary draw and every subsequent draw is addressed by its global
    pulse index, so neither chunking nor the thread count can change the
    result.  With threads > 1 on the jitted backend, a serial boundary
    pass fixes the chunk-start detunings and the chunk fills run
    concurrently (the kernels release the GIL).
    """
    tables = _SeqTables(emitter, seq)
    key = rng.stream_key(seed, _STREAM_MAIN)
    delta = float(rng.normal_array(rng.stream_key(seed, _STREAM_INIT),
                                   np.array([0], dtype=np.uint64))[0])
    L = seq.pattern_length
    cr = chunk_repeats if chunk_repeats else max(1, (1 << 18) // L)
    chunks = [(r0 * L, min(cr, seq.repeats - r0) * L)
              for r0 in range(0, seq.repeats, cr)]

    parts = [None] * len(chunks)
    det_parts = [None] * len(chunks)
    if threads > 1 and USE_NUMBA and len(chunks) > 1:
        boundaries = np.empty(len(chunks))
        _chain_boundaries_nb(np.uint64(key), seq.n_pulses, delta, tables.c,
                             tables.snoise, cr * L, boundaries)
        from concurrent.futures import ThreadPoolExecutor

        def fill(i):
            gp0, n = chunks[i]
            events, _, dets = _run_chunk(key, gp0, n, boundaries[i], tables,
                                         return_detunings)
            return i, events, dets

        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, events, dets in pool.map(fill, range(len(chunks))):
                parts[i] = events
                det_parts[i] = dets
    else:
        for i, (gp0, n) in enumerate(chunks):
            events, delta, dets = _run_chunk(key, gp0, n, delta, tables,
                                             return_detunings)
            parts[i] = events
            det_parts[i] = dets

    stream = EventStream(
        time_ns=np.concatenate([p[0] for p in parts]),
        pulse_index=np.concatenate([p[1] for p in parts]),
        channel=np.concatenate([p[2] for p in parts]),
        origin=np.concatenate([p[3] for p in parts]),
        n_pulses=seq.n_pulses,
    )
    if return_detunings:
        return stream, np.concatenate(det_parts)
    return stream


def stream_sequence_events(emitter: EmitterModel, seq: PulseSequence,
                           seed: int, *, chunk_repeats: Optional[int] = None,
                           threads: int = 1):
    """Yield (time_ns, pulse_index, channel, origin) chunk by chunk in
    pulse order: same events as run_sequence, but with peak memory
    bounded by the chunk size instead of the run length.

    With threads > 1 on the jitted backend, up to `threads` chunks are
    produced concurrently while being yielded in order.
    """
    tables = _SeqTables(emitter, seq)
    key = rng.stream_key(seed, _STREAM_MAIN)
    delta = float(rng.normal_array(rng.stream_key(seed, _STREAM_INIT),
                                   np.array([0], dtype=np.uint64))[0])
    L = seq.pattern_length
    cr = chunk_repeats if chunk_repeats else max(1, (1 << 18) // L)
    chunks = [(r0 * L, min(cr, seq.repeats - r0) * L)
              for r0 in range(0, seq.repeats, cr)]

    if threads > 1 and USE_NUMBA and len(chunks) > 1:
        boundaries = np.empty(len(chunks))
        _chain_boundaries_nb(np.uint64(key), seq.n_pulses, delta, tables.c,
                             tables.snoise, cr * L, boundaries)
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            pending = {}
            nxt = 0
            for i, (gp0, n) in enumerate(chunks):
                pending[i] = pool.submit(_run_chunk, key, gp0, n,
                                         boundaries[i], tables, False)
                while len(pending) >= threads or (i == len(chunks) - 1
                                                  and pending):
                    events, _, _ = pending.pop(nxt).result()
                    nxt += 1
                    yield events
    else:
        for gp0, n in chunks:
            events, delta, _ = _run_chunk(key, gp0, n, delta, tables, False)
            yield events


# --- resonance check --------------------------------------------------------


@dataclass
class RCOutcomes:
    """Per-shot record of one resonance-check run: how many check pulses
    were used, whether a herald arrived before the cap, and whether the
    probe pulse following the dark wait was detected."""

    n_checks: np.ndarray
    heralded: np.ndarray
    probe_detected: np.ndarray
    cap: int

    @property
    def censored(self) -> np.ndarray:
        return ~self.heralded

    @property
    def n_shots(self) -> int:
        return self.n_checks.size

    def conditional_detection(self):
        """(probability, standard error) of probe detection given a herald."""
        n_her = int(self.heralded.sum())
        if n_her == 0:
            return float("nan"), float("nan")
        p = float(self.probe_detected[self.heralded].mean())
        return p, math.sqrt(max(p * (1.0 - p), 1.0 / n_her) / n_her)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("shot,n_checks,censored,probe_detected\n")
            for i in range(self.n_shots):
                fh.write(f"{i},{self.n_checks[i]},{int(not self.heralded[i])},"
                         f"{int(self.probe_detected[i])}\n")


@njit("uint64(uint64, int64)", cache=True)
def _rc_key(seed, shot):
    k = rng._mix64(seed + np.uint64(0x9E3779B97F4A7C15))
    return rng._mix64(k + np.uint64(shot))


@njit(cache=True, nogil=True)
def _rc_shots_nb(seed, shot0, n_shots, cap,
                 c_chk, s_chk, d_chk, amp_chk, invw_chk, pbg_chk,
                 c_dark, s_dark,
                 c_prb, s_prb, d_prb, amp_prb, invw_prb, pbg_prb,
                 out_n, out_her, out_det):
    """Counter layout per shot: 0 stationary init; per check attempt k:
    1+2k the step noise, 2+2k the detection draw; after the cap region:
    dark-step noise, probe-step noise, probe detection draw."""
    for s in range(n_shots):
        key = _rc_key(seed, shot0 + s)
        delta = rng.norm_ppf(rng.u01(key, np.uint64(0)))
        heralded = False
        k = 0
        while k < cap:
            delta = c_chk * delta + s_chk * rng.normal(key, np.uint64(1 + 2 * k))
            dev = (d_chk - delta) * invw_chk
            p = amp_chk / (1.0 + dev * dev)
            ph = p + pbg_chk - p * pbg_chk
            if rng.u01(key, np.uint64(2 + 2 * k)) < ph:
                heralded = True
                k += 1
                break
            k += 1
        out_n[s] = k
        out_her[s] = heralded
        det = False
        if heralded:
            base = 1 + 2 * cap
            delta = c_dark * delta + s_dark * rng.normal(key, np.uint64(base))
            delta = c_prb * delta + s_prb * rng.normal(key, np.uint64(base + 1))
            dev = (d_prb - delta) * invw_prb
            p = amp_prb / (1.0 + dev * dev)
            pd = p + pbg_prb - p * pbg_prb
            det = rng.u01(key, np.uint64(base + 2)) < pd
        out_det[s] = det


def _rc_shots_np(seed, shot0, n_shots, cap,
                 c_chk, s_chk, d_chk, amp_chk, invw_chk, pbg_chk,
                 c_dark, s_dark,
                 c_prb, s_prb, d_prb, amp_prb, invw_prb, pbg_prb,
                 out_n, out_her, out_det):
    """Lockstep-over-shots twin of _rc_shots_nb (same counters)."""
    keys = np.array([rng.stream_key(seed, shot0 + s) for s in range(n_shots)],
                    dtype=np.uint64)
    delta = rng.norm_ppf_array(rng.u01_keyed(keys, np.uint64(0)))
    alive = np.ones(n_shots, dtype=bool)
    heralded = np.zeros(n_shots, dtype=bool)
    n_used = np.full(n_shots, cap, dtype=np.int64)
    k = 0
    while k < cap and alive.any():
        xi = rng.norm_ppf_array(rng.u01_keyed(keys, np.uint64(1 + 2 * k)))
        delta = np.where(alive, c_chk * delta + s_chk * xi, delta)
        dev = (d_chk - delta) * invw_chk
        p = amp_chk / (1.0 + dev * dev)
        ph = p + pbg_chk - p * pbg_chk
        u = rng.u01_keyed(keys, np.uint64(2 + 2 * k))
        fire = alive & (u < ph)
        n_used[fire] = k + 1
        heralded |= fire
        alive &= ~fire
        k += 1
    n_used[alive] = cap
    base = 1 + 2 * cap
    xi = rng.norm_ppf_array(rng.u01_keyed(keys, np.uint64(base)))
    delta = np.where(heralded, c_dark * delta + s_dark * xi, delta)
    xi = rng.norm_ppf_array(rng.u01_keyed(keys, np.uint64(base + 1)))
    delta = np.where(heralded, c_prb * delta + s_prb * xi, delta)
    dev = (d_prb - delta) * invw_prb
    p = amp_prb / (1.0 + dev * dev)
    pd = p + pbg_prb - p * pbg_prb
    u = rng.u01_keyed(keys, np.uint64(base + 2))
    det = heralded & (u < pd)
    out_n[:] = n_used
    out_her[:] = heralded
    out_det[:] = det


def _pulse_kernel_params(emitter: EmitterModel, offset_hz: float, power: float,
                         duration_ns: float, gap_ns: float,
                         window_offset_ns: float,
                         window_length_ns: Optional[float], bg_ns: float,
                         dark_before_ns: float):
    """(c, s, d_sigma, amp, invw, p_bg) for one standalone pulse type.

    dark_before_ns is the dark interval whose diffusion folds into this
    pulse's step (the gap between successive check pulses; zero for the
    probe, whose preceding wait is the explicit dark step)."""
    a = emitter.a_at_power(power) + emitter.alpha_dark_per_us * dark_before_ns * 1e-3
    c = math.exp(-a)
    s = math.sqrt(-math.expm1(-2.0 * a))
    d = offset_hz / emitter.sigma_inhom_hz
    amp = (emitter.p_max * (power / (1.0 + power)) * emitter.eta_det
           if power > 0 else 0.0)
    invw = 2.0 / (emitter.gamma_sigma * math.sqrt(1.0 + power))
    wlen = (window_length_ns if window_length_ns is not None
            else duration_ns + gap_ns - window_offset_ns)
    p_bg = -math.expm1(-bg_ns * wlen)
    return c, s, d, amp, invw, p_bg


def run_rc_sequence(emitter: EmitterModel, check_freq_hz: float,
                    probe_freq_hz: float, check_power: float,
                    probe_power: float, tau_dark_ns: float, shots: int,
                    seed: int, *, cap: int = 100_000,
                    pulse_duration_ns: float = 100.0, gap_ns: float = 60.0,
                    window_offset_ns: float = 0.0,
                    window_length_ns: Optional[float] = None,
                    threads: int = 1) -> RCOutcomes:
    """Resonance-check protocol: repeat check pulses until any detection
    (signal or background) heralds resonance, wait tau_dark_ns in the
    dark, fire one probe pulse, record its detection.

    Shots are independent, each on its own random substream, starting
    from a stationary detuning.  Shots that exhaust the cap are reported
    censored, never raised.  The thread count never changes the result.
    """
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    if check_power <= 0 or probe_power <= 0:
        raise ValueError("check and probe powers must be > 0")
    if tau_dark_ns < 0:
        raise ValueError(f"tau_dark_ns must be >= 0, got {tau_dark_ns}")

    woff = window_offset_ns
    wlen = (window_length_ns if window_length_ns is not None
            else pulse_duration_ns + gap_ns - woff)
    bg_ns = background_rate_per_ns(emitter, check_power, woff, wlen)
    chk = _pulse_kernel_params(emitter, check_freq_hz, check_power,
                               pulse_duration_ns, gap_ns, woff,
                               window_length_ns, bg_ns, dark_before_ns=gap_ns)
    prb = _pulse_kernel_params(emitter, probe_freq_hz, probe_power,
                               pulse_duration_ns, gap_ns, woff,
                               window_length_ns, bg_ns, dark_before_ns=0.0)
    a_dark = emitter.alpha_dark_per_us * tau_dark_ns * 1e-3
    c_dark = math.exp(-a_dark)
    s_dark = math.sqrt(-math.expm1(-2.0 * a_dark))

    n_checks = np.empty(shots, dtype=np.int64)
    heralded = np.empty(shots, dtype=bool)
    detected = np.empty(shots, dtype=bool)
    params = (cap,
              chk[0], chk[1], chk[2], chk[3], chk[4], chk[5],
              c_dark, s_dark,
              prb[0], prb[1], prb[2], prb[3], prb[4], prb[5])
    seed_u = np.uint64(seed & ((1 << 64) - 1))
    if USE_NUMBA and threads > 1 and shots > 1:
        from concurrent.futures import ThreadPoolExecutor

        block = (shots + threads - 1) // threads
        spans = [(s0, min(block, shots - s0))
                 for s0 in range(0, shots, block)]

        def fill(span):
            s0, ns = span
            _rc_shots_nb(seed_u, s0, ns, *params, n_checks[s0:s0 + ns],
                         heralded[s0:s0 + ns], detected[s0:s0 + ns])

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, spans))
    elif USE_NUMBA:
        _rc_shots_nb(seed_u, 0, shots, *params, n_checks, heralded, detected)
    else:
        _rc_shots_np(seed, 0, shots, *params, n_checks, heralded, detected)
    return RCOutcomes(n_checks=n_checks, heralded=heralded,
                      probe_detected=detected, cap=cap)


def rc_ple_scan(emitter: EmitterModel, check_freq_hz: float, probe_freqs_hz,
                check_power: float, probe_power: float, tau_dark_ns: float,
                shots_per_point: int, seed: int, **rc_kwargs):
    """Conditioned lineshape: sweep the probe frequency and return
    (freqs, conditional detection probability, stderr, heralds, censored).
    """
    probe_freqs_hz = np.asarray(probe_freqs_hz, dtype=np.float64)
    probs = np.empty(probe_freqs_hz.size)
    errs = np.empty(probe_freqs_hz.size)
    n_her = np.empty(probe_freqs_hz.size, dtype=np.int64)
    n_cen = np.empty(probe_freqs_hz.size, dtype=np.int64)
    for i, f in enumerate(probe_freqs_hz):
        out = run_rc_sequence(emitter, check_freq_hz, float(f), check_power,
                              probe_power, tau_dark_ns, shots_per_point,
                              seed=rng.stream_key(seed, i), **rc_kwargs)
        probs[i], errs[i] = out.conditional_detection()
        n_her[i] = int(out.heralded.sum())
        n_cen[i] = int(out.censored.sum())
    return probe_freqs_hz, probs, errs, n_her, n_cen


# --- excited-state spin mixing ----------------------------------------------


@dataclass
class SpinMixResult:
    """Monitored-state population after the pulse plus its decay transient."""

    prepared_state: int
    n_target: float
    bin_edges: np.ndarray
    transient: np.ndarray
    shots: Optional[int]


def _mix_populations_exact(model: SpinMixModel, prepared_state: int):
    """Deterministic two-state rate-equation integration over the pulse."""
    g = model.gamma_mix_per_ns
    f = model.init_fidelity
    p0 = np.array([f, 1.0 - f]) if prepared_state == 1 else np.array([1.0 - f, f])
    if g == 0.0:
        return p0
    sol = solve_ivp(
        lambda _, p: np.array([g * (p[1] - p[0]), g * (p[0] - p[1])]),
        (0.0, model.pulse_ns), p0, rtol=1e-11, atol=1e-13,
    )
    return sol.y[:, -1]


def simulate_spin_mixing(model: SpinMixModel, prepared_state: int, shots: int,
                         seed: int, n_bins: int = 64,
                         t_max_ns: Optional[float] = None) -> SpinMixResult:
    """Population of the monitored state (state 1) after a pulse prepared
    in `prepared_state`, plus the time-binned post-pulse decay transient
    of the monitored channel.

    shots = 0 integrates the rate equations deterministically; otherwise
    each shot is a microscopic jump realization: the spin label flips as
    a Poisson process of rate gamma during the pulse (final state given
    by flip-count parity) and the photon is emitted an exponential
    lifetime delay after the pulse.
    """
    if prepared_state not in (1, 2):
        raise ValueError(f"prepared_state must be 1 or 2, got {prepared_state}")
    if shots < 0:
        raise ValueError(f"shots must be >= 0, got {shots}")
    t_max = 6.0 * model.lifetime_ns if t_max_ns is None else t_max_ns
    edges = np.linspace(0.0, t_max, n_bins + 1)

    if shots == 0:
        p = _mix_populations_exact(model, prepared_state)
        n1 = float(p[0])
        weights = np.exp(-edges[:-1] / model.lifetime_ns) - np.exp(
            -edges[1:] / model.lifetime_ns
        )
        return SpinMixResult(prepared_state, n1, edges, n1 * weights, None)

    lam = model.gamma_mix_per_ns * model.pulse_ns
    kmax = max(8, int(lam + 12.0 * math.sqrt(lam + 1.0)))
    cdf = _poisson_cdf(lam, kmax)
    key = rng.stream_key(seed, prepared_state)
    counters = np.arange(shots, dtype=np.uint64) * np.uint64(4)
    u_flip = rng.u01_array(key, counters)
    flips = np.searchsorted(cdf, u_flip, side="right")
    u_init = rng.u01_array(key, counters + np.uint64(2))
    start_is_prepared = u_init < model.init_fidelity
    parity_even = flips % 2 == 0
    in_start = parity_even  # ends in its starting state iff even flips
    prepared_first = prepared_state == 1
    final_is_1 = np.where(
        start_is_prepared == prepared_first, in_start, ~in_start
    )
    n1 = float(final_is_1.mean())
    u_t = rng.u01_array(key, counters + np.uint64(1))
    t_emit = -model.lifetime_ns * np.log(u_t)
    transient, _ = np.histogram(t_emit[final_is_1], bins=edges)
    return SpinMixResult(prepared_state, n1, edges,
                         transient.astype(np.float64) / shots, shots)


def mixing_populations(model: SpinMixModel, shots: int, seed: int):
    """(n1, n2): monitored-state population with the opposite state and
    with the monitored state prepared."""
    r1 = simulate_spin_mixing(model, prepared_state=2, shots=shots, seed=seed)
    r2 = simulate_spin_mixing(model, prepared_state=1, shots=shots, seed=seed)
    return r1.n_target, r2.n_target
