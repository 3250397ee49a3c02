"""Mean-reverting (Ornstein-Uhlenbeck) detuning dynamics and its
discrete charge-bath micro-model.

All detunings are expressed in units of the stationary (inhomogeneous)
standard deviation, so the stationary law is the unit normal and the
process is parametrized by the rate alpha alone.  Conversion to Hz
happens at module boundaries (emitter model, CLI), never here.

The update used everywhere is the exact transition kernel

    delta' = delta * exp(-a) + sqrt(1 - exp(-2a)) * xi,   a = alpha * t,

not an Euler-Maruyama step, so composing updates over subintervals is
exact regardless of how pulse bookkeeping slices time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .backend import USE_NUMBA, njit
from . import rng

__all__ = [
    "OUParams",
    "SpectralState",
    "ChargeBath",
    "ou_step",
    "ou_propagate",
    "ou_sample_stationary",
    "ou_evolve_ensemble",
    "ou_conditional_density",
    "ou_short_time_density",
    "correlation_model",
    "bath_step",
    "bath_autocorrelation",
]


@dataclass(frozen=True)
class OUParams:
    """Rate of the mean-reverting detuning process.

    alpha is the spectral diffusion rate in 1/us; sigma_units records
    that detunings are measured in units of the stationary standard
    deviation (the only convention this package uses internally).
    """

    alpha: float
    sigma_units: bool = True

    def __post_init__(self):
        if not (self.alpha >= 0.0) or not math.isfinite(self.alpha):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")


@dataclass(frozen=True)
class SpectralState:
    """Instantaneous emitter detuning in sigma units.

    Either a bare continuum value or a view onto a charge bath
    (in which case `detuning` mirrors the bath's current value).
    """

    detuning: float
    bath: Optional["ChargeBath"] = None

    @classmethod
    def from_bath(cls, bath: "ChargeBath") -> "SpectralState":
        return cls(detuning=bath.detuning, bath=bath)


def ou_propagate(delta, alpha_t, noise):
    """Exact one-step update; broadcasts over numpy inputs.

    alpha_t is the dimensionless elapsed rate-time product.
    """
    c = np.exp(-np.asarray(alpha_t, dtype=np.float64))
    s = np.sqrt(-np.expm1(-2.0 * np.asarray(alpha_t, dtype=np.float64)))
    return delta * c + s * np.asarray(noise)


def ou_step(state: SpectralState, params: OUParams, dt_us: float, noise: float) -> SpectralState:
    """Advance a continuum state by dt_us using a unit-normal draw `noise`."""
    if state.bath is not None:
        raise TypeError("ou_step applies to continuum states; use bath_step for charge baths")
    if not (dt_us >= 0.0):
        raise ValueError(f"dt_us must be >= 0, got {dt_us}")
    if dt_us == 0.0:
        return state
    new = float(ou_propagate(state.detuning, params.alpha * dt_us, noise))
    return SpectralState(detuning=new)


def ou_sample_stationary(n: int, seed: int, stream: int = 0) -> np.ndarray:
    """n independent draws from the stationary unit normal."""
    key = rng.stream_key(seed, stream)
    return rng.normal_array(key, np.arange(n, dtype=np.uint64))


def ou_evolve_ensemble(deltas: np.ndarray, alpha_t: float, seed: int, stream: int = 0) -> np.ndarray:
    """One exact kernel step applied to an ensemble, with fresh draws."""
    key = rng.stream_key(seed, stream)
    xi = rng.normal_array(key, np.arange(deltas.size, dtype=np.uint64))
    return ou_propagate(deltas, alpha_t, xi)


def _check_alpha_t(alpha_t) -> np.ndarray:
    at = np.asarray(alpha_t, dtype=np.float64)
    if np.any(at <= 0.0):
        raise ValueError(
            "alpha_t must be > 0 (at t = 0 the density degenerates to a point mass; "
            "use the identity update instead)"
        )
    return at


def ou_conditional_density(delta2, delta1, alpha_t):
    """Transition density P(delta2, t | delta1, 0) in sigma units.

    Gaussian with mean delta1*exp(-a) and variance 1-exp(-2a); reduces
    to the unit-normal stationary law as a -> infinity.
    """
    at = _check_alpha_t(alpha_t)
    var = -np.expm1(-2.0 * at)
    mean = np.asarray(delta1) * np.exp(-at)
    dev = np.asarray(delta2) - mean
    return np.exp(-dev * dev / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)


def ou_short_time_density(delta2, alpha_t):
    """Free-diffusion approximation of the transition density from the
    line centre, valid for alpha_t << 1: a normal law of variance
    2*alpha_t, i.e. alpha acts as an effective diffusion constant."""
    at = _check_alpha_t(alpha_t)
    var = 2.0 * at
    d2 = np.asarray(delta2)
    return np.exp(-d2 * d2 / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)


def correlation_model(delta1, delta2, a_per_pulse, beta, n_pulses):
    """Normalized two-frequency coincidence rate after n_pulses.

    C = beta + sqrt(2*pi) * exp(delta2^2/2) * (1-beta) * P(delta2, n*A | delta1, 0)

    evaluated in a numerically combined form so large detunings do not
    overflow.  C -> 1 from either side as n_pulses -> infinity.
    """
    if not (a_per_pulse > 0.0):
        raise ValueError(f"per-pulse rate must be > 0, got {a_per_pulse}")
    if not (0.0 <= beta <= 1.0):
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    n = np.asarray(n_pulses)
    if not np.issubdtype(n.dtype, np.integer):
        raise TypeError("n_pulses must be integer-valued")
    if np.any(n < 1):
        raise ValueError(
            "n_pulses must be >= 1 (the zero-lag bin is antibunching-dominated "
            "and outside this model)"
        )
    at = n.astype(np.float64) * a_per_pulse
    c = np.exp(-at)
    var = -np.expm1(-2.0 * at)
    d1 = np.asarray(delta1, dtype=np.float64)
    d2 = np.asarray(delta2, dtype=np.float64)
    dev = d2 - d1 * c
    expo = 0.5 * d2 * d2 - dev * dev / (2.0 * var)
    return beta + (1.0 - beta) * np.exp(expo) / np.sqrt(var)


# --- discrete charge bath ---------------------------------------------------
#
# n_charges two-level charges, each +/-1; the detuning is their mean.  Each
# step scrambles round-half-even(frac * n_charges) distinct charges, i.e.
# reassigns each to +/-1 with probability 1/2 (resampling, which makes the
# one-step conditional drift exactly -frac * delta).  When frac*n < 1 a
# Bernoulli(frac*n) draw decides whether a single charge scrambles, which
# preserves the expected drift.

_BATH_STREAM = 0


def _bath_counts(n_charges: int, frac: float):
    """(m_nominal, m_cap, counter stride) for one scramble step."""
    m_exact = frac * n_charges
    m = int(np.rint(m_exact))
    m_cap = max(m, 1)
    return m_exact, m, m_cap, 1 + 2 * m_cap


class ChargeBath:
    """Discrete charge environment owned by a single trajectory.

    Not thread-safe by design: one bath per trajectory, each trajectory
    with its own (seed, stream) random substream.
    """

    def __init__(self, charges, scramble_fraction: float, rng_seed: int, stream: int = 0):
        charges = np.asarray(charges, dtype=np.int8)
        if charges.ndim != 1 or charges.size == 0:
            raise ValueError("charges must be a nonempty 1-d vector")
        if not np.all(np.abs(charges) == 1):
            raise ValueError("charges must all be +1 or -1")
        if not (0.0 <= scramble_fraction <= 1.0):
            raise ValueError(f"scramble_fraction must be in [0, 1], got {scramble_fraction}")
        self.charges = charges
        self.scramble_fraction = float(scramble_fraction)
        self.rng_seed = int(rng_seed)
        self.stream = int(stream)
        self._key = rng.stream_key(rng_seed, stream)
        self._perm = np.arange(charges.size, dtype=np.int64)
        self._step = 0
        self._sum = int(charges.sum())

    @classmethod
    def stationary(cls, n_charges: int, scramble_fraction: float, rng_seed: int,
                   stream: int = 0) -> "ChargeBath":
        """Bath with iid uniform +/-1 charges (the stationary ensemble)."""
        key = rng.stream_key(rng_seed, stream)
        u = rng.u01_array(key, np.arange(n_charges, dtype=np.uint64))
        charges = np.where(u < 0.5, -1, 1).astype(np.int8)
        bath = cls(charges, scramble_fraction, rng_seed, stream)
        return bath

    @property
    def n_charges(self) -> int:
        return self.charges.size

    @property
    def detuning(self) -> float:
        """Mean charge, |detuning| <= 1 before rescaling."""
        return self._sum / self.charges.size

    def _copy(self) -> "ChargeBath":
        new = ChargeBath.__new__(ChargeBath)
        new.charges = self.charges.copy()
        new.scramble_fraction = self.scramble_fraction
        new.rng_seed = self.rng_seed
        new.stream = self.stream
        new._key = self._key
        new._perm = self._perm.copy()
        new._step = self._step
        new._sum = self._sum
        return new


def bath_step(bath: ChargeBath) -> ChargeBath:
    """One scramble step; returns a new bath, leaving the input untouched.

    Counter layout per step: slot 0 the fractional-count Bernoulli draw,
    slots 1..m_cap the index selection, slots m_cap+1..2*m_cap the signs.
    Selection is a partial Fisher-Yates pass, so the m charges are
    distinct and uniformly chosen.
    """
    new = bath._copy()
    n = new.charges.size
    m_exact, m, m_cap, stride = _bath_counts(n, new.scramble_fraction)
    # Counters begin after the n initialisation draws used by stationary().
    base = n + new._step * stride
    key = new._key

    if m_exact < 1.0:
        u = float(rng.u01_array(key, np.array([base], dtype=np.uint64))[0])
        m_eff = 1 if u < m_exact else 0
    else:
        m_eff = m

    perm = new._perm
    charges = new.charges
    total = new._sum
    for j in range(m_eff):
        u = float(rng.u01_array(key, np.array([base + 1 + j], dtype=np.uint64))[0])
        idx = j + int(u * (n - j))
        perm[j], perm[idx] = perm[idx], perm[j]
    if m_eff > 0:
        us = rng.u01_array(
            key, (base + 1 + m_cap + np.arange(m_eff)).astype(np.uint64)
        )
        signs = np.where(us < 0.5, -1, 1).astype(np.int8)
        sel = perm[:m_eff]
        total += int(signs.sum()) - int(charges[sel].sum())
        charges[sel] = signs
    new._sum = total
    new._step += 1
    return new


# --- ensemble autocorrelation kernels ---------------------------------------

_U64 = np.uint64
_GOLDEN_U = np.uint64(0x9E3779B97F4A7C15)


@njit("uint64(uint64, uint64)", cache=True)
def _stream_key_nb(seed, stream):
    k = rng._mix64(seed + np.uint64(0x9E3779B97F4A7C15))
    return rng._mix64(k + stream)


@njit(
    "void(int64, float64, int64, int64, int64, uint64, int8[:], int64[:], float64[:], float64[:])",
    cache=True,
    nogil=True,
)
def _bath_acf_sums_nb(n_charges, frac, n_lags, n_traj, traj0, seed,
                      charges, perm, sum_prod, sum_sq):
    m_exact = frac * n_charges
    m = int(np.rint(m_exact))
    m_cap = max(m, 1)
    stride = 1 + 2 * m_cap
    sqrt_n = math.sqrt(float(n_charges))
    for t in range(n_traj):
        key = _stream_key_nb(seed, np.uint64(traj0 + t))
        total = 0
        for i in range(n_charges):
            u = rng.u01(key, np.uint64(i))
            if u < 0.5:
                charges[i] = -1
            else:
                charges[i] = 1
            total += charges[i]
            perm[i] = i
        z0 = total / sqrt_n
        sum_prod[0] += z0 * z0
        sum_sq[0] += (z0 * z0) * (z0 * z0)
        for step in range(n_lags):
            base = np.uint64(n_charges + step * stride)
            if m_exact < 1.0:
                u = rng.u01(key, base)
                m_eff = 1 if u < m_exact else 0
            else:
                m_eff = m
            for j in range(m_eff):
                u = rng.u01(key, base + np.uint64(1 + j))
                idx = j + int(u * (n_charges - j))
                tmp = perm[j]
                perm[j] = perm[idx]
                perm[idx] = tmp
            for j in range(m_eff):
                u = rng.u01(key, base + np.uint64(1 + m_cap + j))
                sign = -1 if u < 0.5 else 1
                k = perm[j]
                total += sign - charges[k]
                charges[k] = sign
            zk = total / sqrt_n
            p = z0 * zk
            sum_prod[step + 1] += p
            sum_sq[step + 1] += p * p


def _bath_acf_sums_numpy(n_charges, frac, n_lags, n_traj, traj0, seed,
                         sum_prod, sum_sq):
    """Vectorized over trajectories; same draws as the jitted kernel."""
    m_exact, m, m_cap, stride = _bath_counts(n_charges, frac)
    keys = np.array(
        [rng.stream_key(seed, traj0 + t) for t in range(n_traj)], dtype=np.uint64
    )
    init_counters = np.arange(n_charges, dtype=np.uint64)
    u = rng.u01_keyed(keys[:, None], init_counters[None, :])
    charges = np.where(u < 0.5, -1, 1).astype(np.int8)
    perm = np.tile(np.arange(n_charges, dtype=np.int64), (n_traj, 1))
    rows = np.arange(n_traj)
    total = charges.sum(axis=1, dtype=np.int64)
    z0 = total / math.sqrt(n_charges)
    sum_prod[0] += float(np.sum(z0 * z0))
    sum_sq[0] += float(np.sum((z0 * z0) ** 2))
    for step in range(n_lags):
        base = n_charges + step * stride
        if m_exact < 1.0:
            u = rng.u01_keyed(keys, np.uint64(base))
            active = u < m_exact
        else:
            active = np.ones(n_traj, dtype=bool)
        m_eff = 1 if m_exact < 1.0 else m
        for j in range(m_eff):
            u = rng.u01_keyed(keys, np.uint64(base + 1 + j))
            idx = j + (u * (n_charges - j)).astype(np.int64)
            left = perm[rows, j]
            right = perm[rows, idx]
            sel = np.where(active, right, left)
            perm[rows, idx] = np.where(active, left, right)
            perm[rows, j] = sel
        for j in range(m_eff):
            u = rng.u01_keyed(keys, np.uint64(base + 1 + m_cap + j))
            sign = np.where(u < 0.5, -1, 1).astype(np.int8)
            k = perm[rows, j]
            old = charges[rows, k]
            newc = np.where(active, sign, old)
            total += (newc.astype(np.int64) - old)
            charges[rows, k] = newc
        zk = total / math.sqrt(n_charges)
        p = z0 * zk
        sum_prod[step + 1] += float(np.sum(p))
        sum_sq[step + 1] += float(np.sum(p * p))


def bath_autocorrelation(n_charges: int, scramble_fraction: float, n_lags: int,
                         n_trajectories: int, seed: int,
                         chunk: int = 4096):
    """Ensemble lag autocorrelation of the rescaled bath detuning.

    Starts every trajectory in the stationary ensemble and returns
    (acf, stderr) for lags 0..n_lags, where acf[k] estimates
    E[z(0) z(k)] with z = detuning * sqrt(n_charges).  The analytic
    value is (1 - scramble_fraction)^k.
    """
    if n_trajectories < 1 or n_lags < 0:
        raise ValueError("need n_trajectories >= 1 and n_lags >= 0")
    sum_prod = np.zeros(n_lags + 1)
    sum_sq = np.zeros(n_lags + 1)
    if USE_NUMBA:
        charges = np.empty(n_charges, dtype=np.int8)
        perm = np.empty(n_charges, dtype=np.int64)
        _bath_acf_sums_nb(n_charges, scramble_fraction, n_lags, n_trajectories,
                          0, np.uint64(seed & ((1 << 64) - 1)), charges, perm,
                          sum_prod, sum_sq)
    else:
        for t0 in range(0, n_trajectories, chunk):
            nt = min(chunk, n_trajectories - t0)
            _bath_acf_sums_numpy(n_charges, scramble_fraction, n_lags, nt, t0,
                                 seed, sum_prod, sum_sq)
    n = n_trajectories
    acf = sum_prod / n
    var = np.maximum(sum_sq / n - acf * acf, 0.0)
    stderr = np.sqrt(var / n)
    return acf, stderr
