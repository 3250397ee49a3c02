"""Combinatorics of resonance-check preparation for N emitters.

Each emitter needs a heralded detection before the protocol proceeds;
per attempt the detection succeeds with probability 1/M, so the number
of attempts per emitter is geometric with mean M and the whole ensemble
waits for the slowest one, T = max of N iid geometrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import rng

__all__ = [
    "RCProtocolParams",
    "expected_attempts_closed",
    "expected_attempts_tailsum",
    "mc_attempts",
    "speedup",
    "speedup_grid",
    "expected_prep_times",
]

# Above this the alternating binomial sum is abandoned for the tail sum,
# whose terms are all positive (no cancellation at any N).
_CLOSED_FORM_MAX_N = 64


def _validate_nm(n_qubits: int, mean_attempts: float) -> None:
    if int(n_qubits) != n_qubits or n_qubits < 1:
        raise ValueError(f"N must be an integer >= 1, got {n_qubits}")
    if not (mean_attempts >= 1.0) or not math.isfinite(mean_attempts):
        raise ValueError(f"M must be finite and >= 1, got {mean_attempts}")


def expected_attempts_closed(n_qubits: int, mean_attempts: float) -> float:
    """E[T] for the max of N geometric variables with mean M.

    sum_{j=1..N} (-1)^(j+1) C(N,j) / (1 - (1-1/M)^j), evaluated in exact
    rational arithmetic: the alternating sum cancels catastrophically in
    floats once C(N,j) outgrows the result, but every float M is a binary
    rational, so Fraction arithmetic reproduces the sum exactly.  Beyond
    N=64 the positive-term tail sum takes over.
    """
    _validate_nm(n_qubits, mean_attempts)
    n = int(n_qubits)
    if n > _CLOSED_FORM_MAX_N:
        return expected_attempts_tailsum(n_qubits, mean_attempts, tol=1e-14)
    if mean_attempts == 1.0:
        return 1.0
    q = 1 - Fraction(1) / Fraction(mean_attempts)
    total = Fraction(0)
    qj = Fraction(1)
    for j in range(1, n + 1):
        qj *= q
        term = Fraction(math.comb(n, j)) / (1 - qj)
        total += term if (j % 2 == 1) else -term
    return float(total)


def expected_attempts_tailsum(n_qubits: int, mean_attempts: float,
                              tol: float = 1e-12, block: int = 1 << 16) -> float:
    """E[T] by the tail-sum formula sum_{k>=1} [1 - (1 - q^(k-1))^N],
    truncated once a term falls below tol.

    Terms are all positive (no cancellation), evaluated blockwise as
    -expm1(N log1p(-q^(k-1))) so deep-tail terms keep full precision.
    """
    _validate_nm(n_qubits, mean_attempts)
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    n = int(n_qubits)
    if mean_attempts == 1.0:
        return 1.0
    log_q = math.log1p(-1.0 / mean_attempts)
    block_sums = [1.0]  # the k=1 term, where q^0 = 1
    k0 = 1
    while True:
        ks = np.arange(k0, k0 + block, dtype=np.float64)
        qk = np.exp(ks * log_q)
        terms = -np.expm1(n * np.log1p(-qk))
        if terms[-1] < tol:
            cut = int(np.argmax(terms < tol))
            block_sums.append(float(math.fsum(terms[: cut + 1])))
            break
        block_sums.append(float(math.fsum(terms)))
        k0 += block
    return math.fsum(block_sums)


def mc_attempts(n_qubits: int, mean_attempts: float, shots: int, seed: int,
                chunk: int = 1 << 16):
    """Monte Carlo oracle for E[T]: draw N geometrics per shot, take the
    max, and return (sample mean, standard error)."""
    _validate_nm(n_qubits, mean_attempts)
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    n = int(n_qubits)
    key = rng.stream_key(seed, 0)
    total = 0.0
    total_sq = 0.0
    if mean_attempts == 1.0:
        return 1.0, 0.0
    log_q = math.log1p(-1.0 / mean_attempts)
    for s0 in range(0, shots, chunk):
        ns = min(chunk, shots - s0)
        counters = (np.arange(s0 * n, (s0 + ns) * n, dtype=np.uint64)
                    .reshape(ns, n))
        u = rng.u01_array(key, counters)
        k = np.floor(np.log(u) / log_q).astype(np.int64) + 1
        t = k.max(axis=1).astype(np.float64)
        total += float(t.sum())
        total_sq += float((t * t).sum())
    mean = total / shots
    var = max(total_sq / shots - mean * mean, 0.0)
    return mean, math.sqrt(var / shots)


@dataclass(frozen=True)
class RCProtocolParams:
    """Inputs of the preparation-time comparison.

    eta_sd / eta_sd_rc are the homogeneous-to-effective-linewidth ratios
    without and with the resonance check; eta_det is the detection
    efficiency; tau_attempt_ns the duration of one excite-check attempt.
    """

    n_qubits: int
    eta_sd: float
    eta_sd_rc: float
    eta_det: float
    tau_attempt_ns: float = 1.0

    def __post_init__(self):
        if int(self.n_qubits) != self.n_qubits or self.n_qubits < 1:
            raise ValueError(f"n_qubits must be an integer >= 1, got {self.n_qubits}")
        for name in ("eta_sd", "eta_sd_rc", "eta_det"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if self.eta_sd_rc < self.eta_sd:
            raise ValueError(
                "eta_sd_rc must be >= eta_sd (the resonance check never broadens)"
            )
        if not (self.tau_attempt_ns > 0):
            raise ValueError(f"tau_attempt_ns must be > 0, got {self.tau_attempt_ns}")

    @property
    def mean_attempts(self) -> float:
        """M = 1 / (eta_sd * eta_det), the unconditioned attempt count."""
        return 1.0 / (self.eta_sd * self.eta_det)


def speedup(params: RCProtocolParams) -> float:
    """(eta_sd_rc / eta_sd)^N / (1 + E[T]).

    E[T] is evaluated at the raw-linewidth M: the check pulses search the
    full inhomogeneous line.  The attempt duration cancels in the ratio.
    """
    et = expected_attempts_closed(params.n_qubits, params.mean_attempts)
    return (params.eta_sd_rc / params.eta_sd) ** params.n_qubits / (1.0 + et)


def expected_prep_times(params: RCProtocolParams):
    """(time without check, time with check) in ns, whose ratio is `speedup`."""
    n = params.n_qubits
    tau = params.tau_attempt_ns
    t_indep = tau * (1.0 / (params.eta_sd * params.eta_det)) ** n
    et = expected_attempts_closed(n, params.mean_attempts)
    t_rc = tau * (1.0 + et) * (1.0 / (params.eta_sd_rc * params.eta_det)) ** n
    return t_indep, t_rc


def speedup_grid(n_values, eta_det_values, eta_sd: float, eta_sd_rc: float):
    """Speedup over an (N, eta_det) grid.

    Returns (matrix, flag_le1) with shape (len(n_values), len(eta_det_values));
    flag_le1 marks cells where the check is pure overhead (speedup <= 1).
    Cell values are bitwise identical to scalar `speedup` calls.
    """
    n_values = list(n_values)
    eta_det_values = list(eta_det_values)
    if not n_values or not eta_det_values:
        raise ValueError("grid axes must be nonempty")
    out = np.empty((len(n_values), len(eta_det_values)))
    for i, n in enumerate(n_values):
        for j, eta in enumerate(eta_det_values):
            out[i, j] = speedup(
                RCProtocolParams(n_qubits=n, eta_sd=eta_sd,
                                 eta_sd_rc=eta_sd_rc, eta_det=eta)
            )
    return out, out <= 1.0
