"""Counter-based random number generation shared by both kernel backends.

Draws are pure functions of ``(stream key, counter)`` built on the
splitmix64 finalizer, so any draw can be computed at any time, in any
order, on any thread: the numba kernels evaluate them scalar-by-scalar
inside loops while the numpy fallback evaluates the same counters as
vectorized uint64 arrays.  Identical (key, counter) pairs give bitwise
identical uniforms on both paths; normal/exponential transforms may
differ in the last ulp because numpy's SIMD log is not libm's log.

Stream keys are derived from ``(master seed, stream id)`` so that
trajectories, shots, and chunks each own a private, reproducible
substream regardless of scheduling (counter-based, in the sense of
Salmon et al.'s "Parallel random numbers: as easy as 1, 2, 3").

numpy's Generator cannot be called from inside an ``@njit`` kernel,
which is why this module exists; statistical quality is exercised by
the moment/correlation tests in the suite and by comparison with
scipy's ndtri for the normal inverse CDF.
"""

import math

import numpy as np

from .backend import njit

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64_py(z: int) -> int:
    """splitmix64 finalizer on python ints (orchestration-side)."""
    z &= _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def stream_key(seed: int, stream: int) -> int:
    """64-bit key for logical substream `stream` of master `seed`."""
    return _mix64_py(_mix64_py(seed + _GOLDEN) + (stream & _M64))


# --- scalar path (compiled into numba kernels) -----------------------------

# AS241 PPND16 rational approximations for the normal inverse CDF
# (Wichura 1988), accurate to ~1e-16 relative.
_PA = (
    3.3871328727963666080e0,
    1.3314166789178437745e2,
    1.9715909503065514427e3,
    1.3731693765509461125e4,
    4.5921953931549871457e4,
    6.7265770927008700853e4,
    3.3430575583588128105e4,
    2.5090809287301226727e3,
)
_PB = (
    4.2313330701600911252e1,
    6.8718700749205790830e2,
    5.3941960214247511077e3,
    2.1213794301586595867e4,
    3.9307895800092710610e4,
    2.8729085735721942674e4,
    5.2264952788528545610e3,
)
_PC = (
    1.42343711074968357734e0,
    4.63033784615654529590e0,
    5.76949722146069140550e0,
    3.64784832476320460504e0,
    1.27045825245236838258e0,
    2.41780725177450611770e-1,
    2.27238449892691845833e-2,
    7.74545014278341407640e-4,
)
_PD = (
    2.05319162663775882187e0,
    1.67638483018380384940e0,
    6.89767334985100004550e-1,
    1.48103976427480074590e-1,
    1.51986665636164571966e-2,
    5.47593808499534494600e-4,
    1.05075007164441684324e-9,
)
_PE = (
    6.65790464350110377720e0,
    5.46378491116411436990e0,
    1.78482653991729133580e0,
    2.96560571828504891230e-1,
    2.65321895265761230930e-2,
    1.24266094738807843860e-3,
    2.71155556874348757815e-5,
    2.01033439929228813265e-7,
)
_PF = (
    5.99832206555887937690e-1,
    1.36929880922735805310e-1,
    1.48753612908506148525e-2,
    7.86869131145613259100e-4,
    1.84631831751005468180e-5,
    1.42151175831644588870e-7,
    2.04426310338993978564e-15,
)


@njit("uint64(uint64)", cache=True)
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit("float64(uint64, uint64)", cache=True)
def u01(key, counter):
    """Uniform draw in the open interval (0, 1)."""
    x = _mix64(key + counter * np.uint64(_GOLDEN))
    return (float(x >> np.uint64(11)) + 0.5) * 1.1102230246251565e-16  # 2^-53


@njit("float64(float64)", cache=True)
def norm_ppf(p):
    """Normal inverse CDF (AS241 PPND16); p must be in (0, 1)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((_PA[7] * r + _PA[6]) * r + _PA[5]) * r + _PA[4]) * r
                  + _PA[3]) * r + _PA[2]) * r + _PA[1]) * r + _PA[0])
        den = (((((((_PB[6] * r + _PB[5]) * r + _PB[4]) * r + _PB[3]) * r
                  + _PB[2]) * r + _PB[1]) * r + _PB[0]) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((_PC[7] * r + _PC[6]) * r + _PC[5]) * r + _PC[4]) * r
                  + _PC[3]) * r + _PC[2]) * r + _PC[1]) * r + _PC[0])
        den = (((((((_PD[6] * r + _PD[5]) * r + _PD[4]) * r + _PD[3]) * r
                  + _PD[2]) * r + _PD[1]) * r + _PD[0]) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((_PE[7] * r + _PE[6]) * r + _PE[5]) * r + _PE[4]) * r
                  + _PE[3]) * r + _PE[2]) * r + _PE[1]) * r + _PE[0])
        den = (((((((_PF[6] * r + _PF[5]) * r + _PF[4]) * r + _PF[3]) * r
                  + _PF[2]) * r + _PF[1]) * r + _PF[0]) * r + 1.0)
    val = num / den
    return -val if q < 0.0 else val


@njit("float64(uint64, uint64)", cache=True)
def normal(key, counter):
    """Standard normal draw."""
    return norm_ppf(u01(key, counter))


# --- vectorized path (numpy fallback and pre-draw orchestration) -----------


def u01_array(key: int, counters: np.ndarray) -> np.ndarray:
    """Vectorized `u01` over an array of uint64 counters."""
    z = np.uint64(key) + counters.astype(np.uint64) * np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 1.1102230246251565e-16


def u01_keyed(keys: np.ndarray, counters) -> np.ndarray:
    """Vectorized `u01` with per-element keys (broadcast against counters)."""
    z = np.asarray(keys, dtype=np.uint64) + np.asarray(counters, dtype=np.uint64) * np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 1.1102230246251565e-16


def norm_ppf_array(p: np.ndarray) -> np.ndarray:
    """Vectorized AS241 normal inverse CDF."""
    p = np.asarray(p, dtype=np.float64)
    q = p - 0.5
    out = np.empty_like(p)

    central = np.abs(q) <= 0.425
    r = 0.180625 - q[central] * q[central]
    num = (((((((_PA[7] * r + _PA[6]) * r + _PA[5]) * r + _PA[4]) * r
              + _PA[3]) * r + _PA[2]) * r + _PA[1]) * r + _PA[0])
    den = (((((((_PB[6] * r + _PB[5]) * r + _PB[4]) * r + _PB[3]) * r
              + _PB[2]) * r + _PB[1]) * r + _PB[0]) * r + 1.0)
    out[central] = q[central] * num / den

    tail = ~central
    if np.any(tail):
        qt = q[tail]
        rt = np.where(qt < 0.0, p[tail], 1.0 - p[tail])
        rt = np.sqrt(-np.log(rt))
        lo = rt <= 5.0
        val = np.empty_like(rt)

        r1 = rt[lo] - 1.6
        num = (((((((_PC[7] * r1 + _PC[6]) * r1 + _PC[5]) * r1 + _PC[4]) * r1
                  + _PC[3]) * r1 + _PC[2]) * r1 + _PC[1]) * r1 + _PC[0])
        den = (((((((_PD[6] * r1 + _PD[5]) * r1 + _PD[4]) * r1 + _PD[3]) * r1
                  + _PD[2]) * r1 + _PD[1]) * r1 + _PD[0]) * r1 + 1.0)
        val[lo] = num / den

        hi = ~lo
        r2 = rt[hi] - 5.0
        num = (((((((_PE[7] * r2 + _PE[6]) * r2 + _PE[5]) * r2 + _PE[4]) * r2
                  + _PE[3]) * r2 + _PE[2]) * r2 + _PE[1]) * r2 + _PE[0])
        den = (((((((_PF[6] * r2 + _PF[5]) * r2 + _PF[4]) * r2 + _PF[3]) * r2
                  + _PF[2]) * r2 + _PF[1]) * r2 + _PF[0]) * r2 + 1.0)
        val[hi] = num / den

        out[tail] = np.where(qt < 0.0, -val, val)
    return out


def normal_array(key: int, counters: np.ndarray) -> np.ndarray:
    return norm_ppf_array(u01_array(key, counters))
