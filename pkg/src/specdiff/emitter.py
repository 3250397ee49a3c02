"""Emitter physics and pulse-sequence descriptions.

The excitation response is a saturable Lorentzian: with laser power s in
saturation units and a unit-peak Lorentzian L of FWHM gamma_hom,

    p_exc(detuning) = p_max * s L / (1 + s L),

which is exactly a rescaled Lorentzian of FWHM gamma_hom * sqrt(1 + s)
and peak p_max * s/(1+s) — saturation and power broadening in one line.
At P_sat the on-resonance value is p_max/2 by construction.

Detunings are converted to sigma units (units of the inhomogeneous
standard deviation) here, at the module boundary, and nowhere else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import voigt_profile

from .fitting import FWHM_PER_SIGMA

__all__ = [
    "EmitterModel",
    "Pulse",
    "PulseSequence",
    "SpinMixModel",
    "excitation_probability",
    "window_capture_fraction",
    "expected_signal_rate",
    "background_rate_per_ns",
]


@dataclass(frozen=True)
class EmitterModel:
    """Physical parameters of one emitter.

    a_per_pulse is the per-pulse diffusion rate at the reference power
    (P_sat); it scales linearly with pulse power.  alpha_dark is the
    independent dark-interval rate, zero by default because diffusion is
    observed to be pulse-driven.  beta is the background-to-total count
    ratio in a line-centre detection window; bg_rate_per_ns, when set,
    bypasses the beta conversion and fixes the Poisson background rate
    directly.
    """

    sigma_inhom_hz: float
    gamma_hom_hz: float
    lifetime_ns: float
    a_per_pulse: float
    alpha_dark_per_us: float = 0.0
    beta: float = 0.0
    eta_det: float = 1.0
    p_max: float = 1.0
    f0_hz: float = 0.0
    bg_rate_per_ns: Optional[float] = None

    def __post_init__(self):
        if not (self.sigma_inhom_hz > 0):
            raise ValueError(f"sigma_inhom_hz must be > 0, got {self.sigma_inhom_hz}")
        if not (0 < self.gamma_hom_hz < FWHM_PER_SIGMA * self.sigma_inhom_hz):
            raise ValueError(
                "gamma_hom_hz must be positive and below the inhomogeneous FWHM "
                f"(temporally broadened regime), got {self.gamma_hom_hz}"
            )
        if not (self.lifetime_ns > 0):
            raise ValueError(f"lifetime_ns must be > 0, got {self.lifetime_ns}")
        if self.a_per_pulse < 0 or self.alpha_dark_per_us < 0:
            raise ValueError("diffusion rates must be >= 0")
        if not (0.0 <= self.beta <= 1.0):
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if not (0.0 < self.eta_det <= 1.0):
            raise ValueError(f"eta_det must be in (0, 1], got {self.eta_det}")
        if not (0.0 < self.p_max <= 1.0):
            raise ValueError(f"p_max must be in (0, 1], got {self.p_max}")
        if self.bg_rate_per_ns is not None and self.bg_rate_per_ns < 0:
            raise ValueError("bg_rate_per_ns must be >= 0")

    def a_at_power(self, power: float) -> float:
        """Per-pulse diffusion rate at `power` (in P_sat units)."""
        return self.a_per_pulse * power

    @property
    def gamma_sigma(self) -> float:
        """Homogeneous FWHM in sigma units."""
        return self.gamma_hom_hz / self.sigma_inhom_hz


def excitation_probability(emitter: EmitterModel, detuning_hz, power: float):
    """p_exc as a function of laser-minus-emitter detuning in Hz."""
    if power < 0:
        raise ValueError(f"power must be >= 0, got {power}")
    if power == 0.0:
        return np.zeros_like(np.asarray(detuning_hz, dtype=np.float64))
    width = emitter.gamma_hom_hz * math.sqrt(1.0 + power)
    u = 2.0 * np.asarray(detuning_hz, dtype=np.float64) / width
    return emitter.p_max * (power / (1.0 + power)) / (1.0 + u * u)


def window_capture_fraction(emitter: EmitterModel, window_offset_ns: float,
                            window_length_ns: float) -> float:
    """Probability that an exponential emission delay lands inside the
    detection window."""
    tau = emitter.lifetime_ns
    return math.exp(-window_offset_ns / tau) - math.exp(
        -(window_offset_ns + window_length_ns) / tau
    )


def expected_signal_rate(emitter: EmitterModel, laser_offset_hz: float,
                         power: float, window_offset_ns: float,
                         window_length_ns: float) -> float:
    """Detected signal photons per pulse with the emitter detuning in its
    stationary (unit normal, sigma units) distribution.

    The average of the power-broadened Lorentzian over the Gaussian is a
    Voigt profile, evaluated in closed form.
    """
    if power == 0.0:
        return 0.0
    g_eff = emitter.gamma_sigma * math.sqrt(1.0 + power)  # FWHM, sigma units
    d = laser_offset_hz / emitter.sigma_inhom_hz
    # unit-peak Lorentzian = (pi * HWHM) * Cauchy density
    mean_l = math.pi * (g_eff / 2.0) * voigt_profile(d, 1.0, g_eff / 2.0)
    peak = emitter.p_max * power / (1.0 + power)
    q = window_capture_fraction(emitter, window_offset_ns, window_length_ns)
    return peak * mean_l * emitter.eta_det * q


def background_rate_per_ns(emitter: EmitterModel, ref_power: float,
                           window_offset_ns: float,
                           window_length_ns: float) -> float:
    """Poisson background rate implied by beta.

    beta is the background-to-total ratio in a line-centre window at the
    reference conditions, so lam = beta/(1-beta) * signal rate, spread
    uniformly over the window.  An explicit bg_rate_per_ns wins.
    """
    if emitter.bg_rate_per_ns is not None:
        return emitter.bg_rate_per_ns
    if emitter.beta == 0.0:
        return 0.0
    if emitter.beta >= 1.0:
        raise ValueError(
            "beta = 1 has no finite implied rate; set bg_rate_per_ns explicitly"
        )
    r_sig = expected_signal_rate(emitter, 0.0, ref_power, window_offset_ns,
                                 window_length_ns)
    if r_sig == 0.0 or window_length_ns == 0.0:
        raise ValueError(
            "cannot convert beta to a rate with zero line-centre signal; "
            "set bg_rate_per_ns explicitly"
        )
    return emitter.beta / (1.0 - emitter.beta) * r_sig / window_length_ns


@dataclass(frozen=True)
class Pulse:
    """One excitation pulse and the dark gap after it."""

    frequency_offset_hz: float
    power: float
    duration_ns: float
    dark_after_ns: float
    channel_label: int

    def __post_init__(self):
        if self.duration_ns < 0 or self.dark_after_ns < 0:
            raise ValueError("durations and dark times must be >= 0")
        if self.power < 0:
            raise ValueError(f"power must be >= 0, got {self.power}")
        if self.channel_label < 0:
            raise ValueError("channel labels must be >= 0")

    @property
    def period_ns(self) -> float:
        return self.duration_ns + self.dark_after_ns


@dataclass(frozen=True)
class PulseSequence:
    """Repeating pulse pattern with detection-window gating.

    The detection window of each pulse starts window_offset_ns after the
    pulse start and runs for window_length_ns (default: to the start of
    the next pulse).  hbt_split routes every record to one of two
    detector channels at random, as behind a 50/50 splitter.
    """

    pulses: Tuple[Pulse, ...]
    repeats: int
    window_offset_ns: float = 0.0
    window_length_ns: Optional[float] = None
    hbt_split: bool = False

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        if not self.pulses:
            raise ValueError("sequence needs at least one pulse")
        if self.repeats < 1:
            raise ValueError(f"repeats must be >= 1, got {self.repeats}")
        labels = sorted({p.channel_label for p in self.pulses})
        if labels != list(range(len(labels))):
            raise ValueError(f"channel labels must be dense from 0, got {labels}")
        if self.window_offset_ns < 0:
            raise ValueError("window_offset_ns must be >= 0")
        if self.window_length_ns is not None and self.window_length_ns < 0:
            raise ValueError("window_length_ns must be >= 0")
        for p in self.pulses:
            off, length = self.window_for(p)
            if off + length > p.period_ns + 1e-9:
                raise ValueError(
                    "detection window must fit within the pulse period "
                    f"(offset {off} + length {length} > period {p.period_ns})"
                )

    def window_for(self, pulse: Pulse):
        off = self.window_offset_ns
        if self.window_length_ns is None:
            return off, max(pulse.period_ns - off, 0.0)
        return off, self.window_length_ns

    @property
    def pattern_length(self) -> int:
        return len(self.pulses)

    @property
    def n_pulses(self) -> int:
        return len(self.pulses) * self.repeats

    @property
    def period_ns(self) -> float:
        return sum(p.period_ns for p in self.pulses)

    @property
    def n_channels(self) -> int:
        if self.hbt_split:
            return 2
        return max(p.channel_label for p in self.pulses) + 1

    @classmethod
    def single_laser(cls, offset_hz: float, power: float, duration_ns: float,
                     dark_after_ns: float, n_pulses: int, hbt_split: bool = False,
                     **kw) -> "PulseSequence":
        pulse = Pulse(offset_hz, power, duration_ns, dark_after_ns, 0)
        return cls(pulses=(pulse,), repeats=n_pulses, hbt_split=hbt_split, **kw)

    @classmethod
    def two_colour(cls, offset1_hz: float, offset2_hz: float, power: float,
                   duration_ns: float, dark_after_ns: float, repeats: int,
                   **kw) -> "PulseSequence":
        """Alternating excitation at two frequencies, one channel each."""
        p1 = Pulse(offset1_hz, power, duration_ns, dark_after_ns, 0)
        p2 = Pulse(offset2_hz, power, duration_ns, dark_after_ns, 1)
        return cls(pulses=(p1, p2), repeats=repeats, **kw)


@dataclass(frozen=True)
class SpinMixModel:
    """Symmetric two-state mixing of the optically excited spin during a
    pulse of duration pulse_ns, followed by free exponential decay."""

    gamma_mix_per_ns: float
    lifetime_ns: float
    pulse_ns: float
    init_fidelity: float = 1.0

    def __post_init__(self):
        if self.gamma_mix_per_ns < 0:
            raise ValueError(f"gamma_mix_per_ns must be >= 0, got {self.gamma_mix_per_ns}")
        if not (self.lifetime_ns > 0) or not (self.pulse_ns > 0):
            raise ValueError("lifetime_ns and pulse_ns must be > 0")
        if not (0.0 <= self.init_fidelity <= 1.0):
            raise ValueError(f"init_fidelity must be in [0, 1], got {self.init_fidelity}")
