"""Spectral diffusion simulation and inference for single optical emitters.

Simulates photon event streams from an emitter whose transition frequency
wanders under a laser-driven mean-reverting (Ornstein-Uhlenbeck) process,
estimates pulse-resolved correlation functions from those streams, recovers
the diffusion parameters by fitting, and evaluates the combinatorics of
resonance-check preparation for multi-emitter experiments.
"""

from .backend import active_backend
from .ou import (
    OUParams,
    SpectralState,
    ChargeBath,
    ou_step,
    ou_propagate,
    ou_sample_stationary,
    ou_evolve_ensemble,
    ou_conditional_density,
    ou_short_time_density,
    correlation_model,
    bath_step,
    bath_autocorrelation,
)
from .emitter import (
    EmitterModel,
    Pulse,
    PulseSequence,
    SpinMixModel,
    excitation_probability,
    window_capture_fraction,
    expected_signal_rate,
    background_rate_per_ns,
)
from .events import EventStream, ORIGIN_SIGNAL, ORIGIN_BACKGROUND
from .pulsesim import (
    run_sequence,
    RCOutcomes,
    run_rc_sequence,
    rc_ple_scan,
    SpinMixResult,
    simulate_spin_mixing,
    mixing_populations,
)
from .correlate import CorrelationCurve, g2_pulsed, two_colour_correlate
from .fitting import (
    FitResult,
    FWHM_PER_SIGMA,
    compute_beta,
    fit_A,
    fit_lineshape,
    mixing_rate,
    pi_pulse_sd_bound,
)
from .rcstats import (
    RCProtocolParams,
    expected_attempts_closed,
    expected_attempts_tailsum,
    mc_attempts,
    speedup,
    speedup_grid,
    expected_prep_times,
)

__version__ = "0.1.0"
