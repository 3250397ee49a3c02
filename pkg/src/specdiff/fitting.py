"""Parameter recovery: background fraction, joint diffusion-rate fits,
lineshape fits, mixing-rate inversion, and the per-pi-pulse drift bound."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ou import correlation_model

__all__ = [
    "FitResult",
    "compute_beta",
    "fit_A",
    "fit_lineshape",
    "mixing_rate",
    "pi_pulse_sd_bound",
    "FWHM_PER_SIGMA",
]

# Gaussian FWHM = 2*sqrt(2 ln 2) * sigma
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass
class FitResult:
    """Estimates with 1-sigma uncertainties from a least-squares fit."""

    params: dict
    uncertainties: dict
    residual_norm: float
    dof: int
    converged: bool
    flags: tuple = ()

    def __post_init__(self):
        if self.converged:
            if not math.isfinite(self.residual_norm):
                raise ValueError("converged fit must have finite residual norm")
            for name, sig in self.uncertainties.items():
                if not (sig > 0):
                    raise ValueError(f"converged fit needs positive uncertainty for {name}")

    def to_csv(self, path) -> None:
        """parameter,estimate,stderr rows plus fit metadata."""
        lines = ["parameter,estimate,stderr"]
        for name, val in self.params.items():
            sig = self.uncertainties.get(name, float("nan"))
            lines.append(f"{name},{float(val)!r},{float(sig)!r}")
        lines.append(f"residual_norm,{float(self.residual_norm)!r},")
        lines.append(f"dof,{self.dof},")
        lines.append(f"converged,{int(self.converged)},")
        lines.append(f"flags,{'|'.join(self.flags)},")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def compute_beta(r_signal_1: float, r_signal_2: float, r_noise: float) -> float:
    """Background fraction of the normalized correlation from the three
    uncorrelated rates: emitter rates at the two laser frequencies and
    the noise rate.

        beta = R_N (R_N + R_1 + R_2) / [R_N (R_N + R_1 + R_2) + R_1 R_2]
    """
    for name, r in (("r_signal_1", r_signal_1), ("r_signal_2", r_signal_2),
                    ("r_noise", r_noise)):
        if not (r >= 0.0) or not math.isfinite(r):
            raise ValueError(f"{name} must be finite and >= 0, got {r}")
    if r_signal_1 == 0.0 and r_signal_2 == 0.0 and r_noise == 0.0:
        raise ValueError("at least one rate must be positive")
    if r_noise == 0.0:
        return 0.0
    num = r_noise * (r_noise + r_signal_1 + r_signal_2)
    return num / (num + r_signal_1 * r_signal_2)


def _curve_arrays(curve, beta_i):
    """(lags, values, weights) restricted to usable bins: positive lags
    with positive statistical errors."""
    lags = np.asarray(curve.lags)
    vals = np.asarray(curve.values, dtype=np.float64)
    errs = np.asarray(curve.stderr, dtype=np.float64)
    keep = (lags >= 1) & (errs > 0) & np.isfinite(vals)
    return lags[keep], vals[keep], errs[keep], beta_i


def _golden_min(fn, lo, hi, rel_tol):
    """Golden-section minimum of fn on [lo, hi] after a coarse scan."""
    grid = np.linspace(lo, hi, 121)
    vals = np.array([fn(g) for g in grid])
    imin = int(np.argmin(vals))
    at_edge = imin == 0 or imin == len(grid) - 1
    a, b = grid[max(imin - 1, 0)], grid[min(imin + 1, len(grid) - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = fn(x1), fn(x2)
    while (b - a) > rel_tol:
        if f1 < f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = fn(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = fn(x2)
    x = 0.5 * (a + b)
    return x, fn(x), at_edge, float(np.ptp(vals))


def fit_A(curves: Sequence, beta, a_bounds=(1e-5, 3.0), rel_tol=1e-9,
          fit_beta: bool = False) -> FitResult:
    """Joint single-parameter fit of the per-pulse diffusion rate.

    curves: sequence of (CorrelationCurve, delta1, delta2) in sigma units.
    beta: background fraction, fixed externally; a scalar shared by all
    curves or one value per curve.  With fit_beta=True a shared beta is
    floated alongside the rate (sensitivity analysis); the fixed-beta fit
    mirrors how the measurement pins beta from uncorrelated rates.

    Weighted least squares over the scalar rate, minimized by golden-
    section search on log A after a coarse bracket scan (the objective is
    smooth and, on real curves, unimodal).  The 1-sigma uncertainty comes
    from the local curvature of chi^2.

    Bins with zero coincidences carry no stderr and are skipped.  As with
    any per-bin-weighted chi^2 on counting data, bins need adequate
    counts (tens) to keep the observed-count weights from biasing the
    estimate; plan integration time so the deepest anticorrelation bins
    stay populated.
    """
    if len(curves) == 0:
        raise ValueError("need at least one curve")
    betas = np.broadcast_to(np.asarray(beta, dtype=np.float64), (len(curves),))
    if np.any((betas < 0) | (betas > 1)):
        raise ValueError("beta must lie in [0, 1]")
    data = []
    for (curve, d1, d2), b in zip(curves, betas):
        lags, vals, errs, bi = _curve_arrays(curve, float(b))
        if lags.size:
            data.append((lags, vals, errs, float(d1), float(d2), bi))
    npts = sum(d[0].size for d in data)
    n_params = 2 if fit_beta else 1
    if npts <= n_params:
        raise ValueError("curves contain too few usable bins")
    dof = npts - n_params

    def chi2(a, beta_override=None):
        total = 0.0
        for lags, vals, errs, d1, d2, b in data:
            bb = b if beta_override is None else beta_override
            model = correlation_model(d1, d2, a, bb, lags)
            total += float(np.sum(((vals - model) / errs) ** 2))
        return total

    lo, hi = math.log(a_bounds[0]), math.log(a_bounds[1])
    flags = []

    if fit_beta:
        def profile(bv):
            return _golden_min(lambda g: chi2(math.exp(g), bv), lo, hi,
                               rel_tol)[1]

        b_hat, _, b_edge, _ = _golden_min(profile, 0.0, 0.999, rel_tol)
        g_hat, chi_min, a_edge, span = _golden_min(
            lambda g: chi2(math.exp(g), b_hat), lo, hi, rel_tol)
        a_hat = math.exp(g_hat)
        if a_edge or b_edge:
            flags.append("unidentifiable")
    else:
        b_hat = None
        g_hat, chi_min, a_edge, span = _golden_min(
            lambda g: chi2(math.exp(g)), lo, hi, rel_tol)
        a_hat = math.exp(g_hat)
        if a_edge:
            flags.append("unidentifiable")

    # curvature in the physical parameters for the 1-sigma intervals
    h = max(1e-4 * a_hat, 1e-9)
    caa = (chi2(a_hat + h, b_hat) - 2.0 * chi_min
           + chi2(a_hat - h, b_hat)) / (h * h)
    identifiable = caa > 0 and math.isfinite(caa)
    if span < 1e-6 * max(chi_min, 1.0) + 1e-12:
        identifiable = False

    uncertainties = {}
    if fit_beta and identifiable:
        hb = 1e-5
        cbb = (chi2(a_hat, min(b_hat + hb, 1.0)) - 2.0 * chi_min
               + chi2(a_hat, max(b_hat - hb, 0.0))) / (hb * hb)
        cab = (chi2(a_hat + h, min(b_hat + hb, 1.0))
               - chi2(a_hat + h, max(b_hat - hb, 0.0))
               - chi2(a_hat - h, min(b_hat + hb, 1.0))
               + chi2(a_hat - h, max(b_hat - hb, 0.0))) / (4 * h * hb)
        hess = np.array([[caa, cab], [cab, cbb]])
        try:
            cov = 2.0 * np.linalg.inv(hess)
            if cov[0, 0] > 0 and cov[1, 1] > 0:
                uncertainties = {"A": math.sqrt(cov[0, 0]),
                                 "beta": math.sqrt(cov[1, 1])}
            else:
                identifiable = False
        except np.linalg.LinAlgError:
            identifiable = False
    elif identifiable:
        uncertainties = {"A": math.sqrt(2.0 / caa)}

    if not identifiable and "unidentifiable" not in flags:
        flags.append("unidentifiable")
    converged = "unidentifiable" not in flags
    params = {"A": a_hat}
    if fit_beta:
        params["beta"] = b_hat
    return FitResult(
        params=params,
        uncertainties=uncertainties if converged else {},
        residual_norm=math.sqrt(chi_min),
        dof=dof,
        converged=converged,
        flags=tuple(flags),
    )


def _lorentzian(x, centre, fwhm, amplitude, offset):
    u = 2.0 * (x - centre) / fwhm
    return offset + amplitude / (1.0 + u * u)


def _gaussian(x, centre, fwhm, amplitude, offset):
    sigma = fwhm / FWHM_PER_SIGMA
    u = (x - centre) / sigma
    return offset + amplitude * np.exp(-0.5 * u * u)


_SHAPES = {"lorentzian": _lorentzian, "gaussian": _gaussian}


def _initial_peak_guess(x, y):
    offset = float(np.min(y))
    amp = float(np.max(y) - offset)
    centre = float(x[np.argmax(y)])
    half = offset + 0.5 * amp
    above = y >= half
    if above.sum() >= 2:
        fwhm = float(x[above].max() - x[above].min())
    else:
        fwhm = float((x.max() - x.min()) / 4.0)
    if fwhm <= 0:
        fwhm = float(np.ptp(x)) / 4.0 or 1.0
    return np.array([centre, fwhm, amp, offset])


def fit_lineshape(freqs, counts, shape: str = "lorentzian",
                  stderr: Optional[np.ndarray] = None,
                  rel_tol: float = 1e-9, max_iter: int = 200) -> FitResult:
    """Nonlinear least-squares peak fit returning centre, FWHM, amplitude
    and offset.

    Damped Gauss-Newton (Levenberg style) with forward-difference
    Jacobians; the Gaussian FWHM honours FWHM = 2*sqrt(2 ln 2) * sigma.
    Flat input is flagged degenerate instead of raising.
    """
    if shape not in _SHAPES:
        raise ValueError(f"shape must be one of {sorted(_SHAPES)}, got {shape!r}")
    x = np.asarray(freqs, dtype=np.float64)
    y = np.asarray(counts, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("freqs and counts must be 1-d arrays of equal length")
    if x.size < 5:
        raise ValueError(f"need at least 5 points spanning the peak, got {x.size}")
    w = np.ones_like(y) if stderr is None else 1.0 / np.asarray(stderr, dtype=np.float64)
    model = _SHAPES[shape]
    names = ("centre", "fwhm", "amplitude", "offset")

    span = float(np.ptp(y))
    if span <= 0 or span < 1e-12 * max(abs(float(np.max(y))), 1.0):
        return FitResult(params=dict(zip(names, _initial_peak_guess(x, y))),
                         uncertainties={}, residual_norm=float(np.hypot.reduce((y - np.mean(y)) * w)),
                         dof=x.size - 4, converged=False, flags=("degenerate",))

    p = _initial_peak_guess(x, y)

    def residuals(p):
        return (model(x, p[0], abs(p[1]), p[2], p[3]) - y) * w

    y_span = float(np.ptp(y)) or 1.0

    def numeric_jacobian(p, r):
        # forward differences with per-parameter scales: the centre and
        # width steps follow the peak width, not the axis origin
        scales = (max(abs(p[0]), abs(p[1])), abs(p[1]) or 1.0,
                  max(abs(p[2]), y_span), max(abs(p[3]), y_span))
        jac = np.empty((x.size, 4))
        for k in range(4):
            dp = 1e-7 * scales[k]
            pk = p.copy()
            pk[k] += dp
            jac[:, k] = (residuals(pk) - r) / dp
        return jac

    r = residuals(p)
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    for _ in range(max_iter):
        jac = numeric_jacobian(p, r)
        jtj = jac.T @ jac
        g = jac.T @ r
        step_ok = False
        for _ in range(40):
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj).clip(min=1e-30)), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            p_new = p + delta
            r_new = residuals(p_new)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost:
                step_ok = True
                break
            lam *= 10.0
        if not step_ok:
            break
        rel_move = float(np.max(np.abs(delta) / (np.abs(p) + 1e-30)))
        p, r, cost = p_new, r_new, cost_new
        lam = max(lam * 0.1, 1e-12)
        if rel_move < rel_tol:
            converged = True
            break
    p[1] = abs(p[1])

    dof = max(x.size - 4, 1)
    flags = []
    uncertainties = {}
    if converged:
        jac = numeric_jacobian(p, r)
        jtj = jac.T @ jac
        try:
            cov = np.linalg.inv(jtj)
            # exactly-noiseless data leaves zero residuals; keep the
            # reported uncertainty positive but negligible
            scale = max(cost / dof, np.finfo(float).tiny) if stderr is None else 1.0
            sig = np.sqrt(np.clip(np.diag(cov) * scale, 0.0, None))
            if np.all(np.isfinite(sig)) and np.all(sig > 0):
                uncertainties = dict(zip(names, sig))
            else:
                converged = False
                flags.append("singular-covariance")
        except np.linalg.LinAlgError:
            converged = False
            flags.append("singular-covariance")
    else:
        flags.append("no-convergence")

    return FitResult(
        params=dict(zip(names, p)),
        uncertainties=uncertainties,
        residual_norm=math.sqrt(cost),
        dof=dof,
        converged=converged,
        flags=tuple(flags),
    )


def mixing_rate(n1: float, n2: float, pulse_ns: float) -> float:
    """Effective two-state mixing rate from end-of-pulse populations:

        gamma = ln((n2 + n1) / (n2 - n1)) / (2 T)

    n1: monitored-state population with the opposite state prepared;
    n2: with the monitored state prepared.  n1 >= n2 indicates inverted
    preparation labels in the data and is rejected.
    """
    if not (pulse_ns > 0):
        raise ValueError(f"pulse duration must be > 0, got {pulse_ns}")
    if n1 < 0 or n2 < 0:
        raise ValueError(f"populations must be >= 0, got n1={n1}, n2={n2}")
    if not (n1 < n2):
        raise ValueError(
            f"need n1 < n2 (gamma diverges at equality; n1 > n2 suggests "
            f"swapped preparation labels), got n1={n1}, n2={n2}"
        )
    return math.log((n2 + n1) / (n2 - n1)) / (2.0 * pulse_ns)


def pi_pulse_sd_bound(a_per_pulse: float, t_pulse_ns: float, t_pi_ns: float,
                      sigma_inhom_hz: float) -> float:
    """Linewidth accumulated by spectral diffusion during one pi-pulse.

    The detuning kernel over t_pi is Gaussian with standard deviation
    sigma * sqrt(1 - exp(-2 alpha t_pi)), alpha = A / t_pulse; the value
    returned is its FWHM (2 sqrt(2 ln 2) times that), the convention in
    which per-pulse drift is quoted against hole linewidths.  For small
    arguments this reduces to the diffusive FWHM_PER_SIGMA*sigma*sqrt(2
    alpha t_pi).
    """
    if a_per_pulse < 0:
        raise ValueError(f"per-pulse rate must be >= 0, got {a_per_pulse}")
    for name, v in (("t_pulse_ns", t_pulse_ns), ("t_pi_ns", t_pi_ns),
                    ("sigma_inhom_hz", sigma_inhom_hz)):
        if not (v > 0):
            raise ValueError(f"{name} must be > 0, got {v}")
    alpha = a_per_pulse / t_pulse_ns
    sd_sigma = math.sqrt(-math.expm1(-2.0 * alpha * t_pi_ns))
    return FWHM_PER_SIGMA * sigma_inhom_hz * sd_sigma
