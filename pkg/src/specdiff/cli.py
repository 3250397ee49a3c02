"""Command-line interface.

Subcommands: simulate, correlate, fit, rc, speedup, mix.  Stochastic
commands require an explicit --seed (no wall-clock default), and each
run writes a JSON sidecar with the config hash, seed, and tool version
so any output can be regenerated exactly.

Exit codes: 0 success, 1 configuration or validation error, 2 I/O
error, 3 numerical non-convergence (fit commands under --strict).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backend import active_backend
from .config import (
    ConfigError,
    build_emitter,
    build_sequence,
    build_spin_model,
    config_sha256,
    load_config,
    read_rc_section,
    read_speedup_section,
)
from .correlate import CorrelationCurve, g2_pulsed, two_colour_correlate
from .events import BinaryEventWriter, CsvEventWriter, EventStream
from .fitting import compute_beta, fit_A, fit_lineshape, mixing_rate
from .pulsesim import (rc_ple_scan, run_rc_sequence,
                       simulate_spin_mixing, stream_sequence_events)
from .rcstats import speedup_grid

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NOCONV = 3


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _write_sidecar(out_path: Path, command: str, config_path, seed, extra=None,
                   overrides=None):
    meta = {
        "tool": "specdiff",
        "version": __version__,
        "backend": active_backend(),
        "command": command,
        "seed": seed,
    }
    if config_path is not None:
        meta["config"] = str(config_path)
        meta["config_sha256"] = config_sha256(config_path)
    if overrides:
        meta["overrides"] = list(overrides)
    if extra:
        meta.update(extra)
    side = out_path.with_suffix(out_path.suffix + ".json")
    with open(side, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _apply_overrides(cfg, overrides):
    """Apply --set SECTION.KEY=VALUE entries on top of the config file."""
    import yaml

    for item in overrides or []:
        if "=" not in item:
            raise CliError(EXIT_CONFIG,
                           f"--set needs SECTION.KEY=VALUE, got {item!r}")
        path, _, raw = item.partition("=")
        keys = path.strip().split(".")
        if not all(keys):
            raise CliError(EXIT_CONFIG, f"bad --set path {path!r}")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise CliError(EXIT_CONFIG, f"bad --set value {raw!r}")
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise CliError(EXIT_CONFIG,
                               f"--set path {path!r} crosses a non-mapping")
        node[keys[-1]] = value
    return cfg


def _load_cfg(path, overrides=None):
    try:
        cfg = load_config(path)
    except FileNotFoundError:
        raise CliError(EXIT_IO, f"config file not found: {path}")
    return _apply_overrides(cfg, overrides)


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args.config, args.set)
    emitter = build_emitter(cfg)
    seq = build_sequence(cfg)
    out = Path(args.output)
    # stream chunk by chunk so peak memory tracks the chunk, not the run
    try:
        if args.csv:
            writer = CsvEventWriter(out)
        else:
            writer = BinaryEventWriter(out, seq.n_pulses)
        with writer:
            for chunk in stream_sequence_events(emitter, seq, seed=args.seed,
                                                threads=args.threads):
                writer.append(*chunk)
        n_events = writer.n_events
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {out}: {exc}")
    _write_sidecar(out, "simulate", args.config, args.seed,
                   {"n_pulses": seq.n_pulses, "n_events": n_events,
                    "format": "csv" if args.csv else "binary"},
                   overrides=args.set)
    print(f"simulate: {n_events} events over {seq.n_pulses} pulses -> {out}")
    return EXIT_OK


def _read_stream(path) -> EventStream:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_IO, f"stream file not found: {p}")
    try:
        return EventStream.from_binary(p)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"cannot parse stream {p}: {exc}")


def _parse_window(text):
    try:
        lo, hi = text.split(":")
        return int(lo), int(hi)
    except Exception:
        raise CliError(EXIT_CONFIG, f"--window must be LO:HI, got {text!r}")


def cmd_correlate(args) -> int:
    stream = _read_stream(args.stream)
    window = _parse_window(args.window)
    try:
        if args.mode == "g2":
            curve = g2_pulsed(stream, long_lag_window=window,
                              max_lag=args.max_lag)
        else:
            curve = two_colour_correlate(stream, args.channel_a,
                                         args.channel_b,
                                         long_lag_window=window,
                                         max_lag=args.max_lag)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"correlation failed: {exc}")
    out = Path(args.output)
    try:
        curve.to_csv(out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {out}: {exc}")
    print(f"correlate: {curve.lags.size} lags, plateau rate "
          f"{curve.normalization:.3e} -> {out}")
    return EXIT_OK


def _parse_curve_spec(spec):
    parts = spec.split(":")
    if len(parts) != 3:
        raise CliError(EXIT_CONFIG,
                       f"--curve must be FILE:DELTA1:DELTA2, got {spec!r}")
    path, d1, d2 = parts
    try:
        return path, float(d1), float(d2)
    except ValueError:
        raise CliError(EXIT_CONFIG, f"bad detunings in curve spec {spec!r}")


def cmd_fit(args) -> int:
    out = Path(args.output)
    if args.rates is not None and not args.curve:
        beta = compute_beta(*args.rates)
        with open(out, "w") as fh:
            fh.write("parameter,estimate,stderr\n")
            fh.write(f"beta,{beta!r},\n")
        print(f"fit: beta = {beta:.6f} -> {out}")
        return EXIT_OK

    if args.lineshape is not None:
        data = np.loadtxt(args.lineshape, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] < 2:
            raise CliError(EXIT_CONFIG, "lineshape CSV needs freq,counts columns")
        stderr = data[:, 2] if data.shape[1] > 2 else None
        fit = fit_lineshape(data[:, 0], data[:, 1], shape=args.shape,
                            stderr=stderr)
        fit.to_csv(out)
        print(f"fit: {args.shape} fwhm = {fit.params['fwhm']:.6g} "
              f"(converged={fit.converged}) -> {out}")
        if args.strict and not fit.converged:
            raise CliError(EXIT_NOCONV, "lineshape fit did not converge")
        return EXIT_OK

    if not args.curve:
        raise CliError(EXIT_CONFIG,
                       "nothing to fit: give --curve, --rates, or --lineshape")
    curves = []
    for spec in args.curve:
        path, d1, d2 = _parse_curve_spec(spec)
        if not Path(path).exists():
            raise CliError(EXIT_IO, f"curve file not found: {path}")
        curves.append((CorrelationCurve.from_csv(path), d1, d2))
    if args.rates is not None:
        beta = compute_beta(*args.rates)
    elif args.beta is not None:
        beta = args.beta
    else:
        raise CliError(EXIT_CONFIG, "the rate fit needs --beta or --rates")
    fit = fit_A(curves, beta=beta, fit_beta=args.fit_beta)
    fit.to_csv(out)
    flag = "" if fit.converged else f" [{'|'.join(fit.flags)}]"
    print(f"fit: A = {fit.params['A']:.6g}{flag} -> {out}")
    if args.strict and not fit.converged:
        raise CliError(EXIT_NOCONV, "rate fit did not converge")
    return EXIT_OK


def cmd_rc(args) -> int:
    cfg = _load_cfg(args.config, args.set)
    emitter = build_emitter(cfg)
    rc = read_rc_section(cfg)
    outdir = Path(args.output)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create {outdir}: {exc}")

    kwargs = dict(cap=rc["cap"], pulse_duration_ns=rc["pulse_duration_ns"],
                  gap_ns=rc["gap_ns"], threads=args.threads)
    outcomes = run_rc_sequence(
        emitter, rc["check_offset_hz"], rc["probe_offset_hz"],
        rc["check_power"], rc["probe_power"], rc["tau_dark_ns"],
        rc["shots"], seed=args.seed, **kwargs)
    out_csv = outdir / "rc_outcomes.csv"
    outcomes.to_csv(out_csv)
    p, se = outcomes.conditional_detection()
    print(f"rc: heralded {int(outcomes.heralded.sum())}/{outcomes.n_shots} "
          f"shots, censored {int(outcomes.censored.sum())}, conditional "
          f"detection {p:.4g} +/- {se:.2g}")

    extra = {"shots": rc["shots"], "censored": int(outcomes.censored.sum())}
    if rc["scan"] is not None:
        scan = rc["scan"]
        freqs = np.linspace(scan["start_hz"], scan["stop_hz"], scan["points"])
        shots_pp = scan["shots_per_point"] or rc["shots"]
        f, pr, er, nh, nc = rc_ple_scan(
            emitter, rc["check_offset_hz"], freqs, rc["check_power"],
            rc["probe_power"], rc["tau_dark_ns"], shots_pp, seed=args.seed,
            **kwargs)
        scan_csv = outdir / "rc_lineshape.csv"
        with open(scan_csv, "w") as fh:
            fh.write("freq_hz,prob,stderr,heralds,censored\n")
            for row in zip(f, pr, er, nh, nc):
                fh.write(f"{float(row[0])!r},{float(row[1])!r},"
                         f"{float(row[2])!r},{int(row[3])},{int(row[4])}\n")
        good = np.isfinite(pr)
        fit = fit_lineshape(f[good], pr[good], shape="lorentzian",
                            stderr=np.where(er[good] > 0, er[good], np.inf))
        fit.to_csv(outdir / "rc_lineshape_fit.csv")
        extra["scan_points"] = int(scan["points"])
        print(f"rc: conditioned lineshape fwhm = {fit.params['fwhm']:.4g} Hz "
              f"(converged={fit.converged}) -> {scan_csv}")
    _write_sidecar(out_csv, "rc", args.config, args.seed, extra,
                   overrides=args.set)
    return EXIT_OK


def cmd_speedup(args) -> int:
    cfg = _load_cfg(args.config, args.set)
    sp = read_speedup_section(cfg)
    ns = list(range(sp["n_min"], sp["n_max"] + 1))
    if sp["eta_det_points"] == 1:
        etas = [sp["eta_det_min"]]
    else:
        etas = list(np.geomspace(sp["eta_det_min"], sp["eta_det_max"],
                                 sp["eta_det_points"]))
    grid, flags = speedup_grid(ns, etas, sp["eta_sd"], sp["eta_sd_rc"])
    out = Path(args.output)
    try:
        with open(out, "w") as fh:
            fh.write("N,eta_det,speedup,flag_le1\n")
            for i, n in enumerate(ns):
                for j, eta in enumerate(etas):
                    fh.write(f"{n},{float(eta)!r},{float(grid[i, j])!r},"
                             f"{int(flags[i, j])}\n")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {out}: {exc}")
    frac = float(np.mean(~flags))
    print(f"speedup: {len(ns)}x{len(etas)} grid, {frac:.0%} of cells above 1 "
          f"-> {out}")
    return EXIT_OK


def cmd_mix(args) -> int:
    cfg = _load_cfg(args.config, args.set)
    model, shots, n_bins = build_spin_model(cfg)
    outdir = Path(args.output)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create {outdir}: {exc}")
    res = {
        s: simulate_spin_mixing(model, s, shots=shots, seed=args.seed,
                                n_bins=n_bins)
        for s in (1, 2)
    }
    n1, n2 = res[2].n_target, res[1].n_target
    pop_csv = outdir / "mix_populations.csv"
    with open(pop_csv, "w") as fh:
        fh.write("parameter,estimate,stderr\n")
        fh.write(f"n1,{float(n1)!r},\n")
        fh.write(f"n2,{float(n2)!r},\n")
        if 0 <= n1 < n2:
            gamma = mixing_rate(n1, n2, model.pulse_ns)
            fh.write(f"gamma_per_ns,{float(gamma)!r},\n")
    for s, r in res.items():
        with open(outdir / f"mix_transient_prepared{s}.csv", "w") as fh:
            fh.write("t_lo_ns,t_hi_ns,counts\n")
            for lo, hi, c in zip(r.bin_edges[:-1], r.bin_edges[1:], r.transient):
                fh.write(f"{float(lo)!r},{float(hi)!r},{float(c)!r}\n")
    _write_sidecar(pop_csv, "mix", args.config, args.seed, {"shots": shots},
                   overrides=args.set)
    print(f"mix: n1/n2 = {n1:.5f}/{n2:.5f} -> {outdir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specdiff",
        description="Spectral-diffusion simulation and inference toolkit",
    )
    parser.add_argument("--version", action="version",
                        version=f"specdiff {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a pulse sequence to an event stream")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--csv", action="store_true",
                   help="write CSV instead of the binary format")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config field")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads (the result is thread-count independent)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("correlate", help="estimate a correlation curve from a stream")
    p.add_argument("stream")
    p.add_argument("--mode", choices=("g2", "two-colour"), default="g2")
    p.add_argument("--channel-a", type=int, default=0)
    p.add_argument("--channel-b", type=int, default=1)
    p.add_argument("--window", default="200:400",
                   help="long-lag normalization window LO:HI")
    p.add_argument("--max-lag", type=int, default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("fit", help="fit curves, rates, or lineshapes")
    p.add_argument("--curve", action="append", default=[],
                   metavar="FILE:DELTA1:DELTA2",
                   help="correlation curve with its detunings in sigma units")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--rates", type=float, nargs=3, default=None,
                   metavar=("R1", "R2", "RN"),
                   help="uncorrelated rates for the beta expression")
    p.add_argument("--lineshape", default=None,
                   help="CSV of freq,counts[,stderr] to fit instead")
    p.add_argument("--shape", choices=("lorentzian", "gaussian"),
                   default="lorentzian")
    p.add_argument("--fit-beta", action="store_true",
                   help="float a shared background fraction with the rate")
    p.add_argument("--strict", action="store_true",
                   help="exit 3 when the fit does not converge")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rc", help="run the resonance-check protocol")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config field")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads (the result is thread-count independent)")
    p.set_defaults(func=cmd_rc)

    p = sub.add_parser("speedup", help="tabulate the preparation speedup grid")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config field")
    p.set_defaults(func=cmd_speedup)

    p = sub.add_parser("mix", help="simulate excited-state spin mixing")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config field")
    p.set_defaults(func=cmd_mix)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
