"""Run-configuration loading and validation for the command line.

Configs are YAML with explicit units in key names (sigma_inhom_ghz,
duration_ns, power_psat).  Unknown keys are rejected, and every
validation error carries the dotted path of the offending field.
"""

from __future__ import annotations

import hashlib

import yaml

from .emitter import EmitterModel, Pulse, PulseSequence, SpinMixModel

__all__ = ["ConfigError", "load_config", "config_sha256", "build_emitter",
           "build_sequence", "build_spin_model"]


class ConfigError(ValueError):
    """Invalid configuration; `path` points at the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML ({exc})")
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    return raw


def config_sha256(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _section(cfg: dict, name: str) -> dict:
    if name not in cfg:
        raise ConfigError(name, "section missing")
    sec = cfg[name]
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a mapping")
    return sec


class _Fields:
    """Typed field reader that tracks unknown keys."""

    def __init__(self, data: dict, path: str):
        self.data = dict(data)
        self.path = path
        self.seen = set()

    def _get(self, key, default, required):
        self.seen.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(f"{self.path}.{key}", "required field missing")
            return default
        return self.data[key]

    def number(self, key, default=None, required=False, minimum=None,
               maximum=None):
        val = self._get(key, default, required)
        if val is None:
            return None
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{self.path}.{key}", f"expected a number, got {val!r}")
        val = float(val)
        if minimum is not None and val < minimum:
            raise ConfigError(f"{self.path}.{key}", f"must be >= {minimum}, got {val}")
        if maximum is not None and val > maximum:
            raise ConfigError(f"{self.path}.{key}", f"must be <= {maximum}, got {val}")
        return val

    def integer(self, key, default=None, required=False, minimum=None):
        val = self._get(key, default, required)
        if val is None:
            return None
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{self.path}.{key}", f"expected an integer, got {val!r}")
        if minimum is not None and val < minimum:
            raise ConfigError(f"{self.path}.{key}", f"must be >= {minimum}, got {val}")
        return val

    def boolean(self, key, default=False):
        val = self._get(key, default, False)
        if not isinstance(val, bool):
            raise ConfigError(f"{self.path}.{key}", f"expected true/false, got {val!r}")
        return val

    def string(self, key, default=None, required=False, choices=None):
        val = self._get(key, default, required)
        if val is None:
            return None
        if not isinstance(val, str):
            raise ConfigError(f"{self.path}.{key}", f"expected a string, got {val!r}")
        if choices and val not in choices:
            raise ConfigError(f"{self.path}.{key}",
                              f"must be one of {sorted(choices)}, got {val!r}")
        return val

    def list_of_maps(self, key, required=False):
        val = self._get(key, None, required)
        if val is None:
            return None
        if not isinstance(val, list) or not all(isinstance(v, dict) for v in val):
            raise ConfigError(f"{self.path}.{key}", "expected a list of mappings")
        return val

    def finish(self):
        unknown = set(self.data) - self.seen
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"{self.path}.{key}", "unknown key")


def build_emitter(cfg: dict) -> EmitterModel:
    f = _Fields(_section(cfg, "emitter"), "emitter")
    sigma = f.number("sigma_inhom_ghz", required=True, minimum=0.0)
    gamma = f.number("gamma_hom_mhz", required=True, minimum=0.0)
    kwargs = dict(
        sigma_inhom_hz=sigma * 1e9,
        gamma_hom_hz=gamma * 1e6,
        lifetime_ns=f.number("lifetime_ns", required=True, minimum=0.0),
        a_per_pulse=f.number("a_per_pulse", required=True, minimum=0.0),
        alpha_dark_per_us=f.number("alpha_dark_per_us", 0.0, minimum=0.0),
        beta=f.number("beta", 0.0, minimum=0.0, maximum=1.0),
        eta_det=f.number("eta_det", 1.0),
        p_max=f.number("p_max", 1.0),
        f0_hz=(f.number("f0_thz", 0.0) or 0.0) * 1e12,
    )
    bg = f.number("bg_rate_per_ns", None, minimum=0.0)
    if bg is not None:
        kwargs["bg_rate_per_ns"] = bg
    f.finish()
    try:
        return EmitterModel(**kwargs)
    except ValueError as exc:
        raise ConfigError("emitter", str(exc))


def _build_pulse(data: dict, path: str) -> Pulse:
    f = _Fields(data, path)
    pulse = Pulse(
        frequency_offset_hz=f.number("offset_ghz", required=True) * 1e9,
        power=f.number("power_psat", required=True, minimum=0.0),
        duration_ns=f.number("duration_ns", required=True, minimum=0.0),
        dark_after_ns=f.number("dark_after_ns", required=True, minimum=0.0),
        channel_label=f.integer("channel", 0, minimum=0),
    )
    f.finish()
    return pulse


def build_sequence(cfg: dict) -> PulseSequence:
    f = _Fields(_section(cfg, "sequence"), "sequence")
    kind = f.string("kind", required=True,
                    choices={"single", "two_colour", "custom"})
    common = dict(
        window_offset_ns=f.number("window_offset_ns", 0.0, minimum=0.0),
        window_length_ns=f.number("window_length_ns", None, minimum=0.0),
        hbt_split=f.boolean("hbt_split", False),
    )
    try:
        if kind == "single":
            seq = PulseSequence.single_laser(
                offset_hz=f.number("offset_ghz", 0.0) * 1e9,
                power=f.number("power_psat", required=True, minimum=0.0),
                duration_ns=f.number("duration_ns", required=True, minimum=0.0),
                dark_after_ns=f.number("dark_after_ns", required=True,
                                       minimum=0.0),
                n_pulses=f.integer("n_pulses", required=True, minimum=1),
                **common,
            )
        elif kind == "two_colour":
            seq = PulseSequence.two_colour(
                offset1_hz=f.number("offset1_ghz", required=True) * 1e9,
                offset2_hz=f.number("offset2_ghz", required=True) * 1e9,
                power=f.number("power_psat", required=True, minimum=0.0),
                duration_ns=f.number("duration_ns", required=True, minimum=0.0),
                dark_after_ns=f.number("dark_after_ns", required=True,
                                       minimum=0.0),
                repeats=f.integer("repeats", required=True, minimum=1),
                **common,
            )
        else:
            rows = f.list_of_maps("pulses", required=True)
            pulses = [
                _build_pulse(row, f"sequence.pulses[{i}]")
                for i, row in enumerate(rows)
            ]
            seq = PulseSequence(
                pulses=tuple(pulses),
                repeats=f.integer("repeats", required=True, minimum=1),
                **common,
            )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("sequence", str(exc))
    f.finish()
    return seq


def build_spin_model(cfg: dict):
    f = _Fields(_section(cfg, "mix"), "mix")
    try:
        model = SpinMixModel(
            gamma_mix_per_ns=f.number("gamma_mix_per_ns", required=True,
                                      minimum=0.0),
            lifetime_ns=f.number("lifetime_ns", required=True),
            pulse_ns=f.number("pulse_ns", required=True),
            init_fidelity=f.number("init_fidelity", 1.0, minimum=0.0,
                                   maximum=1.0),
        )
    except ValueError as exc:
        raise ConfigError("mix", str(exc))
    shots = f.integer("shots", 0, minimum=0)
    n_bins = f.integer("transient_bins", 64, minimum=4)
    f.finish()
    return model, shots, n_bins


def read_rc_section(cfg: dict) -> dict:
    f = _Fields(_section(cfg, "rc"), "rc")
    out = dict(
        check_offset_hz=f.number("check_offset_ghz", required=True) * 1e9,
        probe_offset_hz=f.number("probe_offset_ghz", 0.0) * 1e9,
        check_power=f.number("check_power_psat", required=True, minimum=0.0),
        probe_power=f.number("probe_power_psat", required=True, minimum=0.0),
        tau_dark_ns=f.number("tau_dark_ns", 0.0, minimum=0.0),
        shots=f.integer("shots", required=True, minimum=1),
        cap=f.integer("cap", 100_000, minimum=1),
        pulse_duration_ns=f.number("pulse_duration_ns", 100.0, minimum=0.0),
        gap_ns=f.number("gap_ns", 60.0, minimum=0.0),
    )
    scan = f._get("probe_scan", None, False)
    f.seen.add("probe_scan")
    if scan is not None:
        sf = _Fields(scan, "rc.probe_scan")
        out["scan"] = dict(
            start_hz=sf.number("start_ghz", required=True) * 1e9,
            stop_hz=sf.number("stop_ghz", required=True) * 1e9,
            points=sf.integer("points", required=True, minimum=2),
            shots_per_point=sf.integer("shots_per_point", None, minimum=1),
        )
        sf.finish()
    else:
        out["scan"] = None
    f.finish()
    return out


def read_speedup_section(cfg: dict) -> dict:
    f = _Fields(_section(cfg, "speedup"), "speedup")
    out = dict(
        n_min=f.integer("n_min", 1, minimum=1),
        n_max=f.integer("n_max", required=True, minimum=1),
        eta_det_min=f.number("eta_det_min", required=True, minimum=0.0),
        eta_det_max=f.number("eta_det_max", required=True, maximum=1.0),
        eta_det_points=f.integer("eta_det_points", 25, minimum=1),
        eta_sd=f.number("eta_sd", required=True, minimum=0.0, maximum=1.0),
        eta_sd_rc=f.number("eta_sd_rc", required=True, minimum=0.0,
                           maximum=1.0),
    )
    f.finish()
    if out["n_max"] < out["n_min"]:
        raise ConfigError("speedup.n_max", "must be >= n_min")
    if out["eta_det_max"] < out["eta_det_min"]:
        raise ConfigError("speedup.eta_det_max", "must be >= eta_det_min")
    return out
