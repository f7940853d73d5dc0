"""Scenario files: YAML with qd / laser / phonon / detector sections.

Keys carry their units. Missing sections fall back to the calibrated
representative dot. Unknown keys are errors so that typos never silently
fall back to defaults.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .core import (DetectorSpec, LaserPulseSpec, PhononEnvironment, POLARIZATIONS, QDParameters,
                   linear_polarization, validate)
from .presets import PHONONS, REPRESENTATIVE_DOT, SPAD, TPE_PULSE

EXPERIMENTS = ("rabi_sweep", "detuning_sweep", "tomography", "hbt", "lifetime", "spectrum",
               "circular_suppression", "polarization_scan")

# section -> (yaml key, dataclass field)
KEYS = {
    "qd": (QDParameters, {
        "exciton_energy_meV": "exciton_energy",
        "biexciton_energy_meV": "biexciton_energy",
        "fss_ueV": "fss",
        "exciton_lifetime_ns": "exciton_lifetime",
        "biexciton_lifetime_ns": "biexciton_lifetime",
        "cross_dephasing_time_ns": "cross_dephasing_time",
        "exciton_linewidth_ueV": "exciton_linewidth",
        "biexciton_linewidth_ueV": "biexciton_linewidth",
    }),
    "laser": (LaserPulseSpec, {
        "center_energy_meV": "center_energy",
        "fwhm_ps": "fwhm",
        "pulse_area_rad": "pulse_area",
        "polarization": "polarization",
        "rep_rate_MHz": "rep_rate",
    }),
    "phonon": (PhononEnvironment, {
        "temperature_K": "temperature",
        "coupling": "coupling",
        "cutoff_meV": "cutoff",
        "drive_dephasing_ps": "drive_dephasing",
    }),
    "detector": (DetectorSpec, {
        "irf_sigma_ps": "irf_sigma",
        "dark_rate_per_s": "dark_rate",
        "efficiency": "efficiency",
        "dead_time_ns": "dead_time",
    }),
}
DEFAULTS = {"qd": REPRESENTATIVE_DOT, "laser": TPE_PULSE, "phonon": PHONONS, "detector": SPAD}
# experiment options and their defaults
OPTIONS = {
    "rabi_sweep": {"points": 81, "max_area_over_pi": 4.0, "intensity_scale": 100000},
    "detuning_sweep": {"start_meV": -0.5, "stop_meV": 2.5, "points": 61,
                       "off_resonance_meV": [0.175, -0.185], "visibility_points": 41},
    "tomography": {"mode": "pairs", "n_pairs": 1000000, "counts_file": None, "window_ns": 6.0},
    "hbt": {"line": "X", "darks": True, "bin_ps": 50.0, "range_ns": 44.0, "save_tags": False},
    "lifetime": {"n_counts": 100000, "irf_sigma_ns": 0.1, "background": 2.0, "bin_ps": 20.0,
                 "range_ns": 10.0, "histogram_file": None, "model": "single_exp",
                 "fix_tau_xx_ns": None},
    "spectrum": {"step_ueV": 5.0, "margin_meV": 1.0, "counts": 100000},
    "circular_suppression": {"points": 41, "max_area_over_pi": 2.0},
    "polarization_scan": {"step_deg": 5.0},
}
TOP = ("experiment", "seed", "duration_s", "output_dir", "options", *KEYS)


class ConfigError(ValueError):
    pass


def parse_polarization(value):
    """A basis letter, a linear angle in degrees, or [re_h, im_h, re_v, im_v]."""
    if isinstance(value, str):
        if value.upper() not in POLARIZATIONS:
            raise ConfigError(f"unknown polarization {value!r}")
        return POLARIZATIONS[value.upper()]
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return linear_polarization(float(value))
    if isinstance(value, (list, tuple)) and len(value) == 4:
        rh, ih, rv, iv = (float(x) for x in value)
        return (complex(rh, ih), complex(rv, iv))
    raise ConfigError(f"cannot read polarization {value!r}")


def format_polarization(pol):
    for name, p in POLARIZATIONS.items():
        if p == tuple(pol):
            return name
    eh, ev = (complex(c) for c in pol)
    return [eh.real, eh.imag, ev.real, ev.imag]


@dataclass(frozen=True)
class Scenario:
    experiment: str
    seed: int
    qd: QDParameters = REPRESENTATIVE_DOT
    laser: LaserPulseSpec = TPE_PULSE
    phonon: PhononEnvironment = PHONONS
    detector: DetectorSpec = SPAD
    duration_s: float = 600.0
    output_dir: str = "out"
    options: Dict[str, Any] = field(default_factory=dict)

    def validate(self) -> list:
        errs = []
        if self.experiment not in EXPERIMENTS:
            errs.append(f"experiment must be one of {', '.join(EXPERIMENTS)}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2 ** 64:
            errs.append("seed must be an integer in [0, 2^64)")
        if not (isinstance(self.duration_s, (int, float)) and self.duration_s > 0):
            errs.append("duration_s must be > 0")
        for sec in KEYS:
            errs += [f"{sec}: {e}" for e in validate(getattr(self, sec))]
        return errs

    def to_dict(self) -> dict:
        out = {"experiment": self.experiment, "seed": self.seed, "duration_s": self.duration_s,
               "output_dir": self.output_dir}
        for sec, (_, keys) in KEYS.items():
            obj = getattr(self, sec)
            d = {}
            for key, attr in keys.items():
                v = getattr(obj, attr)
                d[key] = format_polarization(v) if attr == "polarization" else v
            out[sec] = d
        out["options"] = dict(self.options)
        return out

    def option(self, name):
        return self.options.get(name, OPTIONS[self.experiment][name])

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _section(name, data):
    cls, keys = KEYS[name]
    base = DEFAULTS[name]
    if data is None:
        return base
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(data) - set(keys)
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {', '.join(sorted(unknown))}")
    kw = {}
    for key, value in data.items():
        attr = keys[key]
        if attr == "polarization":
            kw[attr] = parse_polarization(value)
        else:
            try:
                kw[attr] = float(value)
            except (TypeError, ValueError):
                raise ConfigError(f"{name}.{key}: expected a number, got {value!r}") from None
    return replace(base, **kw)


def from_dict(data: dict, seed: Optional[int] = None) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a mapping")
    unknown = set(data) - set(TOP)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(sorted(unknown))}")
    if seed is None:
        seed = data.get("seed")
    if seed is None:
        raise ConfigError("seed is mandatory (set 'seed' or pass --seed)")
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    if "experiment" not in data:
        raise ConfigError("experiment is mandatory")
    options = data.get("options") or {}
    if not isinstance(options, dict):
        raise ConfigError("options must be a mapping")
    try:
        sc = Scenario(
            experiment=str(data["experiment"]),
            seed=seed,
            qd=_section("qd", data.get("qd")),
            laser=_section("laser", data.get("laser")),
            phonon=_section("phonon", data.get("phonon")),
            detector=_section("detector", data.get("detector")),
            duration_s=float(data.get("duration_s", 600.0)),
            output_dir=str(data.get("output_dir", "out")),
            options=dict(options),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    errs = sc.validate()
    if sc.experiment in OPTIONS:
        unknown = set(sc.options) - set(OPTIONS[sc.experiment])
        if unknown:
            errs.append(f"options: unknown key(s) {', '.join(sorted(unknown))} for {sc.experiment}")
    if errs:
        raise ConfigError("; ".join(errs))
    return sc


def loads(text: str, seed: Optional[int] = None) -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return from_dict(data or {}, seed)


def load(path, seed: Optional[int] = None) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return loads(text, seed)
