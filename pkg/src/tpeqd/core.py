"""Domain types, parameter validation and the resonance algebra of the
ground / exciton / biexciton ladder.

All types are frozen dataclasses; construction never raises on physically
meaningless values so that :func:`validate` can report every violation at
once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .units import FWHM_PER_SIGMA

Jones = Tuple[complex, complex]


def binding_energy(exciton_energy: float, biexciton_energy: float) -> float:
    """E_X - E_XX in meV. Negative for an antibinding biexciton."""
    return exciton_energy - biexciton_energy


def tpe_resonance(exciton_energy: float, biexciton_energy: float) -> float:
    """Laser photon energy meeting ``2 E_laser = E_X + E_XX``."""
    return 0.5 * (exciton_energy + biexciton_energy)


def jones(h, v) -> Jones:
    return (complex(h), complex(v))


def linear_polarization(angle_deg: float) -> Jones:
    a = math.radians(angle_deg)
    return jones(math.cos(a), math.sin(a))


H = jones(1, 0)
V = jones(0, 1)
D = jones(1 / math.sqrt(2), 1 / math.sqrt(2))
A = jones(1 / math.sqrt(2), -1 / math.sqrt(2))
R = jones(1 / math.sqrt(2), -1j / math.sqrt(2))
L = jones(1 / math.sqrt(2), 1j / math.sqrt(2))

POLARIZATIONS = {"H": H, "V": V, "D": D, "A": A, "R": R, "L": L}


@dataclass(frozen=True)
class QDParameters:
    """Energies in meV, splitting and linewidths in µeV, times in ns."""

    exciton_energy: float = 1400.0
    biexciton_energy: float = 1402.5
    fss: float = 0.4
    exciton_lifetime: float = 0.78
    biexciton_lifetime: float = 0.44
    cross_dephasing_time: float = math.inf
    exciton_linewidth: float = 160.0
    biexciton_linewidth: float = 117.0

    @property
    def binding_energy(self) -> float:
        return binding_energy(self.exciton_energy, self.biexciton_energy)

    @property
    def tpe_resonance(self) -> float:
        return tpe_resonance(self.exciton_energy, self.biexciton_energy)


@dataclass(frozen=True)
class LaserPulseSpec:
    """Gaussian pulse. ``fwhm`` (ps) refers to the field envelope."""

    center_energy: float = 1401.25
    fwhm: float = 10.0
    pulse_area: float = math.pi
    polarization: Jones = H
    rep_rate: float = 80.0
    shape: str = "gaussian"

    @property
    def sigma(self) -> float:
        return self.fwhm / FWHM_PER_SIGMA

    @property
    def rep_period_ps(self) -> float:
        return 1e6 / self.rep_rate

    @property
    def tpe_coupling(self) -> float:
        """|e_H^2 + e_V^2|: 1 for linear polarization, 0 for circular."""
        eh, ev = self.polarization
        return abs(eh * eh + ev * ev)


@dataclass(frozen=True)
class PhononEnvironment:
    """Acoustic phonon bath.

    ``coupling`` scales the super-ohmic spectral density ``d^3 exp(-(d/dc)^2)``
    (d in meV), so it carries units of ps/meV^3 when multiplied by a drive
    in rad^2/ps^2. ``drive_dephasing`` (ps) sets the pure dephasing rate
    ``drive_dephasing * Omega(t)^2``.
    """

    temperature: float = 8.0
    coupling: float = 0.0
    cutoff: float = 1.0
    drive_dephasing: float = 0.0


@dataclass(frozen=True)
class TabulatedKernel:
    """Timing kernel sampled every ``dt_ps``; ``values[origin]`` sits at t = 0."""

    values: Tuple[float, ...]
    dt_ps: float
    origin: int = 0

    @classmethod
    def gaussian(cls, sigma_ps: float, dt_ps: float, half_width: float = 6.0) -> "TabulatedKernel":
        n = int(math.ceil(half_width * sigma_ps / dt_ps))
        t = np.arange(-n, n + 1) * dt_ps
        w = np.exp(-0.5 * (t / sigma_ps) ** 2)
        return cls(tuple(w / w.sum()), dt_ps, n)

    @classmethod
    def delta(cls, dt_ps: float, shift: int = 0) -> "TabulatedKernel":
        if shift >= 0:
            vals = [0.0] * shift + [1.0]
            return cls(tuple(vals), dt_ps, 0)
        vals = [1.0] + [0.0] * (-shift)
        return cls(tuple(vals), dt_ps, -shift)

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @property
    def times_ps(self) -> np.ndarray:
        return (np.arange(len(self.values)) - self.origin) * self.dt_ps


@dataclass(frozen=True)
class DetectorSpec:
    """Single-photon detector. ``irf_sigma`` in ps; a tabulated kernel wins if given."""

    irf_sigma: float = 0.0
    irf_kernel: Optional[TabulatedKernel] = None
    dark_rate: float = 40.0
    efficiency: float = 1.0
    dead_time: float = 0.0  # ns


Params = Union[QDParameters, LaserPulseSpec, PhononEnvironment, DetectorSpec]


def _finite(x) -> bool:
    try:
        return math.isfinite(x)
    except TypeError:
        return False


def _check_positive(errors, obj, names, allow_inf=()):
    for name in names:
        val = getattr(obj, name)
        if name in allow_inf and val == math.inf:
            continue
        if not _finite(val):
            errors.append(f"{name} must be finite")
        elif val <= 0:
            errors.append(f"{name} must be > 0")


def validate(params: Params) -> list:
    """Return a list of violated invariants; an empty list means valid.

    Never raises for any input, including non-numeric field values.
    """
    errors: list = []
    try:
        if isinstance(params, QDParameters):
            _check_positive(errors, params, (
                "exciton_energy", "biexciton_energy", "fss", "exciton_lifetime",
                "biexciton_lifetime", "cross_dephasing_time", "exciton_linewidth",
                "biexciton_linewidth"), allow_inf=("cross_dephasing_time",))
        elif isinstance(params, LaserPulseSpec):
            _check_positive(errors, params, ("center_energy", "fwhm", "rep_rate"))
            if not _finite(params.pulse_area) or params.pulse_area < 0:
                errors.append("pulse_area must be >= 0")
            if params.shape != "gaussian":
                errors.append(f"shape must be 'gaussian' (got {params.shape!r})")
            try:
                eh, ev = (complex(c) for c in params.polarization)
                norm = abs(eh) ** 2 + abs(ev) ** 2
                if not abs(norm - 1.0) <= 1e-12:
                    errors.append(f"polarization norm must be 1 (got {norm:.6g})")
            except (TypeError, ValueError):
                errors.append("polarization must be a pair of complex amplitudes")
        elif isinstance(params, PhononEnvironment):
            if not _finite(params.temperature) or params.temperature < 0:
                errors.append("temperature must be >= 0")
            if not _finite(params.coupling) or params.coupling < 0:
                errors.append("coupling must be >= 0")
            _check_positive(errors, params, ("cutoff",))
            if not _finite(params.drive_dephasing) or params.drive_dephasing < 0:
                errors.append("drive_dephasing must be >= 0")
        elif isinstance(params, DetectorSpec):
            if not _finite(params.efficiency) or not 0 <= params.efficiency <= 1:
                errors.append("efficiency must be in [0, 1]")
            if not _finite(params.dark_rate) or params.dark_rate < 0:
                errors.append("dark_rate must be >= 0")
            if not _finite(params.dead_time) or params.dead_time < 0:
                errors.append("dead_time must be >= 0")
            if not _finite(params.irf_sigma) or params.irf_sigma < 0:
                errors.append("irf_sigma must be >= 0")
            k = params.irf_kernel
            if k is not None:
                vals = np.asarray(k.values, dtype=float)
                if vals.size == 0 or np.any(vals < 0) or not np.all(np.isfinite(vals)):
                    errors.append("irf_kernel values must be finite and >= 0")
                elif abs(vals.sum() - 1.0) > 1e-9:
                    errors.append(f"irf_kernel must sum to 1 (got {vals.sum():.12g})")
                if not _finite(k.dt_ps) or k.dt_ps <= 0:
                    errors.append("irf_kernel dt_ps must be > 0")
                if not 0 <= k.origin < max(vals.size, 1):
                    errors.append("irf_kernel origin out of range")
        else:
            errors.append(f"unsupported parameter type {type(params).__name__}")
    except Exception as exc:  # validate is total
        errors.append(f"invalid parameters: {exc}")
    return errors


def require_valid(*params: Params) -> None:
    errors = [e for p in params for e in validate(p)]
    if errors:
        raise ValueError("; ".join(errors))
