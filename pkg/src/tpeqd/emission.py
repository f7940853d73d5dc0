"""Photon emission from the biexciton-exciton cascade, polarization analysis,
detector response and spectrum synthesis.

Each pulse prepares at most one of: a biexciton (which emits an XX photon
followed by a cascade X photon), a phonon-fed exciton (one X photon), or
nothing. Cascade pairs carry the state (|HH> + exp(i s tau / hbar)|VV>)/sqrt(2)
where tau is the X delay, unless a cross-dephasing event during tau
collapsed it to the incoherent mixture of HH and VV.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from ._kernels import dead_time_mask, first_unsorted
from .core import DetectorSpec, Jones, QDParameters
from .dynamics import ChannelSplit
from .units import HBAR_UEV_NS, fss_phase

XX_PHOTON = "XX_photon"
X_PHOTON = "X_photon"
CASCADE = "cascade"
PHONON_X = "phonon_X"

# outcome codes used by the vectorised sampler
NONE, CASC, PHON = 0, 1, 2


@dataclass(frozen=True)
class PairLabel:
    """Entangled cascade pair; ``phase`` is s*tau/hbar, ``coherent`` False after
    a cross-dephasing event."""

    phase: float
    coherent: bool = True


@dataclass(frozen=True)
class EmissionEvent:
    pulse_index: int
    kind: str
    emit_time: float  # ns after the pulse centre
    polarization_state: Union[Jones, PairLabel]
    origin: str
    partner_time: Optional[float] = None  # XX emit time for a cascade X photon


@dataclass(frozen=True)
class TimeTagStream:
    channel: int
    tags: np.ndarray  # uint64 ps

    def __post_init__(self):
        object.__setattr__(self, "tags", np.ascontiguousarray(self.tags, dtype=np.uint64))

    def __len__(self):
        return int(self.tags.size)

    def check(self, dead_time_ps: float = 0.0) -> None:
        """Raise ``ValueError`` unless ordering and dead-time invariants hold."""
        t = self.tags.astype(np.int64)
        bad = first_unsorted(t)
        if bad >= 0:
            raise ValueError(f"channel {self.channel}: tags not sorted at index {bad}")
        if dead_time_ps > 0 and t.size > 1:
            gaps = np.diff(t)
            idx = np.nonzero(gaps < dead_time_ps)[0]
            if idx.size:
                raise ValueError(f"channel {self.channel}: dead time violated at index {idx[0] + 1}")


@dataclass(frozen=True)
class Spectrum:
    energy: np.ndarray  # meV, bin centres
    intensity: np.ndarray  # counts per bin


# ---------------------------------------------------------------- sampling

@dataclass
class CycleBatch:
    """Vectorised outcome of ``n`` excitation cycles (times in ns)."""

    outcome: np.ndarray  # NONE / CASC / PHON
    t_xx: np.ndarray  # nan unless cascade
    t_x: np.ndarray  # nan for NONE
    coherent: np.ndarray  # bool, cascade pairs only
    phase: np.ndarray  # pair phase (cascade) or X precession angle (phonon)

    @property
    def cascade(self):
        return self.outcome == CASC

    @property
    def phonon(self):
        return self.outcome == PHON


def _categories(split: ChannelSplit):
    p_xx = max(split.P_XX, 0.0)
    p_x = max(split.P_X_phonon, 0.0)
    tot = p_xx + p_x
    if tot > 1.0 + 1e-6:
        raise ValueError(f"channel split sums to {tot:.6g} > 1")
    if tot > 1.0:
        p_xx, p_x = p_xx / tot, p_x / tot
    return p_xx, p_x


def fill_cycles(rng, outcome, qd: QDParameters, phase_offset: float = 0.0) -> CycleBatch:
    """Draw delays and coherence for a given outcome array (fixed draw order)."""
    n = outcome.size
    casc = outcome == CASC
    phon = outcome == PHON
    e1 = rng.standard_exponential(n)
    e2 = rng.standard_exponential(n)
    u = rng.random(n)
    t_xx = np.where(casc, e1 * qd.biexciton_lifetime, np.nan)
    tau = e2 * qd.exciton_lifetime
    t_x = np.where(casc, t_xx + tau, np.where(phon, tau, np.nan))
    if math.isinf(qd.cross_dephasing_time):
        coherent = casc.copy()
    else:
        coherent = casc & (u < np.exp(-tau / qd.cross_dephasing_time))
    phase = np.where(casc, fss_phase(qd.fss, tau),
                     np.where(phon, fss_phase(qd.fss, tau) + phase_offset, 0.0))
    return CycleBatch(outcome, t_xx, t_x, coherent, phase)


def sample_cycles(rng: np.random.Generator, split: ChannelSplit, qd: QDParameters, n: int,
                  phase_offset: float = 0.0) -> CycleBatch:
    p_xx, p_x = _categories(split)
    u = rng.random(n)
    outcome = np.where(u < p_xx, CASC, np.where(u < p_xx + p_x, PHON, NONE)).astype(np.int8)
    return fill_cycles(rng, outcome, qd, phase_offset)


def phonon_x_jones(laser_pol: Jones, phase) -> np.ndarray:
    """Laser polarization copied onto the exciton and precessed by ``phase``.

    Returns an array (..., 2) of Jones vectors in the X_H / X_V basis.
    """
    phase = np.asarray(phase, dtype=float)
    eh, ev = laser_pol
    out = np.empty(phase.shape + (2,), dtype=complex)
    out[..., 0] = eh
    out[..., 1] = ev * np.exp(1j * phase)
    return out


def sample_cycle(rng: np.random.Generator, split: ChannelSplit, qd: QDParameters,
                 laser_pol: Jones, pulse_index: int = 0, phase_offset: float = 0.0,
                 allow_reexcitation: bool = False, pulse_window: float = 0.0) -> List[EmissionEvent]:
    """Emission events of one excitation cycle, XX photon first for a cascade.

    With ``allow_reexcitation`` a further cycle is drawn whenever the dot is
    back in its ground state before ``pulse_window`` (ns) has elapsed.
    """
    events: List[EmissionEvent] = []
    start = 0.0
    while True:
        b = sample_cycles(rng, split, qd, 1, phase_offset)
        oc = int(b.outcome[0])
        if oc == CASC:
            t1, t2 = start + float(b.t_xx[0]), start + float(b.t_x[0])
            pair = PairLabel(float(b.phase[0]), bool(b.coherent[0]))
            events.append(EmissionEvent(pulse_index, XX_PHOTON, t1, pair, CASCADE))
            events.append(EmissionEvent(pulse_index, X_PHOTON, t2, pair, CASCADE, partner_time=t1))
            end = t2
        elif oc == PHON:
            t2 = start + float(b.t_x[0])
            pol = phonon_x_jones(laser_pol, b.phase[0])
            events.append(EmissionEvent(pulse_index, X_PHOTON, t2, (complex(pol[0]), complex(pol[1])),
                                        PHONON_X))
            end = t2
        else:
            break
        if not allow_reexcitation or end >= pulse_window:
            break
        start = end
    return events


# ------------------------------------------------------------ polarization

def _as_jones(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if abs(np.vdot(v, v).real - 1.0) > 1e-9:
        raise ValueError("analyzer must be unit-norm")
    return v


def orthogonal(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    return np.array([-np.conj(v[1]), np.conj(v[0])])


def pair_density(phase: float, coherent: bool = True) -> np.ndarray:
    """4x4 density matrix in the basis HH, HV, VH, VV (XX photon first)."""
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = rho[3, 3] = 0.5
    if coherent:
        rho[3, 0] = 0.5 * np.exp(1j * phase)
        rho[0, 3] = np.conj(rho[3, 0])
    return rho


def pair_coherence(fss: float, exciton_lifetime: float, cross_dephasing_time: float) -> complex:
    """Time-averaged HH/VV coherence 1 / (1 + tau_X/tau_HV - i s tau_X / hbar)."""
    x = 0.0 if math.isinf(cross_dephasing_time) else exciton_lifetime / cross_dephasing_time
    return 1.0 / complex(1.0 + x, -fss * exciton_lifetime / HBAR_UEV_NS)


def integrated_pair_state(fss: float, exciton_lifetime: float, cross_dephasing_time: float) -> np.ndarray:
    """Cascade two-photon state integrated over the exciton delay."""
    if exciton_lifetime <= 0:
        raise ValueError("exciton_lifetime must be > 0")
    c = 0.0 if cross_dephasing_time == 0 else pair_coherence(fss, exciton_lifetime, cross_dephasing_time)
    rho = np.zeros((4, 4), dtype=complex)
    rho[0, 0] = rho[3, 3] = 0.5
    rho[3, 0] = 0.5 * c
    rho[0, 3] = np.conj(rho[3, 0])
    return rho


PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)


def bell_fidelity(rho: np.ndarray) -> float:
    return float(np.real(PHI_PLUS.conj() @ rho @ PHI_PLUS))


def pair_fidelity(fss: float, exciton_lifetime: float, cross_dephasing_time: float) -> float:
    return bell_fidelity(integrated_pair_state(fss, exciton_lifetime, cross_dephasing_time))


def joint_pass_probability(a, b, phase, coherent) -> np.ndarray:
    """Born-rule probability that the XX photon passes ``a`` and the X photon
    passes ``b``; vectorised over ``phase`` / ``coherent``."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    phase = np.asarray(phase, dtype=float)
    hh = np.conj(a[0]) * np.conj(b[0])
    vv = np.conj(a[1]) * np.conj(b[1])
    pure = 0.5 * np.abs(hh + np.exp(1j * phase) * vv) ** 2
    mixed = 0.5 * (abs(hh) ** 2 + abs(vv) ** 2)
    return np.where(coherent, pure, mixed)


def analyze_polarization(event: EmissionEvent, analyzer, partner_analyzer=None) -> float:
    """Pass probability of ``event`` through ``analyzer``.

    For cascade photons, giving ``partner_analyzer`` returns the joint
    probability that both photons of the pair pass (the event's own analyzer
    applied to its own photon).
    """
    b = _as_jones(analyzer)
    state = event.polarization_state
    if isinstance(state, PairLabel):
        if partner_analyzer is None:
            return 0.5
        p = _as_jones(partner_analyzer)
        xx, x = (b, p) if event.kind == XX_PHOTON else (p, b)
        return float(joint_pass_probability(xx, x, state.phase, state.coherent))
    psi = np.asarray(state, dtype=complex)
    return float(abs(np.vdot(b, psi)) ** 2)


def mean_phonon_x_pass(laser_pol: Jones, analyzer, fss: float, exciton_lifetime: float,
                       phase_offset: float = 0.0) -> float:
    """Expected analyzer transmission of phonon-fed X photons, averaged over
    the exponential emission delay."""
    b = _as_jones(analyzer)
    eh, ev = laser_pol
    u, w = np.conj(b[0]) * eh, np.conj(b[1]) * ev
    c = pair_coherence(fss, exciton_lifetime, math.inf) * np.exp(1j * phase_offset)
    return float(abs(u) ** 2 + abs(w) ** 2 + 2 * np.real(np.conj(u) * w * c))


# ----------------------------------------------------------------- detector

def _jitter(rng, detector: DetectorSpec, n: int) -> np.ndarray:
    k = detector.irf_kernel
    if k is not None:
        vals = k.array()
        idx = rng.choice(vals.size, size=n, p=vals / vals.sum())
        return (idx - k.origin) * k.dt_ps
    if detector.irf_sigma > 0:
        return rng.normal(0.0, detector.irf_sigma, n)
    return np.zeros(n)


def detect_photons(rng, channels: np.ndarray, times_ps: np.ndarray,
                   detectors: Mapping[int, DetectorSpec], duration_ps: float,
                   t_start_ps: float = 0.0, darks: bool = True,
                   efficiency_scale: Optional[Mapping[int, float]] = None) -> Dict[int, np.ndarray]:
    """Efficiency, jitter and dark counts for one stretch of acquisition.

    Returns unsorted float tag times per channel. ``efficiency_scale`` divides
    the efficiency when photons were already thinned upstream.
    """
    out = {}
    for ch in sorted(detectors):
        det = detectors[ch]
        sel = channels == ch
        t = times_ps[sel]
        eff = det.efficiency
        if efficiency_scale is not None:
            eff = eff / efficiency_scale[ch] if efficiency_scale[ch] > 0 else 0.0
        keep = rng.random(t.size) < eff
        t = t[keep]
        t = t + _jitter(rng, det, t.size)
        if darks and det.dark_rate > 0:
            n_dark = rng.poisson(det.dark_rate * duration_ps * 1e-12)
            dark = t_start_ps + rng.random(n_dark) * duration_ps
            t = np.concatenate([t, dark])
        out[ch] = t
    return out


def finalize_stream(channel: int, times_ps: np.ndarray, duration_ps: float,
                    detector: DetectorSpec) -> TimeTagStream:
    """Round to the 1 ps clock, drop out-of-window tags, sort, apply dead time."""
    t = np.rint(np.asarray(times_ps, dtype=float))
    t = t[(t >= 0) & (t < duration_ps)]
    t = np.sort(t.astype(np.int64), kind="stable")
    if detector.dead_time > 0:
        t = t[dead_time_mask(t, detector.dead_time * 1e3)]
    return TimeTagStream(channel, t.astype(np.uint64))


def apply_detector(channels, times_ps, detectors: Mapping[int, DetectorSpec], duration_s: float,
                   rng: np.random.Generator) -> Dict[int, TimeTagStream]:
    """Turn photon arrivals (absolute ps, per target channel) into time-tag streams."""
    channels = np.asarray(channels)
    times_ps = np.asarray(times_ps, dtype=float)
    duration_ps = duration_s * 1e12
    raw = detect_photons(rng, channels, times_ps, detectors, duration_ps)
    return {ch: finalize_stream(ch, raw[ch], duration_ps, detectors[ch]) for ch in raw}


# ----------------------------------------------------------------- spectrum

def synth_spectrum(energies: Sequence[float], intensities: Sequence[float],
                   linewidths: Sequence[float], grid: Sequence[float]) -> Spectrum:
    """Gaussian lines of given FWHM (µeV) integrated over the bins of ``grid``.

    ``grid`` holds uniformly spaced bin centres in meV.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        raise ValueError("grid needs at least two points")
    step = grid[1] - grid[0]
    lo, hi = grid[0] - 0.5 * step, grid[-1] + 0.5 * step
    edges = np.concatenate([grid - 0.5 * step, [hi]])
    total = np.zeros(grid.size)
    for e0, inten, fwhm in zip(energies, intensities, linewidths):
        width = fwhm * 1e-3
        if e0 - 5 * width < lo or e0 + 5 * width > hi:
            raise ValueError(f"grid does not cover line at {e0} meV +/- 5 linewidths")
        sigma = width / (2 * math.sqrt(2 * math.log(2)))
        cdf = 0.5 * (1 + erf((edges - e0) / (sigma * math.sqrt(2))))
        total += inten * np.diff(cdf)
    return Spectrum(grid, np.maximum(total, 0.0))
