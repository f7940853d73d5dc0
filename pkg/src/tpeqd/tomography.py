"""Two-photon Stokes parameters and Bell-state fidelity from 12 coincidence
settings.

Setting names are two letters, the first for the heralding XX photon and the
second for the X photon. Same-letter settings count as correlated in every
basis, so the cascade's circular anti-correlation gives a negative S_22.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Mapping, Optional, Union

import numpy as np

from .core import POLARIZATIONS
from .correlator import CorrelationHistogram, g2_zero, peak_integrate

BASES = {
    "linear": ("HH", "HV", "VV", "VH"),
    "diagonal": ("DD", "DA", "AA", "AD"),
    "circular": ("RR", "RL", "LL", "LR"),
}
SETTINGS = tuple(s for b in BASES.values() for s in b)
CENTER_WINDOW_NS = 6.0


@dataclass(frozen=True)
class TwoPhotonCounts:
    counts: Dict[str, int]
    durations: Dict[str, float] = field(default_factory=dict)  # s per setting

    def __post_init__(self):
        missing = [s for s in SETTINGS if s not in self.counts]
        if missing:
            raise ValueError(f"missing setting(s): {', '.join(missing)}")
        for s in SETTINGS:
            if self.counts[s] < 0:
                raise ValueError(f"negative count for {s}")
        if self.durations:
            d = [self.durations.get(s) for s in SETTINGS]
            if any(x is None for x in d):
                raise ValueError("duration missing for some settings")
            if not np.allclose(d, d[0], rtol=1e-9, atol=0):
                raise ValueError("settings were not acquired for equal durations")

    def __getitem__(self, setting):
        return self.counts[setting]

    def basis(self, name):
        return tuple(self.counts[s] for s in BASES[name])

    @property
    def duration(self) -> Optional[float]:
        return self.durations.get("HH") if self.durations else None

    def swap_hv(self) -> "TwoPhotonCounts":
        """Counts after exchanging H and V on both photons.

        The exchange maps D, A onto themselves and R onto L up to phases.
        """
        flip = str.maketrans("HVRL", "VHLR")
        return TwoPhotonCounts({s.translate(flip): c for s, c in self.counts.items()},
                               {s.translate(flip): d for s, d in self.durations.items()})

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("setting,count,duration_s\n")
        for s in SETTINGS:
            d = self.durations.get(s, float("nan"))
            out.write(f"{s},{int(self.counts[s])},{d:.12g}\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TwoPhotonCounts":
        counts, durations = {}, {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#") or line.lower().startswith("setting"):
                continue
            parts = [p.strip() for p in line.split(",")]
            s = parts[0].upper()
            if s not in SETTINGS:
                raise ValueError(f"unknown setting {parts[0]!r}")
            counts[s] = int(float(parts[1]))
            if len(parts) > 2 and parts[2] and parts[2].lower() != "nan":
                durations[s] = float(parts[2])
        return cls(counts, durations)


@dataclass(frozen=True)
class StokesSet:
    S33: float
    S11: float
    S22: float
    S30: float
    S03: float
    errors: Dict[str, float] = field(default_factory=dict)

    def values(self):
        return (self.S33, self.S11, self.S22, self.S30, self.S03)


@dataclass(frozen=True)
class Fidelity:
    value: float
    error: float
    entangled: bool


def degree_of_correlation(n_pp, n_pm, n_mm, n_mp) -> float:
    total = n_pp + n_pm + n_mm + n_mp
    if total <= 0:
        raise ValueError("zero total counts")
    return (n_pp + n_mm - n_pm - n_mp) / total


def _binomial_error(s, n):
    # s = 2p - 1 with p binomial over n trials
    return math.sqrt(max(1.0 - s * s, 0.0) / n)


def stokes_from_counts(counts: TwoPhotonCounts) -> StokesSet:
    vals, errs = {}, {}
    for key, basis in (("S33", "linear"), ("S11", "diagonal"), ("S22", "circular")):
        b = counts.basis(basis)
        vals[key] = degree_of_correlation(*b)
        errs[key] = _binomial_error(vals[key], sum(b))
    hh, hv, vv, vh = counts.basis("linear")
    n = hh + hv + vv + vh
    vals["S30"] = (hh + hv - vv - vh) / n
    vals["S03"] = (hh + vh - hv - vv) / n
    errs["S30"] = _binomial_error(vals["S30"], n)
    errs["S03"] = _binomial_error(vals["S03"], n)
    return StokesSet(errors=errs, **vals)


def fidelity(stokes: StokesSet, method: str = "quadrature",
             n_total: Optional[int] = None) -> Fidelity:
    """f = (1 + S33 + S11 - S22 + S30 + S03) / 4.

    ``quadrature`` combines the five Stokes errors; ``pooled`` treats f as a
    single binomial fraction of all ``n_total`` coincidences.
    """
    f = 0.25 * (1 + stokes.S33 + stokes.S11 - stokes.S22 + stokes.S30 + stokes.S03)
    if method == "quadrature":
        err = 0.25 * math.sqrt(sum(e * e for e in stokes.errors.values()))
    elif method == "pooled":
        if not n_total:
            raise ValueError("pooled error needs n_total")
        err = math.sqrt(max(f * (1 - f), 0.0) / n_total)
    else:
        raise ValueError(f"unknown error method {method!r}")
    return Fidelity(f, err, f - err > 0.5)


@dataclass(frozen=True)
class TomographyReport:
    counts: TwoPhotonCounts
    stokes: StokesSet
    fidelity: Fidelity
    pooled_error: float
    side_peak_g2: Dict[str, float] = field(default_factory=dict)
    window_ns: float = CENTER_WINDOW_NS

    def to_dict(self) -> dict:
        st = self.stokes
        return {
            "counts": {s: int(self.counts[s]) for s in SETTINGS},
            "duration_s": self.counts.duration,
            "window_ns": self.window_ns,
            "stokes": {k: getattr(st, k) for k in ("S33", "S11", "S22", "S30", "S03")},
            "stokes_errors": dict(st.errors),
            "fidelity": self.fidelity.value,
            "fidelity_error": self.fidelity.error,
            "fidelity_error_pooled": self.pooled_error,
            "entangled": bool(self.fidelity.entangled),
            "side_peak_g2": dict(self.side_peak_g2),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def counts_from_histograms(hists: Mapping[str, CorrelationHistogram],
                           window_ns: float = CENTER_WINDOW_NS) -> TwoPhotonCounts:
    """Raw zero-delay peak counts per setting."""
    missing = [s for s in SETTINGS if s not in hists]
    if missing:
        raise ValueError(f"missing setting(s): {', '.join(missing)}")
    counts = {s: peak_integrate(hists[s], 0.0, window_ns) for s in SETTINGS}
    durations = {s: hists[s].duration for s in SETTINGS}
    return TwoPhotonCounts(counts, durations)


def run_tomography(source: Union[TwoPhotonCounts, Mapping[str, CorrelationHistogram]],
                   window_ns: float = CENTER_WINDOW_NS, rep_period: Optional[float] = None,
                   n_side_peaks: int = 3) -> TomographyReport:
    """Stokes set and fidelity from counts or from one histogram per setting.

    Histograms are reduced to raw center-peak counts; the side-peak g2 values
    are computed alongside for comparison only.
    """
    side = {}
    if isinstance(source, TwoPhotonCounts):
        counts = source
    else:
        counts = counts_from_histograms(source, window_ns)
        for s in SETTINGS:
            h = source[s]
            period = rep_period or h.rep_period
            if period:
                try:
                    side[s] = g2_zero(h, period, "side_peak", n_side_peaks, window_ns).value
                except ValueError:
                    pass
    st = stokes_from_counts(counts)
    n_total = sum(counts.counts.values())
    fid = fidelity(st)
    pooled = fidelity(st, "pooled", n_total).error
    return TomographyReport(counts, st, fid, pooled, side, window_ns)


# ----------------------------------------------------------- forward model

def projector_pair(setting: str) -> np.ndarray:
    a = np.asarray(POLARIZATIONS[setting[0]], dtype=complex)
    b = np.asarray(POLARIZATIONS[setting[1]], dtype=complex)
    return np.kron(a, b)


def setting_probabilities(rho: np.ndarray) -> Dict[str, float]:
    """Born-rule probability of each setting within its basis."""
    rho = np.asarray(rho, dtype=complex)
    out = {}
    for s in SETTINGS:
        v = projector_pair(s)
        out[s] = float(np.real(np.conj(v) @ rho @ v))
    return out


def expected_counts(rho: np.ndarray, pairs_per_basis: float, rng=None,
                    duration: Optional[float] = None) -> TwoPhotonCounts:
    """Counts for ``pairs_per_basis`` pairs analysed in each basis.

    Without ``rng`` the (rounded) expectation is returned; with it, each
    basis gets a multinomial draw.
    """
    p = setting_probabilities(rho)
    counts = {}
    for basis in BASES.values():
        probs = np.clip([p[s] for s in basis], 0.0, None)
        probs = probs / probs.sum()
        if rng is None:
            k = np.rint(probs * pairs_per_basis).astype(int)
        else:
            k = rng.multinomial(int(pairs_per_basis), probs)
        counts.update({s: int(c) for s, c in zip(basis, k)})
    durations = {s: duration for s in SETTINGS} if duration is not None else {}
    return TwoPhotonCounts(counts, durations)


# The twelve raw center-peak counts and side-peak normalised values of the
# representative dot (10 minutes per setting).
REFERENCE_COUNTS = {
    "HH": 1710, "HV": 573, "VV": 1811, "VH": 453,
    "DD": 1750, "DA": 696, "AA": 1739, "AD": 787,
    "RR": 622, "RL": 1761, "LL": 740, "LR": 1698,
}
REFERENCE_G2 = {
    "HH": 1.77, "HV": 0.92, "VV": 3.65, "VH": 0.53,
    "DD": 2.47, "DA": 0.95, "AA": 1.89, "AD": 1.04,
    "RR": 0.94, "RL": 1.82, "LL": 0.81, "LR": 2.22,
}


def reference_counts() -> TwoPhotonCounts:
    return TwoPhotonCounts(dict(REFERENCE_COUNTS), {s: 600.0 for s in SETTINGS})
