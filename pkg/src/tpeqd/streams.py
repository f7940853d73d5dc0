"""Monte Carlo time-tag acquisition for cross-correlation and HBT setups.

Simulating every laser pulse of a ten-minute run (4.8e10 pulses at 80 MHz)
is pointless when only ~1e-4 of the photons are detected. Pulses are
therefore processed in fixed blocks with exact two-stage thinning:

1. every routed photon is first kept with probability ``eta`` (the largest
   channel efficiency); a pulse is *active* if at least one of its photons
   survives. The number of active pulses per block is binomial, their
   positions uniform without replacement, and the category and surviving
   photon pattern are drawn conditionally on activity.
2. the detector stage keeps each surviving photon with probability
   ``efficiency / eta``, adds jitter and dark counts.

Each block draws from its own Philox stream keyed by (seed, block index), so
the output does not depend on the thread count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from .core import DetectorSpec, Jones, QDParameters
from .correlator import CorrelationHistogram, DEFAULT_BIN_PS, DEFAULT_RANGE_NS
from .dynamics import ChannelSplit
from .emission import (CASC, PHON, TimeTagStream, _categories, detect_photons,
                       fill_cycles, finalize_stream, joint_pass_probability, orthogonal,
                       phonon_x_jones, sample_cycles)

BLOCK_PULSES = 1 << 22


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


@dataclass(frozen=True)
class Setup:
    """Optical routing of the emitted photons.

    ``kind="cross"``: XX photons pass ``analyzer_xx`` to channel 0, X photons
    pass ``analyzer_x`` to channel 1.
    ``kind="hbt"``: photons of ``line`` ("X" or "XX") pass the optional
    ``analyzer_x`` and a 50/50 splitter onto channels 0 and 1.
    An analyzer of ``None`` transmits everything.
    """

    kind: str = "cross"
    analyzer_xx: Optional[Jones] = None
    analyzer_x: Optional[Jones] = None
    line: str = "X"

    def routes(self):
        """Whether XX and X photons reach a detector."""
        if self.kind == "cross":
            return True, True
        if self.kind == "hbt":
            if self.line not in ("X", "XX"):
                raise ValueError(f"unknown line {self.line!r}")
            return self.line == "XX", self.line == "X"
        raise ValueError(f"unknown setup {self.kind!r}")


def _joint_given_xx(a, b, phase, coherent, xx_passed):
    """P(X passes b | XX outcome of analyzer a)."""
    a = np.asarray(a, complex)
    ao = orthogonal(a)
    p_pass = joint_pass_probability(a, b, phase, coherent)
    p_fail = joint_pass_probability(ao, b, phase, coherent)
    return np.where(xx_passed, p_pass, p_fail) / 0.5


def _simulate_block(block, seed, n_pulses, rep_period_ps, split, qd, laser_pol, setup, detectors,
                    eta, phase_offset, darks):
    rng = block_rng(seed, block)
    start = block * BLOCK_PULSES
    n_block = min(BLOCK_PULSES, n_pulses - start)
    route_xx, route_x = setup.routes()
    p_xx, p_x = _categories(split)
    m_casc = int(route_xx) + int(route_x)
    w_casc = p_xx * (1 - (1 - eta) ** m_casc)
    w_phon = p_x * (eta if route_x else 0.0)
    q = w_casc + w_phon
    k = int(rng.binomial(n_block, min(q, 1.0))) if q > 0 else 0
    pos = np.sort(rng.choice(n_block, size=k, replace=False)) if k else np.zeros(0, np.int64)
    outcome = np.where(rng.random(k) * q < w_casc, CASC, PHON).astype(np.int8)
    cyc = fill_cycles(rng, outcome, qd, phase_offset)
    casc = outcome == CASC
    # surviving-photon pattern conditional on at least one survivor
    r1, r2 = rng.random(k), rng.random(k)
    if m_casc == 2:
        first = r1 < eta / (1 - (1 - eta) ** 2)
        has_xx = casc & first
        has_x = (~casc) | ~first | (r2 < eta)
    else:
        has_xx = casc & route_xx
        has_x = ~has_xx
    has_x &= route_x
    pass_xx, pass_x = _analyze(rng, setup, cyc, laser_pol)
    t0 = (start + pos) * rep_period_ps
    sel_xx = has_xx & pass_xx
    sel_x = has_x & pass_x
    times = np.concatenate([t0[sel_xx] + cyc.t_xx[sel_xx] * 1e3, t0[sel_x] + cyc.t_x[sel_x] * 1e3])
    if setup.kind == "cross":
        chans = np.concatenate([np.zeros(sel_xx.sum(), np.int8), np.ones(sel_x.sum(), np.int8)])
    else:
        chans = (rng.random(times.size) < 0.5).astype(np.int8)
    scale = {ch: eta for ch in detectors}
    return detect_photons(rng, chans, times, detectors, n_block * rep_period_ps,
                          t_start_ps=start * rep_period_ps, darks=darks, efficiency_scale=scale)


def _analyze(rng, setup: Setup, cyc, laser_pol):
    n = cyc.outcome.size
    casc, phon = cyc.cascade, cyc.phonon
    u, v = rng.random(n), rng.random(n)
    pass_xx = np.ones(n, bool)
    pass_x = np.ones(n, bool)
    b = setup.analyzer_x
    if setup.kind == "cross":
        a = setup.analyzer_xx
        if a is not None:
            pass_xx = u < 0.5
        if b is not None:
            px = np.zeros(n)
            if a is None:
                px[casc] = 0.5
            else:
                px[casc] = _joint_given_xx(a, b, cyc.phase[casc], cyc.coherent[casc], pass_xx[casc])
            if phon.any():
                psi = phonon_x_jones(laser_pol, cyc.phase[phon])
                px[phon] = np.abs(psi @ np.conj(np.asarray(b, complex))) ** 2
            pass_x = v < px
    elif b is not None:
        if setup.line == "XX":
            pass_xx = u < 0.5
        else:
            px = np.where(casc, 0.5, 0.0)
            if phon.any():
                psi = phonon_x_jones(laser_pol, cyc.phase[phon])
                px[phon] = np.abs(psi @ np.conj(np.asarray(b, complex))) ** 2
            pass_x = v < px
    return pass_xx, pass_x


def simulate_streams(split: ChannelSplit, qd: QDParameters, laser_pol: Jones, setup: Setup,
                     detectors: Mapping[int, DetectorSpec], duration_s: float, rep_rate_mhz: float,
                     seed: int, phase_offset: float = 0.0, darks: bool = True,
                     threads: int = 1) -> Dict[int, TimeTagStream]:
    """Time-tag streams of channels 0 and 1 for a run of ``duration_s``."""
    if set(detectors) != {0, 1}:
        raise ValueError("detectors must be given for channels 0 and 1")
    rep_period_ps = 1e6 / rep_rate_mhz
    n_pulses = int(round(duration_s * 1e12 / rep_period_ps))
    eta = max(d.efficiency for d in detectors.values())
    n_blocks = max(1, -(-n_pulses // BLOCK_PULSES))

    def run(b):
        return _simulate_block(b, seed, n_pulses, rep_period_ps, split, qd, laser_pol, setup,
                               detectors, eta, phase_offset, darks)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, range(n_blocks)))
    else:
        parts = [run(b) for b in range(n_blocks)]
    duration_ps = n_pulses * rep_period_ps
    out = {}
    for ch in (0, 1):
        t = np.concatenate([p[ch] for p in parts]) if parts else np.zeros(0)
        out[ch] = finalize_stream(ch, t, duration_ps, detectors[ch])
    return out


# ------------------------------------------------------ pair-level sampling

def simulate_pair_counts(qd: QDParameters, n_pairs: int, seed: int, settings=None):
    """Coincidence counts of ``n_pairs`` cascade pairs spread evenly over the
    twelve analyzer settings (each pair either passes both analyzers or not).
    """
    from .core import POLARIZATIONS
    from .tomography import SETTINGS, TwoPhotonCounts
    settings = settings or SETTINGS
    per = n_pairs // len(settings)
    counts = {}
    full = ChannelSplit(1.0, 0.0, 0.0)
    for i, s in enumerate(settings):
        rng = block_rng(seed, i)
        cyc = sample_cycles(rng, full, qd, per)
        p = joint_pass_probability(POLARIZATIONS[s[0]], POLARIZATIONS[s[1]], cyc.phase, cyc.coherent)
        counts[s] = int(np.count_nonzero(rng.random(per) < p))
    return TwoPhotonCounts(counts, {s: float(per) for s in settings})


# ------------------------------------------------- lifetime histograms

def _histogram(delays_ps, bin_width, range_ns):
    half = int(round(range_ns * 1e3 / bin_width))
    k = np.floor(delays_ps / bin_width + 0.5).astype(np.int64) + half
    k = k[(k >= 0) & (k <= 2 * half)]
    return np.bincount(k, minlength=2 * half + 1).astype(np.int64)


def lifetime_histogram(kind: str, qd: QDParameters, n_counts: int, seed: int,
                       irf_sigma_ns: float = 0.1, background: float = 0.0,
                       bin_width: float = 20.0, range_ns: float = 10.0,
                       split: Optional[ChannelSplit] = None) -> CorrelationHistogram:
    """Synthetic correlation histogram of ``n_counts`` correlated events.

    ``kind`` is ``laser_xx`` (laser to XX photon), ``laser_x`` (laser to X
    photon, cascade and phonon-fed) or ``xx_x`` (XX photon to its cascade X
    partner). Delays are broadened by a Gaussian IRF and sit on a flat
    ``background`` (mean counts per bin).
    """
    rng = block_rng(seed, 0)
    split = split or ChannelSplit(1.0, 0.0, 0.0)
    if kind in ("laser_xx", "xx_x"):
        split = ChannelSplit(1.0, 0.0, 0.0)
    cyc = sample_cycles(rng, split, qd, n_counts)
    if kind == "laser_xx":
        d = cyc.t_xx
    elif kind == "laser_x":
        d = cyc.t_x
    elif kind == "xx_x":
        d = cyc.t_x - cyc.t_xx
    else:
        raise ValueError(f"unknown histogram kind {kind!r}")
    d = d[~np.isnan(d)] * 1e3
    d = d + rng.normal(0.0, irf_sigma_ns * 1e3, d.size)
    counts = _histogram(d, bin_width, range_ns)
    if background > 0:
        counts += rng.poisson(background, counts.size)
    return CorrelationHistogram(float(bin_width), counts, (0, 1), 0.0, 0.0,
                                {"kind": kind, "seed": str(seed)})
