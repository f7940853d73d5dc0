"""Coincidence histograms between time-tag streams and g2(0) extraction."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from ._kernels import first_unsorted, merge_sweep

DEFAULT_BIN_PS = 50.0
DEFAULT_RANGE_NS = 44.0  # third side peak at 37.5 ns plus a 6 ns window


class UnsortedStreamError(ValueError):
    def __init__(self, which, index):
        super().__init__(f"{which} stream is not time-ordered at index {index}")
        self.which = which
        self.index = index


@dataclass(frozen=True)
class CorrelationHistogram:
    bin_width: float  # ps
    counts: np.ndarray  # odd length, centre bin at tau = 0
    channels: tuple = (0, 1)
    duration: float = 0.0  # s
    rep_period: float = 0.0  # ps
    meta: Dict[str, str] = field(default_factory=dict)

    @property
    def half_bins(self) -> int:
        return (self.counts.size - 1) // 2

    @property
    def tau(self) -> np.ndarray:
        """Bin centres in ps."""
        return (np.arange(self.counts.size) - self.half_bins) * self.bin_width

    @property
    def range_ns(self) -> float:
        return (self.half_bins + 0.5) * self.bin_width * 1e-3

    def to_csv(self) -> str:
        out = io.StringIO()
        header = {
            "bin_width_ps": f"{self.bin_width:.12g}",
            "range_ns": f"{self.range_ns:.12g}",
            "channels": ",".join(str(c) for c in self.channels),
            "duration_s": f"{self.duration:.12g}",
            "rep_period_ps": f"{self.rep_period:.12g}",
        }
        header.update(self.meta)
        for k, v in header.items():
            out.write(f"# {k}={v}\n")
        out.write("tau_ps,count\n")
        for t, c in zip(self.tau, self.counts):
            out.write(f"{t:.12g},{int(c)}\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CorrelationHistogram":
        meta, taus, counts = {}, [], []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v.strip()
            elif line.startswith("tau"):
                continue
            else:
                t, c = line.split(",")
                taus.append(float(t))
                counts.append(int(float(c)))
        taus = np.asarray(taus)
        if "bin_width_ps" in meta:
            w = float(meta.pop("bin_width_ps"))
        else:
            w = float(taus[1] - taus[0])
        counts = np.asarray(counts, dtype=np.int64)
        if counts.size % 2 == 0:
            raise ValueError("histogram must have an odd number of bins")
        ch = tuple(int(c) for c in meta.pop("channels", "0,1").split(","))
        duration = float(meta.pop("duration_s", 0.0))
        rep = float(meta.pop("rep_period_ps", 0.0))
        meta.pop("range_ns", None)
        return cls(w, counts, ch, duration, rep, meta)


def _half_bins(bin_width, range_ns):
    if bin_width <= 0 or range_ns <= 0:
        raise ValueError("bin_width and range must be > 0")
    return int(round(range_ns * 1e3 / bin_width))


def _as_tags(stream, which):
    tags = getattr(stream, "tags", stream)
    tags = np.ascontiguousarray(np.asarray(tags).astype(np.int64))
    bad = first_unsorted(tags)
    if bad >= 0:
        raise UnsortedStreamError(which, int(bad))
    return tags


def coincidences(start_stream, stop_stream, bin_width: float = DEFAULT_BIN_PS,
                 range_ns: float = DEFAULT_RANGE_NS, duration: float = 0.0,
                 rep_period: float = 0.0, channels=(0, 1), chunks: int = 1) -> CorrelationHistogram:
    """Histogram of stop - start delays over +/- ``range_ns``.

    Bin ``k`` collects delays in [(k - 1/2) w, (k + 1/2) w). ``chunks`` > 1
    splits the start stream and sums the partial histograms, which gives the
    same integer counts.
    """
    start = _as_tags(start_stream, "start")
    stop = _as_tags(stop_stream, "stop")
    half = _half_bins(bin_width, range_ns)
    counts = np.zeros(2 * half + 1, dtype=np.int64)
    if start.size and stop.size:
        for part in np.array_split(start, max(1, chunks)):
            merge_sweep(part, stop, float(bin_width), half, counts)
    return CorrelationHistogram(float(bin_width), counts, tuple(channels), duration, rep_period)


def brute_force_coincidences(start, stop, bin_width, range_ns) -> np.ndarray:
    """O(n*m) reference enumeration of every start/stop pair."""
    start = np.asarray(getattr(start, "tags", start)).astype(np.int64)
    stop = np.asarray(getattr(stop, "tags", stop)).astype(np.int64)
    half = _half_bins(bin_width, range_ns)
    counts = np.zeros(2 * half + 1, dtype=np.int64)
    for s in start:
        dt = (stop - s).astype(float)
        k = np.floor(dt / bin_width + 0.5).astype(np.int64) + half
        k = k[(k >= 0) & (k < counts.size)]
        np.add.at(counts, k, 1)
    return counts


def sync_histogram(stream, rep_period: float, bin_width: float = DEFAULT_BIN_PS,
                   range_ns: float = DEFAULT_RANGE_NS, sync_offset: float = 0.0,
                   duration: float = 0.0, channel: int = 1) -> CorrelationHistogram:
    """Correlation of a stream against an ideal laser clock with one tick per
    pulse at ``sync_offset + k * rep_period``.

    Equivalent to :func:`coincidences` with a complete sync stream, without
    materialising it.
    """
    tags = _as_tags(stream, "stop").astype(float) - sync_offset
    half = _half_bins(bin_width, range_ns)
    reach = (half + 0.5) * bin_width
    counts = np.zeros(2 * half + 1, dtype=np.int64)
    k_max = int(math.ceil(reach / rep_period)) + 1
    n_pulses = int(math.ceil(duration * 1e12 / rep_period)) if duration > 0 else None
    base = np.floor(tags / rep_period)
    for m in range(-k_max, k_max + 1):
        k = base - m
        if n_pulses is not None:
            ok = (k >= 0) & (k < n_pulses)
        else:
            ok = k >= 0
        dt = tags[ok] - k[ok] * rep_period
        idx = np.floor(dt / bin_width + 0.5).astype(np.int64) + half
        idx = idx[(idx >= 0) & (idx < counts.size)]
        counts += np.bincount(idx, minlength=counts.size)
    return CorrelationHistogram(float(bin_width), counts, (-1, channel), duration, rep_period,
                               {"start": "laser_sync"})


def peak_integrate(hist: CorrelationHistogram, center_ns: float, window_ns: float) -> int:
    """Sum of bins whose centres lie in [center - window, center + window]."""
    if window_ns <= 0:
        raise ValueError("window must be > 0")
    tau = hist.tau * 1e-3
    lo, hi = center_ns - window_ns, center_ns + window_ns
    edge = hist.range_ns
    if lo < -edge - 1e-9 or hi > edge + 1e-9:
        raise ValueError(f"window [{lo:.6g}, {hi:.6g}] ns outside histogram range +/-{edge:.6g} ns")
    eps = 1e-9
    sel = (tau >= lo - eps) & (tau <= hi + eps)
    return int(hist.counts[sel].sum())


@dataclass(frozen=True)
class G2Result:
    value: float
    method: str
    center_counts: int
    side_peak_mean: Optional[float] = None
    side_peaks: tuple = ()
    valid_only_if_unpolarized: bool = False


def side_peak_window(rep_period_ps: float) -> float:
    """Default integration half-window (ns): the +/-6 ns convention at 80 MHz,
    capped at half the repetition period for faster lasers."""
    return min(6.0, 0.48 * rep_period_ps * 1e-3)


def g2_zero(hist: CorrelationHistogram, rep_period: float, method: str = "side_peak",
            n_side_peaks: int = 3, window_ns: Optional[float] = None) -> G2Result:
    """Zero-delay peak, normalized by the mean side peak or left as raw counts.

    ``rep_period`` in ps. The side-peak normalization assumes an unpolarized
    source, which the result records.
    """
    window_ns = side_peak_window(rep_period) if window_ns is None else window_ns
    center = peak_integrate(hist, 0.0, window_ns)
    if method == "raw_counts":
        return G2Result(float(center), method, center)
    if method != "side_peak":
        raise ValueError(f"unknown method {method!r}")
    if n_side_peaks < 1:
        raise ValueError("need at least one side peak per side")
    period_ns = rep_period * 1e-3
    sides = []
    for k in range(1, n_side_peaks + 1):
        for sign in (-1, 1):
            c = sign * k * period_ns
            if abs(c) + window_ns > hist.range_ns + 1e-9:
                raise ValueError(
                    f"insufficient side peaks: histogram range +/-{hist.range_ns:.6g} ns cannot "
                    f"hold peak {k} at {c:.6g} ns")
            sides.append(peak_integrate(hist, c, window_ns))
    mean = float(np.mean(sides))
    if mean <= 0:
        raise ValueError("side peaks are empty")
    return G2Result(center / mean, method, center, mean, tuple(sides), True)
