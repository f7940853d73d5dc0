import math

import numpy as np
import pytest

from tpeqd.core import DetectorSpec
from tpeqd.correlator import (CorrelationHistogram, UnsortedStreamError, brute_force_coincidences,
                              coincidences, g2_zero, peak_integrate, side_peak_window, sync_histogram)
from tpeqd.dynamics import ChannelSplit
from tpeqd.emission import TimeTagStream
from tpeqd.presets import REPRESENTATIVE_DOT
from tpeqd.streams import Setup, simulate_streams
from tpeqd.tomography import REFERENCE_COUNTS, REFERENCE_G2

PERIOD = 12500.0  # ps at 80 MHz


def _tags(rng, n, span):
    return np.sort(rng.integers(0, span, n)).astype(np.uint64)


def _peaks(center, side, period=PERIOD, bin_width=50.0, range_ns=44.0):
    """Histogram with all counts of each peak in the bin at its centre."""
    half = int(round(range_ns * 1e3 / bin_width))
    counts = np.zeros(2 * half + 1, np.int64)
    counts[half] = center
    for k in range(1, 4):
        off = int(round(k * period / bin_width))
        counts[half - off] = side
        counts[half + off] = side
    return CorrelationHistogram(bin_width, counts, rep_period=period)


# --------------------------------------------------------- coincidences

def test_empty_streams():
    h = coincidences(np.zeros(0, np.uint64), np.arange(10, dtype=np.uint64))
    assert h.counts.size == 1761 and h.counts.sum() == 0
    assert coincidences(np.arange(10), np.zeros(0)).counts.sum() == 0


def test_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        span = int(rng.integers(1_000, 200_000))
        a = _tags(rng, int(rng.integers(0, 60)), span)
        b = _tags(rng, int(rng.integers(0, 60)), span)
        w = float(rng.choice([1.0, 7.0, 50.0, 333.0]))
        r = float(rng.uniform(0.01, 50.0))
        assert np.array_equal(coincidences(a, b, w, r).counts, brute_force_coincidences(a, b, w, r))


def test_bin_edges_half_open():
    # delays exactly on an edge go to the upper bin
    stop = np.array([975, 1024, 1025, 1074, 1075])
    h = coincidences(np.array([1000]), stop, 50.0, 1.0)
    mid = h.half_bins
    assert (h.counts[mid - 1], h.counts[mid], h.counts[mid + 1], h.counts[mid + 2]) == (0, 2, 2, 1)
    assert np.array_equal(h.counts, brute_force_coincidences([1000], stop, 50.0, 1.0))


def test_poisson_accidentals():
    rng = np.random.default_rng(1)
    T = 1e12  # 1 s
    r1, r2 = 1e5, 2e5
    a = _tags(rng, rng.poisson(r1), int(T))
    b = _tags(rng, rng.poisson(r2), int(T))
    h = coincidences(a, b, 50.0, 44.0)
    expected = a.size * b.size / T * 50.0 * h.counts.size
    assert abs(h.counts.sum() - expected) < 5 * math.sqrt(expected)
    per_bin = expected / h.counts.size
    assert abs(h.counts.mean() - per_bin) < 5 * math.sqrt(per_bin / h.counts.size)


def test_time_translation_invariance():
    rng = np.random.default_rng(2)
    a, b = _tags(rng, 3000, 10**9), _tags(rng, 3000, 10**9)
    h0 = coincidences(a, b, 50.0, 20.0)
    h1 = coincidences(a + np.uint64(123_456_789_000), b + np.uint64(123_456_789_000), 50.0, 20.0)
    assert np.array_equal(h0.counts, h1.counts)


@pytest.mark.parametrize("chunks", [2, 7, 64])
def test_chunked_equals_single_pass(chunks):
    rng = np.random.default_rng(3)
    a, b = _tags(rng, 20_000, 10**9), _tags(rng, 20_000, 10**9)
    assert np.array_equal(coincidences(a, b, 50.0, 44.0).counts,
                          coincidences(a, b, 50.0, 44.0, chunks=chunks).counts)


def test_unsorted_stream_reports_index():
    with pytest.raises(UnsortedStreamError) as e:
        coincidences(np.array([1, 2, 5, 4, 9]), np.array([1, 2]))
    assert e.value.which == "start" and e.value.index == 3
    with pytest.raises(UnsortedStreamError) as e:
        coincidences(np.array([1]), np.array([3, 2]))
    assert e.value.which == "stop" and e.value.index == 1


def test_sync_histogram_equals_explicit_clock():
    rng = np.random.default_rng(4)
    n = 4000
    sync = np.arange(n, dtype=np.int64) * int(PERIOD)
    photons = np.sort(sync[rng.integers(0, n, 500)] + rng.integers(0, 3000, 500))
    dur = n * PERIOD * 1e-12
    h_sync = sync_histogram(photons, PERIOD, 50.0, 44.0, duration=dur)
    h_full = coincidences(sync, photons, 50.0, 44.0)
    assert np.array_equal(h_sync.counts, h_full.counts)
    back = CorrelationHistogram.from_csv(h_sync.to_csv())
    assert back.channels == (-1, 1) and np.array_equal(back.counts, h_sync.counts)


def test_csv_round_trip():
    h = _peaks(17, 5)
    h = CorrelationHistogram(h.bin_width, h.counts, (0, 1), 600.0, PERIOD, {"setting": "HV"})
    back = CorrelationHistogram.from_csv(h.to_csv())
    assert np.array_equal(back.counts, h.counts)
    assert (back.bin_width, back.duration, back.rep_period, back.meta) == (50.0, 600.0, PERIOD, {"setting": "HV"})


# ----------------------------------------------------------------- peaks

def test_peak_integrate_inclusive_window():
    h = CorrelationHistogram(50.0, np.arange(21, dtype=np.int64))  # tau -500..500 ps
    assert peak_integrate(h, 0.0, 0.1) == 9 + 10 + 11 + 8 + 12
    assert peak_integrate(h, 0.0, 0.5) == h.counts.sum()
    assert peak_integrate(h, 0.2, 0.05) == 13 + 14 + 15
    with pytest.raises(ValueError, match="outside"):
        peak_integrate(h, 0.0, 0.6)


def test_side_peak_window():
    assert side_peak_window(PERIOD) == 6.0
    assert side_peak_window(1000.0) == pytest.approx(0.48)


@pytest.mark.parametrize("setting", ["HH", "VV", "DA", "RL"])
def test_g2_of_reference_peaks(setting):
    center = REFERENCE_COUNTS[setting]
    side = round(center / REFERENCE_G2[setting])
    r = g2_zero(_peaks(center, side), PERIOD)
    assert r.center_counts == center
    assert r.value == pytest.approx(REFERENCE_G2[setting], rel=2e-3)
    assert r.valid_only_if_unpolarized
    assert g2_zero(_peaks(center, side), PERIOD, "raw_counts").value == center


def test_g2_uneven_side_peaks():
    h = _peaks(10, 100)
    half = h.half_bins
    c = h.counts.copy()
    c[half + 250] = 40  # first right side peak
    r = g2_zero(CorrelationHistogram(50.0, c), PERIOD)
    assert r.side_peak_mean == pytest.approx((5 * 100 + 40) / 6)


def test_g2_insufficient_range():
    with pytest.raises(ValueError, match="insufficient side peaks"):
        g2_zero(_peaks(1, 1, range_ns=40.0), PERIOD)
    with pytest.raises(ValueError):
        g2_zero(_peaks(1, 1), PERIOD, method="bogus")


# ------------------------------------------------------------ simulated

def _det(eff, dark=0.0):
    return {ch: DetectorSpec(irf_sigma=50.0, dark_rate=dark, efficiency=eff, dead_time=22.0) for ch in (0, 1)}


def test_antibunching_degrades_with_dark_rate():
    split = ChannelSplit(0.65, 0.35, 0.0)
    vals = []
    for dark in (0.0, 2e5, 1e6):
        st = simulate_streams(split, REPRESENTATIVE_DOT, (1, 0), Setup("hbt", line="X"), _det(0.05, dark),
                              0.05, 80.0, seed=11)
        vals.append(g2_zero(coincidences(st[0], st[1], rep_period=PERIOD), PERIOD).value)
    assert vals[0] < 0.02
    assert vals[0] < vals[1] < vals[2]


@pytest.mark.parametrize("p_xx", [1.0, 0.3])
def test_cascade_bunching_flank_gives_exciton_lifetime(p_xx):
    # cross g2 = P(pair) / (P(XX) P(X)) = 1 / p_xx for a pure cascade source
    st = simulate_streams(ChannelSplit(p_xx, 0.0, 0.0), REPRESENTATIVE_DOT, (1, 0), Setup("cross"),
                          _det(0.05), 0.1, 80.0, seed=12)
    h = coincidences(st[0], st[1], rep_period=PERIOD)
    g2 = g2_zero(h, PERIOD)
    assert g2.value == pytest.approx(1 / p_xx, rel=0.05)
    # every same-pulse coincidence is a cascade pair, so the centre peak has
    # no accidental floor without darks
    tau = h.tau * 1e-3
    sel = (tau > 0.3) & (tau < 3.0) & (h.counts > 5)
    y = h.counts[sel]
    slope, _ = np.polyfit(tau[sel], np.log(y), 1, w=np.sqrt(y))
    assert -1 / slope == pytest.approx(REPRESENTATIVE_DOT.exciton_lifetime, rel=0.10)
