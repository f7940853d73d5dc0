"""Compiled inner loops over time-tag arrays."""
import numba as nb
import numpy as np


@nb.njit(cache=True)
def dead_time_mask(tags, dead_time):
    keep = np.zeros(tags.size, dtype=np.bool_)
    if tags.size == 0:
        return keep
    keep[0] = True
    last = tags[0]
    for i in range(1, tags.size):
        if tags[i] - last >= dead_time:
            keep[i] = True
            last = tags[i]
    return keep


@nb.njit(cache=True)
def first_unsorted(tags):
    for i in range(1, tags.size):
        if tags[i] < tags[i - 1]:
            return i
    return -1


@nb.njit(cache=True)
def merge_sweep(start, stop, bin_width, half_bins, counts):
    """Two-pointer coincidence sweep.

    ``lo`` tracks the first stop tag that can still fall inside the window of
    the current start tag; it only moves forward because starts are sorted.
    Bin index is floor((dt + w/2) / w) + half_bins.
    """
    n_bins = 2 * half_bins + 1
    reach = (half_bins + 0.5) * bin_width
    lo = 0
    m = stop.size
    for i in range(start.size):
        s = start[i]
        while lo < m and (stop[lo] - s) < -reach:
            lo += 1
        j = lo
        while j < m:
            dt = stop[j] - s
            if dt >= reach:
                break
            k = int(np.floor((dt + 0.5 * bin_width) / bin_width)) + half_bins
            if 0 <= k < n_bins:
                counts[k] += 1
            j += 1
    return counts
