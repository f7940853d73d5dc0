import struct

import numpy as np
import pytest

from tpeqd import timetags
from tpeqd.emission import TimeTagStream


def _streams(seed=0):
    rng = np.random.default_rng(seed)
    return {ch: TimeTagStream(ch, np.sort(rng.integers(0, 2**62, n, dtype=np.uint64)))
            for ch, n in ((0, 500), (1, 321), (7, 0))}


def _same(a, b):
    # channels without tags leave no records
    assert list(a) == [k for k in b if len(b[k])]
    for ch, s in a.items():
        assert np.array_equal(s.tags, b[ch].tags)
        assert s.tags.dtype == np.uint64


def test_binary_round_trip_is_exact():
    st = _streams()
    data = timetags.to_bytes(st)
    assert len(data) == 16 + 16 * 821
    back = timetags.from_bytes(data)
    _same(back, st)


def test_csv_round_trip_is_exact():
    st = _streams(1)
    _same(timetags.from_csv(timetags.to_csv(st)), st)


def test_large_tags_survive_both_formats():
    st = {0: TimeTagStream(0, np.array([0, 2**63 + 12345, 2**64 - 1], dtype=np.uint64))}
    for back in (timetags.from_bytes(timetags.to_bytes(st)), timetags.from_csv(timetags.to_csv(st))):
        assert back[0].tags.tolist() == [0, 2**63 + 12345, 2**64 - 1]


def test_files_by_suffix(tmp_path):
    st = _streams(2)
    for name in ("tags.bin", "tags.csv"):
        timetags.write(tmp_path / name, st)
        _same(timetags.read(tmp_path / name), st)
    assert (tmp_path / "tags.csv").read_text().startswith("channel,time_ps\n")
    assert (tmp_path / "tags.bin").read_bytes()[:4] == b"QTT1"


def test_bad_magic():
    data = bytearray(timetags.to_bytes(_streams()))
    data[:4] = b"XXXX"
    with pytest.raises(ValueError, match="magic"):
        timetags.from_bytes(bytes(data))


def test_truncated_records():
    data = timetags.to_bytes(_streams())
    with pytest.raises(ValueError, match="records"):
        timetags.from_bytes(data[:-3])
    with pytest.raises(ValueError, match="header"):
        timetags.from_bytes(data[:10])


def test_nonzero_padding():
    data = bytearray(timetags.to_bytes(_streams()))
    data[16 + 3] = 1
    with pytest.raises(ValueError, match="padding"):
        timetags.from_bytes(bytes(data))


def test_channel_out_of_range():
    with pytest.raises(ValueError):
        timetags.to_bytes({300: TimeTagStream(300, np.array([1], dtype=np.uint64))})
