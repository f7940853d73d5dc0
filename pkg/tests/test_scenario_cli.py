import json
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from tpeqd import timetags
from tpeqd.cli import main
from tpeqd.correlator import CorrelationHistogram
from tpeqd.emission import TimeTagStream
from tpeqd.presets import REPRESENTATIVE_DOT
from tpeqd.runner import run, x_minus_xx
from tpeqd.scenario import ConfigError, from_dict, load, loads, parse_polarization
from tpeqd.streams import lifetime_histogram
from tpeqd.tomography import reference_counts


def _write(path: Path, data) -> Path:
    path.write_text(yaml.safe_dump(data))
    return path


# ---------------------------------------------------------------- scenario

def test_defaults_are_the_representative_dot():
    sc = from_dict({"experiment": "hbt", "seed": 1})
    assert sc.qd == REPRESENTATIVE_DOT
    assert sc.option("line") == "X"


def test_yaml_round_trip():
    sc = loads("""
experiment: tomography
seed: 123456789012
duration_s: 30
qd: {fss_ueV: 1.5, cross_dephasing_time_ns: 0.5}
laser: {polarization: 30, pulse_area_rad: 3.0}
detector: {dark_rate_per_s: 10}
options: {mode: streams}
""")
    back = loads(sc.to_yaml())
    assert back == sc
    assert sc.qd.fss == 1.5 and sc.detector.dark_rate == 10.0
    assert np.allclose(sc.laser.polarization, (np.cos(np.pi / 6), np.sin(np.pi / 6)))


@pytest.mark.parametrize("value, expected", [("H", (1, 0)), ("d", (2 ** -0.5, 2 ** -0.5)), (90, (0, 1)),
                                             ([0, 0, 1, 0], (0, 1))])
def test_polarization_forms(value, expected):
    assert np.allclose(parse_polarization(value), expected, atol=1e-15)


@pytest.mark.parametrize("data, match", [
    ({"experiment": "hbt"}, "seed"),
    ({"experiment": "hbt", "seed": "7"}, "integer"),
    ({"experiment": "hbt", "seed": 1, "qd": {"fss": 1}}, "unknown key"),
    ({"experiment": "hbt", "seed": 1, "colour": 1}, "unknown top-level"),
    ({"experiment": "hbt", "seed": 1, "options": {"lines": "X"}}, "option"),
    ({"experiment": "movie", "seed": 1}, "experiment"),
    ({"experiment": "hbt", "seed": 1, "qd": {"exciton_lifetime_ns": 0}}, "exciton_lifetime"),
    ({"experiment": "hbt", "seed": 1, "laser": {"polarization": "Q"}}, "polarization"),
])
def test_config_errors(data, match):
    with pytest.raises(ConfigError, match=match):
        from_dict(data)


def test_seed_override():
    assert from_dict({"experiment": "hbt"}, seed=5).seed == 5
    assert from_dict({"experiment": "hbt", "seed": 1}, seed=5).seed == 5


def test_load_file(tmp_path):
    p = _write(tmp_path / "s.yaml", {"experiment": "spectrum", "seed": 3})
    assert load(p).experiment == "spectrum"


# -------------------------------------------------------------- x - xx

def test_x_minus_xx_examples():
    d = x_minus_xx([10, 12, 5], [4, 2, 5])
    assert list(d.values) == [6, 10, 0]
    assert not d.inconsistent.any()
    d = x_minus_xx([1.0, 1.0], [1.5, 1.05], sigma=[0.1, 0.1])
    assert d.values[0] == pytest.approx(-0.3) and d.inconsistent[0]
    assert d.values[1] == pytest.approx(-0.05) and not d.inconsistent[1]
    with pytest.raises(ValueError):
        x_minus_xx([1, 2], [1])


# ------------------------------------------------------------------ runs

def _lifetime_scenario(tmp_path, seed=11):
    return _write(tmp_path / "life.yaml", {"experiment": "lifetime", "seed": seed,
                                           "options": {"n_counts": 20000}})


def test_outputs_are_byte_identical(tmp_path):
    cfg = _lifetime_scenario(tmp_path)
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "summary.json" in files and "scenario.yaml" in files
    for name in files:
        if name == "summary.json":
            continue
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    assert main(["run", "--config", str(cfg), "--seed", "12", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "lifetime_xx_x.csv").read_bytes() != (tmp_path / "a" / "lifetime_xx_x.csv").read_bytes()


def test_summary_lists_checks(tmp_path):
    cfg = _lifetime_scenario(tmp_path)
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--format", "json"])
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["experiment"] == "lifetime" and s["seed"] == 11
    assert {"tau_xx_ns", "tau_x_flank_ns"} <= set(s["headline"])
    assert all({"name", "value", "target", "passed"} <= set(c) for c in s["checks"])


def test_scenario_written_reloads(tmp_path):
    sc = from_dict({"experiment": "spectrum", "seed": 9})
    run(sc, tmp_path)
    assert load(tmp_path / "scenario.yaml") == sc


# ------------------------------------------------------------- exit codes

def test_missing_seed_exits_2(tmp_path, capsys):
    cfg = _write(tmp_path / "s.yaml", {"experiment": "hbt"})
    assert main(["run", "--config", str(cfg)]) == 2
    assert "seed" in capsys.readouterr().err


def test_bad_yaml_exits_2(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("experiment: [hbt\n")
    assert main(["run", "--config", str(p)]) == 2


def test_wrong_experiment_for_subcommand_exits_2(tmp_path):
    cfg = _write(tmp_path / "s.yaml", {"experiment": "hbt", "seed": 1})
    assert main(["simulate", "rabi", "--config", str(cfg)]) == 2


def test_missing_histogram_file_exits_2(tmp_path):
    cfg = _write(tmp_path / "s.yaml", {"experiment": "lifetime", "seed": 1,
                                       "options": {"histogram_file": str(tmp_path / "nope.csv")}})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_numerical_failure_exits_3(tmp_path):
    h = CorrelationHistogram(20.0, np.full(101, 4, dtype=np.int64))
    (tmp_path / "flat.csv").write_text(h.to_csv())
    assert main(["analyze", "lifetime", "--histogram", str(tmp_path / "flat.csv")]) == 3
    cfg = _write(tmp_path / "s.yaml", {"experiment": "lifetime", "seed": 1,
                                       "options": {"histogram_file": str(tmp_path / "flat.csv")}})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_failed_check_exits_4(tmp_path):
    (tmp_path / "u.csv").write_text("setting,count,duration_s\n" +
                                    "".join(f"{s},100,600\n" for s in reference_counts().counts))
    assert main(["analyze", "tomography", "--counts", str(tmp_path / "u.csv")]) == 0
    assert main(["analyze", "tomography", "--counts", str(tmp_path / "u.csv"), "--check"]) == 4
    # a simulated run whose target is out of reach
    cfg = _write(tmp_path / "s.yaml", {"experiment": "hbt", "seed": 2, "duration_s": 0.5,
                                       "detector": {"efficiency": 0.05, "dark_rate_per_s": 1e6}})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--check"]) == 4


# ------------------------------------------------------------ analyze

def test_analyze_tomography_reference(tmp_path, capsys):
    (tmp_path / "t1.csv").write_text(reference_counts().to_csv())
    assert main(["analyze", "tomography", "--counts", str(tmp_path / "t1.csv"), "--check"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["fidelity"] == pytest.approx(0.586, abs=1e-3)
    assert rep["entangled"]


def test_analyze_lifetime_with_fixed_parameter(tmp_path):
    h = lifetime_histogram("laser_x", REPRESENTATIVE_DOT, 100_000, seed=3, background=2)
    (tmp_path / "h.csv").write_text(h.to_csv())
    out = tmp_path / "fit.json"
    assert main(["analyze", "lifetime", "--histogram", str(tmp_path / "h.csv"), "--model",
                 "double_exp_cascade", "--fix", "tau_xx=0.44", "--out", str(out)]) == 0
    fit = json.loads(out.read_text())
    assert fit["params"]["tau_x"] == pytest.approx(0.78, rel=0.05)
    assert fit["params"]["tau_xx"] == 0.44 and fit["errors"]["tau_xx"] == 0.0
    assert main(["analyze", "lifetime", "--histogram", str(tmp_path / "h.csv"), "--fix", "tau=abc"]) == 2


def test_analyze_correlate_and_g2(tmp_path, capsys):
    rng = np.random.default_rng(0)
    pulses = np.sort(rng.choice(10**6, 20000, replace=False)).astype(np.uint64) * np.uint64(12500)
    a = pulses[rng.random(pulses.size) < 0.5]
    b = np.sort(pulses[rng.random(pulses.size) < 0.5] + np.uint64(300))
    tags = tmp_path / "run.qtt"
    timetags.write(tags, {0: TimeTagStream(0, a), 1: TimeTagStream(1, b)})
    hist = tmp_path / "h.csv"
    assert main(["analyze", "correlate", "--tags", str(tags), "--out", str(hist)]) == 0
    assert main(["analyze", "g2", "--histogram", str(hist)]) == 0
    g = json.loads(capsys.readouterr().out)
    # same pulse list on both channels: centre holds the shared pulses, sides the random pairs
    assert g["g2_zero"] > 10
    assert main(["analyze", "correlate", "--tags", str(tags), "--stop", "5"]) == 2


# ---------------------------------------------------- every subcommand

SUBCOMMANDS = ["rabi", "detuning", "tomography", "hbt", "lifetime", "spectrum", "circular", "polarization"]


@pytest.mark.slow
@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_subcommand_defaults_finish_within_a_minute(name, tmp_path, capsys):
    t0 = time.perf_counter()
    code = main(["simulate", name, "--seed", "2024", "--out", str(tmp_path), "--threads", "4", "--check"])
    elapsed = time.perf_counter() - t0
    out = capsys.readouterr().out
    assert code == 0, out
    assert elapsed < 60
    assert "FAIL" not in out
    assert (tmp_path / "summary.json").exists()
