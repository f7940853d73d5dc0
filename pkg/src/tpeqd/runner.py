"""Scenario execution: one function per experiment, each writing plot-ready
tables and returning headline numbers with their acceptance status.

Data files carry the seed and experiment in a ``#`` header and are
byte-identical between runs of the same scenario; the wall-clock time only
appears in ``summary.json``.
"""
from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import timetags
from .core import POLARIZATIONS, H, LaserPulseSpec, TabulatedKernel, linear_polarization
from .correlator import CorrelationHistogram, coincidences, g2_zero
from .dynamics import ConvergenceError, evolve, first_xx_maximum, rabi_visibility, sweep, tpe_pi_area
from .emission import mean_phonon_x_pass, pair_fidelity, synth_spectrum
from .lifetimes import FitError, fit_lifetime, kernel_from_histogram
from .scenario import Scenario
from .streams import Setup, block_rng, lifetime_histogram, simulate_pair_counts, simulate_streams
from .tomography import SETTINGS, TwoPhotonCounts, run_tomography

NUMERICAL = (ConvergenceError, FitError, FloatingPointError, np.linalg.LinAlgError, ArithmeticError)


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage
        self.numerical = isinstance(exc, NUMERICAL)


@contextmanager
def stage(name):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class Check:
    name: str
    value: float
    target: str
    passed: bool

    def to_dict(self):
        return {"name": self.name, "value": self.value, "target": self.target, "passed": bool(self.passed)}


@dataclass
class RunResult:
    experiment: str
    seed: int
    headline: Dict[str, object] = field(default_factory=dict)
    checks: List[Check] = field(default_factory=list)
    files: List[str] = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def summary(self, elapsed: float) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, "headline": self.headline,
                "checks": [c.to_dict() for c in self.checks], "all_passed": self.passed,
                "files": self.files, "elapsed_s": round(elapsed, 3),
                "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z")}


def _within(name, value, target, tol, res: RunResult):
    res.checks.append(Check(name, float(value), f"{target} +/- {tol}", abs(value - target) <= tol))


def _at_most(name, value, limit, res: RunResult):
    res.checks.append(Check(name, float(value), f"<= {limit}", value <= limit))


def _at_least(name, value, limit, res: RunResult):
    res.checks.append(Check(name, float(value), f">= {limit}", value >= limit))


# ------------------------------------------------------------------ output

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def write_table(out_dir: Path, name: str, meta: Dict[str, object], columns: Dict[str, np.ndarray],
                fmt: str, res: RunResult) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out_dir / f"{name}.json"
        doc = {"meta": {k: str(v) for k, v in meta.items()},
               "columns": {k: [float(x) if not isinstance(x, (bool, np.bool_)) else bool(x)
                               for x in np.asarray(v).tolist()] for k, v in columns.items()}}
        path.write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")
    else:
        path = out_dir / f"{name}.csv"
        lines = [f"# {k}={v}" for k, v in meta.items()]
        lines.append(",".join(columns))
        for row in zip(*columns.values()):
            lines.append(",".join(_fmt(v) for v in row))
        path.write_text("\n".join(lines) + "\n")
    res.files.append(path.name)
    return path


def write_text(out_dir: Path, filename: str, text: str, res: RunResult) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / filename
    path.write_text(text)
    res.files.append(filename)
    return path


def _meta(sc: Scenario, **extra):
    m = {"experiment": sc.experiment, "seed": sc.seed}
    m.update(extra)
    return m


def _with_meta(hist: CorrelationHistogram, sc: Scenario, **extra) -> CorrelationHistogram:
    meta = dict(hist.meta)
    meta.update({k: str(v) for k, v in _meta(sc, **extra).items()})
    return replace(hist, meta=meta)


# --------------------------------------------------------------- X - XX

@dataclass(frozen=True)
class Difference:
    values: np.ndarray
    sigma: np.ndarray
    inconsistent: np.ndarray


def x_minus_xx(intensity_x, intensity_xx, sigma=None) -> Difference:
    """Elementwise X - XX intensity.

    Differences below -3 sigma (Poisson sigma of the two counts unless given)
    are clipped to -3 sigma and flagged: a prepared exciton population can
    not be smaller than the biexciton one feeding it.
    """
    ix = np.asarray(intensity_x, dtype=float)
    ixx = np.asarray(intensity_xx, dtype=float)
    if ix.shape != ixx.shape:
        raise ValueError(f"length mismatch: {ix.size} vs {ixx.size}")
    d = ix - ixx
    s = np.sqrt(np.maximum(ix, 0) + np.maximum(ixx, 0)) if sigma is None else np.broadcast_to(
        np.asarray(sigma, dtype=float), d.shape)
    bad = d < -3 * s
    return Difference(np.where(bad, -3 * s, d), s, bad)


# ------------------------------------------------------------ experiments

def _split_at_laser(sc: Scenario):
    return evolve(sc.qd, sc.laser, sc.phonon).channel_split


def rabi_sweep(sc: Scenario, out: Path, fmt: str, threads: int, res: RunResult):
    with stage("pi_area"):
        pi_ideal = tpe_pi_area(sc.qd, sc.laser)
    areas = np.linspace(0.0, sc.option("max_area_over_pi") * pi_ideal, int(sc.option("points")))
    with stage("dynamics"):
        sw = sweep(sc.qd, sc.laser, sc.phonon, areas=areas, threads=threads)
        area_max, split = first_xx_maximum(sc.qd, sc.laser, sc.phonon)
    rng = block_rng(sc.seed, 0)
    scale = float(sc.option("intensity_scale"))
    i_xx = rng.poisson(sw.P_XX * scale)
    i_x = rng.poisson(sw.P_X_total * scale)
    diff = x_minus_xx(i_x, i_xx)
    sp = sw.splits
    write_table(out, "rabi_sweep", _meta(sc, pi_area_rad=f"{pi_ideal:.9g}"), {
        "area_rad": areas, "area_over_pi": areas / pi_ideal,
        "P_XX": sw.P_XX, "P_XX_coherent": [s.P_XX_coherent for s in sp],
        "P_XX_phonon": [s.P_XX_phonon for s in sp], "P_X_phonon": [s.P_X_phonon for s in sp],
        "P_X_total": sw.P_X_total, "P_X_minus_XX": sw.P_X_minus_XX,
        "I_XX": i_xx, "I_X": i_x, "I_X_minus_XX": diff.values / scale, "inconsistent": diff.inconsistent,
    }, fmt, res)
    res.headline.update({"pi_area_rad": area_max, "pi_area_over_ideal": area_max / pi_ideal,
                         "P_XX": split.P_XX, "P_XX_coherent": split.P_XX_coherent,
                         "P_X_phonon": split.P_X_phonon, "rabi_visibility": rabi_visibility(sw.P_XX)})
    _within("P_XX at first maximum", split.P_XX, 0.65, 0.05, res)
    _within("P_X_phonon at first maximum", split.P_X_phonon, 0.35, 0.05, res)


def detuning_sweep(sc: Scenario, out: Path, fmt: str, threads: int, res: RunResult):
    det = np.linspace(sc.option("start_meV"), sc.option("stop_meV"), int(sc.option("points")))
    with stage("dynamics"):
        sw = sweep(sc.qd, sc.laser, sc.phonon, detunings=det, threads=threads)
    sp = sw.splits
    write_table(out, "detuning_sweep", _meta(sc), {
        "detuning_meV": det, "P_XX": sw.P_XX, "P_XX_coherent": [s.P_XX_coherent for s in sp],
        "P_XX_phonon": [s.P_XX_phonon for s in sp], "P_X_phonon": [s.P_X_phonon for s in sp],
        "P_X_minus_XX": sw.P_X_minus_XX,
    }, fmt, res)
    with stage("off_resonance"):
        pi_ideal = tpe_pi_area(sc.qd, sc.laser)
        areas = np.linspace(0.0, 3 * pi_ideal, int(sc.option("visibility_points")))
        cols = {"area_rad": areas}
        for d in [0.0] + list(sc.option("off_resonance_meV")):
            pulse = replace(sc.laser, center_energy=sc.qd.tpe_resonance + d)
            p = sweep(sc.qd, pulse, sc.phonon, areas=areas, threads=threads).P_XX
            v = rabi_visibility(p)
            cols[f"P_XX_{d:+.3f}meV"] = p
            res.headline[f"rabi_visibility_{d:+.3f}meV"] = v
            if d != 0.0:
                _at_most(f"Rabi visibility at {d:+.3f} meV", v, 0.1, res)
    write_table(out, "off_resonance", _meta(sc), cols, fmt, res)
    pos = det > 0
    if pos.any():
        m = min(s.P_XX_phonon for s, q in zip(sp, pos) if q)
        res.headline["min_P_XX_phonon_blue"] = m
        res.checks.append(Check("P_XX_phonon > 0 for blue detuning", m, "> 0", m > 0))


def tomography(sc: Scenario, out: Path, fmt: str, threads: int, res: RunResult):
    counts_file = sc.option("counts_file")
    mode = sc.option("mode")
    window = float(sc.option("window_ns"))
    hists = None
    if counts_file:
        with stage("read_counts"):
            counts = TwoPhotonCounts.from_csv(Path(counts_file).read_text())
        source = counts
    elif mode == "pairs":
        with stage("pairs"):
            counts = simulate_pair_counts(sc.qd, int(sc.option("n_pairs")), sc.seed)
        source = counts
    elif mode == "streams":
        with stage("dynamics"):
            split = _split_at_laser(sc)
        det = {0: sc.detector, 1: sc.detector}
        hists = {}
        with stage("streams"):
            for i, s in enumerate(SETTINGS):
                setup = Setup("cross", POLARIZATIONS[s[0]], POLARIZATIONS[s[1]])
                st = simulate_streams(split, sc.qd, sc.laser.polarization, setup, det, sc.duration_s,
                                      sc.laser.rep_rate, sc.seed * 16 + i, threads=threads)
                hists[s] = coincidences(st[0], st[1], duration=sc.duration_s,
                                        rep_period=sc.laser.rep_period_ps)
        source = hists
    else:
        raise StageError("options", ValueError(f"unknown tomography mode {mode!r}"))
    with stage("tomography"):
        rep = run_tomography(source, window_ns=window)
    write_text(out, "tomography_counts.csv", f"# experiment=tomography\n# seed={sc.seed}\n"
               + rep.counts.to_csv(), res)
    write_text(out, "tomography_report.json", rep.to_json() + "\n", res)
    f = rep.fidelity
    res.headline.update({"fidelity": f.value, "fidelity_error": f.error,
                         "fidelity_error_pooled": rep.pooled_error, "entangled": f.entangled,
                         **{k: getattr(rep.stokes, k) for k in ("S33", "S11", "S22", "S30", "S03")}})
    if counts_file:
        res.checks.append(Check("entanglement (f - error > 0.5)", f.value - f.error, "> 0.5", f.entangled))
    else:
        ref = pair_fidelity(sc.qd.fss, sc.qd.exciton_lifetime, sc.qd.cross_dephasing_time)
        res.headline["fidelity_closed_form"] = ref
        _within("fidelity vs closed form", f.value, ref, 3 * f.error, res)
    if hists is not None:
        s_hh = g2_zero(hists["HH"], sc.laser.rep_period_ps)
        s_vv = g2_zero(hists["VV"], sc.laser.rep_period_ps)
        ratio = s_hh.side_peak_mean / s_vv.side_peak_mean
        res.headline["side_peak_ratio_HH_VV"] = ratio
        res.headline["side_peak_g2"] = rep.side_peak_g2


def hbt(sc: Scenario, out: Path, fmt: str, threads: int, res: RunResult):
    with stage("dynamics"):
        split = _split_at_laser(sc)
    darks = bool(sc.option("darks"))
    det = {0: sc.detector, 1: sc.detector}
    with stage("streams"):
        st = simulate_streams(split, sc.qd, sc.laser.polarization, Setup("hbt", line=sc.option("line")),
                              det, sc.duration_s, sc.laser.rep_rate, sc.seed, darks=darks, threads=threads)
    if sc.option("save_tags"):
        (out).mkdir(parents=True, exist_ok=True)
        timetags.write(out / "hbt_tags.qtt", st)
        res.files.append("hbt_tags.qtt")
    with stage("correlator"):
        h = coincidences(st[0], st[1], float(sc.option("bin_ps")), float(sc.option("range_ns")),
                         sc.duration_s, sc.laser.rep_period_ps, chunks=max(1, threads))
        g2 = g2_zero(h, sc.laser.rep_period_ps)
    h = _with_meta(h, sc, method="side_peak", line=sc.option("line"), darks=darks)
    write_text(out, "hbt.csv", h.to_csv(), res)
    res.headline.update({"g2_zero": g2.value, "center_counts": g2.center_counts,
                         "side_peak_mean": g2.side_peak_mean, "tags_ch0": len(st[0]), "tags_ch1": len(st[1])})
    _at_most("g2(0)", g2.value, 0.05 if darks else 0.01, res)


def lifetime(sc: Scenario, out: Path, fmt: str, threads: int, res: RunResult):
    bin_ps = float(sc.option("bin_ps"))
    irf = TabulatedKernel.gaussian(float(sc.option("irf_sigma_ns")) * 1e3, bin_ps)
    hist_file = sc.option("histogram_file")
    fits = {}
    if hist_file:
        with stage("read_histogram"):
            h = CorrelationHistogram.from_csv(Path(hist_file).read_text())
            irf = TabulatedKernel.gaussian(float(sc.option("irf_sigma_ns")) * 1e3, h.bin_width)
        fix = sc.option("fix_tau_xx_ns")
        with stage("fit"):
            fits["input"] = fit_lifetime(h, sc.option("model"), irf,
                                         fixed={"tau_xx": float(fix)} if fix else None)
    else:
        kw = dict(irf_sigma_ns=float(sc.option("irf_sigma_ns")), background=float(sc.option("background")),
                  bin_width=bin_ps, range_ns=float(sc.option("range_ns")))
        n = int(sc.option("n_counts"))
        with stage("histograms"):
            hs = {k: lifetime_histogram(k, sc.qd, n, sc.seed * 4 + i, **kw)
                  for i, k in enumerate(("laser_xx", "laser_x", "xx_x"))}
        for k, h in hs.items():
            write_text(out, f"lifetime_{k}.csv", _with_meta(h, sc).to_csv(), res)
        with stage("fit"):
            fits["laser_xx"] = fit_lifetime(hs["laser_xx"], "single_exp", irf)
            fits["laser_x_cascade"] = fit_lifetime(hs["laser_x"], "double_exp_cascade", irf,
                                                   fixed={"tau_xx": sc.qd.biexciton_lifetime})
            fits["laser_x_kernel"] = fit_lifetime(hs["laser_x"], "single_exp_kernel",
                                                  kernel_from_histogram(hs["laser_xx"]))
            fits["xx_x"] = fit_lifetime(hs["xx_x"], "single_exp", irf)
        t_xx = fits["laser_xx"].params["tau"]
        t_flank = fits["xx_x"].params["tau"]
        t_laser = fits["laser_x_cascade"].params["tau_x"]
        res.headline.update({"tau_xx_ns": t_xx, "tau_x_flank_ns": t_flank, "tau_x_laser_ns": t_laser,
                             "tau_x_kernel_ns": fits["laser_x_kernel"].params["tau"]})
        _within("tau_XX (laser-XX)", t_xx / sc.qd.biexciton_lifetime, 1.0, 0.05, res)
        _within("tau_X (cascade flank)", t_flank / sc.qd.exciton_lifetime, 1.0, 0.05, res)
        _within("tau_X (laser-X, cascade model)", t_laser / sc.qd.exciton_lifetime, 1.0, 0.05, res)
        _within("tau_X (laser-X, measured kernel)",
                fits["laser_x_kernel"].params["tau"] / sc.qd.exciton_lifetime, 1.0, 0.05, res)
        _within("flank vs laser tau_X", t_laser / t_flank, 1.0, 0.05, res)
    doc = {k: v.to_dict() for k, v in fits.items()}
    write_text(out, "lifetime_fits.json", json.dumps(doc, indent=2, sort_keys=True) + "\n", res)
    if hist_file:
        res.headline.update({f"{k}": v for k, v in fits["input"].params.items()})


def spectrum(sc: Scenario, out: Path, fmt: str, threads: int, res: RunResult):
    with stage("dynamics"):
        split = _split_at_laser(sc)
    qd = sc.qd
    lines = [qd.exciton_energy, qd.biexciton_energy]
    margin = float(sc.option("margin_meV"))
    step = float(sc.option("step_ueV")) * 1e-3
    grid = np.arange(min(lines) - margin, max(lines) + margin + 0.5 * step, step)
    n = float(sc.option("counts"))
    with stage("spectrum"):
        spec = synth_spectrum(lines, [split.total * n, split.P_XX * n],
                              [qd.exciton_linewidth, qd.biexciton_linewidth], grid)
    write_table(out, "spectrum", _meta(sc), {"energy_meV": spec.energy, "intensity": spec.intensity}, fmt, res)
    lo, hi = sorted(lines)
    between = (spec.energy > lo) & (spec.energy < hi)
    valley = spec.intensity[between].min()
    peaks = [spec.intensity[np.argmin(abs(spec.energy - e))] for e in lines]
    ratio = valley / min(peaks)
    res.headline.update({"X_peak": peaks[0], "XX_peak": peaks[1], "valley_ratio": ratio})
    _at_most("valley / lower peak", ratio, 0.01, res)


def circular_suppression(sc: Scenario, out: Path, fmt: str, threads: int, res: RunResult):
    with stage("pi_area"):
        pi_ideal = tpe_pi_area(sc.qd, sc.laser)
    areas = np.linspace(0.0, sc.option("max_area_over_pi") * pi_ideal, int(sc.option("points")))
    cols = {"area_rad": areas}
    with stage("dynamics"):
        for name in ("H", "R"):
            pulse = replace(sc.laser, polarization=POLARIZATIONS[name])
            sw = sweep(sc.qd, pulse, sc.phonon, areas=areas, threads=threads)
            cols[f"P_XX_{name}"] = sw.P_XX
            cols[f"P_XX_coherent_{name}"] = [s.P_XX_coherent for s in sw.splits]
    write_table(out, "circular_suppression", _meta(sc), cols, fmt, res)
    worst = float(np.max(cols["P_XX_coherent_R"]))
    res.headline.update({"max_P_XX_coherent_circular": worst,
                         "max_P_XX_linear": float(np.max(cols["P_XX_H"]))})
    _at_most("coherent P_XX under circular drive", worst, 1e-6, res)


def polarization_scan(sc: Scenario, out: Path, fmt: str, threads: int, res: RunResult):
    """Half-waveplate angle theta ahead of a fixed H polarizer, i.e. a linear
    analyzer at 2 theta, on both lines. Expected intensities per pulse."""
    with stage("dynamics"):
        split = _split_at_laser(sc)
    angles = np.arange(0.0, 180.0 + 1e-9, float(sc.option("step_deg")))
    qd = sc.qd
    i_xx, i_x = [], []
    for th in angles:
        an = linear_polarization(2 * th)
        i_xx.append(0.5 * split.P_XX)
        i_x.append(0.5 * split.P_XX + split.P_X_phonon * mean_phonon_x_pass(
            sc.laser.polarization, an, qd.fss, qd.exciton_lifetime))
    i_xx, i_x = np.array(i_xx), np.array(i_x)
    diff = i_x - i_xx
    write_table(out, "polarization_scan", _meta(sc), {
        "hwp_angle_deg": angles, "I_XX": i_xx, "I_X": i_x, "I_X_minus_XX": diff}, fmt, res)
    vis = (diff.max() - diff.min()) / (diff.max() + diff.min())
    flat = (i_xx.max() - i_xx.min()) / i_xx.mean()
    res.headline.update({"visibility_X_minus_XX": vis, "XX_flatness": flat,
                         "max_angle_deg": float(angles[int(np.argmax(diff))])})
    if qd.fss == 0:
        _at_least("X-XX visibility", vis, 0.99, res)
    _at_most("XX intensity variation", flat, 0.01, res)


EXPERIMENT_FUNCS = {
    "rabi_sweep": rabi_sweep, "detuning_sweep": detuning_sweep, "tomography": tomography,
    "hbt": hbt, "lifetime": lifetime, "spectrum": spectrum,
    "circular_suppression": circular_suppression, "polarization_scan": polarization_scan,
}


def run(sc: Scenario, out_dir=None, fmt: str = "csv", threads: int = 1) -> RunResult:
    """Execute ``sc`` and write its data files and ``summary.json``."""
    if fmt not in ("csv", "json"):
        raise ValueError("format must be csv or json")
    out = Path(out_dir if out_dir is not None else sc.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = RunResult(sc.experiment, sc.seed)
    t0 = time.perf_counter()
    write_text(out, "scenario.yaml", sc.to_yaml(), res)
    EXPERIMENT_FUNCS[sc.experiment](sc, out, fmt, max(1, int(threads)), res)
    summary = res.summary(time.perf_counter() - t0)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")
    return res


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serializable: {type(o).__name__}")
