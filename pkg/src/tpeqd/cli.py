"""Command line entry point.

    tpeqd run --config scenario.yaml [--seed N] [--out DIR] [--threads N] [--format csv|json] [--check]
    tpeqd simulate {rabi,detuning,tomography,hbt,lifetime,spectrum,circular,polarization} [...]
    tpeqd analyze tomography --counts counts.csv
    tpeqd analyze lifetime --histogram hist.csv --model single_exp [--irf-sigma-ps 100] [--fix tau_xx=0.44]
    tpeqd analyze g2 --histogram hist.csv [--rep-period-ps 12500] [--method side_peak|raw_counts]
    tpeqd analyze correlate --tags run.qtt [--start 0 --stop 1]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance check failed (with --check).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from . import timetags
from .core import TabulatedKernel
from .correlator import DEFAULT_BIN_PS, DEFAULT_RANGE_NS, CorrelationHistogram, coincidences, g2_zero
from .lifetimes import PARAMS, FitError, fit_lifetime
from .runner import StageError, run
from .scenario import ConfigError, from_dict, load
from .tomography import TwoPhotonCounts, run_tomography

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4

SIMULATE = {
    "rabi": "rabi_sweep", "detuning": "detuning_sweep", "tomography": "tomography", "hbt": "hbt",
    "lifetime": "lifetime", "spectrum": "spectrum", "circular": "circular_suppression",
    "polarization": "polarization_scan",
}


def _common(p, config_required=False):
    p.add_argument("--config", required=config_required, help="scenario YAML file")
    p.add_argument("--seed", type=int, help="overrides the seed in the scenario")
    p.add_argument("--out", help="output directory (default: scenario output_dir)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--check", action="store_true", help="exit 4 if an acceptance check fails")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tpeqd", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("run", help="run the experiment named in a scenario file"), True)

    sim = sub.add_parser("simulate", help="run one experiment (config optional)")
    simsub = sim.add_subparsers(dest="experiment", required=True)
    for name in SIMULATE:
        _common(simsub.add_parser(name))

    an = sub.add_parser("analyze", help="analysis of measured data files")
    ansub = an.add_subparsers(dest="analysis", required=True)
    p = ansub.add_parser("tomography")
    p.add_argument("--counts", required=True, help="CSV with setting,count,duration_s")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.add_argument("--check", action="store_true", help="exit 4 unless entanglement is certified")
    p = ansub.add_parser("lifetime")
    p.add_argument("--histogram", required=True)
    p.add_argument("--model", choices=sorted(PARAMS), default="single_exp")
    p.add_argument("--irf-sigma-ps", type=float, default=100.0)
    p.add_argument("--kernel", help="histogram CSV used as the known decay kernel")
    p.add_argument("--fix", action="append", default=[], metavar="NAME=VALUE")
    p.add_argument("--out")
    p = ansub.add_parser("g2")
    p.add_argument("--histogram", required=True)
    p.add_argument("--rep-period-ps", type=float)
    p.add_argument("--method", choices=("side_peak", "raw_counts"), default="side_peak")
    p.add_argument("--side-peaks", type=int, default=3)
    p.add_argument("--window-ns", type=float)
    p = ansub.add_parser("correlate")
    p.add_argument("--tags", required=True, help="QTT1 binary or channel,time_ps CSV")
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--stop", type=int, default=1)
    p.add_argument("--bin-ps", type=float, default=DEFAULT_BIN_PS)
    p.add_argument("--range-ns", type=float, default=DEFAULT_RANGE_NS)
    p.add_argument("--rep-period-ps", type=float, default=12500.0)
    p.add_argument("--out")
    return ap


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _scenario(args, experiment=None):
    if args.config:
        sc = load(args.config, args.seed)
        if experiment and sc.experiment != experiment:
            raise ConfigError(f"config describes {sc.experiment!r}, not {experiment!r}")
        return sc
    return from_dict({"experiment": experiment}, args.seed)


def _run(args, experiment=None) -> int:
    sc = _scenario(args, experiment)
    res = run(sc, args.out, args.format, args.threads)
    for c in res.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.6g} (target {c.target})")
    for k, v in res.headline.items():
        if not isinstance(v, dict):
            print(f"      {k} = {v}")
    if args.check and not res.passed:
        return EXIT_CHECK
    return EXIT_OK


def _analyze(args) -> int:
    if args.analysis == "tomography":
        try:
            counts = TwoPhotonCounts.from_csv(Path(args.counts).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        rep = run_tomography(counts)
        _emit(rep.to_json() + "\n", args.out)
        return EXIT_CHECK if args.check and not rep.fidelity.entangled else EXIT_OK
    if args.analysis == "correlate":
        try:
            streams = timetags.read(args.tags)
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        for ch in (args.start, args.stop):
            if ch not in streams:
                raise ConfigError(f"channel {ch} not in {args.tags}")
        h = coincidences(streams[args.start], streams[args.stop], args.bin_ps, args.range_ns,
                         rep_period=args.rep_period_ps, channels=(args.start, args.stop))
        _emit(h.to_csv(), args.out)
        return EXIT_OK
    try:
        hist = CorrelationHistogram.from_csv(Path(args.histogram).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if args.analysis == "g2":
        period = args.rep_period_ps or hist.rep_period
        if not period:
            raise ConfigError("repetition period unknown: pass --rep-period-ps")
        try:
            g = g2_zero(hist, period, args.method, args.side_peaks, args.window_ns)
        except ValueError as exc:
            raise StageError("g2", exc) from None
        print(json.dumps({"g2_zero": g.value, "method": g.method, "center_counts": g.center_counts,
                          "side_peak_mean": g.side_peak_mean,
                          "valid_only_if_unpolarized": g.valid_only_if_unpolarized}, indent=2))
        return EXIT_OK
    # lifetime
    fixed = {}
    for item in args.fix:
        name, _, value = item.partition("=")
        try:
            fixed[name.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"bad --fix {item!r}") from None
    if args.kernel:
        from .lifetimes import kernel_from_histogram
        kernel = kernel_from_histogram(CorrelationHistogram.from_csv(Path(args.kernel).read_text()))
    else:
        kernel = TabulatedKernel.gaussian(args.irf_sigma_ps, hist.bin_width)
    try:
        fit = fit_lifetime(hist, args.model, kernel, fixed=fixed)
    except FitError as exc:
        raise StageError("fit", exc) from None
    _emit(fit.to_json() + "\n", args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "simulate":
            return _run(args, SIMULATE[args.experiment])
        return _analyze(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        # unreadable inputs named by the user are configuration problems
        if not exc.numerical and isinstance(exc.__cause__, (ConfigError, OSError)):
            return EXIT_CONFIG
        return EXIT_NUMERICAL
    except yaml.YAMLError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
