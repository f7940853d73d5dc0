"""Lifetime extraction by forward fitting of kernel-convolved decay models.

Three model kinds:

``single_exp``          A exp(-(t - t0)/tau) convolved with the IRF
``double_exp_cascade``  A tau_x / (tau_x - tau_xx) (exp(-t'/tau_x) - exp(-t'/tau_xx)),
                        t' = t - t0, convolved with the IRF
``single_exp_kernel``   single exponential convolved with a measured decay
                        trace (e.g. the laser-XX histogram), which already
                        contains the IRF

Times on the histogram axis are in ps, lifetimes and offsets in ns. The fit
is a damped Gauss-Newton (Levenberg-Marquardt) minimisation of the Poisson
weighted chi-square with a finite-difference Jacobian.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import TabulatedKernel
from .correlator import CorrelationHistogram

PARAMS = {
    "single_exp": ("amplitude", "tau", "baseline", "t0"),
    "double_exp_cascade": ("amplitude", "tau_xx", "tau_x", "baseline", "t0"),
    "single_exp_kernel": ("amplitude", "tau", "baseline", "t0"),
}
LIFETIMES = ("tau", "tau_xx", "tau_x")


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecayModel:
    kind: str
    params: Dict[str, float]

    def __post_init__(self):
        if self.kind not in PARAMS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        missing = set(PARAMS[self.kind]) - set(self.params)
        if missing:
            raise ValueError(f"missing parameter(s) {sorted(missing)}")
        for k in LIFETIMES:
            if k in self.params and not self.params[k] > 0:
                raise ValueError(f"{k} must be > 0")
        if self.params["amplitude"] < 0 or self.params["baseline"] < 0:
            raise ValueError("amplitude and baseline must be >= 0")
        if self.kind == "double_exp_cascade" and self.params["tau_x"] == self.params["tau_xx"]:
            raise ValueError("cascade lifetimes must differ")

    def vector(self):
        return np.array([self.params[k] for k in PARAMS[self.kind]], dtype=float)

    @classmethod
    def from_vector(cls, kind, p):
        return cls(kind, {k: float(v) for k, v in zip(PARAMS[kind], p)})


# --------------------------------------------------------------- decay shapes

def _exp_point(t, tau):
    out = np.zeros_like(t)
    pos = t >= 0
    out[pos] = np.exp(-t[pos] / tau)
    return out


def _exp_bin(t, tau, w):
    """Mean of exp(-t/tau) H(t) over [t - w/2, t + w/2]."""
    a = np.maximum(t - 0.5 * w, 0.0)
    b = np.maximum(t + 0.5 * w, 0.0)
    return tau * (np.exp(-a / tau) - np.exp(-b / tau)) / w


def decay_shape(kind: str, p: Mapping[str, float], t_ns: np.ndarray, bin_ns: float = 0.0) -> np.ndarray:
    """Analytic decay without baseline; ``bin_ns`` > 0 averages over bins."""
    t = np.asarray(t_ns, dtype=float) - p["t0"]
    f = (lambda tau: _exp_bin(t, tau, bin_ns)) if bin_ns > 0 else (lambda tau: _exp_point(t, tau))
    if kind in ("single_exp", "single_exp_kernel"):
        return p["amplitude"] * f(p["tau"])
    tx, txx = p["tau_x"], p["tau_xx"]
    return p["amplitude"] * tx / (tx - txx) * (f(tx) - f(txx))


def _check_kernel(kernel: TabulatedKernel, step_ps: float):
    vals = kernel.array()
    if abs(vals.sum() - 1.0) > 1e-6:
        raise ValueError(f"kernel must be normalized (sum = {vals.sum():.6g})")
    if abs(kernel.dt_ps - step_ps) > 1e-9 * max(step_ps, 1.0):
        raise ValueError(f"kernel step {kernel.dt_ps} ps does not match grid step {step_ps} ps")
    return vals


def _grid_step(grid_ps):
    grid_ps = np.asarray(grid_ps, dtype=float)
    if grid_ps.size < 2:
        raise ValueError("grid needs at least two points")
    d = np.diff(grid_ps)
    if np.any(np.abs(d - d[0]) > 1e-6 * abs(d[0])):
        raise ValueError("grid must be uniform")
    return float(d[0])


def model_curve(model: DecayModel, kernel: TabulatedKernel, grid_ps, sampling: str = "point") -> np.ndarray:
    """Decay convolved with the tabulated kernel on a uniform grid, plus baseline.

    ``sampling="bin"`` averages the analytic decay over each grid bin before
    convolving, which is what a histogram records.
    """
    grid_ps = np.asarray(grid_ps, dtype=float)
    step = _grid_step(grid_ps)
    vals = _check_kernel(kernel, step)
    if sampling not in ("point", "bin"):
        raise ValueError(f"unknown sampling {sampling!r}")
    return _convolved(model.kind, model.params, grid_ps, vals, kernel, step, sampling == "bin")


def _convolved(kind, p, grid_ps, vals, kernel, step, binned):
    # kernel taps sit on the grid step, so one evaluation on an extended grid
    # followed by a discrete convolution covers every shift
    k = vals.size
    ext = grid_ps[0] + (np.arange(grid_ps.size + k - 1) - (k - 1) + kernel.origin) * step
    shape = decay_shape(kind, p, ext * 1e-3, step * 1e-3 if binned else 0.0)
    return np.convolve(shape, vals, mode="valid") + p["baseline"]


# ------------------------------------------------------------------- fitting

@dataclass(frozen=True)
class FitResult:
    kind: str
    params: Dict[str, float]
    errors: Dict[str, float]
    chi2_red: float
    converged: bool
    iterations: int
    window_ns: Tuple[float, float]
    fixed: Tuple[str, ...] = ()

    @property
    def model(self) -> DecayModel:
        return DecayModel(self.kind, dict(self.params))

    def to_dict(self):
        return {"kind": self.kind, "params": self.params, "errors": self.errors,
                "chi2_red": self.chi2_red, "converged": self.converged,
                "iterations": self.iterations, "window_ns": list(self.window_ns),
                "fixed": list(self.fixed)}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _baseline_estimate(counts):
    n = max(3, counts.size // 10)
    return float(np.mean(counts[:n]))


def fit_window(tau_ps, counts, rise_fraction=0.1, tail_factor=3.0, baseline=None):
    """Index range [lo, hi) from ``rise_fraction`` of the peak on the rising
    edge to where counts fall below ``tail_factor`` x baseline."""
    counts = np.asarray(counts, dtype=float)
    b = _baseline_estimate(counts) if baseline is None else baseline
    k = np.ones(5) / 5
    smooth = np.convolve(counts, k, mode="same")
    ipk = int(np.argmax(smooth))
    peak = smooth[ipk] - b
    lo = ipk
    while lo > 0 and smooth[lo - 1] - b >= rise_fraction * peak:
        lo -= 1
    hi = counts.size
    if b > 0:
        below = np.nonzero(smooth[ipk:] < tail_factor * b)[0]
        if below.size:
            hi = ipk + int(below[0])
    return lo, hi


def tail_lifetime(hist: CorrelationHistogram, kernel_width_ns: float = 0.0,
                  baseline: Optional[float] = None, end_ns: Optional[float] = None) -> Tuple[float, float]:
    """Single-exponential lifetime (ns) from the slope of log counts on
    [peak + 2 kernel widths, end]; returns (tau, standard error)."""
    tau = hist.tau * 1e-3
    c = hist.counts.astype(float)
    b = _baseline_estimate(c) if baseline is None else baseline
    ipk = int(np.argmax(np.convolve(c, np.ones(5) / 5, mode="same")))
    t_start = tau[ipk] + 2 * kernel_width_ns
    y = c - b
    sel = (tau >= t_start) & (y > 0) & (c > 0)
    if end_ns is not None:
        sel &= tau <= end_ns
    if sel.sum() < 3:
        raise FitError("too few tail points for a log-slope fit")
    w = y[sel] ** 2 / np.maximum(c[sel], 1.0)  # var(log y) ~ c / y^2
    coef, cov = np.polyfit(tau[sel], np.log(y[sel]), 1, w=np.sqrt(w), cov="unscaled")
    slope, err = coef[0], math.sqrt(cov[0, 0])
    if slope >= 0:
        raise FitError("tail does not decay")
    return -1.0 / slope, err / slope ** 2


def _initial_guess(kind, tau_ns, counts, kernel_width_ns):
    b = max(_baseline_estimate(counts), 0.0)
    ipk = int(np.argmax(np.convolve(counts, np.ones(5) / 5, mode="same")))
    peak = max(counts[ipk] - b, 1.0)
    half = np.nonzero(counts[:ipk + 1] - b >= 0.5 * peak)[0]
    t0 = tau_ns[half[0]] if half.size else tau_ns[ipk]
    hist = CorrelationHistogram((tau_ns[1] - tau_ns[0]) * 1e3, counts.astype(np.int64))
    try:
        tl, _ = tail_lifetime(hist, kernel_width_ns, b)
        tl = float(np.clip(tl, 0.05, 20.0))
    except FitError:
        tl = 1.0
    if kind == "double_exp_cascade":
        return {"amplitude": 2 * peak, "tau_xx": 0.5 * tl, "tau_x": tl, "baseline": b, "t0": t0}
    return {"amplitude": peak, "tau": tl, "baseline": b, "t0": t0}


def _kernel_width(kernel: TabulatedKernel) -> float:
    v = kernel.array()
    t = kernel.times_ps * 1e-3
    m = float(v @ t)
    return math.sqrt(max(float(v @ (t - m) ** 2), 0.0))


def fit_lifetime(hist: CorrelationHistogram, kind: str, kernel: TabulatedKernel,
                 initial: Optional[Mapping[str, float]] = None, fixed: Optional[Mapping[str, float]] = None,
                 window: Optional[Tuple[float, float]] = None, sampling: str = "bin",
                 max_iter: int = 200, tol: float = 1e-6) -> FitResult:
    """Weighted least-squares fit of a convolved decay model to ``hist``.

    Weights are 1 / max(count, 1). ``fixed`` pins parameters (e.g. tau_xx);
    ``window`` (ns) overrides the automatic fit window.
    """
    if kind not in PARAMS:
        raise ValueError(f"unknown model kind {kind!r}")
    counts = hist.counts.astype(float)
    if counts.size < 5 or np.ptp(counts) == 0:
        raise FitError("degenerate data: flat histogram")
    grid = hist.tau.astype(float)
    step = hist.bin_width
    vals = _check_kernel(kernel, step)
    tau_ns = grid * 1e-3
    kw = _kernel_width(kernel)

    if window is None:
        lo, hi = fit_window(grid, counts)
    else:
        lo = int(np.searchsorted(tau_ns, window[0] - 1e-12))
        hi = int(np.searchsorted(tau_ns, window[1] + 1e-12, side="right"))
    if hi - lo < len(PARAMS[kind]) + 2:
        raise FitError("fit window too short")
    g, y = grid[lo:hi], counts[lo:hi]
    sigma = np.sqrt(np.maximum(y, 1.0))

    names = PARAMS[kind]
    p0 = _initial_guess(kind, tau_ns, counts, kw)
    if initial:
        p0.update(initial)
    fixed = dict(fixed or {})
    p0.update(fixed)
    free = [n for n in names if n not in fixed]
    lower = np.array([1e-6 if n in LIFETIMES else (0.0 if n in ("amplitude", "baseline") else -np.inf)
                      for n in free])
    scale = {"amplitude": max(y.max(), 1.0), "baseline": 1.0, "t0": 1e-3}

    def full(x):
        p = dict(p0)
        p.update(zip(free, x))
        return p

    def resid(x):
        p = full(x)
        if kind == "double_exp_cascade" and abs(p["tau_x"] - p["tau_xx"]) < 1e-9:
            p["tau_x"] += 1e-9
        return (_convolved(kind, p, g, vals, kernel, step, sampling == "bin") - y) / sigma

    def jac(x, r0):
        J = np.empty((r0.size, x.size))
        for i in range(x.size):
            h = 1e-6 * max(abs(x[i]), scale.get(free[i], 1e-2))
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            if xm[i] < lower[i]:
                J[:, i] = (resid(xp) - r0) / h
            else:
                J[:, i] = (resid(xp) - resid(xm)) / (2 * h)
        return J

    x = np.array([p0[n] for n in free], dtype=float)
    x = np.maximum(x, lower)
    r = resid(x)
    chi2 = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = jac(x, r)
        A = J.T @ J
        gvec = J.T @ r
        accepted = False
        for _ in range(30):
            M = A + lam * np.diag(np.maximum(np.diag(A), 1e-12))
            try:
                delta = -np.linalg.solve(M, gvec)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            x_new = np.maximum(x + delta, lower)
            r_new = resid(x_new)
            chi2_new = float(r_new @ r_new)
            if np.isfinite(chi2_new) and chi2_new <= chi2:
                accepted = True
                break
            lam *= 10
        if not accepted:
            converged = True  # no downhill step left: at the minimum to working precision
            break
        step_x = x_new - x
        x, r, chi2 = x_new, r_new, chi2_new
        lam = max(lam / 10, 1e-12)
        floor = np.array([scale.get(n, 1e-3) * 1e-3 for n in free])
        if np.all(np.abs(step_x) <= tol * np.maximum(np.abs(x), floor)):
            converged = True
            break
    if not converged:
        raise FitError(f"no convergence after {max_iter} iterations")

    J = jac(x, r)
    try:
        cov = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular normal matrix: parameters not identifiable") from exc
    dof = max(y.size - len(free), 1)
    params = full(x)
    errors = {n: 0.0 for n in names}
    errors.update({n: float(math.sqrt(max(cov[i, i], 0.0))) for i, n in enumerate(free)})
    return FitResult(kind, {k: float(v) for k, v in params.items()}, errors, chi2 / dof, True, it,
                     (float(g[0] * 1e-3), float(g[-1] * 1e-3)), tuple(sorted(fixed)))


def kernel_from_histogram(hist: CorrelationHistogram, baseline: Optional[float] = None,
                          threshold: float = 1e-3) -> TabulatedKernel:
    """Normalized measured decay trace (background removed) for use as a
    convolution kernel; its origin is the tau = 0 bin."""
    c = hist.counts.astype(float)
    b = _baseline_estimate(c) if baseline is None else baseline
    v = np.clip(c - b, 0.0, None)
    keep = np.nonzero(v >= threshold * v.max())[0]
    i0, i1 = keep[0], keep[-1] + 1
    i0 = min(i0, hist.half_bins)
    v = v[i0:i1]
    return TabulatedKernel(tuple(v / v.sum()), hist.bin_width, hist.half_bins - i0)
