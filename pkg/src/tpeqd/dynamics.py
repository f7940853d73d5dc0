"""Driven ground / exciton / biexciton ladder through a single laser pulse.

The rotating-frame master equation couples g<->X and X<->XX with the same
Gaussian envelope. Two-photon resonance appears at 2 E_laser = E_X + E_XX
without an effective two-photon operator. Incoherent terms are radiative
decay, drive-proportional pure dephasing and phonon-assisted pumping
g->X and X->XX.

Source attribution uses two density matrices that together form the full
state: ``coh`` holds population that never underwent a phonon jump, ``pho``
holds the rest. Phonon jump gain terms feed ``pho`` while their loss terms
act on whichever ensemble the population sits in, so ``coh + pho`` obeys
exactly the full master equation.

All arithmetic is elementwise over a batch axis, so a batched sweep gives
bit-identical numbers to evaluating each point alone.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import LaserPulseSpec, PhononEnvironment, QDParameters, require_valid
from .units import HBAR_MEV_PS, thermal_energy

TRACE_TOL = 1e-7
NEG_TOL = 1e-9
MAX_HALVINGS = 12


class ConvergenceError(RuntimeError):
    def __init__(self, time_ps, message="step halving limit exceeded"):
        super().__init__(f"{message} at t = {time_ps:.6g} ps")
        self.time_ps = time_ps


@dataclass(frozen=True)
class ChannelSplit:
    """Per-pulse preparation probabilities by source."""

    P_XX_coherent: float
    P_X_phonon: float
    P_XX_phonon: float

    @property
    def P_XX(self) -> float:
        return self.P_XX_coherent + self.P_XX_phonon

    @property
    def total(self) -> float:
        return self.P_XX + self.P_X_phonon


@dataclass(frozen=True)
class LevelTrajectory:
    time_grid: np.ndarray  # ps
    occupations: np.ndarray  # (n_t, 3): P_g, P_X, P_XX
    channel_split: ChannelSplit
    P_X_coherent: float = 0.0


@dataclass(frozen=True)
class SweepResult:
    kind: str  # "pulse_area" (rad) or "laser_detuning" (meV from TPE resonance)
    axis: np.ndarray
    P_XX: np.ndarray
    P_X_total: np.ndarray
    P_X_minus_XX: np.ndarray
    splits: tuple = ()

    def to_csv(self) -> str:
        lines = ["axis,P_XX,P_X_total,P_X_minus_XX"]
        for row in zip(self.axis, self.P_XX, self.P_X_total, self.P_X_minus_XX):
            lines.append(",".join(f"{v:.9g}" for v in row))
        return "\n".join(lines) + "\n"


def pulse_area(pulse: LaserPulseSpec, peak_rabi: float) -> float:
    """Area of the Gaussian envelope with peak Rabi frequency ``peak_rabi`` (rad/ps)."""
    if peak_rabi < 0:
        raise ValueError("peak_rabi must be >= 0")
    return peak_rabi * pulse.sigma * math.sqrt(2.0 * math.pi)


def peak_rabi(pulse: LaserPulseSpec, area: Optional[float] = None) -> float:
    area = pulse.pulse_area if area is None else area
    return area / (pulse.sigma * math.sqrt(2.0 * math.pi))


def bose(energy_mev, temperature):
    energy_mev = np.asarray(energy_mev, dtype=float)
    if temperature <= 0:
        return np.zeros_like(energy_mev)
    with np.errstate(divide="ignore", over="ignore"):
        return 1.0 / np.expm1(energy_mev / thermal_energy(temperature))


def phonon_rate(detuning, env: PhononEnvironment, drive):
    """Phonon-assisted transition rate (1/ps).

    ``detuning`` > 0 means the laser lies above the transition and the excess
    energy is emitted into the bath; < 0 requires absorbing a phonon.
    """
    d = np.asarray(detuning, dtype=float)
    a = np.abs(d)
    J = a**3 * np.exp(-((a / env.cutoff) ** 2))
    n = bose(np.where(a > 0, a, 1.0), env.temperature)
    B = np.where(d > 0, n + 1.0, n)
    rate = np.asarray(drive, dtype=float) * env.coupling * np.where(a > 0, J * B, 0.0)
    return rate if rate.ndim else float(rate)


def _commutator(rho, h1, h2, g):
    """-i [H, rho] for H = diag(0, h1, h2) + g (|0><1| + |1><2| + h.c.)."""
    out = np.empty_like(rho)
    hd = (0.0, h1, h2)
    for i in range(3):
        for j in range(3):
            acc = (hd[i] - hd[j]) * rho[i, j] if i != j else 0.0 * rho[i, j]
            if i - 1 >= 0:
                acc = acc + g * rho[i - 1, j]
            if i + 1 <= 2:
                acc = acc + g * rho[i + 1, j]
            if j - 1 >= 0:
                acc = acc - g * rho[i, j - 1]
            if j + 1 <= 2:
                acc = acc - g * rho[i, j + 1]
            out[i, j] = -1j * acc
    return out


def _damp_level(drho, rho, k, rate):
    """Loss part of any jump out of level ``k``: rows and columns decay at rate/2."""
    half = 0.5 * rate
    for j in range(3):
        drho[k, j] = drho[k, j] - half * rho[k, j]
        if j != k:
            drho[j, k] = drho[j, k] - half * rho[j, k]
        else:
            drho[k, k] = drho[k, k] - half * rho[k, k]


class _Model:
    """Batched right-hand side. Parameter arrays have shape (N,)."""

    def __init__(self, qd, env, sigma, omega0, d1, d2, coupling, include_decay):
        self.sigma = sigma
        self.omega0 = omega0
        self.d1 = d1
        self.d2 = d2
        self.h1 = -d1 / HBAR_MEV_PS
        self.h2 = -(d1 + d2) / HBAR_MEV_PS
        self.coupling = coupling
        self.env = env
        self.gx = 1.0 / (qd.exciton_lifetime * 1e3) if include_decay else 0.0
        self.gxx = 1.0 / (qd.biexciton_lifetime * 1e3) if include_decay else 0.0
        # Phonon spectral factor without the instantaneous drive.
        self.k1 = phonon_rate(d1, env, np.ones_like(d1))
        self.k2 = phonon_rate(d2, env, np.ones_like(d2))

    def envelope(self, t):
        return self.omega0 * math.exp(-0.5 * (t / self.sigma) ** 2)

    def rhs(self, t, coh, pho):
        omega = self.envelope(t)
        drive = omega * omega
        g = 0.5 * math.sqrt(self.coupling) * omega
        r1 = self.k1 * drive
        r2 = self.k2 * drive
        gam = self.env.drive_dephasing * drive
        out = []
        for ens in (coh, pho):
            d = _commutator(ens, self.h1, self.h2, g)
            for k in (1, 2):
                d[k, k] = d[k, k] + gam * ens[k, k]
                _damp_level(d, ens, k, gam)
            _damp_level(d, ens, 1, self.gx)
            d[0, 0] = d[0, 0] + self.gx * ens[1, 1]
            _damp_level(d, ens, 2, self.gxx)
            d[1, 1] = d[1, 1] + self.gxx * ens[2, 2]
            _damp_level(d, ens, 0, r1)
            _damp_level(d, ens, 1, r2)
            out.append(d)
        dcoh, dpho = out
        dpho[1, 1] = dpho[1, 1] + r1 * (coh[0, 0] + pho[0, 0])
        dpho[2, 2] = dpho[2, 2] + r2 * (coh[1, 1] + pho[1, 1])
        # decay fluxes: [D_XX_coh, D_X_coh, D_XX_pho, D_X_pho]
        dflux = np.stack([
            self.gxx * coh[2, 2].real, self.gx * coh[1, 1].real,
            self.gxx * pho[2, 2].real, self.gx * pho[1, 1].real])
        return dcoh, dpho, dflux


def _rk4(model, t, dt, state):
    coh, pho, flux = state
    k1 = model.rhs(t, coh, pho)
    h = 0.5 * dt
    k2 = model.rhs(t + h, coh + h * k1[0], pho + h * k1[1])
    k3 = model.rhs(t + h, coh + h * k2[0], pho + h * k2[1])
    k4 = model.rhs(t + dt, coh + dt * k3[0], pho + dt * k3[1])
    w = dt / 6.0
    out = []
    for idx, y in enumerate((coh, pho, flux)):
        out.append(y + w * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]))
    return tuple(out)


def _bad_mask(state):
    coh, pho, _ = state
    pops = np.stack([(coh[k, k] + pho[k, k]).real for k in range(3)])
    trace = pops.sum(axis=0)
    parts = np.concatenate([np.stack([coh[k, k].real for k in range(3)]),
                            np.stack([pho[k, k].real for k in range(3)])])
    bad = np.abs(trace - 1.0) > TRACE_TOL
    bad |= np.any(parts < -NEG_TOL, axis=0)
    bad |= ~np.all(np.isfinite(pops), axis=0)
    return bad


def _subset_model(model, idx):
    m = object.__new__(_Model)
    m.__dict__.update(model.__dict__)
    for name in ("omega0", "d1", "d2", "h1", "h2", "k1", "k2"):
        setattr(m, name, getattr(model, name)[idx])
    return m


def _take(state, idx):
    coh, pho, flux = state
    return coh[:, :, idx], pho[:, :, idx], flux[:, idx]


def _step(model, t, dt, state, depth=0):
    new = _rk4(model, t, dt, state)
    bad = _bad_mask(new)
    if not bad.any():
        return new
    if depth >= MAX_HALVINGS:
        raise ConvergenceError(t)
    idx = np.nonzero(bad)[0]
    sub_model = _subset_model(model, idx)
    sub = _take(state, idx)
    half = 0.5 * dt
    sub = _step(sub_model, t, half, sub, depth + 1)
    sub = _step(sub_model, t + half, half, sub, depth + 1)
    for full, part in zip(new, sub):
        full[..., idx] = part
    return new


@dataclass(frozen=True)
class _BatchResult:
    time_grid: np.ndarray
    occupations: Optional[np.ndarray]  # (N, n_t, 3)
    split: np.ndarray  # (N, 4): XX_coh, X_pho, XX_pho, X_coh


def _integrate(qd, pulse, env, omega0, d1, d2, grid_step, post_window, include_decay,
               record):
    n_batch = omega0.shape[0]
    sigma = pulse.sigma
    t0, t1 = -4.0 * sigma, 4.0 * sigma + post_window
    n_steps = max(1, int(math.ceil((t1 - t0) / grid_step - 1e-9)))
    dt = (t1 - t0) / n_steps
    model = _Model(qd, env, sigma, omega0, d1, d2, pulse.tpe_coupling, include_decay)
    coh = np.zeros((3, 3, n_batch), dtype=complex)
    coh[0, 0] = 1.0
    pho = np.zeros_like(coh)
    flux = np.zeros((4, n_batch))
    state = (coh, pho, flux)
    grid = t0 + dt * np.arange(n_steps + 1)
    occ = None
    if record:
        occ = np.empty((n_batch, n_steps + 1, 3))
        occ[:, 0, :] = [1.0, 0.0, 0.0]
    for i in range(n_steps):
        try:
            state = _step(model, grid[i], dt, state)
        except ConvergenceError as exc:
            raise ConvergenceError(exc.time_ps) from None
        if record:
            c, p, _ = state
            for k in range(3):
                occ[:, i + 1, k] = (c[k, k] + p[k, k]).real
    coh, pho, flux = state
    xx_coh = coh[2, 2].real + flux[0]
    x_coh = coh[1, 1].real + flux[1] - flux[0]
    xx_pho = pho[2, 2].real + flux[2]
    x_pho = pho[1, 1].real + flux[3] - flux[2]
    split = np.stack([xx_coh, np.maximum(x_pho, 0.0), xx_pho, x_coh], axis=1)
    return _BatchResult(grid, occ, split)


def evolve(qd: QDParameters, pulse: LaserPulseSpec, env: PhononEnvironment,
           grid_step: Optional[float] = None, post_window: float = 0.0,
           include_decay: bool = True) -> LevelTrajectory:
    """Integrate one pulse; ``grid_step`` (ps) defaults to fwhm/200."""
    require_valid(qd, pulse, env)
    grid_step = pulse.fwhm / 200.0 if grid_step is None else grid_step
    if grid_step > pulse.fwhm / 50.0 * (1 + 1e-12):
        raise ValueError("grid_step must be <= fwhm/50")
    res = _integrate(qd, pulse, env, np.array([peak_rabi(pulse)]),
                     np.array([pulse.center_energy - qd.exciton_energy]),
                     np.array([pulse.center_energy - qd.biexciton_energy]),
                     grid_step, post_window, include_decay, record=True)
    s = res.split[0]
    return LevelTrajectory(res.time_grid, res.occupations[0],
                           ChannelSplit(float(s[0]), float(s[1]), float(s[2])),
                           P_X_coherent=float(s[3]))


def _check_monotone(axis):
    if axis.size == 0:
        raise ValueError("sweep axis must be non-empty")
    diffs = np.diff(axis)
    if axis.size > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
        raise ValueError("sweep axis must be strictly monotone")


def sweep(qd: QDParameters, pulse_template: LaserPulseSpec, env: PhononEnvironment, *,
          areas: Optional[Sequence[float]] = None,
          detunings: Optional[Sequence[float]] = None,
          grid_step: Optional[float] = None, post_window: float = 0.0,
          include_decay: bool = True, threads: int = 1) -> SweepResult:
    """Evolve once per axis point.

    ``areas`` are pulse areas in rad at the template's laser energy;
    ``detunings`` are laser energy offsets (meV) from the two-photon resonance
    at the template's pulse area. Exactly one axis must be given.
    """
    if (areas is None) == (detunings is None):
        raise ValueError("give exactly one of areas or detunings")
    require_valid(qd, pulse_template, env)
    grid_step = pulse_template.fwhm / 200.0 if grid_step is None else grid_step
    if areas is not None:
        kind, axis = "pulse_area", np.asarray(areas, dtype=float)
        _check_monotone(axis)
        if np.any(axis < 0):
            raise ValueError("pulse areas must be >= 0")
        omega0 = axis / (pulse_template.sigma * math.sqrt(2 * math.pi))
        e_l = np.full(axis.shape, pulse_template.center_energy)
    else:
        kind, axis = "laser_detuning", np.asarray(detunings, dtype=float)
        _check_monotone(axis)
        omega0 = np.full(axis.shape, peak_rabi(pulse_template))
        e_l = qd.tpe_resonance + axis
    d1 = e_l - qd.exciton_energy
    d2 = e_l - qd.biexciton_energy

    chunks = np.array_split(np.arange(axis.size), max(1, min(threads, axis.size)))

    def run(idx):
        try:
            return _integrate(qd, pulse_template, env, omega0[idx], d1[idx], d2[idx],
                              grid_step, post_window, include_decay, record=False).split
        except ConvergenceError as exc:
            raise ConvergenceError(exc.time_ps,
                                   f"axis index {int(idx[0])}..{int(idx[-1])}: "
                                   "step halving limit exceeded") from None

    if len(chunks) == 1:
        parts = [run(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(run, chunks))
    split = np.concatenate(parts, axis=0)
    p_xx = split[:, 0] + split[:, 2]
    p_x_total = p_xx + split[:, 1]
    splits = tuple(ChannelSplit(float(a), float(b), float(c)) for a, b, c, _ in split)
    return SweepResult(kind, axis, p_xx, p_x_total, p_x_total - p_xx, splits)


def adiabatic_pi_area(qd: QDParameters, pulse: LaserPulseSpec) -> float:
    """Pulse area giving an effective two-photon pi rotation, from adiabatic
    elimination of the exciton (estimate only)."""
    delta = abs(pulse.center_energy - qd.exciton_energy) / HBAR_MEV_PS
    if delta == 0:
        return math.pi
    omega0 = math.sqrt(2.0 * math.pi * delta / (pulse.sigma * math.sqrt(math.pi)))
    return pulse_area(pulse, omega0)


def _zoom_maximum(evaluate, lo, hi, points=21, rounds=4):
    """Batched grid refinement of the first interior maximum of ``evaluate``."""
    for _ in range(rounds):
        areas = np.linspace(lo, hi, points)
        p = evaluate(areas)
        k = int(np.argmax(p))
        for i in range(1, points - 1):
            if p[i] >= p[i - 1] and p[i] >= p[i + 1]:
                k = i
                break
        lo, hi = areas[max(k - 1, 0)], areas[min(k + 1, points - 1)]
    return 0.5 * (lo + hi)


def first_xx_maximum(qd: QDParameters, pulse: LaserPulseSpec, env: PhononEnvironment,
                     grid_step: Optional[float] = None):
    """Locate the first maximum of prepared P_XX versus pulse area.

    Returns ``(area, ChannelSplit)``.
    """
    guess = adiabatic_pi_area(qd, pulse)

    def evaluate(areas):
        return sweep(qd, pulse, env, areas=areas, grid_step=grid_step).P_XX

    area = _zoom_maximum(evaluate, 0.3 * guess, 1.6 * guess)
    split = sweep(qd, pulse, env, areas=[area], grid_step=grid_step).splits[0]
    return area, split


def tpe_pi_area(qd: QDParameters, pulse: LaserPulseSpec, grid_step=None) -> float:
    """Pulse area of the first coherent P_XX maximum without phonons or decay."""
    ideal = PhononEnvironment(temperature=0.0, coupling=0.0, cutoff=1.0, drive_dephasing=0.0)
    guess = adiabatic_pi_area(qd, pulse)

    def evaluate(areas):
        return sweep(qd, pulse, ideal, areas=areas, grid_step=grid_step,
                     include_decay=False).P_XX

    return _zoom_maximum(evaluate, 0.3 * guess, 1.6 * guess, rounds=5)


def rabi_visibility(p_xx: Sequence[float]) -> float:
    """Michelson visibility between the first interior maximum of P_XX along an
    area sweep and the lowest point after it. 0 when no interior maximum exists."""
    p = np.asarray(p_xx, dtype=float)
    for i in range(1, len(p) - 1):
        if p[i] > p[i - 1] and p[i] >= p[i + 1]:
            trough = p[i + 1:].min()
            return float((p[i] - trough) / (p[i] + trough)) if p[i] + trough > 0 else 0.0
    return 0.0


def with_polarization(pulse: LaserPulseSpec, pol) -> LaserPulseSpec:
    return replace(pulse, polarization=pol)
