"""One-off calibration of the phenomenological knobs.

* ``calibrate_phonon`` fits the phonon coupling and the drive-dephasing
  constant so that the first P_XX maximum of an area sweep hits the target
  biexciton and phonon-exciton preparation probabilities.
* ``calibrate_cross_dephasing`` inverts the closed-form cascade fidelity to
  the cross-dephasing time that reproduces a measured fidelity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq, least_squares

from .core import LaserPulseSpec, PhononEnvironment, QDParameters
from .dynamics import ChannelSplit, first_xx_maximum
from .emission import pair_fidelity


@dataclass(frozen=True)
class PhononCalibration:
    env: PhononEnvironment
    pi_area: float
    split: ChannelSplit
    residual: float


def calibrate_phonon(qd: QDParameters, pulse: LaserPulseSpec, env: PhononEnvironment,
                     target_xx: float = 0.65, target_x_phonon: float = 0.35,
                     x0=(0.17, 0.002), grid_step=None) -> PhononCalibration:
    """Least-squares fit of (coupling, drive_dephasing), both constrained >= 0.

    Residuals are the coherent and total biexciton preparation against
    ``target_xx`` and the phonon-fed exciton against ``target_x_phonon``, all
    read at the first P_XX maximum of the area sweep.
    """
    cache = {}

    def evaluate(x):
        key = tuple(np.round(x, 12))
        if key not in cache:
            trial = replace(env, coupling=float(x[0]), drive_dephasing=float(x[1]))
            cache[key] = first_xx_maximum(qd, pulse, trial, grid_step=grid_step)
        return cache[key]

    def residuals(x):
        _, s = evaluate(x)
        # Coherent and total XX both aim at the same measured maximum; the
        # X->XX phonon channel keeps them apart by ~0.05.
        return [s.P_XX_coherent - target_xx, s.P_XX - target_xx,
                s.P_X_phonon - target_x_phonon]

    fit = least_squares(residuals, x0=np.asarray(x0, float), bounds=([0, 0], [np.inf, np.inf]),
                        x_scale=[0.05, 0.01], diff_step=1e-3, xtol=1e-6, ftol=1e-8)
    area, split = evaluate(fit.x)
    best = replace(env, coupling=float(fit.x[0]), drive_dephasing=float(fit.x[1]))
    return PhononCalibration(best, area, split, float(np.linalg.norm(fit.fun)))


def calibrate_cross_dephasing(target_fidelity: float, fss: float, exciton_lifetime: float) -> float:
    """Cross-dephasing time (ns) whose cascade fidelity equals ``target_fidelity``.

    Returns ``inf`` when the splitting alone already limits the fidelity to
    the target or below.
    """
    f_max = pair_fidelity(fss, exciton_lifetime, math.inf)
    if target_fidelity >= f_max:
        return math.inf
    if target_fidelity <= 0.5:
        raise ValueError("target fidelity must exceed 0.5")

    def g(log_ratio):
        return pair_fidelity(fss, exciton_lifetime, exciton_lifetime * math.exp(-log_ratio)) - target_fidelity

    x = brentq(g, -30.0, 30.0, xtol=1e-14)
    return exciton_lifetime * math.exp(-x)
