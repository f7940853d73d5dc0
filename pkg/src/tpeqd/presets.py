"""The representative antibinding dot and its calibrated excitation.

Lifetimes, splitting and linewidths are the measured values of the
representative dot; absolute energies are arbitrary (only the -2.5 meV
binding energy matters). The phonon coupling and the cross-dephasing time
come from :mod:`tpeqd.calibration` and are frozen here so that every run
starts from the same numbers.
"""
import math

from .core import DetectorSpec, H, LaserPulseSpec, PhononEnvironment, QDParameters

# calibrate_phonon(REPRESENTATIVE_DOT, laser at TPE resonance) -> first P_XX maximum
PHONON_COUPLING = 0.1685165633946872
DRIVE_DEPHASING = 0.0
CALIBRATED_PI_AREA = 13.555618728518045  # rad, first P_XX maximum with phonons on
IDEAL_PI_AREA = 14.32982056618491  # rad, coherent maximum without phonons or decay

# calibrate_cross_dephasing(0.586, fss=0.4, exciton_lifetime=0.78)
CROSS_DEPHASING_TIME = 0.16334917780292418  # ns

REPRESENTATIVE_DOT = QDParameters(
    exciton_energy=1400.0,
    biexciton_energy=1402.5,
    fss=0.4,
    exciton_lifetime=0.78,
    biexciton_lifetime=0.44,
    cross_dephasing_time=CROSS_DEPHASING_TIME,
    exciton_linewidth=160.0,
    biexciton_linewidth=117.0,
)

IDEAL_DOT = QDParameters(
    exciton_energy=1400.0,
    biexciton_energy=1402.5,
    fss=0.4,
    exciton_lifetime=0.78,
    biexciton_lifetime=0.44,
    cross_dephasing_time=math.inf,
)

TPE_PULSE = LaserPulseSpec(
    center_energy=REPRESENTATIVE_DOT.tpe_resonance,
    fwhm=10.0,
    pulse_area=CALIBRATED_PI_AREA,
    polarization=H,
    rep_rate=80.0,
)

PHONONS = PhononEnvironment(temperature=8.0, coupling=PHONON_COUPLING, cutoff=1.0,
                            drive_dephasing=DRIVE_DEPHASING)

NO_PHONONS = PhononEnvironment(temperature=8.0, coupling=0.0, cutoff=1.0, drive_dephasing=0.0)

SPAD = DetectorSpec(irf_sigma=50.0, dark_rate=40.0, efficiency=3.3e-4, dead_time=22.0)
