import math

import pytest

from tpeqd.calibration import calibrate_cross_dephasing, calibrate_phonon
from tpeqd.emission import pair_fidelity
from tpeqd.presets import (CROSS_DEPHASING_TIME, DRIVE_DEPHASING, PHONON_COUPLING, PHONONS,
                           REPRESENTATIVE_DOT, TPE_PULSE)


def test_cross_dephasing_inverts_fidelity():
    tau = calibrate_cross_dephasing(0.586, 0.4, 0.78)
    assert tau == pytest.approx(CROSS_DEPHASING_TIME, rel=1e-9)
    assert pair_fidelity(0.4, 0.78, tau) == pytest.approx(0.586, abs=1e-12)


def test_cross_dephasing_unneeded_above_fss_limit():
    assert calibrate_cross_dephasing(0.95, 0.4, 0.78) == math.inf
    with pytest.raises(ValueError):
        calibrate_cross_dephasing(0.5, 0.4, 0.78)


@pytest.mark.slow
def test_phonon_calibration_reproduces_presets():
    # restarting next to the stored optimum must land on it again
    cal = calibrate_phonon(REPRESENTATIVE_DOT, TPE_PULSE, PHONONS,
                           x0=(PHONON_COUPLING * 1.05, DRIVE_DEPHASING + 1e-3))
    assert cal.env.coupling == pytest.approx(PHONON_COUPLING, rel=0.02)
    assert cal.split.P_XX == pytest.approx(0.65, abs=0.05)
    assert cal.split.P_XX_coherent == pytest.approx(0.65, abs=0.05)
    assert cal.split.P_X_phonon == pytest.approx(0.35, abs=0.05)
