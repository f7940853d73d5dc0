import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tpeqd import units
from tpeqd.core import (D, DetectorSpec, H, LaserPulseSpec, PhononEnvironment, QDParameters, R,
                        TabulatedKernel, binding_energy, require_valid, tpe_resonance, validate)
from tpeqd.presets import IDEAL_DOT, PHONONS, REPRESENTATIVE_DOT, SPAD, TPE_PULSE

finite = st.floats(min_value=-1e4, max_value=1e4, allow_nan=False, allow_infinity=False)


def test_hbar_matches_codata():
    # 6.582119569e-16 eV s expressed in meV ns
    assert units.HBAR_MEV_NS == pytest.approx(6.582119569e-16 * 1e3 * 1e9, rel=1e-12)


def test_fss_phase_of_representative_dot():
    # s tau / hbar for 0.4 ueV over 0.78 ns
    assert units.fss_phase(0.4, 0.78) == pytest.approx(0.474, abs=5e-4)


def test_thermal_energy_at_8k():
    assert units.thermal_energy(8.0) == pytest.approx(0.6894, abs=1e-4)


@pytest.mark.parametrize("ex, exx, expected", [
    (1400.0, 1402.5, -2.5),
    (1401.3, 1401.3, 0.0),
    (1401.0, 1400.0, 1.0),
])
def test_binding_energy(ex, exx, expected):
    assert binding_energy(ex, exx) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("ex, exx, laser, det", [
    (1400.0, 1402.5, 1401.25, 1.25),
    (1401.3, 1401.3, 1401.3, 0.0),
    (1401.0, 1400.0, 1400.5, -0.5),
])
def test_tpe_resonance(ex, exx, laser, det):
    assert tpe_resonance(ex, exx) == pytest.approx(laser, abs=1e-12)
    assert tpe_resonance(ex, exx) - ex == pytest.approx(det, abs=1e-12)


@given(finite, finite)
def test_resonance_identity(ex, exx):
    # detuning from X is -binding/2; exact for dyadic halving
    assert tpe_resonance(ex, exx) - ex == pytest.approx(-binding_energy(ex, exx) / 2, rel=1e-12, abs=1e-9)


@given(finite, finite)
def test_binding_energy_antisymmetric(a, b):
    assert binding_energy(a, b) == -binding_energy(b, a)


def test_representative_dot_is_valid():
    for p in (REPRESENTATIVE_DOT, IDEAL_DOT, TPE_PULSE, PHONONS, SPAD):
        assert validate(p) == []
    assert REPRESENTATIVE_DOT.binding_energy == pytest.approx(-2.5)
    assert TPE_PULSE.center_energy == pytest.approx(1401.25)


def test_zero_exciton_lifetime_reported():
    errs = validate(QDParameters(exciton_lifetime=0.0))
    assert "exciton_lifetime must be > 0" in errs


def test_unnormalized_jones_reported():
    errs = validate(LaserPulseSpec(polarization=(1, 1)))
    assert any("polarization norm" in e for e in errs)


def test_validate_collects_every_violation():
    errs = validate(QDParameters(exciton_lifetime=-1, biexciton_lifetime=0, fss=float("nan")))
    assert len(errs) == 3


def test_detector_and_phonon_invariants():
    assert validate(DetectorSpec(efficiency=1.5))
    assert validate(DetectorSpec(dark_rate=-1))
    assert validate(PhononEnvironment(cutoff=0.0))
    assert validate(PhononEnvironment(temperature=-1.0))
    bad = TabulatedKernel((0.5, 0.49), 10.0, 0)
    assert any("sum to 1" in e for e in validate(DetectorSpec(irf_kernel=bad)))
    good = TabulatedKernel.gaussian(100.0, 10.0)
    assert validate(DetectorSpec(irf_kernel=good)) == []


@settings(max_examples=200)
@given(st.one_of(st.floats(allow_nan=True, allow_infinity=True), st.none(), st.text(max_size=3),
                 st.integers(), st.complex_numbers()))
def test_validate_is_total(x):
    for obj in (QDParameters(fss=x), LaserPulseSpec(fwhm=x), LaserPulseSpec(polarization=(x, 0)),
                PhononEnvironment(coupling=x), DetectorSpec(efficiency=x)):
        assert isinstance(validate(obj), list)


def test_require_valid_raises():
    with pytest.raises(ValueError, match="exciton_lifetime"):
        require_valid(QDParameters(exciton_lifetime=0))


def test_tpe_coupling_linear_vs_circular():
    assert LaserPulseSpec(polarization=H).tpe_coupling == pytest.approx(1.0)
    assert LaserPulseSpec(polarization=D).tpe_coupling == pytest.approx(1.0)
    assert LaserPulseSpec(polarization=R).tpe_coupling == pytest.approx(0.0, abs=1e-15)


def test_gaussian_kernel_normalized_and_centred():
    k = TabulatedKernel.gaussian(100.0, 10.0)
    v = k.array()
    assert v.sum() == pytest.approx(1.0, abs=1e-12)
    assert float(v @ k.times_ps) == pytest.approx(0.0, abs=1e-9)
    assert math.sqrt(float(v @ k.times_ps ** 2)) == pytest.approx(100.0, rel=1e-3)


def test_delta_kernel_shift():
    k = TabulatedKernel.delta(20.0, 3)
    assert np.argmax(k.array()) - k.origin == 3
    k = TabulatedKernel.delta(20.0, -2)
    assert np.argmax(k.array()) - k.origin == -2
