"""Unit conventions and the physical constants that cross unit boundaries.

Energies are carried in meV (fine-structure splitting in µeV), times in ns
for lifetimes and ps for pulse dynamics. Every conversion between energy
and angular frequency goes through :data:`HBAR_MEV_NS`.
"""
import math

# hbar in meV*ns (CODATA 2018: 6.582119569e-16 eV*s)
HBAR_MEV_NS = 6.582119569e-4
HBAR_MEV_PS = HBAR_MEV_NS * 1e3
HBAR_UEV_NS = HBAR_MEV_NS * 1e3

K_B_MEV_PER_K = 8.617333262e-2

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


def mev_to_rad_per_ps(energy_mev):
    return energy_mev / HBAR_MEV_PS


def fss_phase(fss_uev, delay_ns):
    """Precession angle (rad) accumulated by a split exciton over ``delay_ns``."""
    return fss_uev * delay_ns / HBAR_UEV_NS


def thermal_energy(temperature_k):
    return K_B_MEV_PER_K * temperature_k


def sigma_from_fwhm(fwhm):
    return fwhm / FWHM_PER_SIGMA
