"""Physical constants and species data used across the package.

All values in SI unless the name says otherwise. CODATA values come from
scipy.constants so they stay consistent with the rest of the scientific stack.
"""

from scipy.constants import (
    atomic_mass as ATOMIC_MASS_KG,  # kg per unified atomic mass unit
    elementary_charge as ELEMENTARY_CHARGE,  # C
    epsilon_0 as EPSILON_0,  # F/m
    hbar as HBAR,  # J s
    h as PLANCK_H,  # J s
    k as K_BOLTZMANN,  # J/K
    pi as PI,
)

# Coulomb energy coefficient e^2 / (4 pi eps0), J m
COULOMB_E2 = ELEMENTARY_CHARGE**2 / (4.0 * PI * EPSILON_0)

EV_IN_J = ELEMENTARY_CHARGE  # 1 eV in joules

# Ion masses in unified atomic mass units (singly charged isotopes used here;
# the electron-mass correction is far below the tolerances of this package).
MASS_AL_U = 26.9815385
MASS_CA_U = 39.9625909

# Detection wavelengths, m
WAVELENGTH_AL_NM = 394.0
WAVELENGTH_CA_NM = 423.0

SPECIES_MASS_U = {
    "Al+": MASS_AL_U,
    "Ca+": MASS_CA_U,
}


def mass_kg(mass_u):
    """Convert a mass in atomic mass units to kg."""
    return mass_u * ATOMIC_MASS_KG


def ev_to_joule(e_ev):
    return e_ev * EV_IN_J


def joule_to_ev(e_j):
    return e_j / EV_IN_J
