"""Physical constants shared by every module.

Energies are in meV, fields in tesla, temperatures in kelvin, conductances
in microsiemens and rates in 1/s.
"""

MU_B = 0.0578838  # Bohr magneton, meV/T
K_B = 0.0861733  # Boltzmann constant, meV/K
E_CHARGE = 1.602176634e-19  # elementary charge, C

# (G / e^2) * energy -> rate, for G in uS and energy in meV
RATE_UNIT = 1e-6 * 1e-3 / E_CHARGE

CONSTANTS = {
    "mu_B_meV_per_T": MU_B,
    "k_B_meV_per_K": K_B,
    "e_C": E_CHARGE,
    "rate_unit_per_s_per_uS_meV": RATE_UNIT,
}
