"""Physical constants pinned to CODATA 2018 / exact SI values.

All numerical work in this package routes through this table rather than
``scipy.constants`` so that results are reproducible even if the installed
scipy ships a different CODATA release.
"""

HBAR = 1.054571817e-34        # J s
ELEMENTARY_CHARGE = 1.602176634e-19   # C (exact)
EPSILON_0 = 8.8541878128e-12  # F/m
K_COULOMB = 1.0 / (4.0 * 3.141592653589793 * EPSILON_0)  # N m^2 / C^2
ATOMIC_MASS = 1.66053906660e-27  # kg
K_BOLTZMANN = 1.380649e-23    # J/K (exact)
