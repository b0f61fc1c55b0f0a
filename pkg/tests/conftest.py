import numpy as np
import pytest

from nomocou import crystal, cubic, modes, units

TWO_PI = 2 * np.pi


@pytest.fixture(scope="session")
def two_ion_resonant():
    """Two-ion crystal tuned to the parametric resonance, in the
    pair-separation normalization; (eq, spec, mode_tensor)."""
    wz = TWO_PI * 1.16e6
    trap = crystal.HarmonicTrap(species=units.YB171, omega_x=TWO_PI * 10e6,
                                omega_y=np.sqrt(7.0) / 2.0 * wz, omega_z=wz)
    scales = units.pair_separation_scales(units.YB171, wz)
    eq = crystal.find_equilibrium(trap, 2, scales=scales, seed=1)
    spec = modes.normal_modes(eq)
    mt = cubic.to_mode_basis(cubic.coulomb_tressian(eq), spec)
    return eq, spec, mt


@pytest.fixture(scope="session")
def small_chain():
    """Five-ion chain with generic (incommensurate) frequencies."""
    trap = crystal.HarmonicTrap(species=units.CA40, omega_x=TWO_PI * 3.3e6,
                                omega_y=TWO_PI * 2.9e6, omega_z=TWO_PI * 0.43e6)
    eq = crystal.find_equilibrium(trap, 5, seed=2)
    spec = modes.normal_modes(eq)
    return eq, spec


@pytest.fixture(scope="session")
def small_planar():
    """Seven-ion planar rf crystal (plane y-z, drumhead x)."""
    trap = crystal.HarmonicTrap(species=units.CA40, omega_x=TWO_PI * 2.4e6,
                                omega_y=TWO_PI * 0.71e6, omega_z=TWO_PI * 0.52e6)
    eq = crystal.find_equilibrium(trap, 7, seed=3)
    spec = modes.normal_modes(eq)
    return eq, spec
