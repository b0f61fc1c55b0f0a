"""Nondimensionalization: classical and quantum scales for ion-crystal work.

Every part of the pipeline works in scaled units defined by a ``ScaleSet``:
lengths in units of ``l0``, time in units of ``1/omega0``, masses in units
of ``m0`` and energies in units of ``E0 = m0 omega0^2 l0^2``.  The quantum
side enters through the single-oscillator length ``z0`` and the expansion
parameter ``eps0 = z0/l0``; in scaled units ``hbar = eps0**2``, i.e. one
quantum of the reference oscillator is ``eps0**2 * E0 = hbar*omega0``.

The default length unit is the Coulomb length ``l0 = (k_e q^2 / (m0
omega0^2))**(1/3)``.  A ``ScaleSet`` may instead carry any other length unit
(see ``rescaled_length``); the dimensionless Coulomb prefactor ``coulomb``
tracks the choice so the scaled potential stays exact.  The two-ion
convention where the equilibrium half-separation is exactly 1/2 corresponds
to ``pair_separation_scales``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import constants as const


class UnitsError(ValueError):
    """Invalid input to a units/scales operation."""


@dataclass(frozen=True)
class IonSpecies:
    """An ion species: label, mass in kg, charge in C."""

    name: str
    mass: float
    charge: float

    def __post_init__(self):
        if not self.mass > 0.0:
            raise UnitsError(f"ion mass must be positive, got {self.mass}")
        if self.charge == 0.0:
            raise UnitsError("ion charge must be nonzero")

    @classmethod
    def from_amu(cls, name, mass_amu, charge_e=1):
        return cls(name, mass_amu * const.ATOMIC_MASS,
                   charge_e * const.ELEMENTARY_CHARGE)


# Masses in amu; Be and Yb follow the values used throughout the simulations,
# Ca-40 is the standard atomic mass.
BE9 = IonSpecies.from_amu("Be9", 9.0121822)
CA40 = IonSpecies.from_amu("Ca40", 39.962590866)
YB171 = IonSpecies.from_amu("Yb171", 170.9363315)

SPECIES_PRESETS = {s.name: s for s in (BE9, CA40, YB171)}


def load_species(path):
    """Load species presets from a JSON config.

    The file holds a list of objects with keys ``name``, ``mass_amu`` and
    ``charge_e``.  Returns a dict name -> IonSpecies.
    """
    with open(path) as fh:
        entries = json.load(fh)
    out = {}
    for entry in entries:
        extra = set(entry) - {"name", "mass_amu", "charge_e"}
        if extra:
            raise UnitsError(f"unknown species config keys: {sorted(extra)}")
        out[entry["name"]] = IonSpecies.from_amu(
            entry["name"], entry["mass_amu"], entry.get("charge_e", 1))
    return out


@dataclass(frozen=True)
class ScaleSet:
    """Reference scales for one nondimensionalized problem.

    Attributes
    ----------
    omega0 : float
        Reference angular frequency, rad/s.
    m0 : float
        Reference mass, kg.
    l0 : float
        Length unit, m.  Defaults to the Coulomb length but may be any
        positive length (``coulomb`` compensates).
    E0 : float
        Energy unit ``m0 * omega0**2 * l0**2``, J.
    z0 : float
        Single-oscillator length ``sqrt(hbar / (m0 omega0))``, m.
    eps0 : float
        Quantum expansion parameter ``z0 / l0``.
    coulomb : float
        Dimensionless Coulomb prefactor ``k_e q^2 / (E0 l0)``; equals 1 when
        ``l0`` is the Coulomb length.
    charge : float
        Ion charge the Coulomb prefactor was built from, C.
    """

    omega0: float
    m0: float
    l0: float
    E0: float
    z0: float
    eps0: float
    coulomb: float
    charge: float

    @property
    def hbar_scaled(self):
        """hbar in scaled units; identical to eps0**2."""
        return self.eps0 ** 2

    @property
    def v0(self):
        """Velocity unit l0 * omega0, m/s."""
        return self.l0 * self.omega0


def coulomb_length(species, omega0):
    """Length at which Coulomb and trap energies balance for one ion pair."""
    return (const.K_COULOMB * species.charge ** 2
            / (species.mass * omega0 ** 2)) ** (1.0 / 3.0)


def make_scales(species, omega0, length_scale=None):
    """Build the ScaleSet for a species at reference frequency ``omega0``.

    Parameters
    ----------
    species : IonSpecies
    omega0 : float
        Reference angular frequency in rad/s.  By convention the axial
        frequency of the trap unless there is a reason to pick another.
    length_scale : float, optional
        Override the length unit (m).  The scaled Coulomb prefactor is
        adjusted so physics is unchanged.
    """
    if not omega0 > 0.0:
        raise UnitsError(f"omega0 must be positive, got {omega0}")
    l_nat = coulomb_length(species, omega0)
    l0 = l_nat if length_scale is None else float(length_scale)
    if not l0 > 0.0:
        raise UnitsError(f"length_scale must be positive, got {length_scale}")
    E0 = species.mass * omega0 ** 2 * l0 ** 2
    z0 = (const.HBAR / (species.mass * omega0)) ** 0.5
    return ScaleSet(
        omega0=omega0,
        m0=species.mass,
        l0=l0,
        E0=E0,
        z0=z0,
        eps0=z0 / l0,
        coulomb=(l_nat / l0) ** 3,
        charge=species.charge,
    )


def pair_separation_scales(species, omega0):
    """ScaleSet whose length unit is the two-ion equilibrium separation.

    With this choice the two-ion crystal sits at z = +-1/2 and the scaled
    Coulomb prefactor is 1/2.  This is the normalization in which the
    two-ion cubic coefficients take their reference values.
    """
    return make_scales(species, omega0,
                       length_scale=2.0 ** (1.0 / 3.0) * coulomb_length(species, omega0))


def rescaled_length(scales, l0_new, species=None):
    """Return a ScaleSet identical to ``scales`` but with a new length unit."""
    m0 = scales.m0
    l_nat = (scales.coulomb * scales.l0 ** 3) ** (1.0 / 3.0)
    E0 = m0 * scales.omega0 ** 2 * l0_new ** 2
    return ScaleSet(
        omega0=scales.omega0, m0=m0, l0=l0_new, E0=E0,
        z0=scales.z0, eps0=scales.z0 / l0_new,
        coulomb=(l_nat / l0_new) ** 3, charge=scales.charge,
    )


_KINDS = ("length", "energy", "time", "frequency")


def to_physical(value, kind, scales):
    """Convert a scaled value to SI (m, J, s, or rad/s)."""
    if kind == "length":
        return value * scales.l0
    if kind == "energy":
        return value * scales.E0
    if kind == "time":
        return value / scales.omega0
    if kind == "frequency":
        return value * scales.omega0
    raise UnitsError(f"unknown kind {kind!r}; expected one of {_KINDS}")


def from_physical(value, kind, scales):
    """Convert an SI value to scaled units; inverse of ``to_physical``."""
    if kind == "length":
        return value / scales.l0
    if kind == "energy":
        return value / scales.E0
    if kind == "time":
        return value * scales.omega0
    if kind == "frequency":
        return value / scales.omega0
    raise UnitsError(f"unknown kind {kind!r}; expected one of {_KINDS}")
