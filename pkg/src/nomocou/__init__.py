"""Nonlinear motional mode coupling in trapped-ion crystals.

Pipeline: ``units`` (nondimensionalization) -> ``crystal`` (trap configs,
equilibria) -> ``modes`` (normal modes, symplectic transform) -> ``cubic``
(third-order tensors) -> ``resonance`` (triad enumeration, two-level
scoring) -> ``classical`` / ``quantum`` (dynamics) -> ``chain_design``
(quartic axial shaping) and a ``cli`` experiment runner.
"""

__version__ = "0.1.0"

from . import (chain_design, classical, constants, crystal, cubic, errors,
               modes, quantum, resonance, units)

__all__ = ["chain_design", "classical", "constants", "crystal", "cubic",
           "errors", "modes", "quantum", "resonance", "units",
           "__version__"]
