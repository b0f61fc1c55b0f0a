"""Quartic axial-potential shaping for near-uniform ion chains.

The 1-D problem is nondimensionalized on its own scales: length
``(k_e q^2/|a2|)^(1/3)`` and energy ``k_e q^2 / length``.  A single
dimensionless parameter ``b = (|a2|/(q^2 k_e))^(2/3) * a2/a4`` then fixes
the equilibrium shape:

    u(z) = sum_i [ sgn(b) z_i^2 / 2 + |b| z_i^4 / 4 ] + sum_{i<j} 1/|z_i-z_j|

and is tuned to minimize the relative variance of the interior ("qubit")
gaps, excluding ``n_aux`` sacrificial ions per side.  After optimization
the chain is rescaled so the mean qubit gap matches a target spacing, which
sets the physical (a2, a4).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import constants as const
from .crystal import AnharmonicAxialTrap
from .errors import ConfigError, ConvergenceError


def axial_equilibrium(n_ions, b, z0=None):
    """1-D equilibrium of the dimensionless quartic-chain potential."""
    sgn = np.sign(b) if b != 0 else 1.0
    mag = abs(b)

    def energy(z):
        dz = np.abs(z[:, None] - z[None, :])
        np.fill_diagonal(dz, np.inf)
        return np.sum(0.5 * sgn * z ** 2 + 0.25 * mag * z ** 4) \
            + 0.5 * np.sum(1.0 / dz)

    def grad(z):
        dz = z[:, None] - z[None, :]
        np.fill_diagonal(dz, np.inf)
        return sgn * z + mag * z ** 3 - np.sum(np.sign(dz) / dz ** 2, axis=1)

    if z0 is None:
        if sgn > 0:
            s = 2.0 * n_ions ** -0.56 * 2.0 ** (1.0 / 3.0)
        else:
            s = (4.0 / (mag * n_ions ** 2)) ** 0.2 if mag > 0 else 2.0
        z0 = s * (np.arange(n_ions) - 0.5 * (n_ions - 1))
    def hess(z):
        dz = z[:, None] - z[None, :]
        np.fill_diagonal(dz, np.inf)
        off = -2.0 / np.abs(dz) ** 3
        h = off.copy()
        h[np.diag_indices(z.size)] = sgn + 3.0 * mag * z ** 2 - off.sum(axis=1)
        return h

    res = optimize.minimize(energy, z0, jac=grad, method="BFGS",
                            options={"gtol": 1e-10, "maxiter": 50000})
    z = res.x
    for _ in range(50):
        g = grad(z)
        if np.linalg.norm(g) < 1e-12:
            break
        z = z + np.linalg.lstsq(hess(z), -g, rcond=None)[0]
    z = np.sort(z)
    gn = np.linalg.norm(grad(z))
    if gn > 1e-9:
        raise ConvergenceError(f"1-D chain solve stalled at |g|={gn:.2e}",
                               best=z, residual=gn)
    return z


def spacing_variance(z, n_aux):
    """Relative variance of the interior gaps, mean gap, and the gaps."""
    z = np.sort(z)
    n = z.size
    if n - 2 * n_aux < 2:
        raise ConfigError("need at least two qubit ions after exclusions")
    gaps = np.diff(z)[n_aux:n - n_aux - 1] if n_aux > 0 else np.diff(z)
    dbar = float(np.mean(gaps))
    s_z = float(np.mean((gaps / dbar - 1.0) ** 2))
    return s_z, dbar, gaps


@dataclass
class ChainDesign:
    """Optimized quartic chain: shape parameter, spacing statistics, and
    the physical trap coefficients after rescaling to the target gap."""

    n_ions: int
    n_aux: int
    b: float
    s_z: float
    positions: np.ndarray        # dimensionless (chain units)
    mean_gap: float              # dimensionless
    l0_rescaled: float           # m, chain length unit after rescale
    a2: float                    # J/m^2
    a4: float                    # J/m^4
    species: object
    target_spacing: float

    def positions_si(self):
        return self.positions * self.l0_rescaled

    def omega_z_equivalent(self):
        """sqrt(|a2|/m): harmonic-equivalent axial frequency scale."""
        return (abs(self.a2) / self.species.mass) ** 0.5

    def to_trap(self, omega_x, omega_y):
        return AnharmonicAxialTrap(species=self.species, omega_x=omega_x,
                                   omega_y=omega_y, a2=self.a2, a4=self.a4)

    def report(self):
        return {
            "n_ions": self.n_ions, "n_aux": self.n_aux, "b": self.b,
            "spacing_variance": self.s_z,
            "positions_um": (self.positions_si() * 1e6).tolist(),
            "a2_J_per_m2": self.a2, "a4_J_per_m4": self.a4,
            "mean_qubit_gap_um": self.target_spacing * 1e6,
            "omega_z_equivalent_Hz": self.omega_z_equivalent() / (2 * np.pi),
        }


def optimize_spacing(n_ions, n_aux, target_spacing, species,
                     b_range=(1e-4, 30.0), samples=24):
    """Tune b to minimize the qubit-gap variance, then rescale.

    Both signs of the quadratic coefficient are searched.  Raises when no
    interior minimum can be bracketed (the sample values are attached).
    """

    def sz_of(b):
        z = axial_equilibrium(n_ions, b)
        return spacing_variance(z, n_aux)[0]

    lo, hi = b_range
    if not 0 < lo < hi:
        raise ConfigError("b_range must be positive and increasing")
    grid = np.concatenate([-np.geomspace(lo, hi, samples)[::-1],
                           np.geomspace(lo, hi, samples)])
    vals = np.array([sz_of(b) for b in grid])
    k = int(np.argmin(vals))
    if k == 0 or k == len(grid) - 1:
        raise ConvergenceError(
            "no interior minimum of s_z(b) in the search range",
            best=list(zip(grid.tolist(), vals.tolist())), residual=vals[k])
    res = optimize.minimize_scalar(sz_of, bracket=(grid[k - 1], grid[k],
                                                   grid[k + 1]),
                                   method="golden",
                                   options={"xtol": 1e-10})
    b_opt = float(res.x)
    z = axial_equilibrium(n_ions, b_opt)
    s_z, dbar, _ = spacing_variance(z, n_aux)

    # rescale: physical mean qubit gap = target  =>  l0 = target / dbar
    l0 = target_spacing / dbar
    keq2 = const.K_COULOMB * species.charge ** 2
    a2_mag = keq2 / l0 ** 3
    a2 = np.sign(b_opt) * a2_mag
    a4 = a2 / (b_opt * l0 ** 2)
    if a4 <= 0:
        raise ConvergenceError("optimized b produced a non-positive quartic "
                               "coefficient", best=b_opt)
    return ChainDesign(
        n_ions=n_ions, n_aux=n_aux, b=b_opt, s_z=s_z, positions=z,
        mean_gap=dbar, l0_rescaled=l0, a2=a2, a4=a4, species=species,
        target_spacing=target_spacing)


def harmonic_reference_variance(n_ions, n_aux):
    """Qubit-gap variance of the purely harmonic chain (b -> 0 limit),
    evaluated with the same machinery; oracle for the optimizer."""
    z = axial_equilibrium(n_ions, 0.0)
    return spacing_variance(z, n_aux)[0]
