"""Trap potentials and crystal equilibria.

Positions are flat arrays of length 3N laid out ``(x_1..x_N, y_1..y_N,
z_1..z_N)`` in units of the ScaleSet length.  The internal energy scale is
``E0 = m0 omega0^2 l0^2``: in those units the scaled potential is

    u = sum_i sum_axis (1/2) mu_i wbar_axis^2 q_i^2  +  kappa sum_{i<j} 1/r_ij

with ``kappa = scales.coulomb``.  The public ``total_potential`` follows the
doubled bookkeeping in which energies are measured in units of E0/2, so the
pairwise Coulomb sum reads ``2/r_ij`` and the harmonic trap term loses its
1/2; the conversion constant is ``POTENTIAL_RESCALE``.  Derivative objects
(stiffness matrix, third-order tensors) are kept in E0 units, i.e. they are
``1/POTENTIAL_RESCALE`` times derivatives of ``total_potential``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import optimize

from . import constants as const
from .errors import ConfigError, ConvergenceError, SingularConfigurationError
from .units import IonSpecies, ScaleSet, make_scales

# total_potential = POTENTIAL_RESCALE * (potential in units of E0)
POTENTIAL_RESCALE = 2.0


# ---------------------------------------------------------------------------
# trap configurations


@dataclass(frozen=True)
class HarmonicTrap:
    """rf trap in the pseudopotential approximation: three secular frequencies."""

    species: IonSpecies
    omega_x: float
    omega_y: float
    omega_z: float

    def __post_init__(self):
        if min(self.omega_x, self.omega_y, self.omega_z) <= 0.0:
            raise ConfigError("harmonic trap frequencies must all be positive")

    def omega_reference(self):
        return self.omega_z

    def scaled_curvatures(self, scales):
        """Per-axis quadratic coefficients (omega/omega0)^2, shape (3,)."""
        w0 = scales.omega0
        return np.array([(self.omega_x / w0) ** 2,
                         (self.omega_y / w0) ** 2,
                         (self.omega_z / w0) ** 2])

    def expected_geometry(self, n_ions=2):
        w = np.array([self.omega_x, self.omega_y, self.omega_z])
        order = np.argsort(w)
        # chain along the softest axis while the transverse branches stay
        # stiff enough to hold off the zig-zag transition (empirical
        # critical anisotropy ~ 0.73 N^0.86)
        if w[order[1]] / w[order[0]] > 0.73 * max(n_ions, 2) ** 0.86:
            return "linear", int(order[0])
        if w[order[2]] > 1.1 * w[order[1]]:
            return "planar", int(order[2])
        return "3d", None


@dataclass(frozen=True)
class AnharmonicAxialTrap:
    """Harmonic radial confinement plus a quadratic+quartic axial potential.

    The axial potential energy per ion is ``a2 z^2 / 2 + a4 z^4 / 4`` with
    ``a2`` in J/m^2 (either sign) and ``a4 > 0`` in J/m^4.
    """

    species: IonSpecies
    omega_x: float
    omega_y: float
    a2: float
    a4: float

    def __post_init__(self):
        if min(self.omega_x, self.omega_y) <= 0.0:
            raise ConfigError("radial frequencies must be positive")
        if not self.a4 > 0.0:
            raise ConfigError("quartic coefficient a4 must be positive")

    def omega_reference(self):
        return (abs(self.a2) / self.species.mass) ** 0.5

    def scaled_axial_coefficients(self, scales):
        """(a2, a4) in scaled units: a2/(m0 w0^2) and a4 l0^2/(m0 w0^2)."""
        k = scales.m0 * scales.omega0 ** 2
        return self.a2 / k, self.a4 * scales.l0 ** 2 / k

    def scaled_curvatures(self, scales):
        w0 = scales.omega0
        a2s, _ = self.scaled_axial_coefficients(scales)
        return np.array([(self.omega_x / w0) ** 2,
                         (self.omega_y / w0) ** 2,
                         a2s])

    def expected_geometry(self, n_ions=2):
        return "linear", 2


@dataclass(frozen=True)
class PenningTrap:
    """Penning trap in the frame co-rotating with the crystal.

    ``omega_rot`` is the crystal rotation frequency and ``wall_delta`` the
    dimensionless rotating-wall anisotropy; the effective in-plane
    curvatures are ``w_perp^2 +- wall_delta * omega_z^2`` with
    ``w_perp^2 = omega_rot*(Omega_c - omega_rot) - omega_z^2/2``.
    """

    species: IonSpecies
    omega_z: float
    b_field: float
    omega_rot: float
    wall_delta: float = 0.0

    def __post_init__(self):
        if self.omega_z <= 0.0:
            raise ConfigError("axial frequency must be positive")
        wc = self.cyclotron_frequency()
        if not 0.0 < self.omega_rot < wc:
            raise ConfigError(
                f"rotation frequency must lie in (0, Omega_c={wc:.4g}) rad/s")

    def cyclotron_frequency(self):
        return abs(self.species.charge) * self.b_field / self.species.mass

    def omega_reference(self):
        return self.omega_z

    def planar_frequencies(self):
        """Effective rotating-frame in-plane frequencies (omega_px, omega_py)."""
        wc = self.cyclotron_frequency()
        wperp2 = self.omega_rot * (wc - self.omega_rot) - 0.5 * self.omega_z ** 2
        split = self.wall_delta * self.omega_z ** 2
        wx2, wy2 = wperp2 + split, wperp2 - split
        if min(wx2, wy2) <= 0.0:
            raise ConfigError("rotating-frame planar confinement is not positive; "
                              "adjust omega_rot or wall_delta")
        return wx2 ** 0.5, wy2 ** 0.5

    def scaled_curvatures(self, scales):
        w0 = scales.omega0
        wx, wy = self.planar_frequencies()
        return np.array([(wx / w0) ** 2, (wy / w0) ** 2, (self.omega_z / w0) ** 2])

    def magnetic_coupling(self, scales, n_ions):
        """Diagonal of the momentum-coupling block: (q B - 2 m omega_rot)/2 per ion,
        in units of m0*omega0."""
        ci = 0.5 * (self.species.charge * self.b_field / (scales.m0 * scales.omega0)
                    - 2.0 * (self.species.mass / scales.m0)
                    * (self.omega_rot / scales.omega0))
        return np.full(n_ions, ci)

    def expected_geometry(self, n_ions=2):
        return "planar", 2


TrapConfig = (HarmonicTrap, AnharmonicAxialTrap, PenningTrap)


def default_scales(trap, omega0=None, length_scale=None):
    """ScaleSet for a trap; reference frequency defaults to the axial one."""
    return make_scales(trap.species, omega0 or trap.omega_reference(),
                       length_scale=length_scale)


def penning_matching_trap(rf_trap, species, omega_z, b_field):
    """Penning configuration whose rotating-frame curvature ratios match an
    rf trap's, so both produce the same dimensionless equilibrium shape.

    Returns the PenningTrap; its ``wall_delta`` is the derived anisotropy
    metadata.  The rf stiff axis maps to the Penning axial (z) direction and
    the remaining two to the rotating-frame plane.
    """
    w_rf = np.sort([rf_trap.omega_x, rf_trap.omega_y, rf_trap.omega_z])[::-1]
    ratio = w_rf / w_rf[0]          # (1, mid, soft) relative to the stiff axis
    wpx = omega_z * ratio[1]
    wpy = omega_z * ratio[2]
    wc = abs(species.charge) * b_field / species.mass
    wperp2 = 0.5 * (wpx ** 2 + wpy ** 2)
    # omega_rot*(wc - omega_rot) = wperp2 + wz^2/2; take the slow root
    disc = wc ** 2 / 4.0 - wperp2 - 0.5 * omega_z ** 2
    if disc < 0.0:
        raise ConfigError("no rotation frequency matches the requested anisotropy")
    omega_rot = wc / 2.0 - disc ** 0.5
    wall_delta = (wpx ** 2 - wpy ** 2) / (2.0 * omega_z ** 2)
    return PenningTrap(species=species, omega_z=omega_z, b_field=b_field,
                       omega_rot=omega_rot, wall_delta=wall_delta)


# ---------------------------------------------------------------------------
# scaled potential and derivatives


def _split(positions, n):
    return positions[:n], positions[n:2 * n], positions[2 * n:]


def _pair_geometry(positions, n):
    x, y, z = _split(positions, n)
    dx = x[:, None] - x[None, :]
    dy = y[:, None] - y[None, :]
    dz = z[:, None] - z[None, :]
    r2 = dx ** 2 + dy ** 2 + dz ** 2
    np.fill_diagonal(r2, np.inf)
    if np.min(r2) <= 0.0:
        raise SingularConfigurationError("coincident ions in configuration")
    return dx, dy, dz, np.sqrt(r2)


def trap_energy_scaled(positions, trap, scales):
    n = positions.size // 3
    x, y, z = _split(positions, n)
    cx, cy, cz = trap.scaled_curvatures(scales)
    u = 0.5 * (cx * np.sum(x ** 2) + cy * np.sum(y ** 2))
    if isinstance(trap, AnharmonicAxialTrap):
        a2s, a4s = trap.scaled_axial_coefficients(scales)
        u += np.sum(0.5 * a2s * z ** 2 + 0.25 * a4s * z ** 4)
    else:
        u += 0.5 * cz * np.sum(z ** 2)
    return u


def trap_gradient_scaled(positions, trap, scales):
    n = positions.size // 3
    x, y, z = _split(positions, n)
    cx, cy, cz = trap.scaled_curvatures(scales)
    if isinstance(trap, AnharmonicAxialTrap):
        a2s, a4s = trap.scaled_axial_coefficients(scales)
        gz = a2s * z + a4s * z ** 3
    else:
        gz = cz * z
    return np.concatenate([cx * x, cy * y, gz])


def trap_hessian_diagonal(positions, trap, scales):
    """Per-coordinate trap curvature, shape (3N,).  All supported traps have
    per-ion diagonal Hessian blocks."""
    n = positions.size // 3
    _, _, z = _split(positions, n)
    cx, cy, cz = trap.scaled_curvatures(scales)
    if isinstance(trap, AnharmonicAxialTrap):
        a2s, a4s = trap.scaled_axial_coefficients(scales)
        hz = a2s + 3.0 * a4s * z ** 2
    else:
        hz = np.full(n, cz)
    return np.concatenate([np.full(n, cx), np.full(n, cy), hz])


def coulomb_energy_scaled(positions, scales):
    n = positions.size // 3
    _, _, _, r = _pair_geometry(positions, n)
    return scales.coulomb * 0.5 * np.sum(1.0 / r)


def scaled_potential(positions, trap, scales):
    """Total potential in units of E0 (trap + kappa * sum_{i<j} 1/r)."""
    return trap_energy_scaled(positions, trap, scales) + \
        coulomb_energy_scaled(positions, scales)


def scaled_gradient(positions, trap, scales):
    n = positions.size // 3
    dx, dy, dz, r = _pair_geometry(positions, n)
    rinv3 = r ** -3
    k = scales.coulomb
    gc = np.concatenate([-k * np.sum(dx * rinv3, axis=1),
                         -k * np.sum(dy * rinv3, axis=1),
                         -k * np.sum(dz * rinv3, axis=1)])
    return gc + trap_gradient_scaled(positions, trap, scales)


def scaled_hessian(positions, trap, scales):
    """Hessian of ``scaled_potential``, shape (3N, 3N), symmetric."""
    n = positions.size // 3
    dx, dy, dz, r = _pair_geometry(positions, n)
    rinv3 = r ** -3
    rinv5 = r ** -5
    k = scales.coulomb
    d = {"x": dx, "y": dy, "z": dz}
    hess = np.zeros((3 * n, 3 * n))
    for a, alpha in enumerate("xyz"):
        for b, beta in enumerate("xyz"):
            if b < a:
                continue
            # off-diagonal ion blocks of d^2(kappa/r)/da_i db_j
            block = k * ((1.0 if alpha == beta else 0.0) * rinv3
                         - 3.0 * d[alpha] * d[beta] * rinv5)
            np.fill_diagonal(block, 0.0)
            block[np.diag_indices(n)] = -np.sum(block, axis=1)
            hess[a * n:(a + 1) * n, b * n:(b + 1) * n] = block
            if b != a:
                hess[b * n:(b + 1) * n, a * n:(a + 1) * n] = block.T
    hess[np.diag_indices(3 * n)] += trap_hessian_diagonal(positions, trap, scales)
    return hess


def total_potential(positions, trap, scales):
    """Total potential in units of E0/2 (pairwise Coulomb term ``2/r_ij``)."""
    return POTENTIAL_RESCALE * scaled_potential(np.asarray(positions, float),
                                                trap, scales)


def potential_gradient(positions, trap, scales):
    """Gradient of ``total_potential`` (same E0/2 normalization)."""
    return POTENTIAL_RESCALE * scaled_gradient(np.asarray(positions, float),
                                               trap, scales)


# ---------------------------------------------------------------------------
# equilibria


@dataclass
class Equilibrium:
    """A converged crystal configuration in scaled coordinates."""

    positions: np.ndarray
    scales: ScaleSet
    trap: object
    residual_gradient_norm: float
    energy_scaled: float
    geometry: str                 # 'linear' | 'planar' | '3d'
    distinguished_axis: int | None  # chain axis or plane normal (0=x,1=y,2=z)
    structure_mismatch: bool = False
    seed: int | None = None

    @property
    def n_ions(self):
        return self.positions.size // 3

    def positions_si(self):
        return self.positions * self.scales.l0

    def masses_scaled(self):
        return np.ones(self.n_ions)

    def to_json(self, path=None):
        doc = {
            "species": {"name": self.trap.species.name,
                        "mass_kg": self.trap.species.mass,
                        "charge_C": self.trap.species.charge},
            "trap": {"kind": type(self.trap).__name__,
                     **{k: v for k, v in asdict(self.trap).items() if k != "species"}},
            "scales": {"omega0": self.scales.omega0, "m0": self.scales.m0,
                       "l0": self.scales.l0, "E0": self.scales.E0,
                       "eps0": self.scales.eps0, "coulomb": self.scales.coulomb},
            "positions": self.positions.tolist(),
            "residual_gradient_norm": self.residual_gradient_norm,
            "energy_scaled": self.energy_scaled,
            "geometry": self.geometry,
            "structure_mismatch": self.structure_mismatch,
            "seed": self.seed,
        }
        if path is not None:
            with open(path, "w") as fh:
                json.dump(doc, fh, indent=1)
        return doc


def _axial_presolve(n, trap, scales, rng):
    """1-D equilibrium along z with x = y = 0; robust seed for chains."""
    cz = trap.scaled_curvatures(scales)[2]
    k = scales.coulomb
    if isinstance(trap, AnharmonicAxialTrap):
        a2s, a4s = trap.scaled_axial_coefficients(scales)
    else:
        a2s, a4s = cz, 0.0
    if a2s > 0:
        s0 = (2.0 * k / a2s) ** (1.0 / 3.0) * max(n, 2) ** -0.56 * 2.0
    else:
        s0 = (4.0 * k / (a4s * max(n, 2) ** 2)) ** 0.2
    z = s0 * (np.arange(n) - 0.5 * (n - 1))
    z += 1e-4 * s0 * rng.standard_normal(n)

    def grad(zz):
        dzz = zz[:, None] - zz[None, :]
        np.fill_diagonal(dzz, np.inf)
        g = a2s * zz + a4s * zz ** 3 - k * np.sum(np.sign(dzz) / dzz ** 2, axis=1)
        return g

    def energy(zz):
        dzz = np.abs(zz[:, None] - zz[None, :])
        np.fill_diagonal(dzz, np.inf)
        return np.sum(0.5 * a2s * zz ** 2 + 0.25 * a4s * zz ** 4) \
            + 0.5 * k * np.sum(1.0 / dzz)

    res = optimize.minimize(energy, z, jac=grad, method="BFGS",
                            options={"gtol": 1e-12, "maxiter": 20000})
    return np.sort(res.x)


def _hex_disk(n, spacing, rng):
    """Triangular-lattice disk of n sites, centered, with small jitter."""
    pts = [(0.0, 0.0)]
    shell = 1
    while len(pts) < 4 * n:
        for i in range(6):
            a0 = np.pi / 3 * i
            a1 = np.pi / 3 * (i + 1)
            p0 = shell * np.array([np.cos(a0), np.sin(a0)])
            p1 = shell * np.array([np.cos(a1), np.sin(a1)])
            for t in range(shell):
                p = p0 + (p1 - p0) * (t / shell)
                pts.append((p[0], p[1]))
        shell += 1
    pts = np.array(pts) * spacing
    order = np.argsort(np.hypot(pts[:, 0], pts[:, 1]), kind="stable")
    pts = pts[order[:n]]
    return pts + 0.02 * spacing * rng.standard_normal(pts.shape)


def _initial_guess(n, trap, scales, rng):
    geometry, axis = trap.expected_geometry(n)
    curv = trap.scaled_curvatures(scales)
    k = scales.coulomb
    pos = np.zeros(3 * n)
    if geometry == "linear":
        z = _axial_presolve(n, trap, scales, rng)
        pos[2 * n:] = z
        pos[:2 * n] = 1e-5 * rng.standard_normal(2 * n)
        return pos
    if geometry == "planar":
        in_plane = [a for a in range(3) if a != axis]
        cmin = min(curv[in_plane])
        # spacing from the local force balance at density ~ 1/a^2
        a0 = (k / cmin) ** (1.0 / 3.0) * 1.3 * max(n, 2) ** -0.08
        pts = _hex_disk(n, a0, rng)
        pos[in_plane[0] * n:(in_plane[0] + 1) * n] = pts[:, 0]
        pos[in_plane[1] * n:(in_plane[1] + 1) * n] = pts[:, 1]
        pos[axis * n:(axis + 1) * n] = 1e-5 * a0 * rng.standard_normal(n)
        return pos
    a0 = (k / np.min(curv)) ** (1.0 / 3.0)
    return a0 * max(n, 2) ** (1.0 / 3.0) * rng.standard_normal(3 * n)


def _derive_geometry(pos, n, flat_tol=1e-7):
    """Classify the solved structure from per-axis extents.

    'linear' with the chain axis, 'planar' with the flat (normal) axis, or
    '3d'.  The distinguished axis is the drumhead direction for planar
    crystals and the chain direction for linear ones.
    """
    if n == 1:
        return "linear", 2
    xyz = pos.reshape(3, n)
    extents = xyz.max(axis=1) - xyz.min(axis=1)
    scale = max(np.max(extents), 1e-30)
    flat = extents < flat_tol * scale
    if np.sum(~flat) == 1:
        return "linear", int(np.argmax(~flat))
    if np.sum(flat) == 1:
        return "planar", int(np.argmax(flat))
    return "3d", None


def find_equilibrium(trap, n_ions, scales=None, seed=0, initial=None,
                     gtol=1e-11, max_newton=60):
    """Find a crystal equilibrium by minimizing the scaled potential.

    Deterministic for fixed ``seed``.  Raises ConvergenceError (carrying the
    best iterate) if the gradient norm cannot be brought below 1e-10.

    Parameters
    ----------
    trap : HarmonicTrap | AnharmonicAxialTrap | PenningTrap
    n_ions : int
    scales : ScaleSet, optional
        Defaults to ``default_scales(trap)``.
    initial : array, optional
        Warm start (3N scaled coordinates); skips the lattice guess.
    """
    if n_ions < 1:
        raise ConfigError("need at least one ion")
    if scales is None:
        scales = default_scales(trap)
    rng = np.random.Generator(np.random.Philox(seed))
    if n_ions == 1:
        pos = np.zeros(3)
    else:
        pos = np.asarray(initial, float).copy() if initial is not None \
            else _initial_guess(n_ions, trap, scales, rng)

        res = optimize.minimize(
            scaled_potential, pos, args=(trap, scales), jac=scaled_gradient,
            method="BFGS", options={"gtol": 1e-9, "maxiter": 50000})
        pos = res.x
        # damped Newton polish down to machine-level gradient norms
        for _ in range(max_newton):
            g = scaled_gradient(pos, trap, scales)
            gn = np.linalg.norm(g)
            if gn < gtol:
                break
            h = scaled_hessian(pos, trap, scales)
            step = np.linalg.lstsq(h, -g, rcond=None)[0]
            u0 = scaled_potential(pos, trap, scales)
            t = 1.0
            while t > 1e-6:
                trial = pos + t * step
                if scaled_potential(trial, trap, scales) <= u0 + 1e-15 * abs(u0):
                    pos = trial
                    break
                t *= 0.5
            else:
                break

    residual = float(np.linalg.norm(scaled_gradient(pos, trap, scales)))
    if residual >= 1e-10:
        raise ConvergenceError(
            f"equilibrium gradient norm {residual:.3e} did not reach 1e-10",
            best=pos, residual=residual)

    expected, _ = trap.expected_geometry(n_ions)
    geometry, axis = _derive_geometry(pos, n_ions)
    # zig-zag collapse (or unplanned buckling) of the intended structure
    mismatch = n_ions > 1 and geometry != expected

    # canonical ordering: sort along the distinguished axis, then lexicographic
    if n_ions > 1:
        xyz = pos.reshape(3, n_ions)
        key_axis = axis if axis is not None else 2
        if geometry == "planar":
            # order within the plane instead of along the flat normal
            in_plane = [a for a in range(3) if a != key_axis]
            order = np.lexsort((np.round(xyz[in_plane[1]], 9),
                                np.round(xyz[in_plane[0]], 9)))
        else:
            order = np.lexsort((xyz[(key_axis + 2) % 3],
                                xyz[(key_axis + 1) % 3],
                                np.round(xyz[key_axis], 9)))
        pos = xyz[:, order].reshape(-1)

    return Equilibrium(
        positions=pos, scales=scales, trap=trap,
        residual_gradient_norm=residual,
        energy_scaled=float(scaled_potential(pos, trap, scales)),
        geometry=geometry, distinguished_axis=axis,
        structure_mismatch=mismatch, seed=seed)


def procrustes_residual(pos_a, pos_b):
    """Relative misfit of two configurations after the best rotation+scale.

    Both arguments are flat (3N,) position arrays with the same layout.
    Returns ||s R A - B|| / ||B|| minimized over orthogonal R and scale s.
    """
    a = np.asarray(pos_a, float).reshape(3, -1)
    b = np.asarray(pos_b, float).reshape(3, -1)
    m = b @ a.T
    u, sv, vt = np.linalg.svd(m)
    rot = u @ vt
    scale = np.sum(sv) / np.sum(a * a)
    resid = np.linalg.norm(scale * rot @ a - b) / np.linalg.norm(b)
    return resid
