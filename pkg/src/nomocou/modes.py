"""Normal-mode analysis in the Hamiltonian formalism.

From a converged equilibrium this module builds the quadratic energy matrix
``E = [[K, 0], [0, M]]`` over (positions, velocities), the canonical map
``T = [[I, 0], [B, M]]`` to (positions, momenta) (``B`` nonzero only for
Penning traps, with diagonal momentum coupling ``(q B - 2 m omega_rot)/2``),
the Hamiltonian matrix ``H = T^-T E T^-1``, and the dynamical matrix
``D = J H``.  A symplectic transform ``S`` (``S^T J S = J``) diagonalizes
``H`` to ``diag(w, w)``, and ``A = S^-1 T`` maps (positions, velocities)
directly to the canonical mode coordinates ``(Q_1..Q_3N, P_1..P_3N)`` in
which each mode carries energy ``(w_n/2)(Q_n^2 + P_n^2)`` (units of E0).

Mode-phase convention: the eigenvector phase is fixed so the largest
position-space component of each mode lands in the Q column with positive
sign (magnitude ties break toward the highest coordinate index), which
makes cubic coefficients reproducible run to run.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .crystal import PenningTrap, scaled_hessian
from .errors import ConfigError, InstabilityError

BRANCH_AXIAL = "axial"
BRANCH_RADIAL = ("radial-x", "radial-y", "radial-z")
BRANCH_EXB = "planar-ExB"
BRANCH_CYCLOTRON = "planar-cyclotron"
BRANCH_UNCLASSIFIED = "unclassified"


@dataclass
class ModeSpectrum:
    """3N normal modes: frequencies (units of omega0), transforms, labels."""

    frequencies: np.ndarray          # (3N,), ascending
    symplectic_transform: np.ndarray  # S, (6N, 6N)
    composite_transform: np.ndarray   # A = S^-1 T, (6N, 6N)
    branch_labels: list
    diag_residual: float
    symplectic_residual: float
    equilibrium: object

    @property
    def n_modes(self):
        return self.frequencies.size

    def frequencies_si(self):
        return self.frequencies * self.equilibrium.scales.omega0

    def to_mode_coordinates(self, delta_positions, delta_velocities):
        """Map scaled displacement/velocity deltas to (Q, P), each (3N,)."""
        x = np.concatenate([delta_positions, delta_velocities])
        z = self.composite_transform @ x
        n = self.n_modes
        return z[:n], z[n:]

    def from_mode_coordinates(self, q, p):
        """Inverse of ``to_mode_coordinates``."""
        z = np.concatenate([q, p])
        x = np.linalg.solve(self.composite_transform, z)
        n = self.n_modes
        return x[:n], x[n:]

    def mode_energies(self, delta_positions, delta_velocities):
        """Per-mode energies (w/2)(Q^2+P^2) in units of E0."""
        q, p = self.to_mode_coordinates(delta_positions, delta_velocities)
        return 0.5 * self.frequencies * (q ** 2 + p ** 2)

    def to_csv(self, path):
        w0 = self.equilibrium.scales.omega0
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["index", "frequency_units_omega0", "frequency_MHz",
                         "branch"])
            for i, (w, lbl) in enumerate(zip(self.frequencies,
                                             self.branch_labels)):
                wr.writerow([i, f"{w:.12g}", f"{w * w0 / (2e6 * np.pi):.9g}", lbl])


def symplectic_form(n3):
    j = np.zeros((2 * n3, 2 * n3))
    j[:n3, n3:] = np.eye(n3)
    j[n3:, :n3] = -np.eye(n3)
    return j


def stiffness_matrix(eq):
    """Hessian of the scaled potential at equilibrium, (3N, 3N), E0 units.

    Raises if the equilibrium residual violates its contract.
    """
    if eq.residual_gradient_norm >= 1e-10:
        raise ConfigError("equilibrium is not converged to 1e-10")
    return scaled_hessian(eq.positions, eq.trap, eq.scales)


def canonical_map(eq):
    """The (positions, velocities) -> (positions, momenta) matrix T."""
    n = eq.n_ions
    mass = eq.masses_scaled()
    t = np.zeros((6 * n, 6 * n))
    t[:3 * n, :3 * n] = np.eye(3 * n)
    t[3 * n:, 3 * n:] = np.diag(np.repeat(mass, 3))
    if isinstance(eq.trap, PenningTrap):
        c = eq.trap.magnetic_coupling(eq.scales, n)
        t[3 * n:4 * n, n:2 * n] = np.diag(c)      # p_x picks up +c*y
        t[4 * n:5 * n, :n] = np.diag(-c)          # p_y picks up -c*x
    return t


def hamiltonian_matrix(eq, k=None):
    """H = T^-T E T^-1 over (positions, momenta)."""
    n = eq.n_ions
    if k is None:
        k = stiffness_matrix(eq)
    mass3 = np.repeat(eq.masses_scaled(), 3)
    e = np.zeros((6 * n, 6 * n))
    e[:3 * n, :3 * n] = k
    e[3 * n:, 3 * n:] = np.diag(mass3)
    tinv = np.linalg.inv(canonical_map(eq))
    return tinv.T @ e @ tinv


def _anchor_index(pos):
    """Index of the largest-magnitude component; near-ties (symmetry-related
    components) break toward the highest coordinate index for determinism."""
    mags = np.abs(pos)
    cands = np.nonzero(mags >= (1.0 - 1e-9) * np.max(mags))[0]
    return int(cands[-1])


def _phase_fix(u, n3):
    """Rotate a complex eigenvector so its anchor position component is
    real positive; returns (x, y) = (Re u, Im u)."""
    pos = u[:n3]
    a = _anchor_index(pos)
    ph = np.angle(pos[a])
    u = u * np.exp(-1j * ph)
    if u[:n3][a].real < 0:
        u = -u
    return u.real.copy(), u.imag.copy()


def _williamson(h, n3, freq_tol=1e-10):
    """Symplectic eigvecs of positive-definite H: returns (w, S) with
    S^T H S = diag(w, w) and S^T J S = J."""
    j = symplectic_form(n3)
    d = j @ h
    lam, vec = np.linalg.eig(d)
    scale = np.max(np.abs(lam))
    bad = np.abs(lam.real) > 1e-7 * scale
    if np.any(bad):
        k = int(np.argmax(np.abs(lam.real)))
        raise InstabilityError(
            f"dynamically unstable configuration: eigenvalue {lam[k]:.6g} "
            f"(mode near |w|={abs(lam[k].imag):.6g}) has nonzero real part",
            mode_index=k, growth_rate=float(lam[k].real))
    keep = lam.imag > 0
    w = lam.imag[keep]
    v = vec[:, keep]
    order = np.argsort(w, kind="stable")
    w = w[order]
    v = v[:, order]

    # orthonormalize degenerate groups in the H inner product (for vectors in
    # one eigenspace, H- and J-orthogonality coincide)
    groups = []
    start = 0
    for i in range(1, w.size + 1):
        if i == w.size or (w[i] - w[start]) > freq_tol * max(w[start], 1.0):
            groups.append((start, i))
            start = i
    for a, b in groups:
        if b - a == 1:
            continue
        block = v[:, a:b]
        for c in range(b - a):
            u = block[:, c]
            for cprev in range(c):
                up = block[:, cprev]
                u = u - up * (up.conj() @ h @ u) / (up.conj() @ h @ up)
            block[:, c] = u
        # deterministic order inside the group: by position-support index
        support = [int(np.argmax(np.abs(block[:n3, c]))) for c in range(b - a)]
        v[:, a:b] = block[:, np.argsort(support, kind="stable")]

    s = np.zeros((2 * n3, 2 * n3))
    for k in range(n3):
        x, y = _phase_fix(v[:, k], n3)
        sigma = x @ j @ y
        if sigma < 0:
            y = -y
            sigma = -sigma
        if sigma <= 0:
            raise InstabilityError(
                f"defective symplectic structure at mode {k}", mode_index=k)
        s[:, k] = x / np.sqrt(sigma)
        s[:, n3 + k] = y / np.sqrt(sigma)
    return w, s


def _symmetric_modes(k, mass3, n3):
    """Fast path for B = 0: generalized symmetric eigenproblem K v = w^2 M v."""
    sm = np.sqrt(mass3)
    kw = k / sm[:, None] / sm[None, :]
    w2, vec = np.linalg.eigh(kw)
    if w2[0] < -1e-10 * max(abs(w2[-1]), 1.0):
        raise InstabilityError(
            f"negative stiffness eigenvalue {w2[0]:.6g}: configuration is a "
            "saddle (zig-zag or structural instability)",
            mode_index=0, growth_rate=float(np.sqrt(-min(w2[0], 0.0))))
    w = np.sqrt(np.clip(w2, 0.0, None))
    v = vec / sm[:, None]          # K v = w^2 M v with v^T M v = 1
    s = np.zeros((2 * n3, 2 * n3))
    for kmode in range(n3):
        vk = v[:, kmode].copy()
        if vk[_anchor_index(vk)] < 0:
            vk = -vk
        wk = w[kmode]
        if wk <= 0:
            raise InstabilityError("zero-frequency mode in rf spectrum",
                                   mode_index=kmode)
        s[:n3, kmode] = vk / np.sqrt(wk)
        s[n3:, n3 + kmode] = mass3 * vk * np.sqrt(wk)
    return w, s


def normal_modes(eq, force_general=False):
    """Diagonalize the linearized dynamics of an equilibrium.

    Returns a ModeSpectrum with frequencies ascending, the symplectic
    transform S, the composite transform A = S^-1 T, and branch labels.
    Raises InstabilityError when any dynamical eigenvalue has a real part.
    """
    n = eq.n_ions
    n3 = 3 * n
    k = stiffness_matrix(eq)
    h = hamiltonian_matrix(eq, k)
    if isinstance(eq.trap, PenningTrap) or force_general:
        w, s = _williamson(h, n3)
    else:
        w, s = _symmetric_modes(k, np.repeat(eq.masses_scaled(), 3), n3)

    j = symplectic_form(n3)
    sympl_res = float(np.max(np.abs(s.T @ j @ s - j)))
    hdiag = s.T @ h @ s
    target = np.diag(np.concatenate([w, w]))
    diag_res = float(np.max(np.abs(hdiag - target)))
    spec = ModeSpectrum(
        frequencies=w, symplectic_transform=s,
        composite_transform=np.linalg.solve(s, canonical_map(eq)),
        branch_labels=[BRANCH_UNCLASSIFIED] * n3,
        diag_residual=diag_res, symplectic_residual=sympl_res,
        equilibrium=eq)
    spec.branch_labels = classify_branches(spec, eq)
    return spec


def mode_position_support(spec, mode):
    """Fraction of the mode's position-space weight on each Cartesian axis."""
    n = spec.n_modes // 3
    s = spec.symplectic_transform
    w = np.zeros(3)
    for col in (mode, spec.n_modes + mode):
        comp = s[:3 * n, col]
        for a in range(3):
            w[a] += np.sum(comp[a * n:(a + 1) * n] ** 2)
    total = np.sum(w)
    return w / total if total > 0 else w


def classify_branches(spec, eq, dominance=0.99):
    """Per-mode branch labels.

    'axial' means motion along the distinguished axis (the chain axis for
    linear crystals, the plane normal for 2D crystals, i.e. the drumhead
    direction).  Penning in-plane modes are split into the low-frequency
    E x B branch and the high-frequency cyclotron branch by comparing with
    the axial band.  Ambiguous support gives 'unclassified', never an error.
    """
    n3 = spec.n_modes
    axis = eq.distinguished_axis if eq.distinguished_axis is not None else 2
    supports = [mode_position_support(spec, m) for m in range(n3)]
    labels = [BRANCH_UNCLASSIFIED] * n3

    if isinstance(eq.trap, PenningTrap):
        axial = [supports[m][axis] > 0.5 for m in range(n3)]
        ax_freqs = spec.frequencies[np.array(axial)] if any(axial) else \
            np.array([np.inf])
        lo, hi = np.min(ax_freqs), np.max(ax_freqs)
        for m in range(n3):
            if axial[m]:
                labels[m] = BRANCH_AXIAL
            elif spec.frequencies[m] > hi:
                labels[m] = BRANCH_CYCLOTRON
            elif spec.frequencies[m] < lo:
                labels[m] = BRANCH_EXB
        return labels

    for m in range(n3):
        sup = supports[m]
        best = int(np.argmax(sup))
        if sup[best] < dominance:
            continue
        labels[m] = BRANCH_AXIAL if best == axis else BRANCH_RADIAL[best]
    return labels


def reconstruct_hamiltonian(spec):
    """(S^-1)^T diag(w, w) S^-1; equals H for a faithful spectrum."""
    sinv = np.linalg.inv(spec.symplectic_transform)
    w = np.concatenate([spec.frequencies, spec.frequencies])
    return sinv.T @ np.diag(w) @ sinv
