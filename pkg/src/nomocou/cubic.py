"""Third-order (cubic) expansion of the crystal potential.

The Coulomb potential contributes third derivatives only through pair
separations, so the Cartesian rank-3 tensor is stored pair-factorized: for
each ion pair a 3x3x3 kernel of derivatives with respect to the first ion's
coordinates, from which any entry follows by sign bookkeeping.  Entries with
three distinct ion indices vanish identically.  An anharmonic axial trap
adds per-ion diagonal z^3 kernels.

All tensors are derivatives of the potential in units of E0 (the same
normalization as the stiffness matrix): they are ``1/POTENTIAL_RESCALE``
times derivatives of ``crystal.total_potential``.

The mode-basis transform contracts the (zero-padded) Cartesian tensor with
three copies of ``A^-1`` where ``A`` maps (positions, velocities) to the
canonical mode coordinates ``(Q, P)``.  Mode-tensor values are the symmetric
third derivatives ``T^{XYZ}_{nmp}`` entering the cubic energy as
``(1/6) sum T^{XYZ}_{nmp} X_n Y_m Z_p`` with X, Y, Z in {Q, P}.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .crystal import AnharmonicAxialTrap, scaled_potential
from .errors import ConfigError

STORAGE_FLOOR = 1e-14   # relative magnitude floor for stored mode entries


def _pair_kernels(positions, pairs, coulomb):
    """3x3x3 third-derivative kernels d^3(kappa/r)/dq_i^3 for each pair."""
    n = positions.size // 3
    xyz = positions.reshape(3, n)
    d = xyz[:, pairs[:, 0]] - xyz[:, pairs[:, 1]]   # (3, P)
    r = np.sqrt(np.sum(d ** 2, axis=0))
    r5 = r ** -5
    r7 = r ** -7
    eye = np.eye(3)
    # 3(delta_ab d_c + delta_ac d_b + delta_bc d_a)/r^5 - 15 d_a d_b d_c/r^7
    ker = (3.0 * (eye[:, :, None, None] * d[None, None, :, :]
                  + eye[:, None, :, None] * d[None, :, None, :]
                  + eye[None, :, :, None] * d[:, None, None, :]) * r5
           - 15.0 * d[:, None, None, :] * d[None, :, None, :]
           * d[None, None, :, :] * r7)
    return coulomb * np.transpose(ker, (3, 0, 1, 2))   # (P, 3, 3, 3)


@dataclass
class CartesianTressian:
    """Rank-3 symmetric tensor of third potential derivatives, E0 units.

    ``pairs``/``pair_kernels`` hold the two-ion Coulomb part; ``site_ions``/
    ``site_kernels`` hold single-ion trap anharmonicity.  The full entry for
    flat Cartesian indices (axis*N + ion) is assembled on demand.
    """

    n_ions: int
    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), int))
    pair_kernels: np.ndarray = field(default_factory=lambda: np.zeros((0, 3, 3, 3)))
    site_ions: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    site_kernels: np.ndarray = field(default_factory=lambda: np.zeros((0, 3, 3, 3)))

    def __add__(self, other):
        if self.n_ions != other.n_ions:
            raise ConfigError("tensor ion counts differ")
        return CartesianTressian(
            n_ions=self.n_ions,
            pairs=np.vstack([self.pairs, other.pairs]),
            pair_kernels=np.vstack([self.pair_kernels, other.pair_kernels]),
            site_ions=np.concatenate([self.site_ions, other.site_ions]),
            site_kernels=np.vstack([self.site_kernels, other.site_kernels]))

    @property
    def nnz_structural(self):
        """Count of structurally nonzero Cartesian entries; O(N^2)."""
        return 27 * (8 * len(self.pairs) + len(self.site_ions))

    def entry(self, a, b, c):
        """Tensor entry for flat Cartesian indices (axis*N + ion)."""
        n = self.n_ions
        axes = (a // n, b // n, c // n)
        ions = (a % n, b % n, c % n)
        distinct = sorted(set(ions))
        val = 0.0
        if len(distinct) == 1:
            i = distinct[0]
            for p, (pi, pj) in enumerate(self.pairs):
                if pi == i:
                    val += self.pair_kernels[p][axes]
                elif pj == i:
                    val -= self.pair_kernels[p][axes]
            for s, si in enumerate(self.site_ions):
                if si == i:
                    val += self.site_kernels[s][axes]
            return val
        if len(distinct) == 2:
            i, j = distinct
            for p, (pi, pj) in enumerate(self.pairs):
                if (pi, pj) == (i, j) or (pi, pj) == (j, i):
                    nj = sum(1 for q in ions if q == pj)
                    val += (-1.0) ** nj * self.pair_kernels[p][axes]
            return val
        return 0.0

    def to_dense(self):
        """Full (3N, 3N, 3N) array; for small systems and tests only."""
        n = self.n_ions
        t = np.zeros((3 * n, 3 * n, 3 * n))
        for p, (i, j) in enumerate(self.pairs):
            ker = self.pair_kernels[p]
            for sa, ia in ((1.0, i), (-1.0, j)):
                for sb, ib in ((1.0, i), (-1.0, j)):
                    for sc, ic in ((1.0, i), (-1.0, j)):
                        t[np.ix_(ia + n * np.arange(3),
                                 ib + n * np.arange(3),
                                 ic + n * np.arange(3))] += sa * sb * sc * ker
        for s, i in enumerate(self.site_ions):
            idx = i + n * np.arange(3)
            t[np.ix_(idx, idx, idx)] += self.site_kernels[s]
        return t

    def cubic_energy(self, delta):
        """(1/6) sum T_abc d_a d_b d_c for a displacement delta (3N,)."""
        n = self.n_ions
        d3 = np.asarray(delta).reshape(3, n)
        val = 0.0
        if len(self.pairs):
            dd = d3[:, self.pairs[:, 0]] - d3[:, self.pairs[:, 1]]  # (3, P)
            val += np.einsum("pabc,ap,bp,cp->", self.pair_kernels, dd, dd, dd)
        if len(self.site_ions):
            ds = d3[:, self.site_ions]
            val += np.einsum("sabc,as,bs,cs->", self.site_kernels, ds, ds, ds)
        return val / 6.0


def coulomb_tressian(eq):
    """Third derivatives of the scaled Coulomb energy at equilibrium."""
    if eq.residual_gradient_norm >= 1e-10:
        raise ConfigError("equilibrium is not converged to 1e-10")
    n = eq.n_ions
    ii, jj = np.triu_indices(n, k=1)
    pairs = np.stack([ii, jj], axis=1)
    if len(pairs) == 0:
        return CartesianTressian(n_ions=n)
    kernels = _pair_kernels(eq.positions, pairs, eq.scales.coulomb)
    return CartesianTressian(n_ions=n, pairs=pairs, pair_kernels=kernels)


def trap_tressian(trap, eq):
    """Third derivatives of the trap potential; nonzero only for the
    quartic axial trap, where the single entry per ion is 6*a4*z_i (scaled)."""
    n = eq.n_ions
    if not isinstance(trap, AnharmonicAxialTrap):
        return CartesianTressian(n_ions=n)
    _, a4s = trap.scaled_axial_coefficients(eq.scales)
    z = eq.positions[2 * n:]
    kernels = np.zeros((n, 3, 3, 3))
    kernels[:, 2, 2, 2] = 6.0 * a4s * z
    return CartesianTressian(n_ions=n, site_ions=np.arange(n),
                             site_kernels=kernels)


# ---------------------------------------------------------------------------
# mode basis


class ModeTensorEvaluator:
    """Targeted mode-basis contraction of a Cartesian Tressian.

    Precomputes, for every pair and axis, the difference of ``A^-1`` position
    rows across the pair; a mode-tensor entry is then a single weighted sum
    over pairs.  Scales to large crystals where the dense (6N)^3 tensor is
    out of reach.
    """

    def __init__(self, cart, spec):
        self.cart = cart
        self.spec = spec
        n = cart.n_ions
        if spec.n_modes != 3 * n:
            raise ConfigError("tensor / spectrum ion counts differ")
        binv = np.linalg.inv(spec.composite_transform)   # (6N, 6N)
        w = binv[:3 * n, :]                              # position rows
        wr = w.reshape(3, n, 6 * n)
        if len(cart.pairs):
            self.gdiff = wr[:, cart.pairs[:, 0], :] - wr[:, cart.pairs[:, 1], :]
            # closed-form Coulomb contraction helpers: the pair kernel is
            # kappa*(3(d_a d_bc + perm)/r^5 - 15 d_a d_b d_c / r^7), so a
            # triple contraction reduces to dot products with d
            eq = spec.equilibrium
            xyz = eq.positions.reshape(3, n)
            d = xyz[:, cart.pairs[:, 0]] - xyz[:, cart.pairs[:, 1]]  # (3,P)
            r = np.sqrt(np.sum(d ** 2, axis=0))
            kap = eq.scales.coulomb
            self._r5 = (3.0 * kap * r ** -5)[:, None]
            self._r7 = (15.0 * kap * r ** -7)[:, None]
            self._ddotg = np.einsum("ap,apc->pc", d, self.gdiff)  # (P, 6N)
        else:
            self.gdiff = np.zeros((3, 0, 6 * n))
        if len(cart.site_ions):
            self.gsite = wr[:, cart.site_ions, :]
        else:
            self.gsite = np.zeros((3, 0, 6 * n))

    def value(self, c1, c2, c3):
        """Symmetric mode-tensor entry for phase-space columns (c1, c2, c3);
        columns 0..3N-1 are Q_n, columns 3N..6N-1 are P_n."""
        return self.values(np.array([[c1, c2, c3]]))[0]

    def values(self, col_triples, chunk=8192):
        """Batch of entries; ``col_triples`` is (T, 3) int."""
        cols = np.asarray(col_triples, int)
        out = np.zeros(len(cols))
        for lo in range(0, len(cols), chunk):
            sl = cols[lo:lo + chunk]
            if len(self.cart.pairs):
                x = self.gdiff[:, :, sl[:, 0]]
                y = self.gdiff[:, :, sl[:, 1]]
                z = self.gdiff[:, :, sl[:, 2]]
                dx = self._ddotg[:, sl[:, 0]]
                dy = self._ddotg[:, sl[:, 1]]
                dz = self._ddotg[:, sl[:, 2]]
                xy = np.sum(x * y, axis=0)
                xz = np.sum(x * z, axis=0)
                yz = np.sum(y * z, axis=0)
                contrib = self._r5 * (xy * dz + xz * dy + yz * dx) \
                    - self._r7 * (dx * dy * dz)
                out[lo:lo + chunk] += contrib.sum(axis=0)
            if len(self.cart.site_ions):
                s1 = self.gsite[:, :, sl[:, 0]]
                s2 = self.gsite[:, :, sl[:, 1]]
                s3 = self.gsite[:, :, sl[:, 2]]
                out[lo:lo + chunk] += np.einsum(
                    "sabc,asT,bsT,csT->T", self.cart.site_kernels, s1, s2, s3,
                    optimize=True)
        return out

    def triple_patterns(self, n, m, p):
        """All 8 quadrature patterns for one mode triple.

        Returns dict mapping (c1, c2, c3) sorted column triples to values.
        """
        nm = self.spec.n_modes
        combos = [(a, b, c)
                  for a in (n, n + nm) for b in (m, m + nm)
                  for c in (p, p + nm)]
        combos = sorted({tuple(sorted(t)) for t in combos})
        vals = self.values(np.array(combos))
        return dict(zip(combos, vals))


def _multiplicity(cols):
    a, b, c = cols
    if a == b == c:
        return 1
    if a == b or b == c or a == c:
        return 3
    return 6


@dataclass
class CubicModeTensor:
    """Sparse cubic coefficients in normal-mode coordinates (units of E0).

    Keys are sorted phase-space column triples (Q_n -> n, P_n -> n + 3N);
    values are the symmetric derivatives T^{XYZ}_{nmp}.  The 1/6 in the
    cubic energy is NOT folded into stored values: the polynomial
    coefficient of a monomial is ``value * multiplicity / 6``, exposed as
    ``monomial_coefficient``.
    """

    n_modes: int
    entries: dict

    def entry(self, c1, c2, c3):
        return self.entries.get(tuple(sorted((c1, c2, c3))), 0.0)

    def monomial_coefficient(self, cols):
        """Coefficient of the monomial prod(cols) in the cubic energy."""
        key = tuple(sorted(cols))
        return self.entries.get(key, 0.0) * _multiplicity(key) / 6.0

    def mode_triple(self, key):
        return tuple(sorted(c % self.n_modes for c in key))

    def triple_patterns(self, n, m, p):
        """Stored patterns for one mode triple: {(c1,c2,c3): value}."""
        want = tuple(sorted((n, m, p)))
        return {k: v for k, v in self.entries.items()
                if self.mode_triple(k) == want}

    def max_abs_for_triple(self, n, m, p):
        pats = self.triple_patterns(n, m, p)
        return max((abs(v) for v in pats.values()), default=0.0)

    def pattern_string(self, key):
        return "".join("Q" if c < self.n_modes else "P" for c in key)

    def to_csv(self, path, scales=None):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            fh.write("# cubic mode-basis tensor, units of E0; symmetric "
                     "value convention, polynomial coefficient = value *"
                     " multiplicity / 6\n")
            wr.writerow(["n", "m", "p", "pattern", "value"])
            for key in sorted(self.entries):
                nmp = [c % self.n_modes for c in key]
                wr.writerow([*nmp, self.pattern_string(key),
                             f"{self.entries[key]:.15g}"])


def to_mode_basis(cart, spec, floor=STORAGE_FLOOR):
    """Dense mode-basis transform for small systems.

    Contracts the padded Cartesian tensor with three factors of ``A^-1`` and
    stores entries above ``floor`` (relative to the largest magnitude).
    """
    ev = ModeTensorEvaluator(cart, spec)
    nm = spec.n_modes
    dense = np.zeros((2 * nm, 2 * nm, 2 * nm))
    if len(cart.pairs):
        dense += np.einsum("pabc,apx,bpy,cpz->xyz", cart.pair_kernels,
                           ev.gdiff, ev.gdiff, ev.gdiff, optimize=True)
    if len(cart.site_ions):
        dense += np.einsum("sabc,asx,bsy,csz->xyz", cart.site_kernels,
                           ev.gsite, ev.gsite, ev.gsite, optimize=True)
    cut = floor * max(np.max(np.abs(dense)), 1e-300)
    entries = {}
    idx = np.argwhere(np.abs(dense) > cut)
    for a, b, c in idx:
        if not (a <= b <= c):
            continue
        entries[(int(a), int(b), int(c))] = float(dense[a, b, c])
    return CubicModeTensor(n_modes=nm, entries=entries)


def mode_tensor_evaluator(eq, spec, include_trap=True):
    """Lazy mode-basis evaluator for the full cubic tensor of a crystal."""
    cart = coulomb_tressian(eq)
    if include_trap:
        cart = cart + trap_tressian(eq.trap, eq)
    return ModeTensorEvaluator(cart, spec)


def cubic_model_energy(eq, k, cart, delta):
    """Quadratic + cubic Taylor energy for a displacement from equilibrium."""
    return 0.5 * delta @ k @ delta + cart.cubic_energy(delta)


def taylor_residual_order(eq, k, cart, direction, hs):
    """log-log slope of |U(x0+h*d) - U0 - E2 - E3| vs h; 4.0 for a faithful
    cubic model."""
    u0 = scaled_potential(eq.positions, eq.trap, eq.scales)
    res = []
    for h in hs:
        delta = h * direction
        du = scaled_potential(eq.positions + delta, eq.trap, eq.scales) - u0
        res.append(abs(du - cubic_model_energy(eq, k, cart, delta)))
    res = np.array(res)
    slope = np.polyfit(np.log(hs), np.log(res), 1)[0]
    return slope, res
