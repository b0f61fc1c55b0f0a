import numpy as np
import pytest

from nomocou import crystal, cubic, modes, units
from nomocou.crystal import HarmonicTrap, AnharmonicAxialTrap, POTENTIAL_RESCALE

TWO_PI = 2 * np.pi


def _third_fd(pos, trap, scales, a, b, c, h=4e-4):
    """Third derivative of the (E0-normalized) potential by central FD."""
    def u(q):
        return crystal.total_potential(q, trap, scales) / POTENTIAL_RESCALE
    ea = np.zeros(pos.size)
    eb = np.zeros(pos.size)
    ec = np.zeros(pos.size)
    ea[a] = h
    eb[b] = h
    ec[c] = h
    val = 0.0
    for sa in (1, -1):
        for sb in (1, -1):
            for sc in (1, -1):
                val += sa * sb * sc * u(pos + sa * ea + sb * eb + sc * ec)
    return val / (8 * h ** 3)


def test_permutation_symmetry_dense(small_chain):
    eq, _ = small_chain
    t = cubic.coulomb_tressian(eq).to_dense()
    assert np.max(np.abs(t - np.transpose(t, (1, 0, 2)))) < 1e-12
    assert np.max(np.abs(t - np.transpose(t, (0, 2, 1)))) < 1e-12
    assert np.max(np.abs(t - np.transpose(t, (2, 0, 1)))) < 1e-12


def test_three_distinct_ion_entries_vanish(small_chain):
    eq, _ = small_chain
    cart = cubic.coulomb_tressian(eq)
    n = eq.n_ions
    # axis z for three different ions
    assert cart.entry(2 * n + 0, 2 * n + 1, 2 * n + 2) == 0.0


def test_geometric_zero_blocks_linear_and_planar(small_chain, small_planar):
    eq, _ = small_chain
    cart = cubic.coulomb_tressian(eq)
    n = eq.n_ions
    dense = cart.to_dense()
    # linear chain: T_xxx and T_yyy vanish identically; radial-axial blocks
    # T_xxz, T_yyz survive
    scale = np.max(np.abs(dense))
    assert np.max(np.abs(dense[:n, :n, :n])) < 1e-9 * scale
    assert np.max(np.abs(dense[n:2 * n, n:2 * n, n:2 * n])) < 1e-9 * scale
    assert np.max(np.abs(dense[:n, :n, 2 * n:])) > 1e-3 * scale
    # x-y cross blocks are forbidden
    assert np.max(np.abs(dense[:n, :n, n:2 * n])) < 1e-9 * scale

    eqp, _ = small_planar
    cartp = cubic.coulomb_tressian(eqp)
    m = eqp.n_ions
    densep = cartp.to_dense()
    # crystal in the y-z plane: any block with exactly one x index vanishes,
    # in particular the three-distinct-axis block T_xyz
    assert np.max(np.abs(densep[:m, m:2 * m, 2 * m:])) \
        < 1e-9 * np.max(np.abs(densep))


def test_tressian_matches_third_finite_differences():
    trap = HarmonicTrap(species=units.CA40, omega_x=TWO_PI * 1.7e6,
                        omega_y=TWO_PI * 0.6e6, omega_z=TWO_PI * 0.5e6)
    eq = crystal.find_equilibrium(trap, 3, seed=12)
    cart = cubic.coulomb_tressian(eq)
    rng = np.random.default_rng(4)
    n3 = 9
    for _ in range(25):
        a, b, c = rng.integers(0, n3, 3)
        fd = _third_fd(eq.positions, trap, eq.scales, a, b, c)
        val = cart.entry(a, b, c)
        # 1e-5 relative, with an absolute floor at the FD noise level
        assert abs(val - fd) < 1e-5 * max(10.0, abs(fd))


def test_trap_tressian_cases():
    # harmonic trap: no cubic contribution
    trap = HarmonicTrap(species=units.YB171, omega_x=TWO_PI * 3e6,
                        omega_y=TWO_PI * 2.5e6, omega_z=TWO_PI * 0.5e6)
    eq = crystal.find_equilibrium(trap, 3, seed=0)
    assert cubic.trap_tressian(trap, eq).nnz_structural == 0

    # quartic axial trap: only diagonal zzz entries, 6*a4*z_i
    sp = units.YB171
    a2 = sp.mass * (TWO_PI * 0.2e6) ** 2
    a4 = a2 / (2.0 * (10e-6) ** 2)
    atrap = AnharmonicAxialTrap(species=sp, omega_x=TWO_PI * 3e6,
                                omega_y=TWO_PI * 2.5e6, a2=a2, a4=a4)
    aeq = crystal.find_equilibrium(atrap, 4, seed=0)
    tt = cubic.trap_tressian(atrap, aeq)
    n = 4
    _, a4s = atrap.scaled_axial_coefficients(aeq.scales)
    z = aeq.positions[2 * n:]
    for i in range(n):
        want = 6.0 * a4s * z[i]
        assert abs(tt.entry(2 * n + i, 2 * n + i, 2 * n + i) - want) < 1e-12
        # ion exactly at z=0 contributes nothing (odd function)
        if abs(z[i]) < 1e-12:
            assert tt.entry(2 * n + i, 2 * n + i, 2 * n + i) == 0.0
        # against finite differences of the full potential
        fd = _third_fd(aeq.positions, atrap, aeq.scales,
                       2 * n + i, 2 * n + i, 2 * n + i)
        full = cubic.coulomb_tressian(aeq) + tt
        assert abs(full.entry(2 * n + i, 2 * n + i, 2 * n + i) - fd) \
            < 1e-5 * max(10.0, abs(fd))


def test_two_ion_mode_coefficients_exact(two_ion_resonant):
    _, spec, mt = two_ion_resonant
    i_t, i_b = 0, 3
    xi = np.sqrt(2.0 * np.sqrt(3.0))
    chi = xi / 3.0
    assert abs(mt.monomial_coefficient((i_t, i_t, i_b)) / xi - 1) < 1e-6
    assert abs(mt.monomial_coefficient((i_b, i_b, i_b)) / (-chi) - 1) < 1e-6
    # closed-form check of the coefficient structure
    w_t, w_b = spec.frequencies[i_t], spec.frequencies[i_b]
    assert abs(xi - np.sqrt(w_b ** 3 / (2 * w_t ** 2))) < 1e-12


def test_zero_cartesian_gives_zero_mode_tensor(two_ion_resonant):
    eq, spec, _ = two_ion_resonant
    empty = cubic.CartesianTressian(n_ions=eq.n_ions)
    mt = cubic.to_mode_basis(empty, spec)
    assert len(mt.entries) == 0


def test_energy_consistency_quartic_residual(small_chain):
    eq, spec = small_chain
    k = modes.stiffness_matrix(eq)
    cart = cubic.coulomb_tressian(eq)
    rng = np.random.default_rng(17)
    hs = np.geomspace(3e-3, 3e-2, 6)
    slopes = []
    for _ in range(20):
        d = rng.standard_normal(3 * eq.n_ions)
        d /= np.linalg.norm(d)
        slope, _ = cubic.taylor_residual_order(eq, k, cart, d, hs)
        slopes.append(slope)
    assert np.all(np.abs(np.array(slopes) - 4.0) < 0.1)


def test_structural_sparsity_scales_quadratically():
    counts = []
    for n in (6, 12, 24):
        trap = HarmonicTrap(species=units.YB171, omega_x=TWO_PI * 6e6,
                            omega_y=TWO_PI * 5.5e6, omega_z=TWO_PI * 0.3e6)
        eq = crystal.find_equilibrium(trap, n, seed=0)
        counts.append(cubic.coulomb_tressian(eq).nnz_structural)
    slope = np.polyfit(np.log([6, 12, 24]), np.log(counts), 1)[0]
    assert abs(slope - 2.0) < 0.15


def test_com_modes_drop_out_of_mode_tensor(small_chain):
    eq, spec = small_chain
    mt = cubic.to_mode_basis(cubic.coulomb_tressian(eq), spec)
    w0 = eq.scales.omega0
    com = [int(np.argmin(np.abs(spec.frequencies - w / w0)))
           for w in (eq.trap.omega_x, eq.trap.omega_y, eq.trap.omega_z)]
    worst = 0.0
    for key, val in mt.entries.items():
        kmodes = {c % mt.n_modes for c in key}
        if kmodes & set(com):
            worst = max(worst, abs(val))
    assert worst < 1e-10


def test_evaluator_matches_dense_transform(small_chain):
    eq, spec = small_chain
    cart = cubic.coulomb_tressian(eq)
    mt = cubic.to_mode_basis(cart, spec)
    ev = cubic.ModeTensorEvaluator(cart, spec)
    rng = np.random.default_rng(2)
    nm = spec.n_modes
    for _ in range(40):
        cols = tuple(sorted(rng.integers(0, 2 * nm, 3)))
        assert abs(ev.value(*cols) - mt.entry(*cols)) < 1e-12


def test_tensor_csv_export(tmp_path, two_ion_resonant):
    _, _, mt = two_ion_resonant
    path = tmp_path / "tensor.csv"
    mt.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("#")
    assert lines[1].split(",") == ["n", "m", "p", "pattern", "value"]
    assert len(lines) > 2
