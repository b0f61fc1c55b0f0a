import numpy as np
import pytest

from nomocou import classical, constants as const, crystal, cubic, modes, units
from nomocou.classical import (PolynomialHamiltonian, harmonic_terms,
                               init_modes, integrate_crm, integrate_md,
                               reduced_mode_energies, rotating_frame_shift)
from nomocou.errors import ConfigError, IntegrationError

TWO_PI = 2 * np.pi


def test_init_modes_zero_targets_returns_equilibrium(small_chain):
    eq, spec = small_chain
    st = init_modes(spec, eq, energies_joule=np.zeros(spec.n_modes))
    assert np.array_equal(st.positions, eq.positions)
    assert np.max(np.abs(st.velocities)) == 0.0


def test_init_modes_single_mode_energy_projection(small_chain):
    eq, spec = small_chain
    target = np.zeros(spec.n_modes)
    k = 7
    target[k] = const.K_BOLTZMANN * 100e-6
    st = init_modes(spec, eq, energies_joule=target, seed=5)
    e = spec.mode_energies(st.positions - eq.positions, st.velocities)
    e_j = e * eq.scales.E0
    assert abs(e_j[k] / target[k] - 1) < 0.01
    others = np.delete(e_j, k)
    assert np.max(others) < 1e-3 * target[k]


def test_init_modes_validation(small_chain):
    eq, spec = small_chain
    with pytest.raises(ConfigError):
        init_modes(spec, eq, energies_joule=-np.ones(spec.n_modes))
    with pytest.raises(ConfigError):
        init_modes(spec, eq)


def test_single_ion_period_exact_over_100_cycles():
    trap = crystal.HarmonicTrap(species=units.CA40, omega_x=TWO_PI * 2e6,
                                omega_y=TWO_PI * 1.5e6, omega_z=TWO_PI * 1e6)
    eq = crystal.find_equilibrium(trap, 1)
    st = classical.PhaseSpaceState(positions=np.array([0, 0, 1e-3]),
                                   velocities=np.zeros(3), frame="lab",
                                   time=0.0, scales=eq.scales)
    period = TWO_PI / trap.omega_z
    steps_per = 1000
    dt = period / steps_per
    traj = integrate_md(st, trap, dt, 100 * steps_per, stride=steps_per // 2)
    z = traj.positions[:, 2]
    # quadratic-fit the final maximum to locate the turning point
    k = np.argmax(z[-3:]) - 3 + len(z)
    tt = traj.times[k - 1:k + 2]
    zz = z[k - 1:k + 2]
    a, b, _ = np.polyfit(tt - tt[0], zz, 2)
    t_max = tt[0] - b / (2 * a)
    n_per = round(t_max / period)
    assert abs(t_max / (n_per * period) - 1) < 1e-8


def test_md_energy_conservation_vs_half_step():
    trap = crystal.HarmonicTrap(species=units.YB171, omega_x=TWO_PI * 3e6,
                                omega_y=TWO_PI * 2.7e6, omega_z=TWO_PI * 0.5e6)
    eq = crystal.find_equilibrium(trap, 5, seed=1)
    spec = modes.normal_modes(eq)
    st = init_modes(spec, eq, temperature_K=200e-6, seed=2)
    e0 = classical._total_energy(st.positions, st.velocities, trap, eq.scales)

    def drift(dt, steps):
        traj = integrate_md(st.copy(), trap, dt, steps, stride=steps)
        ef = classical._total_energy(traj.positions[-1], traj.velocities[-1],
                                     trap, eq.scales)
        return abs(ef - e0) / abs(e0)

    d1 = drift(2e-9, 20000)
    d2 = drift(1e-9, 40000)
    assert d1 < 1e-6
    assert d2 < d1


def test_md_convergence_order_dt_squared():
    trap = crystal.HarmonicTrap(species=units.YB171, omega_x=TWO_PI * 3e6,
                                omega_y=TWO_PI * 2.7e6, omega_z=TWO_PI * 0.5e6)
    eq = crystal.find_equilibrium(trap, 3, seed=1)
    spec = modes.normal_modes(eq)
    st = init_modes(spec, eq, temperature_K=100e-6, seed=3)
    t_end = 2e-6
    ref = integrate_md(st.copy(), trap, t_end / 32768, 32768, stride=32768)
    errs = []
    dts = []
    for n in (1024, 2048, 4096):
        traj = integrate_md(st.copy(), trap, t_end / n, n, stride=n)
        errs.append(np.max(np.abs(traj.positions[-1] - ref.positions[-1])))
        dts.append(t_end / n)
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert abs(slope - 2.0) < 0.1


def test_momentum_of_unexcited_com_stays_zero(small_chain):
    eq, spec = small_chain
    # excite everything except the three COM modes
    w0 = eq.scales.omega0
    com = [int(np.argmin(np.abs(spec.frequencies - w / w0)))
           for w in (eq.trap.omega_x, eq.trap.omega_y, eq.trap.omega_z)]
    energies = np.full(spec.n_modes, const.K_BOLTZMANN * 100e-6)
    energies[com] = 0.0
    st = init_modes(spec, eq, energies_joule=energies, seed=4)
    traj = integrate_md(st, eq.trap, 1e-9, 5000, stride=1000)
    mom = traj.velocities[:, 2 * eq.n_ions:].sum(axis=1)
    assert np.max(np.abs(mom)) < 1e-10


def test_md_instability_detection():
    trap = crystal.HarmonicTrap(species=units.YB171, omega_x=TWO_PI * 3e6,
                                omega_y=TWO_PI * 2.7e6, omega_z=TWO_PI * 0.5e6)
    eq = crystal.find_equilibrium(trap, 3, seed=1)
    spec = modes.normal_modes(eq)
    st = init_modes(spec, eq, temperature_K=100e-6, seed=3)
    with pytest.raises(IntegrationError):
        # badly oversized step at the radial frequency
        integrate_md(st, trap, 2e-7, 20000, stride=1000, energy_check=1000)


def test_linearized_mode_energy_constant(small_chain):
    # a synthesized pure-mode trajectory (exact linear flow) has constant
    # mode energy under the transform bookkeeping
    eq, spec = small_chain
    k = 4
    amp = 1e-3
    taus = np.linspace(0.0, 40.0, 60)
    n3 = spec.n_modes
    pos = np.empty((len(taus), n3))
    vel = np.empty((len(taus), n3))
    for i, tau in enumerate(taus):
        q = np.zeros(n3)
        p = np.zeros(n3)
        q[k] = amp * np.cos(spec.frequencies[k] * tau)
        p[k] = -amp * np.sin(spec.frequencies[k] * tau)
        dx, dv = spec.from_mode_coordinates(q, p)
        pos[i] = eq.positions + dx
        vel[i] = dv
    traj = classical.Trajectory(times=taus / eq.scales.omega0,
                                positions=pos, velocities=vel, frame="lab",
                                scales=eq.scales, dt=1.0, stride=1)
    e = traj.mode_energies(spec, eq)[:, k]
    assert np.max(np.abs(e / e[0] - 1)) < 1e-10


def test_penning_frame_roundtrip_identity(small_planar):
    rf_eq, _ = small_planar
    pen = crystal.penning_matching_trap(rf_eq.trap, units.BE9,
                                        omega_z=TWO_PI * 1.58e6,
                                        b_field=4.4588)
    eq = crystal.find_equilibrium(pen, 7, seed=3)
    spec = modes.normal_modes(eq)
    st = init_modes(spec, eq, temperature_K=100e-6, seed=5)
    assert st.frame == "rotating"
    traj = integrate_md(st, pen, 1e-9, 2000, stride=500)
    wrot = pen.omega_rot / eq.scales.omega0
    lab = rotating_frame_shift(traj, wrot, to_lab=True)
    back = rotating_frame_shift(lab, wrot, to_lab=False)
    assert np.max(np.abs(back.positions - traj.positions)) < 1e-12
    assert np.max(np.abs(back.velocities - traj.velocities)) < 1e-12


def test_penning_md_conserves_rotating_frame_energy(small_planar):
    rf_eq, _ = small_planar
    pen = crystal.penning_matching_trap(rf_eq.trap, units.BE9,
                                        omega_z=TWO_PI * 1.58e6,
                                        b_field=4.4588)
    eq = crystal.find_equilibrium(pen, 7, seed=3)
    spec = modes.normal_modes(eq)
    st = init_modes(spec, eq, temperature_K=100e-6, seed=6)
    e0 = classical._total_energy(st.positions, st.velocities, pen, eq.scales)
    traj = integrate_md(st, pen, 5e-10, 40000, stride=40000)
    ef = classical._total_energy(traj.positions[-1], traj.velocities[-1],
                                 pen, eq.scales)
    assert abs(ef - e0) / abs(e0) < 1e-6


def test_penning_mode_energies_constant_in_linear_regime(small_planar):
    # cyclotronic integrator + symplectic transform agree: a tiny thermal
    # state keeps each rotating-frame mode energy constant
    rf_eq, _ = small_planar
    pen = crystal.penning_matching_trap(rf_eq.trap, units.BE9,
                                        omega_z=TWO_PI * 1.58e6,
                                        b_field=4.4588)
    eq = crystal.find_equilibrium(pen, 7, seed=3)
    spec = modes.normal_modes(eq)
    target = np.zeros(spec.n_modes)
    target[5] = 1e-12 * eq.scales.E0
    st = init_modes(spec, eq, energies_joule=target, seed=1)
    traj = integrate_md(st, pen, 2e-10, 20000, stride=1000)
    e = traj.mode_energies(spec, eq)[:, 5]
    assert np.max(np.abs(e / e[0] - 1)) < 1e-4


def test_crm_pure_harmonic_rotation():
    ham = PolynomialHamiltonian(1, harmonic_terms([1.3]))
    z0 = np.array([0.7, 0.2])
    dt = 1e-3
    steps = int(round(TWO_PI / 1.3 / dt))
    times, states = integrate_crm(ham, z0, dt, steps)
    # after one period the orbit closes to integrator order
    t_exact = times[-1]
    q = z0[0] * np.cos(1.3 * t_exact) + z0[1] * np.sin(1.3 * t_exact)
    assert abs(states[-1, 0] - q) < 1e-5


def test_crm_time_reversal(two_ion_resonant):
    eq, spec, mt = two_ion_resonant
    terms = classical.reduced_hamiltonian_terms(spec, mt, [0, 3])
    ham = PolynomialHamiltonian(2, terms)
    z0 = np.array([4e-3, 0.0, 1e-3, 2e-3])
    dt = 5e-3
    flip = np.array([1, 1, -1, -1, 1, 1, -1, -1], float)
    _, _, ext = integrate_crm(ham, z0, dt, 4000, stride=4000, extended=True)
    _, back, ext2 = integrate_crm(ham, ext * flip, dt, 4000, stride=4000,
                                  extended=True)
    z_back = (ext2 * flip)[:4]
    assert np.max(np.abs(z_back - z0)) < 1e-9


def test_crm_hamiltonian_drift_bound(two_ion_resonant):
    eq, spec, mt = two_ion_resonant
    terms = classical.reduced_hamiltonian_terms(spec, mt, [0, 3])
    ham = PolynomialHamiltonian(2, terms)
    z0 = np.array([4e-3, 0.0, 0.0, 0.0])
    dur = 50e-6 * eq.scales.omega0      # the exchange-figure duration
    dt = 2e-4
    _, states = integrate_crm(ham, z0, dt, int(dur / dt), stride=10000,
                              drift_tol=1e-8)
    assert abs(ham.value(states[-1]) - ham.value(z0)) \
        < 1e-8 * abs(ham.value(z0))


def test_crm_matches_independent_rk_oracle():
    # generic 2-dof cubic Hamiltonian against scipy at tight tolerance
    from scipy.integrate import solve_ivp
    terms = harmonic_terms([1.0, 2.0]) + [(0.5, (2, 0, 0, 1))]
    ham = PolynomialHamiltonian(2, terms)
    z0 = np.array([0.14, 0.0, 0.0, 0.0])

    def rhs(t, z):
        g = ham.gradient(z)
        return np.concatenate([g[2:], -g[:2]])

    t_end = 40.0
    sol = solve_ivp(rhs, (0, t_end), z0, method="DOP853", rtol=1e-12,
                    atol=1e-14)
    dt = 2 * np.pi / 3000
    steps = int(np.ceil(t_end / dt))
    _, states = integrate_crm(ham, z0, dt, steps, stride=steps,
                              omega_mix=4.0)
    assert np.max(np.abs(states[-1] - sol.y[:, -1])) < 2e-6


def test_trajectory_persistence(tmp_path, small_chain):
    eq, spec = small_chain
    st = init_modes(spec, eq, temperature_K=50e-6, seed=0)
    traj = integrate_md(st, eq.trap, 1e-9, 1000, stride=500, seed=0)
    path = tmp_path / "traj.npz"
    traj.save_npz(path, species="Ca40")
    data = np.load(path)
    assert data["positions"].shape == traj.positions.shape
    assert data["dt"] == 1e-9
    assert str(data["species"]) == "Ca40"
