"""Classical integrators and diagnostics.

Molecular dynamics runs in scaled units (lengths in l0, time in 1/omega0);
rf crystals use velocity Verlet in the lab frame, Penning crystals a
cyclotronic scheme in the co-rotating frame where the combined magnetic and
Coriolis force is a pure velocity rotation applied exactly.  Mode-space
initialization and per-mode energy readout go through the composite
transform of the mode spectrum, so they work identically for both trap
families.

The reduced-model integrator evolves an arbitrary polynomial Hamiltonian in
canonical coordinates with a doubled-variable explicit symplectic scheme
(two phase-space copies advanced through exactly solvable half-flows, bound
by a rotation in the difference coordinates).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import constants as const
from .crystal import PenningTrap, scaled_gradient, scaled_potential
from .errors import ConfigError, IntegrationError


@dataclass
class PhaseSpaceState:
    """Scaled positions/velocities of the crystal at one instant."""

    positions: np.ndarray     # (3N,), units of l0
    velocities: np.ndarray    # (3N,), units of l0*omega0
    frame: str                # 'lab' | 'rotating'
    time: float               # seconds
    scales: object

    def copy(self):
        return PhaseSpaceState(self.positions.copy(), self.velocities.copy(),
                               self.frame, self.time, self.scales)


@dataclass
class Trajectory:
    """Strided samples of an integration run."""

    times: np.ndarray         # (S,), seconds
    positions: np.ndarray     # (S, 3N) scaled
    velocities: np.ndarray    # (S, 3N) scaled
    frame: str
    scales: object
    dt: float                 # seconds
    stride: int
    seed: int | None = None

    def mode_energies(self, spec, eq):
        """Per-mode energies over the trajectory, shape (S, 3N), joules."""
        a = spec.composite_transform
        n3 = spec.n_modes
        dx = np.hstack([self.positions - eq.positions[None, :],
                        self.velocities])
        z = dx @ a.T
        e_scaled = 0.5 * spec.frequencies * (z[:, :n3] ** 2 + z[:, n3:] ** 2)
        return e_scaled * self.scales.E0

    def mode_energy_summary(self, spec, eq):
        """(mean, std) of each mode's energy in kelvin (E/k_B)."""
        e = self.mode_energies(spec, eq) / const.K_BOLTZMANN
        return e.mean(axis=0), e.std(axis=0)

    def save_npz(self, path, **metadata):
        np.savez_compressed(path, times=self.times, positions=self.positions,
                            velocities=self.velocities, frame=self.frame,
                            dt=self.dt, stride=self.stride,
                            seed=self.seed if self.seed is not None else -1,
                            **metadata)


def init_modes(spec, eq, energies_joule=None, temperature_K=None,
               phases=None, seed=0):
    """State with prescribed per-mode energies.

    Either ``temperature_K`` (every mode at k_B T) or ``energies_joule``
    (per-mode array) must be given.  Phases are uniform on [0, 2pi) from the
    seeded generator unless passed explicitly.  For Penning crystals the
    returned velocities are already rotating-frame quantities because the
    composite transform is built in that frame.
    """
    n3 = spec.n_modes
    if temperature_K is not None:
        e_scaled = np.full(n3, const.K_BOLTZMANN * temperature_K / eq.scales.E0)
    elif energies_joule is not None:
        e_scaled = np.asarray(energies_joule, float) / eq.scales.E0
        if e_scaled.size != n3:
            raise ConfigError("need one energy per mode")
    else:
        raise ConfigError("give temperature_K or energies_joule")
    if np.any(e_scaled < 0):
        raise ConfigError("mode energy targets must be nonnegative")
    if phases is None:
        rng = np.random.Generator(np.random.Philox(seed))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=n3)
    amp = np.sqrt(2.0 * e_scaled / spec.frequencies)
    q = amp * np.cos(phases)
    p = amp * np.sin(phases)
    dx, dv = spec.from_mode_coordinates(q, p)
    frame = "rotating" if isinstance(eq.trap, PenningTrap) else "lab"
    return PhaseSpaceState(positions=eq.positions + dx, velocities=dv,
                           frame=frame, time=0.0, scales=eq.scales)


def _rotation_rate(trap, scales):
    """Velocity-rotation rate (q B - 2 m omega_rot)/m in scaled units."""
    c = trap.magnetic_coupling(scales, 1)[0]
    return 2.0 * c    # same-species: mu = 1


def _total_energy(pos, vel, trap, scales):
    return 0.5 * np.sum(vel ** 2) + scaled_potential(pos, trap, scales)


def integrate_md(state, trap, dt, steps, stride=100, energy_check=5000,
                 seed=None):
    """Full nonlinear molecular dynamics.

    Parameters
    ----------
    state : PhaseSpaceState
    trap : trap configuration (selects the integrator)
    dt : float
        Time step in seconds.
    steps : int
        Number of steps.
    stride : int
        Sampling stride for the returned trajectory.
    energy_check : int
        Interval for the instability monitor; a > 10% jump of the conserved
        energy aborts with IntegrationError.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    scales = state.scales
    h = dt * scales.omega0
    pos = state.positions.copy()
    vel = state.velocities.copy()
    penning = isinstance(trap, PenningTrap)
    if penning:
        omega_eff = _rotation_rate(trap, scales)
        th = omega_eff * h
        cth, sth = np.cos(th), np.sin(th)
        if abs(th) > 1e-12:
            int_c, int_s = np.sin(th) / omega_eff, (1.0 - np.cos(th)) / omega_eff
        else:
            int_c, int_s = h, 0.0

    n_samples = steps // stride + 1
    times = np.empty(n_samples)
    pos_out = np.empty((n_samples, pos.size))
    vel_out = np.empty((n_samples, pos.size))

    def record(k, istep):
        times[k] = state.time + istep * dt
        pos_out[k] = pos
        vel_out[k] = vel

    record(0, 0)
    e_ref = _total_energy(pos, vel, trap, scales)
    e_kin0 = max(0.5 * np.sum(vel ** 2), 1e-30)
    accel = -scaled_gradient(pos, trap, scales)
    n = pos.size // 3
    k_out = 1
    for istep in range(1, steps + 1):
        if penning:
            # half kick from potential forces, exact rotation drift, half kick
            vel += 0.5 * h * accel
            vx, vy = vel[:n].copy(), vel[n:2 * n].copy()
            pos[:n] += int_c * vx - int_s * vy
            pos[n:2 * n] += int_s * vx + int_c * vy
            pos[2 * n:] += h * vel[2 * n:]
            vel[:n] = cth * vx - sth * vy
            vel[n:2 * n] = sth * vx + cth * vy
            accel = -scaled_gradient(pos, trap, scales)
            vel += 0.5 * h * accel
        else:
            vel += 0.5 * h * accel
            pos += h * vel
            accel = -scaled_gradient(pos, trap, scales)
            vel += 0.5 * h * accel
        if istep % energy_check == 0:
            e_now = _total_energy(pos, vel, trap, scales)
            if not np.isfinite(e_now) or \
                    abs(e_now - e_ref) > 0.1 * (abs(e_ref) + e_kin0):
                raise IntegrationError(
                    f"energy jumped {e_now - e_ref:.3e} at step {istep}; "
                    "reduce dt", time_reached=state.time + istep * dt)
        if istep % stride == 0:
            record(k_out, istep)
            k_out += 1

    return Trajectory(times=times[:k_out], positions=pos_out[:k_out],
                      velocities=vel_out[:k_out], frame=state.frame,
                      scales=scales, dt=dt, stride=stride, seed=seed)


def rotating_frame_shift(traj, omega_rot_scaled, to_lab=True):
    """Rotate a trajectory between the rotating and lab frames.

    ``omega_rot_scaled`` is the signed rotation rate in units of omega0.
    The transform is its own inverse with the opposite ``to_lab`` flag.
    """
    sgn = 1.0 if to_lab else -1.0
    n = traj.positions.shape[1] // 3
    tau = traj.times * traj.scales.omega0
    ang = sgn * omega_rot_scaled * tau
    c, s = np.cos(ang)[:, None], np.sin(ang)[:, None]
    x, y = traj.positions[:, :n], traj.positions[:, n:2 * n]
    vx, vy = traj.velocities[:, :n], traj.velocities[:, n:2 * n]
    # velocity transform includes the frame's sweep term
    vx_f = vx - sgn * omega_rot_scaled * y
    vy_f = vy + sgn * omega_rot_scaled * x
    out = Trajectory(times=traj.times.copy(),
                     positions=traj.positions.copy(),
                     velocities=traj.velocities.copy(),
                     frame="lab" if to_lab else "rotating",
                     scales=traj.scales, dt=traj.dt, stride=traj.stride,
                     seed=traj.seed)
    out.positions[:, :n] = c * x - s * y
    out.positions[:, n:2 * n] = s * x + c * y
    out.velocities[:, :n] = c * vx_f - s * vy_f
    out.velocities[:, n:2 * n] = s * vx_f + c * vy_f
    return out


# ---------------------------------------------------------------------------
# polynomial reduced models


class PolynomialHamiltonian:
    """H(q, p) = sum_k c_k * prod_i q_i^a_ki * prod_i p_i^b_ki.

    Gradient rows are pre-expanded at construction so each evaluation is a
    single vectorized power-product: this sits in the inner loop of the
    symplectic integrator.
    """

    def __init__(self, n_dof, terms):
        """``terms``: list of (coeff, exponents) with exponents a length
        2*n_dof iterable over (q_1..q_n, p_1..p_n)."""
        self.n_dof = n_dof
        self.coeffs = np.array([t[0] for t in terms], float)
        self.expo = np.array([t[1] for t in terms], int)
        if self.expo.ndim != 2 or self.expo.shape[1] != 2 * n_dof:
            raise ConfigError("exponent rows must have length 2*n_dof")
        g_coeff, g_expo, g_var = [], [], []
        for c, ex in zip(self.coeffs, self.expo):
            for i in np.nonzero(ex)[0]:
                row = ex.copy()
                row[i] -= 1
                g_coeff.append(c * ex[i])
                g_expo.append(row)
                g_var.append(i)
        self._g_coeff = np.array(g_coeff)
        self._g_expo = np.array(g_expo, int).reshape(len(g_coeff), 2 * n_dof)
        self._g_var = np.array(g_var, int)

    def value(self, z):
        z = np.asarray(z, float)
        return float(np.sum(self.coeffs * np.prod(z[None, :] ** self.expo,
                                                  axis=1)))

    def gradient(self, z):
        z = np.asarray(z, float)
        prods = self._g_coeff * np.prod(z[None, :] ** self._g_expo, axis=1)
        return np.bincount(self._g_var, weights=prods,
                           minlength=2 * self.n_dof)


def harmonic_terms(frequencies):
    """(w/2)(Q^2 + P^2) term list for a set of reduced modes."""
    n = len(frequencies)
    terms = []
    for i, w in enumerate(frequencies):
        eq = [0] * (2 * n)
        ep = [0] * (2 * n)
        eq[i] = 2
        ep[n + i] = 2
        terms.append((0.5 * w, eq))
        terms.append((0.5 * w, ep))
    return terms


def reduced_hamiltonian_terms(spec, mode_tensor, mode_indices):
    """Harmonic + cubic polynomial terms restricted to a mode subset.

    Local coordinate order is (Q_1..Q_k, P_1..P_k) following
    ``mode_indices``; cubic monomial coefficients carry the 1/6 bookkeeping
    of the mode tensor.
    """
    idx = list(mode_indices)
    k = len(idx)
    terms = harmonic_terms([spec.frequencies[i] for i in idx])
    nm = mode_tensor.n_modes
    for key, val in mode_tensor.entries.items():
        kmodes = [c % nm for c in key]
        if not all(m in idx for m in kmodes):
            continue
        ex = [0] * (2 * k)
        for c in key:
            local = idx.index(c % nm)
            ex[local if c < nm else k + local] += 1
        coeff = mode_tensor.monomial_coefficient(key)
        terms.append((coeff, ex))
    return terms


def integrate_crm(hamiltonian, z0, dt, steps, stride=1, omega_mix=None,
                  drift_tol=None, extended=False):
    """Doubled-variable explicit symplectic integration of a polynomial
    Hamiltonian (order 2).

    The state is copied into two phase-space images advanced by the exactly
    solvable cross flows H(q, p~) and H(x~, p); a rotation of the difference
    coordinates with rate ``omega_mix`` keeps the copies bound.  Returns
    (times, states) with states (S, 2n) sampled every ``stride`` steps; the
    composition is palindromic, so with ``extended=True`` (which also
    returns and accepts the 4n doubled state) a run is exactly
    reversible by flipping both momenta copies.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    n = hamiltonian.n_dof
    z0 = np.asarray(z0, float)
    if z0.size not in (2 * n, 4 * n):
        raise ConfigError("state must have 2*n_dof entries "
                          "(or 4*n_dof including the shadow copy)")
    if omega_mix is None:
        omega_mix = 0.05 / dt    # ~0.1 rad of copy-binding rotation per step
    if z0.size == 4 * n:
        q, p = z0[:n].copy(), z0[n:2 * n].copy()
        x, y = z0[2 * n:3 * n].copy(), z0[3 * n:].copy()
    else:
        q, p = z0[:n].copy(), z0[n:].copy()
        x, y = q.copy(), p.copy()

    def flow_a(delta):
        nonlocal p, x
        g = hamiltonian.gradient(np.concatenate([q, y]))
        p -= delta * g[:n]
        x += delta * g[n:]

    def flow_b(delta):
        nonlocal q, y
        g = hamiltonian.gradient(np.concatenate([x, p]))
        y -= delta * g[:n]
        q += delta * g[n:]

    def flow_c(delta):
        nonlocal q, p, x, y
        th = 2.0 * omega_mix * delta
        c, s = np.cos(th), np.sin(th)
        dq, dp = q - x, p - y
        sq, sp = q + x, p + y
        rq = c * dq + s * dp
        rp = -s * dq + c * dp
        q, p = 0.5 * (sq + rq), 0.5 * (sp + rp)
        x, y = 0.5 * (sq - rq), 0.5 * (sp - rp)

    n_samples = steps // stride + 1
    out = np.empty((n_samples, 2 * n))
    times = np.empty(n_samples)
    out[0] = z0
    times[0] = 0.0
    e0 = hamiltonian.value(z0)
    k_out = 1
    for istep in range(1, steps + 1):
        flow_a(dt / 2)
        flow_b(dt / 2)
        flow_c(dt)
        flow_b(dt / 2)
        flow_a(dt / 2)
        if istep % stride == 0:
            z = np.concatenate([q, p])
            out[k_out] = z
            times[k_out] = istep * dt
            k_out += 1
    if drift_tol is not None:
        ef = hamiltonian.value(out[k_out - 1])
        scale = max(abs(e0), 1e-30)
        if abs(ef - e0) > drift_tol * scale:
            raise IntegrationError(
                f"Hamiltonian drift {abs(ef - e0) / scale:.3e} exceeds "
                f"{drift_tol:.1e}", time_reached=times[k_out - 1])
    if extended:
        return times[:k_out], out[:k_out], np.concatenate([q, p, x, y])
    return times[:k_out], out[:k_out]


def reduced_mode_energies(frequencies, states):
    """(w/2)(Q^2+P^2) per reduced mode for CRM states (S, 2n)."""
    n = len(frequencies)
    w = np.asarray(frequencies)
    return 0.5 * w * (states[:, :n] ** 2 + states[:, n:] ** 2)
