"""Truncated Fock-space engine for gate and coupling dynamics.

States live on a product register ``(spin ⊗ mode_1 ⊗ ... ⊗ mode_M)`` (two
qubits when spins are present; modes ordered by descending frequency by
convention, bus first).  Hamiltonians are lists of ``(sparse operator,
scalar function of scaled time)`` pairs -- the integrator re-evaluates the
scalars but never rebuilds operators.  All Hamiltonians are expressed in
units of ``hbar * omega0``; time is in units of ``1/omega0``.

Motional dynamics are written in the interaction picture with respect to
``sum_n w_n a_n^dag a_n``: a triad coupling enters as ``coeff * a_n a_m
a_p^dag exp(i Delta t) + h.c.`` and the entangling drive as the quadrature
form ``-sqrt(2) eta Omega_r J_y [x cos(delta t) + p sin(delta t)]`` on the
bus mode.

The drive commutes with the collective-spin y basis, so a gate simulation
splits into at most three motional evolutions, one per J_y eigenvalue;
``MolmerSorensenRun`` exploits that and reassembles exact spin-motional
observables from sector states.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.integrate import solve_ivp

from .classical import PolynomialHamiltonian, integrate_crm, reduced_mode_energies
from .errors import ConfigError, IntegrationError

SQRT2 = math.sqrt(2.0)

# final spin state of the ideal square-pulse loop from |00> is
# (|00> - i|11>)/sqrt(2) in this sign convention (see GateConfig)
_SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]])
# y eigenbasis columns: |0>_y = (|0> - i|1>)/sqrt2 (eigenvalue -1), |1>_y (+1)
_U_Y1 = np.array([[1.0, 1.0], [-1.0j, 1.0j]]) / SQRT2
U_Y2 = np.kron(_U_Y1, _U_Y1)                  # two-qubit y basis, columns
JY_EIGS = np.array([-1.0, 0.0, 0.0, 1.0])     # for columns 00,01,10,11 (y)


def bell_target_y(phase=-0.5 * np.pi):
    """(|00> + e^{i phase}|11>)/sqrt2 expressed in the two-qubit y basis;
    the default phase -pi/2 gives (|00> - i|11>)/sqrt2."""
    t_z = np.zeros(4, complex)
    t_z[0] = 1.0 / SQRT2
    t_z[3] = np.exp(1.0j * phase) / SQRT2
    return U_Y2.conj().T @ t_z


class Register:
    """Operator factory for a mode product space, optionally with 2 qubits."""

    def __init__(self, mode_dims, with_spins=False):
        self.mode_dims = tuple(int(d) for d in mode_dims)
        if any(d < 1 for d in self.mode_dims):
            raise ConfigError("mode cutoffs must be >= 1")
        self.with_spins = with_spins
        self.spin_dim = 4 if with_spins else 1
        self.dim = self.spin_dim * int(np.prod(self.mode_dims))

    def _embed(self, mode, op):
        mats = []
        if self.with_spins:
            mats.append(sparse.identity(4, format="csr"))
        for j, d in enumerate(self.mode_dims):
            mats.append(op if j == mode else sparse.identity(d, format="csr"))
        full = mats[0]
        for m in mats[1:]:
            full = sparse.kron(full, m, format="csr")
        return full

    def destroy(self, mode):
        d = self.mode_dims[mode]
        data = np.sqrt(np.arange(1, d))
        op = sparse.diags(data, offsets=1, format="csr")
        return self._embed(mode, op)

    def create(self, mode):
        return self.destroy(mode).conj().T.tocsr()

    def number(self, mode):
        d = self.mode_dims[mode]
        return self._embed(mode, sparse.diags(np.arange(d), format="csr"))

    def x(self, mode):
        a = self.destroy(mode)
        return ((a + a.conj().T) / SQRT2).tocsr()

    def p(self, mode):
        a = self.destroy(mode)
        return ((a - a.conj().T) * (-1.0j / SQRT2)).tocsr()

    def spin_operator(self, mat4):
        if not self.with_spins:
            raise ConfigError("register has no qubits")
        op = sparse.csr_matrix(mat4)
        full = op
        for d in self.mode_dims:
            full = sparse.kron(full, sparse.identity(d, format="csr"),
                               format="csr")
        return full.tocsr()

    def jy(self):
        jy4 = 0.5 * (np.kron(_SIGMA_Y, np.eye(2)) + np.kron(np.eye(2), _SIGMA_Y))
        return self.spin_operator(jy4)

    def fock_state(self, occupations, spin_index=None):
        if len(occupations) != len(self.mode_dims):
            raise ConfigError("one occupation per mode required")
        idx = 0
        if self.with_spins:
            if spin_index is None:
                raise ConfigError("spin register requires a spin index")
            idx = spin_index
        for n, d in zip(occupations, self.mode_dims):
            if not 0 <= n < d:
                raise ConfigError(f"occupation {n} outside cutoff {d}")
            idx = idx * d + n
        psi = np.zeros(self.dim, complex)
        psi[idx] = 1.0
        return psi

    def coherent_state(self, mode, alpha):
        """Product state: coherent |alpha> in one mode, vacuum elsewhere."""
        vecs = []
        if self.with_spins:
            raise ConfigError("use fock/spin layout explicitly with qubits")
        for j, d in enumerate(self.mode_dims):
            v = np.zeros(d, complex)
            if j == mode:
                n = np.arange(d)
                logs = n * np.log(complex(alpha)) - 0.5 * \
                    np.cumsum(np.log(np.maximum(n, 1)))
                v = np.exp(logs - 0.5 * abs(alpha) ** 2)
                tail = 1.0 - np.sum(np.abs(v) ** 2)
                if tail > 1e-8:
                    raise ConfigError("coherent state truncated too hard; "
                                      "raise the cutoff")
                v /= np.linalg.norm(v)
            else:
                v[0] = 1.0
            vecs.append(v)
        psi = vecs[0]
        for v in vecs[1:]:
            psi = np.kron(psi, v)
        return psi


# ---------------------------------------------------------------------------
# Hamiltonian construction


@dataclass(frozen=True)
class TriadCoupling:
    """One cubic coupling on a register: coeff * a_n a_m a_p^dag e^{i
    Delta t} + h.c.  ``coefficient`` already includes eps0 (units of
    hbar*omega0); n == m encodes a two-mode (parametric) process."""

    modes: tuple
    coefficient: complex
    delta: float = 0.0

    @property
    def g(self):
        """Coupling rate |coefficient| used by diagnostics."""
        return abs(self.coefficient)

    @classmethod
    def from_resonance(cls, triad, eps0, mode_map):
        """Map a scanned ResonanceTriad onto register mode indices."""
        modes = tuple(mode_map[i] for i in (triad.n, triad.m, triad.p))
        return cls(modes=modes, coefficient=eps0 * triad.c_rwa,
                   delta=triad.delta)

    @classmethod
    def from_exchange_period(cls, t_period, modes, delta=0.0):
        """Synthetic coupling whose on-resonance population-exchange period
        (pi / Rabi rate from the lowest coupled Fock pair) equals
        ``t_period`` in units of 1/omega0."""
        n, m, p = modes
        rabi = np.pi / t_period
        g = rabi / SQRT2 if n == m else rabi
        return cls(modes=modes, coefficient=g, delta=delta)

    @classmethod
    def from_tl_parameterization(cls, t_tl, modes, delta=0.0):
        """Synthetic coupling from the nominal two-level period used in the
        three-mode gate studies: g = sqrt(2) pi / t_tl.

        This carries an extra sqrt(2) relative to the bare lowest-pair Rabi
        rate; the factor is calibrated against the published thermal-gate
        fidelity at T_TL = 50000 bus periods.
        """
        return cls(modes=modes, coefficient=SQRT2 * np.pi / t_tl, delta=delta)


def triad_terms(register, couplings):
    """Hamiltonian terms for a list of TriadCouplings."""
    terms = []
    for tc in couplings:
        n, m, p = tc.modes
        op = (register.destroy(n) @ register.destroy(m)
              @ register.create(p)).tocsr()
        coeff = complex(tc.coefficient)
        if tc.delta == 0.0:
            terms.append(((coeff * op + np.conj(coeff) * op.conj().T).tocsr(),
                          None))
        else:
            delta = float(tc.delta)
            terms.append((coeff * op,
                          (lambda t, d=delta: np.exp(1.0j * d * t))))
            terms.append((np.conj(coeff) * op.conj().T.tocsr(),
                          (lambda t, d=delta: np.exp(-1.0j * d * t))))
    return terms


def build_motional_hamiltonian(register, couplings=None, tensor=None,
                               spec=None, eps0=None, mode_map=None, rwa=True):
    """Motional Hamiltonian terms in the interaction picture.

    With ``rwa=True`` pass ``couplings`` (TriadCoupling list).  With
    ``rwa=False`` pass the mode tensor, spectrum, eps0 and a mode_map from
    spectrum mode indices to register modes: every stored cubic monomial is
    expanded into ladder products with their oscillating phases.
    """
    if rwa:
        if couplings is None:
            raise ConfigError("RWA build needs triad couplings")
        for tc in couplings:
            if any(q >= len(register.mode_dims) for q in tc.modes):
                raise ConfigError("triad mode outside register")
        return triad_terms(register, couplings)

    if tensor is None or spec is None or eps0 is None or mode_map is None:
        raise ConfigError("non-RWA build needs tensor, spec, eps0, mode_map")
    nm = tensor.n_modes
    freq = spec.frequencies
    base = eps0 / (2.0 * SQRT2)
    collected = {}
    for key, _ in tensor.entries.items():
        coeff = tensor.monomial_coefficient(key)
        kmodes = [c % nm for c in key]
        if not all(q in mode_map for q in kmodes):
            continue
        slots = []
        for c in key:
            q = c % nm
            reg = mode_map[q]
            if c < nm:     # Q = (a + a^dag)/sqrt2 * eps0
                slots.append(((1.0, reg, "a", -freq[q]),
                              (1.0, reg, "ad", +freq[q])))
            else:          # P = -i (a - a^dag)/sqrt2 * eps0
                slots.append(((-1.0j, reg, "a", -freq[q]),
                              (1.0j, reg, "ad", +freq[q])))
        for combo in itertools.product(*slots):
            fac = base * coeff
            ops = []
            phase = 0.0
            for f, reg, kind, w in combo:
                fac *= f
                ops.append((reg, kind))
                phase += w
            key2 = (tuple(ops), round(phase, 12))
            collected[key2] = collected.get(key2, 0.0) + fac
    terms = []
    for (ops, phase), fac in collected.items():
        if abs(fac) < 1e-300:
            continue
        mat = sparse.identity(register.dim, format="csr")
        for reg, kind in ops:
            mat = mat @ (register.destroy(reg) if kind == "a"
                         else register.create(reg))
        mat = (fac * mat).tocsr()
        if phase == 0.0:
            terms.append((mat, None))
        else:
            terms.append((mat, (lambda t, w=phase: np.exp(1.0j * w * t))))
    return terms


@dataclass(frozen=True)
class GateConfig:
    """Square-pulse entangling-gate parameters (scaled units).

    ``delta_gate = 2 pi k / t_gate`` and ``omega_r = delta_gate / (2 sqrt(k)
    eta)`` are fixed by the closed-loop, maximally entangling condition.
    ``target_phase`` is the relative phase of the Bell target
    (|00> + e^{i phase}|11>)/sqrt2 produced by the ideal gate.
    """

    t_gate: float
    loops: int
    eta: float
    bus_index: int = 0
    target_phase: float = -0.5 * np.pi
    detuning_sign: int = 1   # -1 mirrors the drive; ideal Bell phase flips

    def __post_init__(self):
        if self.t_gate <= 0 or self.loops < 1 or self.eta <= 0:
            raise ConfigError("gate needs t_gate > 0, loops >= 1, eta > 0")
        if self.detuning_sign not in (1, -1):
            raise ConfigError("detuning_sign must be +1 or -1")

    @property
    def delta_gate(self):
        return self.detuning_sign * 2.0 * np.pi * self.loops / self.t_gate

    @property
    def omega_r(self):
        return abs(self.delta_gate) / (2.0 * np.sqrt(self.loops) * self.eta)

    @property
    def drive_amplitude(self):
        """sqrt(2) * eta * Omega_r, the quadrature drive prefactor."""
        return SQRT2 * self.eta * self.omega_r

    @classmethod
    def from_bus_periods(cls, n_periods, omega_bus=1.0, loops=1, eta=0.1,
                         bus_index=0):
        """Gate lasting ``n_periods`` bus periods (t_gate in 1/omega0)."""
        return cls(t_gate=n_periods * 2.0 * np.pi / omega_bus, loops=loops,
                   eta=eta, bus_index=bus_index)


def build_ms_hamiltonian(register, gate):
    """Drive terms -sqrt2 eta Omega_r J_y [x cos(dt) + p sin(dt)] on the
    full spin+mode register."""
    if not register.with_spins:
        raise ConfigError("entangling drive requires the qubit register")
    jy = register.jy()
    xop = (jy @ register.x(gate.bus_index)).tocsr()
    pop = (jy @ register.p(gate.bus_index)).tocsr()
    amp = gate.drive_amplitude
    delta = gate.delta_gate
    return [(xop, (lambda t, a=amp, d=delta: -a * np.cos(d * t))),
            (pop, (lambda t, a=amp, d=delta: -a * np.sin(d * t)))]


# ---------------------------------------------------------------------------
# evolution


def evolve(psi0, terms, t_eval, rtol=1e-9, atol=None, norm_tol=1e-8,
           check_norm=True):
    """Schrodinger evolution of a term-list Hamiltonian.

    Adaptive DOP853 with local error ~ rtol; the state is never
    renormalized, and a norm drift beyond ``norm_tol`` raises.
    Returns states at ``t_eval``, shape (T, dim).
    """
    psi0 = np.asarray(psi0, complex)
    t_eval = np.asarray(t_eval, float)
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-10:
        raise ConfigError("initial state must be normalized")
    const_part = None
    tdep = []
    for op, f in terms:
        if f is None:
            const_part = op if const_part is None else const_part + op
        else:
            tdep.append((op, f))
    if const_part is not None:
        const_part = const_part.tocsr()

    def rhs(t, y):
        acc = const_part @ y if const_part is not None else 0.0
        for op, f in tdep:
            acc = acc + f(t) * (op @ y)
        return -1.0j * acc

    if atol is None:
        atol = rtol * 1e-2
    sol = solve_ivp(rhs, (t_eval[0], t_eval[-1]), psi0, t_eval=t_eval,
                    method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationError(f"integration failed: {sol.message}",
                               time_reached=sol.t[-1] if sol.t.size else None)
    states = sol.y.T.copy()
    if check_norm:
        drift = np.max(np.abs(np.linalg.norm(states, axis=1) - 1.0))
        if drift > norm_tol:
            raise IntegrationError(
                f"norm drift {drift:.2e} exceeds {norm_tol:.1e}; tighten rtol",
                time_reached=t_eval[-1])
    return states


def evolve_density(rho0, terms, t_eval, rtol=1e-9, atol=None):
    """Density-matrix propagation rho' = -i[H(t), rho]; oracle for small
    spaces, independent of the pure-state ensemble path."""
    rho0 = np.asarray(rho0, complex)
    dim = rho0.shape[0]
    const_part = None
    tdep = []
    for op, f in terms:
        if f is None:
            const_part = op if const_part is None else const_part + op
        else:
            tdep.append((op.tocsr(), op.T.tocsr(), f))
    if const_part is not None:
        const_left = const_part.tocsr()
        const_right = const_part.T.tocsr()

    def rhs(t, y):
        rho = y.reshape(dim, dim)
        comm = np.zeros((dim, dim), complex)
        if const_part is not None:
            comm += const_left @ rho - (const_right @ rho.T).T
        for op, op_t, f in tdep:
            comm += f(t) * (op @ rho - (op_t @ rho.T).T)
        return (-1.0j * comm).reshape(-1)

    sol = solve_ivp(rhs, (t_eval[0], t_eval[-1]), rho0.reshape(-1),
                    t_eval=t_eval, method="DOP853", rtol=rtol,
                    atol=atol or rtol * 1e-2)
    if not sol.success:
        raise IntegrationError(f"density propagation failed: {sol.message}")
    return [sol.y[:, i].reshape(dim, dim) for i in range(sol.y.shape[1])]


# ---------------------------------------------------------------------------
# observables


def fidelity(state_or_rho, target):
    """Overlap <target|rho|target> (or |<target|psi>|^2)."""
    target = np.asarray(target, complex)
    s = np.asarray(state_or_rho, complex)
    if s.ndim == 1:
        val = abs(np.vdot(target, s)) ** 2
    else:
        val = np.real(np.vdot(target, s @ target))
    return float(min(max(val, 0.0), 1.0 + 1e-12))


def spin_entropy(rho_spin):
    """Base-2 von Neumann entropy of a spin density matrix."""
    lam = np.linalg.eigvalsh(np.asarray(rho_spin))
    lam = lam[lam > 1e-15]
    return float(-np.sum(lam * np.log2(lam)))


# ---------------------------------------------------------------------------
# sector-split entangling-gate runs


@dataclass
class SectorStates:
    """Motional states per J_y eigenvalue; the full state is
    sum_s c_s |s>_y (x) |phi_{m_s}>."""

    times: np.ndarray
    phi: dict                     # m -> (T, dim) complex
    c_y: np.ndarray               # coefficients over the 4 y basis states
    register: Register

    def spin_density(self, k):
        rho = np.zeros((4, 4), complex)
        for s in range(4):
            for sp in range(4):
                fs = self.phi[int(JY_EIGS[s])][k]
                fsp = self.phi[int(JY_EIGS[sp])][k]
                rho[s, sp] = self.c_y[s] * np.conj(self.c_y[sp]) * np.vdot(fsp, fs)
        return rho

    def motional_expectation(self, op, k):
        val = 0.0j
        for s in range(4):
            f = self.phi[int(JY_EIGS[s])][k]
            val += abs(self.c_y[s]) ** 2 * np.vdot(f, op @ f)
        return val

    def branch_expectation(self, op, branch, k):
        """Conditional expectation on the 00_y (m=-1) or 11_y (m=+1) branch."""
        m = {"00_y": -1, "11_y": +1}[branch]
        s = 0 if m == -1 else 3
        f = self.phi[m][k]
        den = abs(self.c_y[s]) ** 2 * np.real(np.vdot(f, f))
        num = abs(self.c_y[s]) ** 2 * np.vdot(f, op @ f)
        return num, den


def ms_sector_run(register, motional_terms, gate, psi_mot0, t_eval,
                  rtol=1e-9):
    """Evolve the three J_y sectors of a gate on a mode-only register."""
    if register.with_spins:
        raise ConfigError("sector run uses the mode-only register")
    xop = register.x(gate.bus_index)
    pop = register.p(gate.bus_index)
    amp = gate.drive_amplitude
    delta = gate.delta_gate
    phi = {}
    for m in (-1, 0, 1):
        if m == 0:
            frozen = True
            for op, f in motional_terms:
                if np.linalg.norm(op @ psi_mot0) > 1e-14 or \
                   np.linalg.norm(op.conj().T @ psi_mot0) > 1e-14:
                    frozen = False
                    break
            if frozen:
                phi[0] = np.repeat(psi_mot0[None, :], len(t_eval), axis=0)
                continue
            terms = motional_terms
        else:
            terms = motional_terms + [
                (xop, (lambda t, a=amp, d=delta, mm=m: -mm * a * np.cos(d * t))),
                (pop, (lambda t, a=amp, d=delta, mm=m: -mm * a * np.sin(d * t)))]
        phi[m] = evolve(psi_mot0, terms, t_eval, rtol=rtol)
    # spins start in |00>_z = (1/2) sum of the four y basis states
    c_y = np.full(4, 0.5, complex)
    return SectorStates(times=np.asarray(t_eval, float), phi=phi, c_y=c_y,
                        register=register)


@dataclass
class EnsembleResult:
    """Gate observables over time, possibly thermally averaged."""

    times: np.ndarray
    fidelity: np.ndarray
    spin_entropy: np.ndarray
    mode_energies: np.ndarray          # (T, M): w_j <n_j> in hbar*omega0
    quadratures: dict                  # branch -> (T, 2) [<x>, <p>]
    backaction: np.ndarray | None
    rho_spin: np.ndarray               # (T, 4, 4) in the y basis
    member_count: int = 1
    weights: np.ndarray = field(default_factory=lambda: np.ones(1))
    metadata: dict = field(default_factory=dict)

    @property
    def final_fidelity(self):
        return float(self.fidelity[-1])

    def to_csv(self, path):
        import csv as _csv
        with open(path, "w", newline="") as fh:
            wr = _csv.writer(fh)
            mcols = [f"mode{j}_energy" for j in range(self.mode_energies.shape[1])]
            qcols = []
            for b in self.quadratures:
                qcols += [f"x_{b}", f"p_{b}"]
            head = ["time", "fidelity", "spin_entropy", *mcols, *qcols]
            if self.backaction is not None:
                head.append("backaction_ratio")
            wr.writerow(head)
            for k, t in enumerate(self.times):
                row = [f"{t:.12g}", f"{self.fidelity[k]:.12g}",
                       f"{self.spin_entropy[k]:.12g}"]
                row += [f"{v:.12g}" for v in self.mode_energies[k]]
                for b in self.quadratures:
                    row += [f"{self.quadratures[b][k, 0]:.12g}",
                            f"{self.quadratures[b][k, 1]:.12g}"]
                if self.backaction is not None:
                    row.append(f"{self.backaction[k]:.12g}")
                wr.writerow(row)


def thermal_weights(nbar, weight_cutoff):
    """Kept (n, weight) list for a thermal mode: geometric weights
    ``nbar^n/(nbar+1)^(n+1)``, truncated once the neglected tail is below
    ``weight_cutoff`` and renormalized over the kept set."""
    if nbar < 0:
        raise ConfigError("nbar must be nonnegative")
    if nbar == 0:
        return [(0, 1.0)]
    ratio = nbar / (nbar + 1.0)
    ns, ws = [], []
    w = 1.0 / (nbar + 1.0)
    cum = 0.0
    n = 0
    while cum < 1.0 - weight_cutoff:
        ns.append(n)
        ws.append(w)
        cum += w
        w *= ratio
        n += 1
        if n > 100000:
            raise ConfigError("thermal weight budget unreachable")
    ws = np.array(ws) / np.sum(ws)
    return list(zip(ns, ws))


def gate_run(mode_dims, couplings, gate, frequencies, t_eval, nbar=None,
             weight_cutoff=1e-3, adaptive_mode=None, adaptive_headroom=3,
             rtol=1e-9, n_jobs=1):
    """Entangling-gate simulation with optional thermal spectator ensemble.

    Parameters
    ----------
    mode_dims : base Fock dimensions per mode (bus first by convention).
    couplings : TriadCoupling list (register mode indices).
    gate : GateConfig.
    frequencies : per-mode frequencies (units of omega0), for energy readout.
    nbar : per-mode thermal occupations (default all zero -> single member).
    adaptive_mode : index whose dimension follows its member occupation as
        ``n + 1 + adaptive_headroom``; defaults to the hottest mode.
    """
    m_modes = len(mode_dims)
    nbar = np.zeros(m_modes) if nbar is None else np.asarray(nbar, float)
    hot = [j for j in range(m_modes) if nbar[j] > 0]
    if adaptive_mode is None and hot:
        adaptive_mode = hot[int(np.argmax(nbar[hot]))]

    members = [(tuple(), 1.0)]
    if hot:
        per_mode = [thermal_weights(nbar[j], weight_cutoff) for j in hot]
        members = []
        for combo in itertools.product(*per_mode):
            occ = tuple(c[0] for c in combo)
            w = float(np.prod([c[1] for c in combo]))
            members.append((occ, w))

    frequencies = np.asarray(frequencies, float)
    t_eval = np.asarray(t_eval, float)
    nt = len(t_eval)

    def run_member(occ):
        dims = list(mode_dims)
        occ_full = [0] * m_modes
        for j, n in zip(hot, occ):
            occ_full[j] = n
            if j == adaptive_mode:
                dims[j] = n + 1 + adaptive_headroom
        reg = Register(dims)
        terms = triad_terms(reg, couplings)
        psi0 = reg.fock_state(occ_full)
        sect = ms_sector_run(reg, terms, gate, psi0, t_eval, rtol=rtol)
        rho = np.array([sect.spin_density(k) for k in range(nt)])
        energies = np.zeros((nt, m_modes))
        for j in range(m_modes):
            nop = reg.number(j)
            for k in range(nt):
                energies[k, j] = frequencies[j] * \
                    np.real(sect.motional_expectation(nop, k))
        quad = {}
        for branch in ("00_y", "11_y"):
            arr = np.zeros((nt, 2))
            den_arr = np.zeros(nt)
            xop, pop = reg.x(gate.bus_index), reg.p(gate.bus_index)
            for k in range(nt):
                nx, den = sect.branch_expectation(xop, branch, k)
                npp, _ = sect.branch_expectation(pop, branch, k)
                arr[k] = [np.real(nx), np.real(npp)]
                den_arr[k] = den
            quad[branch] = (arr, den_arr)
        cb_num = None
        if couplings:
            tc = couplings[0]
            cb = (reg.destroy(tc.modes[0]) @ reg.destroy(tc.modes[1])).tocsr()
            cb_num = np.zeros(nt, complex)
            for k in range(nt):
                num, _ = sect.branch_expectation(cb, "11_y", k)
                cb_num[k] = num
        return rho, energies, quad, cb_num

    if n_jobs != 1 and len(members) > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=n_jobs)(
            delayed(run_member)(occ) for occ, _ in members)
    else:
        results = [run_member(occ) for occ, _ in members]

    rho_spin = np.zeros((nt, 4, 4), complex)
    energies = np.zeros((nt, m_modes))
    quad_num = {b: np.zeros((nt, 2)) for b in ("00_y", "11_y")}
    quad_den = {b: np.zeros(nt) for b in ("00_y", "11_y")}
    cb_acc = np.zeros(nt, complex)
    cb_den = np.zeros(nt)
    for (occ, w), (rho, en, quad, cb_num) in zip(members, results):
        rho_spin += w * rho
        energies += w * en
        for b in ("00_y", "11_y"):
            quad_num[b] += w * quad[b][0] * quad[b][1][:, None]
            quad_den[b] += w * quad[b][1]
        if cb_num is not None:
            cb_acc += w * cb_num
            cb_den += w * quad["11_y"][1]

    quads = {b: quad_num[b] / np.maximum(quad_den[b][:, None], 1e-300)
             for b in ("00_y", "11_y")}
    target = bell_target_y(gate.target_phase)
    fid = np.array([fidelity(rho_spin[k], target) for k in range(nt)])
    ent = np.array([spin_entropy(rho_spin[k]) for k in range(nt)])
    back = None
    if couplings:
        g = couplings[0].g
        back = (g / gate.drive_amplitude) * \
            np.abs(cb_acc / np.maximum(cb_den, 1e-300))
    return EnsembleResult(
        times=t_eval, fidelity=fid, spin_entropy=ent, mode_energies=energies,
        quadratures=quads, backaction=back, rho_spin=rho_spin,
        member_count=len(members),
        weights=np.array([w for _, w in members]),
        metadata={"mode_dims": list(mode_dims), "nbar": nbar.tolist(),
                  "adaptive_mode": adaptive_mode,
                  "weight_cutoff": weight_cutoff,
                  "gate": {"t_gate": gate.t_gate, "loops": gate.loops,
                           "eta": gate.eta,
                           "delta_gate": gate.delta_gate}})


# ---------------------------------------------------------------------------
# quantum-classical correspondence testbed


@dataclass
class CorrespondenceResult:
    times: np.ndarray
    energies_classical: np.ndarray   # (T, 2), units of E0
    energies_quantum: np.ndarray     # (T, 2), units of E0
    eps0: float

    @property
    def mode0_l2_distance(self):
        ec = self.energies_classical[:, 0]
        eq = self.energies_quantum[:, 0]
        return float(np.linalg.norm(ec - eq) / np.linalg.norm(ec))


def correspondence_study(eps0, coupling=1.0, energy_scaled=1e-2, periods=50,
                         samples=600, rtol=1e-9):
    """Two-mode parametric testbed: classical trajectory vs quantum
    expectations at matched initial energy.

    Modes at frequencies 1 and 2 with cubic term ``(coupling/2) Q_0^2 P_1``;
    no rotating-wave approximation.  Mode 0 starts on a coherent amplitude
    with scaled energy ``energy_scaled``, mode 1 at rest.
    """
    w0, w1 = 1.0, 2.0
    t_end = periods * 2.0 * np.pi / w0
    t_eval = np.linspace(0.0, t_end, samples)

    # classical reduced model
    terms = [(0.5 * w0, (2, 0, 0, 0)), (0.5 * w0, (0, 0, 2, 0)),
             (0.5 * w1, (0, 2, 0, 0)), (0.5 * w1, (0, 0, 0, 2)),
             (0.5 * coupling, (2, 0, 0, 1))]
    ham = PolynomialHamiltonian(2, terms)
    q0 = np.sqrt(2.0 * energy_scaled / w0)
    z0 = np.array([q0, 0.0, 0.0, 0.0])
    dt = 2.0 * np.pi / 3000.0
    steps = int(np.ceil(t_end / dt))
    tc, zc = integrate_crm(ham, z0, dt, steps, stride=10, omega_mix=4.0)
    ec = reduced_mode_energies([w0, w1], zc)
    ec_interp = np.column_stack([np.interp(t_eval, tc, ec[:, j])
                                 for j in range(2)])

    # quantum twin in the interaction picture
    alpha = q0 / (SQRT2 * eps0)
    nbar = abs(alpha) ** 2
    d0 = int(nbar + 8.0 * np.sqrt(nbar) + 12)
    d1 = int(nbar / 2.0 + 6.0 * np.sqrt(nbar / 2.0 + 1.0) + 10)
    reg = Register([d0, d1])
    a0, a1 = reg.destroy(0), reg.destroy(1)
    k0 = (2.0 * reg.number(0) + sparse.identity(reg.dim, format="csr")).tocsr()
    cq = 1.0j * eps0 * SQRT2 * coupling / 8.0
    a0sq = (a0 @ a0).tocsr()
    terms_q = [
        ((cq * a0sq @ a1.conj().T).tocsr(), None),                 # resonant
        ((-cq * (a0sq.conj().T @ a1)).tocsr(), None),
        ((-cq * a0sq @ a1).tocsr(), (lambda t: np.exp(-4.0j * t))),
        ((cq * (a0sq.conj().T @ a1.conj().T)).tocsr(),
         (lambda t: np.exp(4.0j * t))),
        ((cq * k0 @ a1.conj().T).tocsr(), (lambda t: np.exp(2.0j * t))),
        ((-cq * k0 @ a1).tocsr(), (lambda t: np.exp(-2.0j * t))),
    ]
    psi0 = reg.coherent_state(0, alpha)
    states = evolve(psi0, terms_q, t_eval, rtol=rtol, norm_tol=1e-6)
    n0 = reg.number(0)
    n1 = reg.number(1)
    eq = np.zeros((samples, 2))
    for k in range(samples):
        s = states[k]
        eq[k, 0] = eps0 ** 2 * w0 * np.real(np.vdot(s, n0 @ s))
        eq[k, 1] = eps0 ** 2 * w1 * np.real(np.vdot(s, n1 @ s))
    return CorrespondenceResult(times=t_eval, energies_classical=ec_interp,
                                energies_quantum=eq, eps0=eps0)
