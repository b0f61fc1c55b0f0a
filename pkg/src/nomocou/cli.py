"""Declarative experiment runner.

Subcommands bind the library into reproducible artifact-producing runs:

    nomocou modes --preset two-ion-resonant --out DIR
    nomocou scan-triads --preset fig7a
    nomocou md --preset fig3a --duration 5e-5
    nomocou crm --preset fig3b
    nomocou gate --preset fig4 --grid 5x5
    nomocou gate --preset fig6
    nomocou correspondence --eps0 0.01
    nomocou chain-design --ions 25 --aux 2 --spacing 4.4e-6
    nomocou resonance-count --ions 8,16,32,64

Every run writes a ``manifest.json`` (configuration, seeds, tolerances,
wall time) next to its CSV artifacts.  The output root defaults to the
``NOMOCOU_OUT`` environment variable, then the current directory.  Exit
codes: 0 success, 2 configuration error, 3 numerical failure.  File
formats are documented in docs/file_formats.md.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__, constants as const
from . import chain_design, classical, crystal, cubic, modes, quantum, resonance, units
from .errors import ConfigError, ConvergenceError, InstabilityError, IntegrationError


# ---------------------------------------------------------------------------
# presets


def _two_ion_trap(omega_z=2 * np.pi * 1.16e6):
    return crystal.HarmonicTrap(
        species=units.YB171, omega_x=2 * np.pi * 10e6,
        omega_y=np.sqrt(7.0) / 2.0 * omega_z, omega_z=omega_z)


def _chain53_trap():
    return crystal.HarmonicTrap(
        species=units.YB171, omega_x=2 * np.pi * 5.0e6,
        omega_y=2 * np.pi * 4.85e6, omega_z=2 * np.pi * 170e3)


def _rf2d_trap(species=units.CA40):
    return crystal.HarmonicTrap(
        species=species, omega_x=2 * np.pi * 2.196e6,
        omega_y=2 * np.pi * 680e3, omega_z=2 * np.pi * 343e3)


def _penning_trap(b_field=4.4588):
    return crystal.penning_matching_trap(
        _rf2d_trap(), units.BE9, omega_z=2 * np.pi * 1.58e6, b_field=b_field)


MODES_PRESETS = {
    "two-ion-resonant": lambda: (_two_ion_trap(), 2, "pair"),
    "fig1a-chain": lambda: (_chain53_trap(), 53, "default"),
    "fig10-rf": lambda: (_rf2d_trap(), 91, "default"),
    "fig11-penning": lambda: (_penning_trap(), 91, "default"),
}

SCAN_THRESHOLDS = {
    "chain": resonance.ScanThresholds(delta_cut=1e-2, tensor_min=1e-2,
                                      s_min=0.1),
    "crystal2d": resonance.ScanThresholds(delta_cut=1e-3, tensor_min=1e-3,
                                          s_min=0.1),
}


def _build_equilibrium(trap, n_ions, scale_kind, seed, initial=None):
    if scale_kind == "pair":
        scales = units.pair_separation_scales(trap.species,
                                              trap.omega_reference())
    else:
        scales = crystal.default_scales(trap)
    return crystal.find_equilibrium(trap, n_ions, scales=scales, seed=seed,
                                    initial=initial)


def _fig7_chain(spacing, harmonic=False, n_ions=25, n_aux=2):
    design = chain_design.optimize_spacing(n_ions, n_aux, spacing,
                                           units.YB171)
    trap = design.to_trap(omega_x=2 * np.pi * 3.1e6, omega_y=2 * np.pi * 3.0e6)
    if not harmonic:
        return trap, design
    # harmonic reference: axial frequency matching the lowest axial mode
    eq = crystal.find_equilibrium(trap, n_ions, seed=0)
    spec = modes.normal_modes(eq)
    axial = [w for w, b in zip(spec.frequencies, spec.branch_labels)
             if b == "axial"]
    wz = min(axial) * eq.scales.omega0
    href = crystal.HarmonicTrap(species=units.YB171,
                                omega_x=2 * np.pi * 3.1e6,
                                omega_y=2 * np.pi * 3.0e6, omega_z=wz)
    return href, design


# ---------------------------------------------------------------------------
# helpers


def _outdir(args, default_name):
    root = args.out or os.environ.get("NOMOCOU_OUT", ".")
    path = os.path.join(root, default_name) if args.out is None else args.out
    os.makedirs(path, exist_ok=True)
    return path


def _write_manifest(outdir, command, params, t0, extra=None):
    doc = {"command": command, "params": params, "version": __version__,
           "wall_time_s": round(time.time() - t0, 3)}
    if extra:
        doc.update(extra)
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(doc, fh, indent=1, default=str)


def _load_config(path, allowed):
    with open(path) as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {sorted(unknown)}; "
                          f"allowed: {sorted(allowed)}")
    return cfg


def _grid_arg(text):
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except Exception as exc:
        raise ConfigError(f"bad --grid {text!r}; expected like 11x11") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_modes(args):
    t0 = time.time()
    if args.preset not in MODES_PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; options: "
                          f"{sorted(MODES_PRESETS)}")
    trap, n_ions, kind = MODES_PRESETS[args.preset]()
    out = _outdir(args, f"modes-{args.preset}")
    eq = _build_equilibrium(trap, n_ions, kind, args.seed)
    spec = modes.normal_modes(eq)
    spec.to_csv(os.path.join(out, "spectrum.csv"))
    eq.to_json(os.path.join(out, "equilibrium.json"))
    _write_manifest(out, "modes", {"preset": args.preset, "seed": args.seed},
                    t0, {"n_modes": spec.n_modes,
                         "diag_residual": spec.diag_residual})
    print(f"wrote {out}/spectrum.csv ({spec.n_modes} modes)")
    return 0


def cmd_tressian(args):
    t0 = time.time()
    trap, n_ions, kind = MODES_PRESETS[args.preset]()
    out = _outdir(args, f"tressian-{args.preset}")
    eq = _build_equilibrium(trap, n_ions, kind, args.seed)
    spec = modes.normal_modes(eq)
    cart = cubic.coulomb_tressian(eq) + cubic.trap_tressian(eq.trap, eq)
    mt = cubic.to_mode_basis(cart, spec)
    mt.to_csv(os.path.join(out, "tensor.csv"))
    _write_manifest(out, "tressian", {"preset": args.preset,
                                      "seed": args.seed}, t0,
                    {"entries": len(mt.entries)})
    print(f"wrote {out}/tensor.csv ({len(mt.entries)} entries)")
    return 0


def _scan_once(trap, n_ions, kind, thresholds, seed, initial=None):
    eq = _build_equilibrium(trap, n_ions, kind, seed, initial=initial)
    spec = modes.normal_modes(eq)
    ev = cubic.mode_tensor_evaluator(eq, spec)
    triads = resonance.scan_triads(spec, ev, eq.scales.eps0, thresholds)
    return eq, spec, triads


def cmd_scan_triads(args):
    t0 = time.time()
    out = _outdir(args, f"scan-{args.preset}")

    if args.preset == "fig8":
        trap_of = lambda wz: crystal.HarmonicTrap(
            species=units.YB171, omega_x=2 * np.pi * 5.0e6,
            omega_y=2 * np.pi * 3.0e6, omega_z=wz)
        betas = np.linspace(args.beta_min, args.beta_max, args.beta_count)
        rows = []
        initial = None
        for beta in betas:
            wz = 2 * np.pi * 3.0e6 / beta
            eq, spec, triads = _scan_once(trap_of(wz), 25, "default",
                                          SCAN_THRESHOLDS["chain"], args.seed,
                                          initial=initial)
            initial = eq.positions    # warm start along the scan
            ra = resonance.radial_axial_triads(triads)
            tag = f"{beta:.5f}"
            resonance.triads_to_csv(
                triads, os.path.join(out, f"triads-beta-{tag}.csv"))
            zig = min(w for w, b in zip(spec.frequencies, spec.branch_labels)
                      if b == "radial-y")
            rows.append([tag, len(triads), len(ra),
                         f"{min((t.t_period_seconds for t in ra), default=np.nan):.6g}",
                         f"{zig:.9g}"])
        with open(os.path.join(out, "beta_scan.csv"), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["beta", "n_triads", "n_radial_axial",
                         "min_T_TL_seconds_radial_axial",
                         "zigzag_frequency_units_omega0"])
            wr.writerows(rows)
        _write_manifest(out, "scan-triads", {
            "preset": "fig8", "beta_min": args.beta_min,
            "beta_max": args.beta_max, "beta_count": args.beta_count,
            "seed": args.seed, "thresholds": vars(SCAN_THRESHOLDS["chain"])},
            t0)
        print(f"wrote {out}/beta_scan.csv ({len(betas)} beta values)")
        return 0

    if args.preset in ("fig7a", "fig7b", "fig7a-harmonic", "fig7b-harmonic"):
        spacing = 4.4e-6 if "fig7a" in args.preset else 2.7e-6
        trap, design = _fig7_chain(spacing, harmonic="harmonic" in args.preset)
        n_ions, kind, th = 25, "default", SCAN_THRESHOLDS["chain"]
        with open(os.path.join(out, "chain_design.json"), "w") as fh:
            json.dump(design.report(), fh, indent=1)
    elif args.preset == "fig1a-chain":
        trap, n_ions, kind = MODES_PRESETS["fig1a-chain"]()
        th = SCAN_THRESHOLDS["chain"]
    elif args.preset in ("fig10-rf", "fig11-penning"):
        trap, n_ions, kind = MODES_PRESETS[args.preset]()
        th = SCAN_THRESHOLDS["crystal2d"]
    else:
        raise ConfigError(f"unknown preset {args.preset!r}")

    eq, spec, triads = _scan_once(trap, n_ions, kind, th, args.seed)
    spec.to_csv(os.path.join(out, "spectrum.csv"))
    eq.to_json(os.path.join(out, "equilibrium.json"))
    resonance.triads_to_csv(triads, os.path.join(out, "triads.csv"))
    _write_manifest(out, "scan-triads",
                    {"preset": args.preset, "seed": args.seed,
                     "thresholds": vars(th)}, t0,
                    {"n_triads": len(triads)})
    print(f"wrote {out}/triads.csv ({len(triads)} triads)")
    return 0


def _fig3_reduced(omega_z=2 * np.pi * 1.16e6):
    """Two-ion resonant system: equilibrium, spectrum, mode tensor."""
    trap = _two_ion_trap(omega_z)
    scales = units.pair_separation_scales(trap.species, omega_z)
    eq = crystal.find_equilibrium(trap, 2, scales=scales, seed=0)
    spec = modes.normal_modes(eq)
    cart = cubic.coulomb_tressian(eq)
    mt = cubic.to_mode_basis(cart, spec)
    return eq, spec, mt


def _write_energy_csv(path, times, energies, labels):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time_s"] + [f"E_{lbl}_J" for lbl in labels])
        for k, t in enumerate(times):
            wr.writerow([f"{t:.12g}"] + [f"{e:.12g}" for e in energies[k]])


def cmd_md(args):
    t0 = time.time()
    out = _outdir(args, f"md-{args.preset}")
    if args.preset == "fig3a":
        eq, spec, _ = _fig3_reduced()
        i_breathing = 3
        energies = np.full(spec.n_modes, const.K_BOLTZMANN * 100e-6)
        energies[i_breathing] = 0.0
        state = classical.init_modes(spec, eq, energies_joule=energies,
                                     seed=args.seed)
        duration = args.duration or 50e-6
    elif args.preset in ("fig1a", "fig1b", "fig1c"):
        trap = {"fig1a": _chain53_trap(),
                "fig1b": _rf2d_trap(units.YB171),
                "fig1c": _penning_trap(4.4488)}[args.preset]
        eq = crystal.find_equilibrium(trap, 53, seed=args.seed)
        spec = modes.normal_modes(eq)
        state = classical.init_modes(spec, eq, temperature_K=100e-6,
                                     seed=args.seed)
        duration = args.duration or 10e-3   # published long-run default
    else:
        raise ConfigError(f"unknown preset {args.preset!r}")
    dt = args.dt
    steps = int(round(duration / dt))
    traj = classical.integrate_md(state, eq.trap, dt, steps,
                                  stride=args.stride, seed=args.seed)
    energies = traj.mode_energies(spec, eq)
    _write_energy_csv(os.path.join(out, "energies.csv"), traj.times,
                      energies, [f"mode{j}" for j in range(spec.n_modes)])
    mean, std = traj.mode_energy_summary(spec, eq)
    with open(os.path.join(out, "mode_energy_summary.csv"), "w",
              newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["mode", "branch", "frequency_units_omega0",
                     "mean_uK", "std_uK"])
        for j in range(spec.n_modes):
            wr.writerow([j, spec.branch_labels[j],
                         f"{spec.frequencies[j]:.9g}",
                         f"{mean[j] * 1e6:.9g}", f"{std[j] * 1e6:.9g}"])
    traj.save_npz(os.path.join(out, "trajectory.npz"))
    _write_manifest(out, "md", {"preset": args.preset, "seed": args.seed,
                                "dt": dt, "duration": duration,
                                "stride": args.stride}, t0)
    print(f"wrote {out}/energies.csv ({steps} steps)")
    return 0


def cmd_crm(args):
    t0 = time.time()
    out = _outdir(args, f"crm-{args.preset}")
    if args.preset != "fig3b":
        raise ConfigError("crm supports the fig3b preset")
    eq, spec, mt = _fig3_reduced()
    i_tilt, i_breathing = 0, 3
    terms = classical.reduced_hamiltonian_terms(spec, mt,
                                                [i_tilt, i_breathing])
    ham = classical.PolynomialHamiltonian(2, terms)
    kT = const.K_BOLTZMANN * 100e-6 / eq.scales.E0
    rng = np.random.Generator(np.random.Philox(args.seed))
    phase = rng.uniform(0, 2 * np.pi)
    amp = np.sqrt(2 * kT / spec.frequencies[i_tilt])
    z0 = np.array([amp * np.cos(phase), 0.0, amp * np.sin(phase), 0.0])
    duration = args.duration or 50e-6
    dt_scaled = (args.dt) * eq.scales.omega0
    steps = int(round(duration / args.dt))
    times, states = classical.integrate_crm(ham, z0, dt_scaled, steps,
                                            stride=args.stride,
                                            drift_tol=1e-6)
    energies = classical.reduced_mode_energies(
        spec.frequencies[[i_tilt, i_breathing]], states) * eq.scales.E0
    _write_energy_csv(os.path.join(out, "energies.csv"),
                      times / eq.scales.omega0, energies,
                      ["tilt", "breathing"])
    _write_manifest(out, "crm", {"preset": args.preset, "seed": args.seed,
                                 "dt": args.dt, "duration": duration}, t0)
    print(f"wrote {out}/energies.csv")
    return 0


def _two_ion_gate_point(omega_z, d_omega_y, n_bus_periods, nbar_spec,
                        rtol=1e-8, detuning_sign=1):
    """One point of the two-ion fidelity map; returns final observables."""
    wz = omega_z
    trap = crystal.HarmonicTrap(
        species=units.YB171, omega_x=2 * np.pi * 10e6,
        omega_y=np.sqrt(7.0) / 2.0 * wz + d_omega_y, omega_z=wz)
    scales = units.pair_separation_scales(units.YB171, wz)
    eq = crystal.find_equilibrium(trap, 2, scales=scales, seed=0)
    spec = modes.normal_modes(eq)
    mt = cubic.to_mode_basis(cubic.coulomb_tressian(eq), spec)
    i_tilt, i_bus = 0, 3
    pats = mt.triple_patterns(i_tilt, i_tilt, i_bus)
    c_rwa = resonance.rwa_coefficient(pats, i_tilt, i_tilt, i_bus,
                                      spec.n_modes)
    delta = spec.frequencies[i_bus] - 2 * spec.frequencies[i_tilt]
    # register: (bus, tilt) descending frequency
    coupling = quantum.TriadCoupling(modes=(1, 1, 0),
                                     coefficient=scales.eps0 * c_rwa,
                                     delta=delta)
    eta_b = lamb_dicke_breathing(wz)
    gate = quantum.GateConfig(
        t_gate=n_bus_periods * 2.0 * np.pi / spec.frequencies[i_bus],
        loops=1, eta=eta_b, bus_index=0,
        target_phase=-detuning_sign * 0.5 * np.pi,
        detuning_sign=detuning_sign)
    t_eval = np.array([0.0, gate.t_gate])
    res = quantum.gate_run([10, 22], [coupling], gate,
                           [spec.frequencies[i_bus], spec.frequencies[i_tilt]],
                           t_eval, nbar=[0.0, nbar_spec],
                           adaptive_mode=1 if nbar_spec else None,
                           weight_cutoff=1e-3, rtol=rtol)
    spect_energy = res.mode_energies[-1, 1]   # w_T <n_T>, hbar*omega0 units
    return res.final_fidelity, res.spin_entropy[-1], spect_energy


def lamb_dicke_breathing(omega_z, wavelength=355e-9, species=units.YB171):
    """Counter-propagating Raman Lamb-Dicke factor of the two-ion
    breathing mode."""
    dk = 2.0 * (2.0 * np.pi / wavelength)
    eta0 = dk * np.sqrt(const.HBAR / (2.0 * species.mass * omega_z))
    return eta0 / np.sqrt(2.0 * np.sqrt(3.0))


def cmd_gate(args):
    t0 = time.time()
    out = _outdir(args, f"gate-{args.preset}")
    wz = 2 * np.pi * 1.16e6

    if args.preset in ("fig4", "fig5a", "fig5b"):
        nbar = {"fig4": 0.0, "fig5a": 1.0, "fig5b": 2.0}[args.preset]
        ng, nd = args.grid if args.grid else ((51, 51) if nbar == 0 else
                                              (25, 25))
        periods = np.linspace(50, 500, ng)
        dwy = 2 * np.pi * np.linspace(-30e3, 30e3, nd)
        sign = -1 if args.mirror else 1
        rows = []
        for npb in periods:
            for dw in dwy:
                f, s, e = _two_ion_gate_point(wz, dw, npb, nbar,
                                              rtol=args.rtol,
                                              detuning_sign=sign)
                rows.append([f"{npb:.9g}", f"{dw / (2 * np.pi):.9g}",
                             f"{f:.9g}", f"{s:.9g}", f"{e:.9g}"])
        with open(os.path.join(out, "map.csv"), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t_gate_bus_periods", "delta_omega_y_Hz",
                         "fidelity", "spin_entropy",
                         "spectator_energy_hbar_omega0"])
            wr.writerows(rows)
        _write_manifest(out, "gate", {"preset": args.preset,
                                      "grid": [ng, nd], "nbar": nbar,
                                      "rtol": args.rtol,
                                      "mirror": args.mirror}, t0)
        print(f"wrote {out}/map.csv ({ng}x{nd})")
        return 0

    if args.preset == "fig6":
        freqs = [1.0, 0.75, 0.25]
        coupling = quantum.TriadCoupling.from_tl_parameterization(
            50000 * 2 * np.pi, modes=(2, 1, 0))
        gate = quantum.GateConfig.from_bus_periods(1000, loops=1, eta=0.1)
        nbar = args.nbar if args.nbar is not None else 20.0
        t_eval = np.linspace(0.0, gate.t_gate, args.samples)
        res = quantum.gate_run([8, 4, 1], [coupling], gate, freqs, t_eval,
                               nbar=[0.0, 0.0, nbar], weight_cutoff=1e-4,
                               rtol=args.rtol, n_jobs=args.jobs)
        res.to_csv(os.path.join(out, "gate_series.csv"))
        with open(os.path.join(out, "summary.json"), "w") as fh:
            json.dump({"final_fidelity": res.final_fidelity,
                       "final_entropy": float(res.spin_entropy[-1]),
                       "final_spectator_energy":
                           float(res.mode_energies[-1, 2]),
                       "members": res.member_count}, fh, indent=1)
        _write_manifest(out, "gate", {"preset": "fig6", "nbar": nbar,
                                      "rtol": args.rtol,
                                      "samples": args.samples}, t0)
        print(f"wrote {out}/gate_series.csv (F={res.final_fidelity:.4f})")
        return 0

    if args.preset == "fig9":
        freqs = [1.0, 0.75, 0.25]
        coupling = quantum.TriadCoupling.from_tl_parameterization(
            1000 * 2 * np.pi, modes=(2, 1, 0))
        nbar = args.nbar if args.nbar is not None else 10.0
        rows = []
        for k in range(1, args.max_loops + 1):
            gate = quantum.GateConfig.from_bus_periods(500, loops=k, eta=0.1)
            t_eval = np.array([0.0, gate.t_gate])
            res = quantum.gate_run([8, 4, 1], [coupling], gate, freqs,
                                   t_eval, nbar=[0.0, 0.0, nbar],
                                   weight_cutoff=1e-4, rtol=args.rtol,
                                   n_jobs=args.jobs)
            rows.append([k, f"{res.final_fidelity:.9g}"])
        with open(os.path.join(out, "loops.csv"), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["loops", "fidelity"])
            wr.writerows(rows)
        _write_manifest(out, "gate", {"preset": "fig9", "nbar": nbar,
                                      "rtol": args.rtol}, t0)
        print(f"wrote {out}/loops.csv")
        return 0

    raise ConfigError(f"unknown preset {args.preset!r}")


def cmd_correspondence(args):
    t0 = time.time()
    out = _outdir(args, f"correspondence-eps{args.eps0:g}")
    res = quantum.correspondence_study(args.eps0, rtol=args.rtol)
    with open(os.path.join(out, "correspondence.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time_scaled", "E0_classical", "E1_classical",
                     "E0_quantum", "E1_quantum"])
        for k, t in enumerate(res.times):
            wr.writerow([f"{t:.10g}",
                         f"{res.energies_classical[k, 0]:.10g}",
                         f"{res.energies_classical[k, 1]:.10g}",
                         f"{res.energies_quantum[k, 0]:.10g}",
                         f"{res.energies_quantum[k, 1]:.10g}"])
    _write_manifest(out, "correspondence", {"eps0": args.eps0,
                                            "rtol": args.rtol}, t0,
                    {"mode0_l2_distance": res.mode0_l2_distance})
    print(f"wrote {out}/correspondence.csv "
          f"(L2 distance {res.mode0_l2_distance:.4f})")
    return 0


def cmd_chain_design(args):
    t0 = time.time()
    out = _outdir(args, f"chain-design-N{args.ions}")
    design = chain_design.optimize_spacing(args.ions, args.aux, args.spacing,
                                           units.SPECIES_PRESETS[args.species])
    with open(os.path.join(out, "design.json"), "w") as fh:
        json.dump(design.report(), fh, indent=1)
    with open(os.path.join(out, "positions.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["ion", "z_um"])
        for i, z in enumerate(design.positions_si() * 1e6):
            wr.writerow([i, f"{z:.9g}"])
    _write_manifest(out, "chain-design",
                    {"ions": args.ions, "aux": args.aux,
                     "spacing": args.spacing, "species": args.species}, t0,
                    {"b": design.b, "s_z": design.s_z})
    print(f"wrote {out}/design.json (b={design.b:.6g}, s_z={design.s_z:.3g})")
    return 0


def cmd_resonance_count(args):
    t0 = time.time()
    out = _outdir(args, "resonance-count")
    n_values = [int(s) for s in args.ions.split(",")]
    rows = []
    for i, n in enumerate(n_values):
        mean, err = resonance.expected_resonance_count(
            n, args.window, trials=args.trials, seed=args.seed + i)
        rows.append([n, f"{args.window:.6g}", f"{mean:.9g}", f"{err:.9g}"])
    slope, _ = resonance.count_scaling_slope(n_values, args.window,
                                             trials=args.trials,
                                             seed=args.seed)
    with open(os.path.join(out, "counts.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["n_ions", "delta_window", "mean_count", "stderr"])
        wr.writerows(rows)
    _write_manifest(out, "resonance-count",
                    {"ions": n_values, "window": args.window,
                     "trials": args.trials, "seed": args.seed}, t0,
                    {"loglog_slope": slope})
    print(f"wrote {out}/counts.csv (slope {slope:.3f})")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    par = argparse.ArgumentParser(prog="nomocou", description=__doc__)
    sub = par.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int,
                       default=os.cpu_count() or 1,
                       help="worker parallelism bound")
        p.add_argument("--config", default=None,
                       help="JSON config file (strict keys, overrides flags)")

    p = sub.add_parser("modes", help="normal-mode spectrum of a preset")
    common(p)
    p.add_argument("--preset", required=True)
    p.set_defaults(func=cmd_modes)

    p = sub.add_parser("tressian", help="mode-basis cubic tensor")
    common(p)
    p.add_argument("--preset", required=True)
    p.set_defaults(func=cmd_tressian)

    p = sub.add_parser("scan-triads", help="near-resonant triad scan")
    common(p)
    p.add_argument("--preset", required=True)
    p.add_argument("--beta-min", type=float, default=10.25)
    p.add_argument("--beta-max", type=float, default=12.75)
    p.add_argument("--beta-count", type=int, default=50)
    p.set_defaults(func=cmd_scan_triads)

    p = sub.add_parser("md", help="molecular dynamics run")
    common(p)
    p.add_argument("--preset", required=True)
    p.add_argument("--dt", type=float, default=1e-9, help="time step (s)")
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--stride", type=int, default=100)
    p.set_defaults(func=cmd_md)

    p = sub.add_parser("crm", help="reduced-model symplectic run")
    common(p)
    p.add_argument("--preset", required=True)
    p.add_argument("--dt", type=float, default=1e-9)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--stride", type=int, default=100)
    p.set_defaults(func=cmd_crm)

    p = sub.add_parser("gate", help="entangling-gate simulation")
    common(p)
    p.add_argument("--preset", required=True)
    p.add_argument("--grid", type=_grid_arg, default=None)
    p.add_argument("--nbar", type=float, default=None)
    p.add_argument("--rtol", type=float, default=1e-8)
    p.add_argument("--samples", type=int, default=61)
    p.add_argument("--max-loops", type=int, default=5)
    p.add_argument("--mirror", action="store_true",
                   help="reverse the gate detuning sign")
    p.set_defaults(func=cmd_gate)

    p = sub.add_parser("correspondence", help="classical/quantum testbed")
    common(p)
    p.add_argument("--eps0", type=float, required=True)
    p.add_argument("--rtol", type=float, default=1e-9)
    p.set_defaults(func=cmd_correspondence)

    p = sub.add_parser("chain-design", help="quartic chain optimization")
    common(p)
    p.add_argument("--ions", type=int, required=True)
    p.add_argument("--aux", type=int, default=2)
    p.add_argument("--spacing", type=float, required=True,
                   help="target qubit spacing (m)")
    p.add_argument("--species", default="Yb171",
                   choices=sorted(units.SPECIES_PRESETS))
    p.set_defaults(func=cmd_chain_design)

    p = sub.add_parser("resonance-count", help="Monte-Carlo triad counting")
    common(p)
    p.add_argument("--ions", default="8,16,32,64")
    p.add_argument("--window", type=float, default=1e-3)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_resonance_count)

    return par


def main(argv=None):
    par = build_parser()
    try:
        args = par.parse_args(argv)
        if getattr(args, "config", None):
            allowed = {a.dest for a in par._actions}
            cfg = _load_config(args.config, allowed)
            for key, val in cfg.items():
                setattr(args, key, val)
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ConvergenceError, InstabilityError, IntegrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
