"""Near-resonant triad enumeration and two-level scoring.

Quantization conventions: mode quadratures are promoted with
``Q = (eps0/sqrt(2)) (a + a^dag)`` and ``P = (eps0/(i sqrt(2))) (a - a^dag)``
so that ``[a, a^dag] = 1``; the cubic energy (units of E0) divided by one
quantum ``hbar*omega0 = eps0^2 E0`` leaves an overall factor eps0 on every
cubic term.  For an up-conversion candidate with mode frequencies
``w_n <= w_m < w_p`` the surviving rotating-wave term is

    eps0 * (C_rwa * a_n a_m a_p^dag * exp(i Delta t) + h.c.),
    Delta = w_p - w_n - w_m,

and ``C_rwa`` collects all stored quadrature patterns of the triple.  The
effective two-level element is ``C_tl = sqrt(2) * eps0 * |C_rwa|`` when the
two lower modes coincide (bosonic enhancement) and ``eps0 * |C_rwa|``
otherwise; the exchange probability from the lowest coupled Fock pair is
``P(t) = S_tl * sin^2(Omega_tl * t)`` with ``Omega_tl = sqrt(C_tl^2 +
(Delta/2)^2)`` and ``S_tl = (C_tl/Omega_tl)^2``.

``t_period`` is the period of that population oscillation, pi/Omega_tl; the
state itself re-phases only after twice that.  Half of the exchangeable
population has moved at ``t_period/4``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

_INV_12SQRT2 = 1.0 / (12.0 * np.sqrt(2.0))


@dataclass(frozen=True)
class ScanThresholds:
    """Filters for the triad scan: detuning window (units of omega0),
    tensor magnitude floor, and minimum two-level amplitude."""

    delta_cut: float = 1e-3
    tensor_min: float = 1e-3
    s_min: float = 0.1

    def __post_init__(self):
        if min(self.delta_cut, self.tensor_min, self.s_min) < 0:
            raise ConfigError("thresholds must be nonnegative")


@dataclass
class ResonanceTriad:
    """One scored coupling candidate; n, m, p with w_n <= w_m < w_p."""

    n: int
    m: int
    p: int
    kind: str              # 'two-mode' | 'three-mode'
    delta: float           # w_p - w_n - w_m, units of omega0
    c_rwa: complex
    c_tl: float
    omega_tl: float
    s_tl: float
    t_period: float        # population-exchange period, units of 1/omega0
    t_period_seconds: float
    branches: tuple = ("", "", "")

    @property
    def t_half_exchange_seconds(self):
        """Time at which half the exchangeable population has moved."""
        return self.t_period_seconds / 4.0


def _ladder_factor(cols, n_modes, role_p_col_set):
    """Product over columns of the ladder coefficient for a_n a_m a_p^dag."""
    f = 1.0 + 0.0j
    for c in cols:
        is_p = c % n_modes in role_p_col_set
        if c >= n_modes:     # P quadrature: -i on 'a', +i on 'a^dag'
            f *= (1.0j if is_p else -1.0j)
    return f


def _multiplicity(cols):
    a, b, c = cols
    if a == b == c:
        return 1
    if a == b or b == c or a == c:
        return 3
    return 6


def rwa_coefficient(patterns, n, m, p, n_modes):
    """C_rwa for one triple from its stored quadrature patterns.

    ``patterns`` maps sorted column triples to symmetric tensor values.
    """
    c = 0.0 + 0.0j
    for cols, val in patterns.items():
        modes = sorted(q % n_modes for q in cols)
        if modes != sorted((n, m, p)):
            continue
        c += val * _multiplicity(cols) * _ladder_factor(cols, n_modes, {p})
    return c * _INV_12SQRT2


def batched_triple_patterns(tensor, triples, n_modes):
    """Per-triple pattern dicts, in one batched contraction when the tensor
    supports it (``values``); falls back to per-triple lookups."""
    if not hasattr(tensor, "values"):
        return [tensor.triple_patterns(n, m, p) for n, m, p in triples]
    cols = []
    offsets = [0]
    keys_per = []
    for n, m, p in triples:
        combos = sorted({tuple(sorted(t)) for t in
                         [(a, b, c) for a in (n, n + n_modes)
                          for b in (m, m + n_modes)
                          for c in (p, p + n_modes)]})
        keys_per.append(combos)
        cols.extend(combos)
        offsets.append(len(cols))
    if not cols:
        return []
    vals = tensor.values(np.array(cols, int))
    out = []
    for i, combos in enumerate(keys_per):
        out.append(dict(zip(combos, vals[offsets[i]:offsets[i + 1]])))
    return out


def rwa_coefficients(tensor, spec, delta_cut):
    """All near-resonant (triple, C_rwa, Delta) within the detuning window.

    ``tensor`` is a CubicModeTensor or ModeTensorEvaluator (anything with
    ``triple_patterns``).  The empty list is a valid result.
    """
    freqs = spec.frequencies
    triples = candidate_triples(freqs, delta_cut)
    pattern_dicts = batched_triple_patterns(tensor, triples, spec.n_modes)
    out = []
    for (n, m, p), pats in zip(triples, pattern_dicts):
        c = rwa_coefficient(pats, n, m, p, spec.n_modes)
        out.append(((n, m, p), c, freqs[p] - freqs[n] - freqs[m]))
    return out


def tl_reduce(n, m, p, c_rwa, delta, eps0, omega0):
    """Two-level reduction of one candidate into a ResonanceTriad."""
    two_mode = n == m
    c_tl = (np.sqrt(2.0) if two_mode else 1.0) * eps0 * abs(c_rwa)
    omega_tl = np.sqrt(c_tl ** 2 + (delta / 2.0) ** 2)
    s_tl = (c_tl / omega_tl) ** 2 if omega_tl > 0 else 0.0
    t_period = np.pi / omega_tl if omega_tl > 0 else np.inf
    return ResonanceTriad(
        n=n, m=m, p=p, kind="two-mode" if two_mode else "three-mode",
        delta=delta, c_rwa=c_rwa, c_tl=c_tl, omega_tl=omega_tl, s_tl=s_tl,
        t_period=t_period, t_period_seconds=t_period / omega0)


def tl_probability(c_tl, delta, t):
    """P_{0->1}(t) of the two-level model."""
    omega = np.sqrt(c_tl ** 2 + (delta / 2.0) ** 2)
    s = (c_tl / omega) ** 2 if omega > 0 else 0.0
    return s * np.sin(omega * np.asarray(t)) ** 2


def candidate_triples(freqs, delta_cut):
    """(n, m, p) with w_n <= w_m < w_p and |w_p - w_n - w_m| <= delta_cut.

    Frequencies must be ascending (normal_modes guarantees it); the search
    is a sorted window per (n, p) pair, O(M^2 log M) overall.
    """
    w = np.asarray(freqs)
    if np.any(np.diff(w) < 0):
        raise ConfigError("frequencies must be ascending")
    mtot = w.size
    out = []
    for p in range(mtot):
        wp = w[p]
        for n in range(mtot):
            if n == p:
                continue
            lo = wp - delta_cut - w[n]
            hi = wp + delta_cut - w[n]
            m0 = int(np.searchsorted(w, lo, side="left"))
            m1 = int(np.searchsorted(w, hi, side="right"))
            for m in range(max(m0, n), m1):
                if m == p or w[m] >= wp:
                    continue
                out.append((n, m, p))
    return out


def scan_triads(spec, tensor, eps0, thresholds=None):
    """Enumerate and score near-resonant triads.

    Cheap filters (detuning window, tensor magnitude floor) run before the
    two-level scoring; only triads with ``S_tl >= s_min`` are returned,
    ordered by S_tl descending with lexicographic tie-break.
    """
    th = thresholds or ScanThresholds()
    omega0 = spec.equilibrium.scales.omega0
    freqs = spec.frequencies
    triples = candidate_triples(freqs, th.delta_cut)
    pattern_dicts = batched_triple_patterns(tensor, triples, spec.n_modes)
    triads = []
    for (n, m, p), pats in zip(triples, pattern_dicts):
        tmax = max((abs(v) for v in pats.values()), default=0.0)
        if tmax <= th.tensor_min:
            continue
        c = rwa_coefficient(pats, n, m, p, spec.n_modes)
        delta = freqs[p] - freqs[n] - freqs[m]
        triad = tl_reduce(n, m, p, c, delta, eps0, omega0)
        if triad.s_tl < th.s_min:
            continue
        triad.branches = tuple(spec.branch_labels[i] for i in (n, m, p))
        triads.append(triad)
    triads.sort(key=lambda t: (-t.s_tl, t.n, t.m, t.p))
    return triads


def radial_axial_triads(triads):
    """Triads mixing the distinguished-axis branch with any other branch."""
    out = []
    for t in triads:
        has_axial = any(b == "axial" for b in t.branches)
        has_other = any(b != "axial" for b in t.branches)
        if has_axial and has_other:
            out.append(t)
    return out


def triads_to_csv(triads, path):
    """Triad report; the column set is the plotting contract."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["n", "m", "p", "kind", "branch_n", "branch_m",
                     "branch_p", "delta_units_omega0", "C_RWA_re",
                     "C_RWA_im", "S_TL", "T_TL_seconds"])
        for t in triads:
            wr.writerow([t.n, t.m, t.p, t.kind, *t.branches,
                         f"{t.delta:.12g}", f"{t.c_rwa.real:.12g}",
                         f"{t.c_rwa.imag:.12g}", f"{t.s_tl:.12g}",
                         f"{t.t_period_seconds:.12g}"])


def expected_resonance_count(n_ions, delta_win, trials=20, seed=0):
    """Monte-Carlo mean and standard error of the number of three-mode
    near-resonances for 3N i.i.d. uniform mode frequencies on [0, 1].

    Counts distinct triples (n < m, p not in {n, m}) with
    ``|w_p - w_n - w_m| <= delta_win``.
    """
    if trials < 1:
        raise ConfigError("need at least one trial")
    rng = np.random.Generator(np.random.Philox(seed))
    m = 3 * n_ions
    counts = np.zeros(trials)
    for t in range(trials):
        w = rng.uniform(0.0, 1.0, size=m)
        ii, jj = np.triu_indices(m, k=1)
        sums = np.sort(w[ii] + w[jj])
        total = 0
        for p in range(m):
            lo = np.searchsorted(sums, w[p] - delta_win, side="left")
            hi = np.searchsorted(sums, w[p] + delta_win, side="right")
            cnt = hi - lo
            # remove pairs that contain p itself: sum in window <=> |w_j| <= win
            other = np.delete(w, p)
            cnt -= int(np.sum(other <= delta_win))
            total += cnt
        counts[t] = total
    mean = float(np.mean(counts))
    stderr = float(np.std(counts, ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return mean, stderr


def count_scaling_slope(n_values, delta_win, trials=20, seed=0):
    """Least-squares log-log slope of the Monte-Carlo count vs N."""
    means = []
    for i, n in enumerate(n_values):
        mean, _ = expected_resonance_count(n, delta_win, trials, seed + i)
        means.append(mean)
    slope = np.polyfit(np.log(n_values), np.log(means), 1)[0]
    return float(slope), means


def dispersive_danger_ratio(g, delta, eta, omega_r):
    """Raw off-resonant figure of merit g^2 / (|Delta| * eta * Omega_r);
    order-one values flag loop-closure risk.  No threshold is applied."""
    return g ** 2 / (abs(delta) * eta * omega_r)
