import numpy as np
import pytest
from scipy.integrate import solve_ivp

from nomocou import crystal, cubic, modes, resonance, units
from nomocou.errors import ConfigError
from nomocou.resonance import (ScanThresholds, candidate_triples,
                               expected_resonance_count, rwa_coefficient,
                               scan_triads, tl_probability, tl_reduce)

TWO_PI = 2 * np.pi


def test_rwa_anchor_two_ion(two_ion_resonant):
    _, spec, mt = two_ion_resonant
    i_t, i_b = 0, 3
    c = rwa_coefficient(mt.triple_patterns(i_t, i_t, i_b), i_t, i_t, i_b, 6)
    xi = np.sqrt(2.0 * np.sqrt(3.0))
    assert abs(abs(c) - xi / (2 * np.sqrt(2.0))) < 1e-9
    # direct arithmetic: 1.861209718 / (2 sqrt 2)
    assert abs(abs(c) - 1.861209718 / (2 * np.sqrt(2.0))) < 1e-8


def test_empty_candidate_list_for_tiny_window():
    w = np.array([0.31, 0.47, 0.83, 1.21])
    assert candidate_triples(w, 1e-12) == []


def test_candidate_triples_against_brute_force():
    rng = np.random.default_rng(21)
    for trial in range(5):
        w = np.sort(rng.uniform(0.05, 1.0, 24))
        cut = 10 ** rng.uniform(-3, -1.2)
        fast = set(candidate_triples(w, cut))
        slow = set()
        m = w.size
        for n in range(m):
            for mm in range(n, m):
                for p in range(m):
                    if p in (n, mm) or w[mm] >= w[p]:
                        continue
                    if abs(w[p] - w[n] - w[mm]) <= cut:
                        slow.add((n, mm, p))
        assert fast == slow


def test_tl_reduction_closed_forms():
    t = tl_reduce(0, 0, 1, 0.5 + 0j, 0.0, 1e-3, TWO_PI * 1e6)
    assert t.kind == "two-mode"
    assert abs(t.s_tl - 1.0) < 1e-14
    assert abs(t.c_tl - np.sqrt(2) * 1e-3 * 0.5) < 1e-18
    # detuning equal to twice the element halves the amplitude
    t2 = tl_reduce(0, 0, 1, 0.5 + 0j, 2 * t.c_tl, 1e-3, TWO_PI * 1e6)
    assert abs(t2.s_tl - 0.5) < 1e-12
    t3 = tl_reduce(0, 1, 2, 0.5 + 0j, 0.0, 1e-3, TWO_PI * 1e6)
    assert t3.kind == "three-mode"
    assert abs(t3.c_tl - 1e-3 * 0.5) < 1e-18


def test_tl_oracle_against_two_level_integration():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        c = rng.uniform(0.05, 1.5)
        d = rng.uniform(-3.0, 3.0)

        def rhs(t, y):
            h01 = c * np.exp(-1j * d * t)
            return -1j * np.array([h01 * y[1], np.conj(h01) * y[0]])

        tgrid = np.linspace(0.0, 6.0, 25)
        sol = solve_ivp(rhs, (0, 6.0), np.array([1.0 + 0j, 0j]),
                        t_eval=tgrid, method="DOP853", rtol=1e-11,
                        atol=1e-13)
        p1 = np.abs(sol.y[1]) ** 2
        worst = max(worst, np.max(np.abs(p1 - tl_probability(c, d, tgrid))))
    assert worst < 1e-8


def test_two_ion_scan_finds_exactly_one_two_mode_triad(two_ion_resonant):
    eq, spec, mt = two_ion_resonant
    triads = scan_triads(spec, mt, eq.scales.eps0,
                         ScanThresholds(delta_cut=1e-3, tensor_min=1e-3,
                                        s_min=0.1))
    assert len(triads) == 1
    t = triads[0]
    assert t.kind == "two-mode"
    assert (t.n, t.m, t.p) == (0, 0, 3)
    assert abs(t.delta) < 1e-9
    assert abs(t.s_tl - 1.0) < 1e-9


def test_exchange_period_anchor_204us(two_ion_resonant):
    eq, spec, mt = two_ion_resonant
    triads = scan_triads(spec, mt, eq.scales.eps0)
    t = triads[0]
    assert abs(t.t_period_seconds - 204e-6) < 0.02 * 204e-6
    assert abs(t.t_half_exchange_seconds - 51e-6) < 0.02 * 51e-6


def test_filter_monotonicity(two_ion_resonant):
    eq, spec, mt = two_ion_resonant
    base = scan_triads(spec, mt, eq.scales.eps0,
                       ScanThresholds(1e-2, 1e-4, 0.01))
    tighter_delta = scan_triads(spec, mt, eq.scales.eps0,
                                ScanThresholds(1e-3, 1e-4, 0.01))
    higher_smin = scan_triads(spec, mt, eq.scales.eps0,
                              ScanThresholds(1e-2, 1e-4, 0.5))
    keys = lambda ts: {(t.n, t.m, t.p) for t in ts}
    assert keys(tighter_delta) <= keys(base)
    assert keys(higher_smin) <= keys(base)


def test_scan_ordering_deterministic(two_ion_resonant):
    eq, spec, mt = two_ion_resonant
    th = ScanThresholds(5e-2, 1e-6, 0.0)
    a = scan_triads(spec, mt, eq.scales.eps0, th)
    s = [t.s_tl for t in a]
    assert s == sorted(s, reverse=True)


def test_mc_count_zero_window_and_linear_scaling():
    mean0, _ = expected_resonance_count(8, 0.0, trials=5, seed=0)
    assert mean0 == 0.0
    m1, e1 = expected_resonance_count(16, 5e-4, trials=40, seed=1)
    m2, e2 = expected_resonance_count(16, 1e-3, trials=40, seed=2)
    # doubling the window doubles the count within joint stderr
    assert abs(m2 - 2 * m1) < 3 * np.sqrt(e2 ** 2 + 4 * e1 ** 2)


def test_mc_count_deterministic_and_validated():
    a = expected_resonance_count(12, 1e-3, trials=10, seed=5)
    b = expected_resonance_count(12, 1e-3, trials=10, seed=5)
    assert a == b
    # brute-force recount of one trial
    rng = np.random.Generator(np.random.Philox(7))
    w = rng.uniform(0, 1, 3 * 6)
    count = 0
    m = w.size
    for n in range(m):
        for mm in range(n + 1, m):
            for p in range(m):
                if p in (n, mm):
                    continue
                if abs(w[p] - w[n] - w[mm]) <= 1e-2:
                    count += 1
    mean, _ = expected_resonance_count(6, 1e-2, trials=1, seed=7)
    assert mean == count


def test_triad_csv_columns(tmp_path, two_ion_resonant):
    eq, spec, mt = two_ion_resonant
    triads = scan_triads(spec, mt, eq.scales.eps0)
    path = tmp_path / "triads.csv"
    resonance.triads_to_csv(triads, path)
    header = path.read_text().splitlines()[0].split(",")
    assert header == ["n", "m", "p", "kind", "branch_n", "branch_m",
                      "branch_p", "delta_units_omega0", "C_RWA_re",
                      "C_RWA_im", "S_TL", "T_TL_seconds"]


def test_threshold_validation():
    with pytest.raises(ConfigError):
        ScanThresholds(delta_cut=-1.0)
    with pytest.raises(ConfigError):
        expected_resonance_count(4, 1e-3, trials=0)


def test_danger_ratio_plain_arithmetic():
    assert resonance.dispersive_danger_ratio(2.0, 4.0, 0.5, 2.0) == 1.0
