"""Acceptance gate: one test per criterion, one printed verdict line each.

Each test times its own body and checks the stated wall-clock budget.
The expensive shared kernels come from session fixtures (conftest), so
their construction is not charged to any single criterion. Run with
``pytest tests/test_acceptance.py -s`` to see the verdict lines.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from fractalwalks.config import canonical_text, config_hash, parse_config_text
from fractalwalks.cutoffs import (
    csj_cutoff,
    csj_test_family,
    csj_window_violation,
    verify_csj,
)
from fractalwalks.davies import meyer_split, off_diagonal_check, verify_davies_inequality
from fractalwalks.estimates import (
    ball_indicator_family,
    check_hkp,
    mc_exit_time,
    nash_constant,
    sample_core_pairs,
)
from fractalwalks.experiments import run_experiment
from fractalwalks.forms import funh_builder, verify_form_identities
from fractalwalks.graphs import lattice_graph, vicsek_graph
from fractalwalks.kernels import (
    heavy_tailed_kernel,
    nearest_neighbor_kernel,
    perturb_kernel,
    subordinate_kernel,
)

IDENTITY_NAMES = {"form-energy", "form-energy-markov", "leibniz", "leibniz-polarized"}
CHAIN_NAMES = {"power-chain-1-hi", "power-chain-1-lo", "power-chain-2-hi", "power-chain-2-lo"}


def verdict(num: int, slug: str, ok: bool, detail: str, elapsed: float | None = None,
            budget: float | None = None) -> str:
    line = f"ACCEPTANCE {num:2d} {slug}: {'PASS' if ok else 'FAIL'} - {detail}"
    if elapsed is not None and budget is not None:
        line += f" [{elapsed:.1f}s of {budget:.0f}s]"
    print(line, flush=True)
    return line


def test_01_exact_identities_all_graphs_and_kernels(gasket6, sub_g6):
    t0 = time.perf_counter()
    worst = 0.0
    combos = 0
    for g, beta, sub in (
        (lattice_graph(2, 32), 1.5, None),
        (gasket6, 2.1, sub_g6),
        (vicsek_graph(4), 2.1, None),
    ):
        nn = nearest_neighbor_kernel(g, lazy=0.5)
        if sub is None:
            n_terms = int(np.ceil(float(g.core_radius) ** g.nominal_dw))
            sub = subordinate_kernel(nn, beta=beta, n_terms=n_terms)
        for K in (nn, heavy_tailed_kernel(g, beta=beta), sub):
            rep = verify_form_identities(K, samples=100, seed=1)
            assert IDENTITY_NAMES <= set(rep.checks)
            worst = max(worst, max(c.worst for c in rep.checks.values() if c.kind == "identity"))
            combos += 1
    elapsed = time.perf_counter() - t0
    ok = combos == 9 and worst <= 1e-10
    line = verdict(1, "exact-identities", ok,
                   f"worst relative error {worst:.2e} <= 1e-10 over {combos} graph/kernel combos",
                   elapsed, 60.0)
    assert ok, line
    assert elapsed <= 60.0, line


def test_02_power_chain_slacks(gasket6, sub_g6):
    t0 = time.perf_counter()
    worst = 0.0
    for K in (
        nearest_neighbor_kernel(gasket6, lazy=0.5),
        heavy_tailed_kernel(gasket6, beta=2.1),
        sub_g6,
    ):
        # p cycles 1, 2, 4 across samples: 300 draws give 100 per exponent
        rep = verify_form_identities(K, samples=300, seed=2)
        assert CHAIN_NAMES <= set(rep.checks)
        worst = min(worst, min(c.worst for c in rep.checks.values() if c.kind == "inequality"))
    elapsed = time.perf_counter() - t0
    ok = worst >= -1e-12
    line = verdict(2, "power-chain-slacks", ok,
                   f"worst normalized slack {worst:.2e} >= -1e-12 over 3 kernel kinds",
                   elapsed, 60.0)
    assert ok, line
    assert elapsed <= 60.0, line


def test_03_tilted_energy_inequality(sub_g6):
    t0 = time.perf_counter()
    n = sub_g6.graph.n_vertices
    worst = 0.0
    count = 0
    bad = []
    for L in (2, 4, 8):
        small, _large = meyer_split(sub_g6, L)
        assert small.locality == L
        rng = np.random.default_rng(100 + L)
        for i in range(34):
            f = np.abs(rng.normal(size=n)) + 0.05
            psi = 0.3 * rng.normal(size=n)
            p = (1.0, 2.0, 4.0)[i % 3]
            rep = verify_davies_inequality(small, f, psi, p)
            scale = max(abs(rep.lhs), abs(rep.main), abs(rep.penalty), 1e-300)
            worst = min(worst, rep.slack / scale)
            if not rep.ok:
                bad.append((L, i, rep.slack))
            count += 1
    elapsed = time.perf_counter() - t0
    ok = count >= 100 and not bad
    line = verdict(3, "tilted-energy-inequality", ok,
                   f"{count} seeded instances, worst normalized slack {worst:.2e} >= -1e-10",
                   elapsed, 120.0)
    assert ok, (line, bad)
    assert elapsed <= 120.0, line


def test_04_cutoff_deviation_and_windows(sub_g7, gasket7, deep_center_g7):
    t0 = time.perf_counter()
    x = deep_center_g7
    worst_margin = np.inf
    cells = 0
    for r in (32, 64):
        for n in (1, 2, 4):
            phi = csj_cutoff(sub_g7, x, r, n)
            assert phi.deviation is not None and phi.deviation <= 1.0 / n
            assert csj_window_violation(gasket7, phi) == 0.0
            assert phi.endpoint_violation(gasket7) == 0.0
            worst_margin = min(worst_margin, 1.0 / n - phi.deviation)
            cells += 1
    elapsed = time.perf_counter() - t0
    ok = cells == 6
    line = verdict(4, "cutoff-invariants", ok,
                   f"deviation <= 1/n and windows exact on {cells} cells, "
                   f"smallest margin {worst_margin:.4f}",
                   elapsed, 120.0)
    assert ok, line
    assert elapsed <= 120.0, line


def test_05_csj_constants_finite_with_bounded_drift(sub_g7, deep_center_g7):
    t0 = time.perf_counter()
    x = deep_center_g7
    frontier = {}
    for r in (32, 64):
        fam = csj_test_family(sub_g7, x, r)
        for n in (1, 2, 4):
            rep = verify_csj(sub_g7, csj_cutoff(sub_g7, x, r, n), fam, r, n)
            assert rep.finite
            frontier[(r, n)] = {row.c1: row.c2 for row in rep.rows}
    # a zero C2 means the C1 energy term alone absorbs the frontier at that
    # scale; only cells positive at both scales have a constant to compare
    drifts = []
    for n in (1, 2, 4):
        for c1 in (1.0, 10.0, 100.0):
            a, b = frontier[(32, n)][c1], frontier[(64, n)][c1]
            if min(a, b) > 0:
                drifts.append(max(a, b) / min(a, b))
    elapsed = time.perf_counter() - t0
    ok = len(frontier) == 6 and drifts and max(drifts) <= 4.0
    line = verdict(5, "csj-constants", ok,
                   f"finite frontier on 6 cells, cross-scale drift {max(drifts):.3f} <= 4 "
                   f"over {len(drifts)} comparable cells",
                   elapsed, 300.0)
    assert ok, line
    assert elapsed <= 300.0, line


def test_06_hkp_envelope_two_sided(sub_g7, gasket7, lattice1d):
    t0 = time.perf_counter()
    pairs = sample_core_pairs(gasket7, max_distance=24, n_pairs=150, seed=5)
    rep = check_hkp(sub_g7, [2 ** k for k in range(8)], pairs, gasket7.nominal_df, 2.1)
    main_ok = rep.finite and not rep.zero_cells and rep.dyadic_drift() <= 2.0
    K1 = heavy_tailed_kernel(lattice1d, beta=1.0)
    pairs1 = sample_core_pairs(lattice1d, max_distance=16, n_pairs=40, seed=5)
    rep1 = check_hkp(K1, [1, 2, 4, 8, 16], pairs1, 1.0, 1.0)
    sanity_ok = rep1.finite and rep1.c_up * rep1.c_low <= 100.0
    elapsed = time.perf_counter() - t0
    ok = main_ok and sanity_ok
    line = verdict(6, "hkp-envelope", ok,
                   f"C_up={rep.c_up:.4g} C_low={rep.c_low:.4g} drift={rep.dyadic_drift():.3f} <= 2; "
                   f"line sanity product {rep1.c_up * rep1.c_low:.3g} <= 100",
                   elapsed, 600.0)
    assert ok, line
    assert elapsed <= 600.0, line


def test_07_perturbation_stability(sub_g7, gasket7):
    t0 = time.perf_counter()
    pairs = sample_core_pairs(gasket7, max_distance=24, n_pairs=150, seed=5)
    grid = [2 ** k for k in range(8)]
    base = check_hkp(sub_g7, grid, pairs, gasket7.nominal_df, 2.1)
    Kp = perturb_kernel(sub_g7, seed=23, amplitude=2.0)
    pert = check_hkp(Kp, grid, pairs, gasket7.nominal_df, 2.1)
    up = pert.c_up / base.c_up
    low = pert.c_low / base.c_low
    change = max(up, 1.0 / up, low, 1.0 / low)
    elapsed = time.perf_counter() - t0
    ok = base.finite and pert.finite and change <= 8.0
    line = verdict(7, "perturbation-stability", ok,
                   f"constant ratios up={up:.3f} low={low:.3f}, max change {change:.3f} <= 8",
                   elapsed, 600.0)
    assert ok, line
    assert elapsed <= 600.0, line


def test_08_resolvent_profile_bounds(sub_g7, deep_center_g7):
    t0 = time.perf_counter()
    x = deep_center_g7
    c1 = {}
    for r in (16, 32):
        _h, rep = funh_builder(sub_g7, x, r, r)
        assert rep.bound_ok, (r, rep.max_h, rep.bound)
        assert rep.c1_empirical > 0.0
        c1[r] = rep.c1_empirical
    drift = max(c1[16], c1[32]) / min(c1[16], c1[32])
    elapsed = time.perf_counter() - t0
    ok = drift <= 2.0
    line = verdict(8, "resolvent-profile", ok,
                   f"max h within 2 r^beta at both scales, lower profile "
                   f"c1(16)={c1[16]:.4g} c1(32)={c1[32]:.4g} drift {drift:.3f} <= 2",
                   elapsed, 120.0)
    assert ok, line
    assert elapsed <= 120.0, line


def test_09_ball_survival_probabilities(sub_g7, deep_center_g7):
    t0 = time.perf_counter()
    sur = mc_exit_time(sub_g7, deep_center_g7, [8, 16], [0.01], trials=10_000, seed=9)
    worst = max(row.p_hat + row.half_width for row in sur.rows)
    elapsed = time.perf_counter() - t0
    ok = len(sur.rows) == 2 and worst <= 0.5
    line = verdict(9, "ball-survival", ok,
                   f"exit estimate plus half-width at most {worst:.4f} <= 1/2 for r in {{8, 16}}",
                   elapsed, 180.0)
    assert ok, line
    assert elapsed <= 180.0, line


def test_10_nash_constant_growth(sub_g6, sub_g7, gasket6, gasket7, deep_center_g7):
    t0 = time.perf_counter()
    df = gasket7.nominal_df
    radii = list(range(1, 33))
    x6 = int(np.argmax(gasket6.boundary_distance()))
    n6 = nash_constant(sub_g6, df, 2.1, ball_indicator_family(gasket6, x6, radii))
    n7 = nash_constant(sub_g7, df, 2.1, ball_indicator_family(gasket7, deep_center_g7, radii))
    growth = n7.constant / n6.constant
    elapsed = time.perf_counter() - t0
    ok = np.isfinite(growth) and n6.constant > 0 and growth <= 2.0
    line = verdict(10, "nash-constant", ok,
                   f"C_N level 6 -> 7 growth {growth:.3f} <= 2 "
                   f"(witnesses {n6.witness}/{n7.witness})",
                   elapsed, 120.0)
    assert ok, line
    assert elapsed <= 120.0, line


def test_11_off_diagonal_upper_bound(sub_g7, gasket7):
    t0 = time.perf_counter()
    pairs = sample_core_pairs(gasket7, max_distance=24, n_pairs=60, seed=11, min_distance=4)
    rep = off_diagonal_check(sub_g7, pairs, [4.0, 16.0, 64.0], gasket7.nominal_df, 2.1, c3=1.0)
    od1 = rep.c_od1_by_t
    drift = rep.dyadic_drift()
    elapsed = time.perf_counter() - t0
    # at t = 64 every sampled pair is inside the on-diagonal regime, so the
    # far-field constant is measured on the t = 4 and t = 16 columns
    ok = (
        len(od1) >= 2
        and all(np.isfinite(v) and v > 0 for v in od1.values())
        and drift <= 2.0
    )
    line = verdict(11, "off-diagonal-upper", ok,
                   "far-field constants "
                   + ", ".join(f"t={t:g}: {v:.4g}" for t, v in sorted(od1.items()))
                   + f", dyadic drift {drift:.3f} <= 2",
                   elapsed, 300.0)
    assert ok, line
    assert elapsed <= 300.0, line


IDENTITIES_TEXT = """
[graph]
generator = gasket
level = 3

[kernel]
kind = direct
beta = 2.1

[experiment]
tag = identities
seed = 3

[grids]
samples = 40
"""

EXIT_TEXT = """
[graph]
generator = gasket
level = 4

[kernel]
kind = direct
beta = 2.1

[experiment]
tag = exit
seed = 5

[grids]
r = 2 4
delta = 0.05 0.1
trials = 1000
"""


def test_12_deterministic_reports(tmp_path):
    t0 = time.perf_counter()
    compared = 0
    for text in (IDENTITIES_TEXT, EXIT_TEXT):
        results = []
        for run in ("a", "b"):
            cfg = parse_config_text(text)
            res = run_experiment(cfg, base_dir=str(tmp_path / f"{cfg.tag}-{run}"))
            assert res.ok, res.summary
            results.append(res)
        first, second = results
        names1 = sorted(Path(p).name for p in first.files)
        names2 = sorted(Path(p).name for p in second.files)
        assert names1 == names2 and names1
        for name in names1:
            b1 = (Path(first.out_dir) / name).read_bytes()
            b2 = (Path(second.out_dir) / name).read_bytes()
            assert b1 == b2, f"{name} differs between identical runs"
            compared += 1
    elapsed = time.perf_counter() - t0
    ok = compared >= 4
    line = verdict(12, "determinism", ok,
                   f"{compared} report files byte-identical across seeded reruns",
                   elapsed)
    assert ok, line


def test_12_deterministic_reports_json_stable(tmp_path):
    # same config, separate parses: canonical text and hash agree, and the
    # summary JSON round-trips to the identical byte sequence
    cfg1 = parse_config_text(IDENTITIES_TEXT)
    cfg2 = parse_config_text(IDENTITIES_TEXT)
    assert canonical_text(cfg1) == canonical_text(cfg2)
    res = run_experiment(cfg1, base_dir=str(tmp_path))
    payload = json.loads((Path(res.out_dir) / "identities_summary.json").read_text())
    assert payload["config_hash"] == config_hash(cfg2)
