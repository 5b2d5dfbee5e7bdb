"""Acceptance criteria 1-11, each at its stated tolerance and size."""
import filecmp
import time

import numpy as np
import pytest

from mfsmp.cli import main
from mfsmp.model import cooperative_spec, point_law
from mfsmp.particles import ConstantPolicy, TimeGrid, bootstrap_flow_error, mckv_picard
from mfsmp.risk import psi_values, small_theta_fit
from mfsmp.suites import (
    chaos_suite,
    dv_suite,
    gateaux_suite,
    kr_suite,
    lq_suite,
    transport_lp_suite,
)
from mfsmp.virus import (
    VirusParams,
    build_virus_spec,
    game_initial_law,
    max_principle_sample,
    run_constant_effort,
    run_feedback,
    run_game,
)

GAME_SEEDS = (7, 8, 9)


@pytest.fixture(scope="module")
def game_runs():
    """Default game at n=2000, dt=1e-2 for a few seeds, with wall times."""
    out = {}
    for seed in GAME_SEEDS:
        t0 = time.perf_counter()
        run = run_game(VirusParams(), 2000, TimeGrid(1.0, 1e-2), seed)
        out[seed] = (run, time.perf_counter() - t0)
    return out


def test_1_propagation_of_chaos_rate(report):
    t0 = time.perf_counter()
    _, slopes = chaos_suite(11, [64, 128, 256, 512, 1024, 2048], reps=8, alphas=(1.0, 1.2, 2.0),
                            mu=1.0, sigma=0.1, dt=0.02)
    elapsed = time.perf_counter() - t0
    s = slopes.summary["slopes"]
    ok = all(-0.65 <= v <= -0.35 for v in s) and elapsed <= 300
    report(1, ok, f"slopes {', '.join(f'{v:.3f}' for v in s)} (alpha 1, 1.2, 2) in [-0.65, -0.35]; "
                  f"{elapsed:.0f}s <= 300s")
    assert ok


def test_2_picard_contraction(report):
    res = mckv_picard(cooperative_spec(), ConstantPolicy([0.0]), 2000, TimeGrid(1.0, 0.02), seed=5,
                      tol=1e-12, max_iter=10, raise_on_fail=False)
    r = np.array(res.residuals)
    floor = 3 * bootstrap_flow_error(res.ensemble, seed=5)
    hit = np.flatnonzero(r <= floor)
    reached = hit.size > 0
    stop = hit[0] if reached else r.size - 1
    ratios = r[1:stop + 1] / r[:stop]
    ok = reached and bool(np.all(ratios < 1)) and stop + 1 <= 10
    report(2, ok, f"residuals {np.array2string(r[:stop + 1], precision=3)} reach 3x bootstrap "
                  f"error {floor:.3g} at iteration {stop + 1} <= 10; max ratio "
                  f"{ratios.max() if ratios.size else 0:.3f} < 1")
    assert ok


def test_3_gateaux_catalog(report):
    res = gateaux_suite(seed=1, instances=50, eps=1e-4)
    worst = res.summary["max_rel_error"]
    ok = all(v <= 1e-4 for v in worst.values())
    report(3, ok, "max relative error per functional at eps=1e-4: "
                  + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


def test_4_donsker_varadhan(report):
    res = dv_suite(seed=1, instances=100, max_support=8, perturbations=1000)
    s = res.summary
    ok = s["max_identity_residual"] <= 1e-10 and s["dominance_violations"] == 0
    report(4, ok, f"identity residual {s['max_identity_residual']:.1e} <= 1e-10 over 100 instances; "
                  f"{s['dominance_violations']} of 100 instances beaten by a perturbation")
    assert ok


def test_5_small_theta_expansion(report):
    P = VirusParams()
    run = run_constant_effort(P, True, 4000, TimeGrid(1.0, 1e-3), seed=7)
    spec = build_virus_spec(P, True, point_law(1.0))
    ens = run.ensembles["constant-effort"]
    thetas = np.linspace(0.02, 0.2, 10)
    slopes = [small_theta_fit(psi_values(spec, i, ens), thetas).slope for i in (0, 1)]
    ok = all(abs(s - 2.0) <= 0.3 for s in slopes)
    report(5, ok, f"residual exponents {slopes[0]:.3f} (attacker), {slopes[1]:.3f} (defender) "
                  f"within 2 +- 0.3")
    assert ok


def test_6_lq_validation(report):
    t0 = time.perf_counter()
    res = lq_suite(seed=3, n=10000, dt=1e-2)
    elapsed = time.perf_counter() - t0
    err = res.summary["sup_gain_error"]
    ok = res.summary["converged"] and err <= 5e-2 and elapsed <= 120
    report(6, ok, f"sup gain error {err:.4f} <= 5e-2 at n=1e4, dt=1e-2; {elapsed:.0f}s <= 120s")
    assert ok


def test_7_virus_battery(report, game_runs):
    g = TimeGrid(1.0, 1e-3)
    ce = run_constant_effort(VirusParams(e=0.3, x0=1.0), False, 2000, g, seed=7)
    X = ce.ensembles["constant-effort"].states
    below = float(np.mean(np.all(X < 2.0, axis=1)))
    fb = run_feedback(VirusParams(), 2000, g, seed=7).artifacts.manifest
    run, elapsed = game_runs[7]
    man = run.artifacts.manifest
    U = run.game.ensemble.controls
    a = below >= 0.9
    b = fb["terminal_mean_feedback"] < fb["terminal_mean_open_loop"]
    c = (man["converged"] and man["terminal_mean"] > man["initial_mean"]
         and U.min() >= 0 and U.max() <= 1 and elapsed <= 300)
    report(7, a and b and c,
           f"(a) {below:.1%} of paths below 2; (b) feedback terminal mean "
           f"{fb['terminal_mean_feedback']:.3f} < open loop {fb['terminal_mean_open_loop']:.3f}; "
           f"(c) mean {man['initial_mean']:.3f} -> {man['terminal_mean']:.3f}, controls in "
           f"[{U.min():.3f}, {U.max():.3f}], {elapsed:.0f}s")
    assert a and b and c


def test_8_v_positive(report, game_runs):
    mins = []
    for seed, (run, _) in game_runs.items():
        for vt in run.game.vthetas:
            assert vt.theta > 0
            mins.append(float(vt.v.min()))
    ok = all(m > 0 for m in mins)
    report(8, ok, f"min v over all nodes, players and seeds {GAME_SEEDS}: {min(mins):.4g} > 0")
    assert ok


def test_9_maximum_principle(report, game_runs):
    rates = []
    for seed, (run, _) in game_runs.items():
        spec = build_virus_spec(VirusParams(), True, game_initial_law(VirusParams()))
        rate, _ = max_principle_sample(spec, run.game, n_nodes=1000, seed=seed, tol=1e-3)
        rates.append(rate)
    ok = all(r >= 0.95 for r in rates)
    report(9, ok, f"pass rate on 1000 sampled nodes: "
                  + ", ".join(f"seed {s} {r:.1%}" for s, r in zip(GAME_SEEDS, rates)) + " >= 95%")
    assert ok


def test_10_transport(report):
    lp = transport_lp_suite(seed=1, instances=200)
    kr = kr_suite(seed=1, functions=1000)
    ok = lp.summary["max_abs_diff"] <= 1e-9 and kr.summary["violations"] == 0
    report(10, ok, f"quantile coupling vs LP max diff {lp.summary['max_abs_diff']:.1e} <= 1e-9 "
                   f"(200 instances); {kr.summary['violations']} Kantorovich-Rubinstein violations "
                   f"in 1000 Lipschitz functions")
    assert ok


SCENARIO_ARGS = {
    "uncontrolled": [],
    "constant-effort": [],
    "feedback": [],
    "game": ["--seed", "7"],
    "chaos-study": ["--n-list", "64,128,256"],
    "gateaux-check": [],
    "dv-check": [],
    "lq-validate": ["--n", "2000"],
}


def _identical(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or not cmp.common_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors


def test_11_determinism(report, tmp_path):
    differing = []
    for sc, extra in SCENARIO_ARGS.items():
        dirs = []
        for rep in ("first", "second"):
            out = tmp_path / sc / rep
            assert main(["run", "--scenario", sc, "--out", str(out)] + extra) == 0
            dirs.append(out)
        if not _identical(*dirs):
            differing.append(sc)
    ok = not differing
    report(11, ok, f"{len(SCENARIO_ARGS)} scenarios re-run through the CLI; byte-identical: "
                   + ("all" if ok else f"not {differing}"))
    assert ok
