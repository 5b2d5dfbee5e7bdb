import csv
import json

import numpy as np
import pytest

from mfsmp.adjoint import terminal_adjoint
from mfsmp.errors import InvalidParams
from mfsmp.measure import point_mass
from mfsmp.model import barred_drift, point_law
from mfsmp.particles import ConstantPolicy, TimeGrid, simulate_particles
from mfsmp.virus import (
    SERIES_HEADER,
    VirusParams,
    build_virus_spec,
    effort_controls,
    feedback_policy,
    run_constant_effort,
    run_feedback,
    run_game,
    run_uncontrolled,
)

G1 = TimeGrid(1.0, 1e-3)


def test_params_validation():
    with pytest.raises(InvalidParams):
        VirusParams(alpha=0.8)
    with pytest.raises(InvalidParams):
        VirusParams(e=2.0)
    with pytest.raises(InvalidParams):
        VirusParams(drift_mode="abs")


def test_default_drift_and_terminal_cost():
    P = VirusParams()
    spec = build_virus_spec(P)
    assert barred_drift(spec, 0, 0.3, point_mass(1.0), [0.0, 0.0]) == pytest.approx(2.55)
    h2 = spec.costs[1].h(np.array([1.0]), point_mass(1.0))[0]
    assert h2 == pytest.approx(4 / 3)


def test_effort_controls_split():
    assert effort_controls(0.3) == (0.0, 0.3)
    assert effort_controls(-0.2) == (0.2, 0.0)


def test_zero_effort_point_mass_is_logistic():
    P = VirusParams(e=0.0)
    spec = build_virus_spec(P)
    x = np.linspace(0, 2.5, 7)
    assert np.allclose(barred_drift(spec, 0, x, point_mass(1.0), [0.0, 0.0]), P.gamma(x))


def test_uncontrolled_deterministic_logistic():
    run = run_uncontrolled(VirusParams(sigma=0.0), 20, G1, seed=0)
    path = run.ensembles["uncontrolled"].states[0]
    assert np.all(np.diff(path) > 0) and path[-1] < 2.0 and path[-1] > 1.99
    eq = run_uncontrolled(VirusParams(sigma=0.0, x0=2.0), 5, G1, seed=0)
    assert np.all(eq.ensembles["uncontrolled"].states == 2.0)


def test_uncontrolled_noisy_mean_near_two():
    run = run_uncontrolled(VirusParams(sigma=1.0), 2000, G1, seed=7)
    ens = run.ensembles["uncontrolled"]
    assert abs(ens.surviving()[:, -1].mean() - 2.0) < 0.2
    assert run.artifacts.manifest["blowup_fraction"] == ens.blowup_fraction


def test_constant_effort_stays_below_two():
    run = run_constant_effort(VirusParams(), False, 2000, G1, seed=7)
    X = run.ensembles["constant-effort"].states
    assert np.mean(np.all(X < 2.0, axis=1)) >= 0.9


def test_zero_effort_matches_uncontrolled():
    P = VirusParams(e=0.0, x0=0.3)
    a = run_constant_effort(P, False, 200, G1, seed=3).ensembles["constant-effort"]
    b = run_uncontrolled(P, 200, G1, seed=3).ensembles["uncontrolled"]
    assert np.array_equal(a.states, b.states)


def test_mean_field_raises_trajectories():
    P = VirusParams()
    with_mf = run_constant_effort(P, True, 500, G1, seed=2).ensembles["constant-effort"]
    without = run_constant_effort(P, False, 500, G1, seed=2).ensembles["constant-effort"]
    assert with_mf.states[:, -1].mean() > without.states[:, -1].mean()


def test_effort_monotone_pathwise():
    spec = build_virus_spec(VirusParams(), mean_field=False, initial_law=point_law(1.0))
    g = TimeGrid(1.0, 1e-2)
    lo = simulate_particles(spec, ConstantPolicy(effort_controls(0.1)), 300, g, seed=4)
    hi = simulate_particles(spec, ConstantPolicy(effort_controls(0.6)), 300, g, seed=4)
    assert np.all(hi.states <= lo.states)
    spec_mf = build_virus_spec(VirusParams(), mean_field=True, initial_law=point_law(1.0))
    lo = simulate_particles(spec_mf, ConstantPolicy(effort_controls(0.1)), 300, g, seed=4)
    hi = simulate_particles(spec_mf, ConstantPolicy(effort_controls(0.6)), 300, g, seed=4)
    assert np.all(hi.states.mean(axis=0) <= lo.states.mean(axis=0))


def test_feedback_below_open_loop():
    run = run_feedback(VirusParams(), 2000, G1, seed=7)
    man = run.artifacts.manifest
    assert man["terminal_mean_feedback"] < man["terminal_mean_open_loop"]


def test_feedback_zero_at_origin():
    pol = feedback_policy(VirusParams())
    u = pol.controls(0, 0.0, np.zeros(4), point_mass(0.0))
    assert np.all(u == 0)


def test_feedback_holds_several_starting_points():
    for x0 in (0.5, 1.0, 1.5):
        ens = run_feedback(VirusParams(x0=x0), 500, G1, seed=1).ensembles["feedback"]
        assert np.mean(ens.states[:, -1] < 2.0) > 0.9


def test_terminal_adjoint_vanishes_without_terminal_cost():
    spec = build_virus_spec(VirusParams(c1=0.0, c1_bar=0.0))
    x = np.array([0.5, 1.5, 2.0])
    for i in (0, 1):
        assert np.all(terminal_adjoint(spec, i, x, point_mass(1.0), np.ones(3)) == 0)


def test_small_game_run(tmp_path):
    run = run_game(VirusParams(), 600, TimeGrid(1.0, 0.02), seed=7)
    man = run.artifacts.manifest
    res = run.game
    assert man["converged"] and man["terminal_mean"] > man["initial_mean"]
    U = res.ensemble.controls
    assert U.min() >= 0.0 and U.max() <= 1.0
    assert all(np.all(vt.v > 0) for vt in res.vthetas)
    # wherever p1 >= 0 the attacker's clamp is at 0
    p1 = res.adjoints[0].p[:, :-1]
    assert np.all(res.candidates[0][p1 >= 0] == 0)

    run.artifacts.write(str(tmp_path))
    with open(tmp_path / "series.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(SERIES_HEADER) and len(rows) == 52
    with open(tmp_path / "controls.csv") as fh:
        assert next(csv.reader(fh)) == ["t", "bin_center", "u1", "u2"]
    with open(tmp_path / "hist_0.csv") as fh:
        hist = list(csv.reader(fh))
    assert hist[0] == ["bin_left", "bin_right", "mass"]
    assert sum(float(r[2]) for r in hist[1:]) == pytest.approx(1.0)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "complete" and man["seed"] == 7


def test_game_without_terminal_costs():
    P = VirusParams(c1=0.0, c1_bar=0.0)
    run = run_game(P, 400, TimeGrid(1.0, 0.05), seed=3)
    res = run.game
    for a in res.adjoints:
        assert np.all(a.p[:, -1] == 0)
    # the attacker has only its control cost left, so it does nothing
    assert np.all(res.policy.values[0] == 0)
    assert np.all(res.policy.values[1] >= 0)
