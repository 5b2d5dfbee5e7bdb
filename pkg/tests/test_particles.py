import numpy as np
import pytest

from mfsmp.errors import BlowUp, GridMismatch, NoConvergence, PolicyOutOfBox, TooFewParticles
from mfsmp.measure import point_mass, wasserstein
from mfsmp.model import DriftKernel, ProductKernel, cooperative_spec, point_law
from mfsmp.particles import (
    ConstantPolicy,
    FeedbackTable,
    FunctionPolicy,
    MeasureFlow,
    Noise,
    TimeGrid,
    bootstrap_flow_error,
    chaos_study,
    em_step,
    exchangeability_check,
    flow_distance,
    mckv_picard,
    simulate_frozen_flow,
    simulate_particles,
)
from mfsmp.virus import VirusParams, build_virus_spec

ZERO = ConstantPolicy([0.0])


def still_spec(sigma=0.0):
    kern = DriftKernel(lambda t, x, y, u: 0.0 * (x - y) + 0 * u[0])
    return cooperative_spec(sigma=sigma).replace(kernel=kern)


def test_em_step_examples():
    assert em_step(np.array([0.4]), 0.0, 0.0, 0.1, np.array([0.3]))[0] == 0.4
    assert em_step(np.array([0.0]), 1.0, 0.0, 0.1, np.array([0.0]))[0] == pytest.approx(0.1)
    assert em_step(np.array([1.0]), 2.0, 3.0, 0.01, np.array([0.05]))[0] == pytest.approx(1.17)


def test_time_grid_rejects_non_dividing_step():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0.3)
    g = TimeGrid(1.0, 0.25)
    assert g.n_steps == 4 and np.allclose(g.times, [0, 0.25, 0.5, 0.75, 1.0])


def test_frozen_dynamics_keep_initial_draws():
    g = TimeGrid(1.0, 0.1)
    ens = simulate_particles(still_spec(), ZERO, 50, g, seed=3)
    assert np.all(ens.states == ens.states[:, :1])
    assert np.all(ens.aux_z == 0)


def test_single_particle_uses_self_interaction():
    spec = cooperative_spec(mu=1.0, sigma=0.0, alpha=1.3)
    g = TimeGrid(1.0, 0.1)
    ens = simulate_particles(spec, ConstantPolicy([0.25]), 1, g, seed=0)
    # b(x, x, u) = u, so the drift is |0.25|
    assert np.allclose(np.diff(ens.states[0]), 0.025)


def test_particle_noise_independent_of_ensemble_size():
    spec = cooperative_spec()
    g = TimeGrid(1.0, 0.05)
    a = Noise.draw(spec, 10, g, 5)
    b = Noise.draw(spec, 40, g, 5)
    assert np.array_equal(a.dB, b.dB[:10]) and np.array_equal(a.x0, b.x0[:10])


def test_same_seed_bit_identical(monkeypatch):
    from mfsmp import noise
    spec = cooperative_spec(alpha=1.2)
    g = TimeGrid(1.0, 0.05)
    e1 = simulate_particles(spec, ZERO, 300, g, seed=11)
    noise.set_workers(3)
    try:
        e2 = simulate_particles(spec, ZERO, 300, g, seed=11)
    finally:
        noise.set_workers(1)
    assert np.array_equal(e1.states, e2.states)
    e3 = simulate_particles(spec, ZERO, 300, g, seed=12)
    assert not np.array_equal(e1.states, e3.states)


def test_running_cost_accumulates():
    spec = build_virus_spec(VirusParams(sigma=0.0), mean_field=False, initial_law=point_law(1.0))
    g = TimeGrid(1.0, 0.01)
    ens = simulate_particles(spec, ConstantPolicy([0.2, 0.0]), 3, g, seed=0)
    assert ens.aux_z[0, :, -1] == pytest.approx(0.5 * 0.2 ** 2)


def test_frozen_flow_point_masses():
    spec = cooperative_spec(mu=1.0, sigma=0.0, alpha=1.5)
    g = TimeGrid(1.0, 0.5)
    flow = MeasureFlow(g, (point_mass(0.0),) * 3)
    ens = simulate_frozen_flow(spec, ZERO, flow, 4, g, seed=1)
    x0 = ens.states[:, 0]
    assert ens.states[:, 1] == pytest.approx(x0 + 0.5 * np.abs(np.sin(x0)))


def test_frozen_matches_interacting_without_interaction():
    spec = still_spec(sigma=0.3)
    g = TimeGrid(1.0, 0.05)
    inter = simulate_particles(spec, ZERO, 40, g, seed=2)
    free = simulate_frozen_flow(spec, ZERO, inter.flow(), 40, g, seed=2)
    assert np.array_equal(inter.states, free.states)


def test_frozen_flow_grid_mismatch():
    spec = cooperative_spec()
    g = TimeGrid(1.0, 0.1)
    flow = MeasureFlow(TimeGrid(1.0, 0.05), (point_mass(0.0),) * 21)
    with pytest.raises(GridMismatch):
        simulate_frozen_flow(spec, ZERO, flow, 4, g, seed=0)


def test_policy_outside_box_rejected():
    spec = build_virus_spec(VirusParams())
    with pytest.raises(PolicyOutOfBox):
        simulate_particles(spec, ConstantPolicy([1.5, 0.0]), 5, TimeGrid(1.0, 0.1), seed=0)


def test_blowup_abort_and_absorb():
    spec = build_virus_spec(VirusParams(sigma=1.0), mean_field=False,
                            initial_law=point_law(0.3))
    g = TimeGrid(1.0, 1e-3)
    with pytest.raises(BlowUp):
        simulate_particles(spec, ConstantPolicy([0.0, 0.0]), 2000, g, seed=7)
    ens = simulate_particles(spec, ConstantPolicy([0.0, 0.0]), 2000, g, seed=7, on_blowup="absorb")
    assert 0 < ens.blowup_fraction < 0.5
    dead = ~ens.alive
    k = ens.blowup_step[dead][0]
    j = np.flatnonzero(dead)[0]
    assert np.all(ens.states[j, k:] == ens.states[j, k])


def test_feedback_table_interpolates():
    centers = np.array([[0.0, 1.0, 2.0]])
    values = np.array([[[0.0, 0.5, 1.0]]])
    pol = FeedbackTable(centers, values)
    u = pol.controls(0, 0.0, np.array([-1.0, 0.5, 3.0]), None)
    assert np.allclose(u, [[0.0, 0.25, 1.0]])


def test_picard_constant_map_converges_at_once():
    kern = ProductKernel(lambda t, x, u: 1.0 + 0 * x)
    spec = cooperative_spec(sigma=0.2).replace(kernel=kern)
    g = TimeGrid(1.0, 0.05)
    res = mckv_picard(spec, ZERO, 200, g, seed=0, tol=1e-12)
    # the second iterate reproduces the first exactly
    assert res.converged and res.iterations == 2 and res.residuals[-1] == 0.0


def test_picard_still_flow_is_initial_law():
    g = TimeGrid(1.0, 0.1)
    res = mckv_picard(still_spec(), ZERO, 100, g, seed=4, tol=1e-9)
    assert res.residuals[0] == 0.0
    assert all(np.array_equal(m.samples, res.flow[0].samples) for m in res.flow)


def test_picard_residuals_contract():
    g = TimeGrid(1.0, 0.02)
    res = mckv_picard(cooperative_spec(), ZERO, 500, g, seed=1, tol=1e-6, max_iter=8,
                      raise_on_fail=False)
    r = np.array(res.residuals)
    assert np.all(r[1:] < r[:-1])


def test_picard_no_convergence_carries_result():
    g = TimeGrid(1.0, 0.02)
    with pytest.raises(NoConvergence) as info:
        mckv_picard(cooperative_spec(), ZERO, 100, g, seed=1, tol=1e-12, max_iter=2)
    assert len(info.value.result.residuals) == 2


def test_interacting_flow_is_near_fixed_point():
    spec = cooperative_spec()
    g = TimeGrid(1.0, 0.02)
    ens = simulate_particles(spec, ZERO, 1000, g, seed=5)
    again = simulate_frozen_flow(spec, ZERO, ens.flow(), 1000, g, seed=6)
    assert flow_distance(again.flow(), ens.flow()) <= 3 * bootstrap_flow_error(ens, seed=5) * np.sqrt(2)


def test_chaos_zero_without_interaction():
    kern = ProductKernel(lambda t, x, u: np.cos(x) + u[0])
    spec = cooperative_spec().replace(kernel=kern)
    res = chaos_study(spec, ZERO, [16, 32], 2, seed=0, grid=TimeGrid(1.0, 0.05), n_ref=64)
    assert np.all(res.errors == 0)


def test_chaos_errors_shrink():
    res = chaos_study(cooperative_spec(), ZERO, [32, 128, 512], 4, seed=3, grid=TimeGrid(1.0, 0.05),
                      n_ref=2048)
    assert res.errors[0] > res.errors[1] > res.errors[2]
    assert -0.8 < res.slope < -0.3


def test_exchangeability_symmetric_and_negative_control():
    spec = cooperative_spec()
    g = TimeGrid(1.0, 0.05)
    ens = simulate_particles(spec, ZERO, 2000, g, seed=9)
    assert exchangeability_check(ens).passed
    free = simulate_frozen_flow(spec, ZERO, ens.flow(), 2000, g, seed=10)
    assert exchangeability_check(free).passed

    def by_index(t, x, m):
        return (np.arange(x.size) < x.size // 2)[None, :] * 3.0

    skew = simulate_particles(spec, FunctionPolicy(by_index, 1), 2000, g, seed=9)
    assert not exchangeability_check(skew).passed
    with pytest.raises(TooFewParticles):
        exchangeability_check(simulate_particles(spec, ZERO, 3, g, seed=0))


def test_flow_distance_is_sup_over_time():
    g = TimeGrid(1.0, 0.5)
    f1 = MeasureFlow(g, (point_mass(0.0), point_mass(1.0), point_mass(0.0)))
    f2 = MeasureFlow(g, (point_mass(0.0), point_mass(3.0), point_mass(0.5)))
    assert flow_distance(f1, f2) == 2.0
    assert wasserstein(f1[1], f2[1]) == 2.0
