"""Randomized diagnostic suites shared by the CLI and the acceptance tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adjoint import build_lq_spec, fitted_gains, lq_riccati_oracle, solve_game_fixed_point
from .measure import (
    DiscreteDistribution,
    from_samples,
    wasserstein,
    wasserstein_lp_oracle,
)
from .model import (
    FUNCTIONALS,
    DriftKernel,
    GateauxDirection,
    cooperative_spec,
    functional_value,
    gateaux_closed_form,
    gateaux_directional,
    gateaux_fd_oracle,
)
from .noise import aux_generator
from .particles import ConstantPolicy, TimeGrid, chaos_study
from .risk import donsker_varadhan, dv_objective


@dataclass
class SuiteResult:
    header: list
    rows: list
    summary: dict


# -- measure derivatives -------------------------------------------------

def _positive_drift_spec(alpha):
    # b = 1 + y + 0.3 sin(x - y) + u stays positive and increasing in y on y > 0
    kern = DriftKernel(
        lambda t, x, y, u: 1.0 + y + 0.3 * np.sin(x - y) + u[0],
        b_x=lambda t, x, y, u: 0.3 * np.cos(x - y) + 0 * u[0],
        b_y=lambda t, x, y, u: 1.0 - 0.3 * np.cos(x - y) + 0 * u[0],
        depends_on_y=True)
    return cooperative_spec(alpha=alpha).replace(kernel=kern)


def gateaux_instance(rng, functional_id):
    """Random (m, d) on positive support with d pushing mass to the right."""
    k = int(rng.integers(3, 21))
    j = int(rng.integers(2, 11))
    m = from_samples(rng.uniform(0.5, 2.5, k))
    minus = rng.uniform(0.5, 2.5, j)
    plus = minus + rng.uniform(0.1, 0.5, j)
    alpha = float(rng.uniform(1.0, 2.5))
    spec = _positive_drift_spec(alpha) if functional_id == "normed_drift" else None
    x = float(rng.uniform(-1.0, 1.0))
    return m, GateauxDirection(from_samples(plus), from_samples(minus)), alpha, spec, x


def gateaux_suite(seed: int, instances: int = 50, eps: float = 1e-4) -> SuiteResult:
    rng = aux_generator(seed)
    rows = []
    worst = {}
    for fid in FUNCTIONALS:
        worst[fid] = 0.0
        for r in range(instances):
            m, d, alpha, spec, x = gateaux_instance(rng, fid)
            form = gateaux_closed_form(fid, m, alpha, spec=spec, x=x)
            exact = gateaux_directional(form, d)

            def F(v, w):
                return functional_value(fid, v, w, alpha, spec=spec, x=x)

            fd = gateaux_fd_oracle(F, m, d, eps)
            rich = gateaux_fd_oracle(F, m, d, eps, richardson=True)
            rel = abs(fd - exact) / abs(exact)
            rel_rich = abs(rich - exact) / abs(exact)
            worst[fid] = max(worst[fid], rel)
            rows.append([fid, r, alpha, exact, fd, rel, rich, rel_rich])
    header = ["functional", "instance", "alpha", "closed_form", "finite_difference",
              "rel_error", "richardson", "rel_error_richardson"]
    return SuiteResult(header, rows, {"eps": eps, "instances": instances,
                                      "max_rel_error": worst})


# -- entropy duality -----------------------------------------------------

def _simplex_perturbations(rng, g, count):
    """Mixtures of the Gibbs law with random Dirichlet points, strictly positive."""
    k = g.size
    lam = rng.uniform(0.0, 1.0, (count, 1)) ** 3
    lam[0] = 1.0
    pts = rng.dirichlet(np.ones(k), count)
    mu = (1.0 - lam) * g + lam * pts
    return mu / mu.sum(axis=1, keepdims=True)


def dv_suite(seed: int, instances: int = 100, max_support: int = 8,
             perturbations: int = 1000) -> SuiteResult:
    rng = aux_generator(seed)
    rows = []
    worst_identity, violations = 0.0, 0
    for r in range(instances):
        k = int(rng.integers(2, max_support + 1))
        phi = 2.0 * rng.standard_normal(k)
        nu = DiscreteDistribution.from_probs(rng.dirichlet(np.ones(k)) * 0.98 + 0.02 / k)
        theta = 0.0
        while theta == 0.0:
            theta = float(rng.uniform(-2.0, 2.0))
        res = donsker_varadhan(phi, nu, theta)
        gap = abs(res.lhs - res.sup_value)
        sign = 1.0 if res.sense == "sup" else -1.0
        worst_pert = -np.inf
        for mu in _simplex_perturbations(rng, res.gibbs.probs, perturbations):
            val = dv_objective(phi, DiscreteDistribution(nu.support, mu), nu, theta)
            worst_pert = max(worst_pert, sign * (val - res.sup_value))
        bad = worst_pert > 1e-12
        violations += int(bad)
        worst_identity = max(worst_identity, gap)
        rows.append([r, k, theta, res.sense, res.lhs, res.sup_value, gap, worst_pert])
    header = ["instance", "support", "theta", "sense", "lhs", "optimum_value",
              "identity_residual", "worst_perturbation_gain"]
    return SuiteResult(header, rows, {"instances": instances, "perturbations": perturbations,
                                      "max_identity_residual": worst_identity,
                                      "dominance_violations": violations})


# -- transport -----------------------------------------------------------

def transport_lp_suite(seed: int, instances: int = 200, max_support: int = 8) -> SuiteResult:
    rng = aux_generator(seed)
    rows, worst = [], 0.0
    for r in range(instances):
        a = rng.normal(0, 1, int(rng.integers(1, max_support + 1)))
        b = rng.normal(0.3, 1.5, int(rng.integers(1, max_support + 1)))
        order = float(rng.choice([1.0, 1.5, 2.0]))
        w = wasserstein(from_samples(a), from_samples(b), order)
        lp = wasserstein_lp_oracle(from_samples(a), from_samples(b), order, max_support)
        worst = max(worst, abs(w - lp))
        rows.append([r, a.size, b.size, order, w, lp, abs(w - lp)])
    header = ["instance", "n1", "n2", "order", "quantile_coupling", "lp", "abs_diff"]
    return SuiteResult(header, rows, {"max_abs_diff": worst})


def random_lipschitz(rng):
    """(f, lipschitz constant) from a random family."""
    kind = int(rng.integers(0, 3))
    if kind == 0:
        knots = np.sort(rng.uniform(-4, 4, 8))
        slopes = rng.uniform(-1, 1, 9)
        vals = np.concatenate([[0.0], np.cumsum(slopes[1:-1] * np.diff(knots))])

        def f(x):
            x = np.asarray(x, dtype=float)
            y = np.interp(x, knots, vals)
            y = np.where(x < knots[0], vals[0] + slopes[0] * (x - knots[0]), y)
            return np.where(x > knots[-1], vals[-1] + slopes[-1] * (x - knots[-1]), y)

        return f, float(np.max(np.abs(slopes)))
    if kind == 1:
        w, ph, c = rng.uniform(0.2, 5), rng.uniform(0, 2 * np.pi), rng.uniform(0.1, 2)
        return (lambda x: c * np.sin(w * np.asarray(x) + ph)), c * w
    c, s = rng.uniform(-2, 2), rng.uniform(0.1, 2)
    return (lambda x: s * np.abs(np.asarray(x) - c)), s


def kr_suite(seed: int, functions: int = 1000) -> SuiteResult:
    """Check |int f d(m1 - m2)| <= Lip(f) W1(m1, m2) for random Lipschitz f."""
    rng = aux_generator(seed)
    rows, violations, worst = [], 0, -np.inf
    for r in range(functions):
        a = rng.normal(0, 1, int(rng.integers(1, 60)))
        b = rng.normal(rng.uniform(-1, 1), rng.uniform(0.3, 2), int(rng.integers(1, 60)))
        f, lip = random_lipschitz(rng)
        lhs = abs(float(np.mean(f(a)) - np.mean(f(b))))
        rhs = lip * wasserstein(from_samples(a), from_samples(b), 1.0)
        slack = lhs - rhs
        worst = max(worst, slack / max(rhs, 1e-300))
        violations += int(slack > 1e-12 * max(1.0, rhs))
        rows.append([r, lhs, rhs])
    return SuiteResult(["function", "integral_gap", "lipschitz_times_w1"], rows,
                       {"violations": violations, "max_relative_slack": worst})


# -- linear-quadratic reduction ------------------------------------------

def lq_suite(seed: int, n: int = 10000, dt: float = 1e-2, horizon: float = 1.0,
             a: float = 0.5, q: float = 1.0, r: float = 1.0, s: float = 0.5,
             sigma: float = 0.3, box: float = 50.0, damping: float = 0.5,
             tol: float = 1e-3, max_iter: int = 50, bins: int = 32) -> SuiteResult:
    grid = TimeGrid(horizon, dt)
    spec = build_lq_spec(a, q, r, s, sigma, horizon, box=(-box, box))
    res = solve_game_fixed_point(spec, n, grid, seed, damping=damping, tol=tol,
                                 max_iter=max_iter, bins=bins)
    ric = lq_riccati_oracle(a, q, r, s, sigma, horizon, grid)
    fit = fitted_gains(res.policy)
    err = np.abs(fit - ric.gain[:-1])
    rows = [[k * dt, fit[k], ric.gain[k], err[k]] for k in range(grid.n_steps)]
    return SuiteResult(["t", "fitted_gain", "riccati_gain", "abs_error"], rows,
                       {"sup_gain_error": float(err.max()), "residuals": res.residuals,
                        "converged": res.converged})


# -- propagation of chaos ------------------------------------------------

def chaos_suite(seed: int, n_list, reps: int = 8, alphas=(1.0, 1.2, 2.0), mu: float = 1.0,
                sigma: float = 0.1, dt: float = 0.02, horizon: float = 1.0,
                tabulate: int = 160):
    """Per-alpha error table and slope table."""
    grid = TimeGrid(horizon, dt)
    rows, slope_rows = [], []
    refs = {}
    for a in alphas:
        spec = cooperative_spec(mu=mu, sigma=sigma, alpha=float(a), horizon=horizon)
        res = chaos_study(spec, ConstantPolicy([0.0]), list(n_list), reps, seed, grid,
                          tabulate=tabulate)
        for n, e, se in res.rows():
            rows.append([float(a), n, e, se])
        slope_rows.append([float(a), res.slope, res.intercept])
        refs[repr(float(a))] = res.reference_residuals
    errors = SuiteResult(["alpha", "n", "error", "std_error"], rows, {})
    slopes = SuiteResult(["alpha", "slope", "intercept"], slope_rows,
                         {"slopes": [r[1] for r in slope_rows], "reference_residuals": refs})
    return errors, slopes
