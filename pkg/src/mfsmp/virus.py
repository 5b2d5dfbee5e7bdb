"""Attacker/defender infection model and its scenario pipelines.

State x is the infection level with logistic growth gamma(x) = kappa x (1 - x/K).
The attacker (player 0) pushes the drift up with u1, the defender (player 1)
pushes it down with u2; both controls live in [0, 1]. With the mean-field
multiplier the drift is (gamma(x) + u1 - u2) * ||m||_alpha.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .adjoint import GameResult, pointwise_max_check, solve_game_fixed_point
from .errors import InvalidParams
from .measure import abs_pow, signed_pow, signed_root
from .model import InitialLaw, ModelSpec, PlayerCost, ProductKernel, point_law
from .noise import aux_generator
from .particles import (
    ConstantPolicy,
    FunctionPolicy,
    ParticleEnsemble,
    TimeGrid,
    simulate_particles,
)

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True)
class VirusParams:
    kappa: float = 10.0
    K: float = 2.0
    sigma: float = 0.02
    alpha: float = 1.2
    theta1: float = 0.1
    theta2: float = 0.3
    c1: float = 0.8
    c1_bar: float = 0.8
    e: float = 0.3
    x0: float = None          # point initial state; None picks the scenario default
    jitter: float = 0.05      # std of the noise around the two game atoms
    modes: tuple = (1.0, 2.0)
    drift_mode: str = "signed"
    mf_term: str = "catalog"
    horizon: float = 1.0

    def __post_init__(self):
        if not (self.kappa > 0 and self.K > 0):
            raise InvalidParams("kappa and K must be positive")
        if not self.alpha >= 1:
            raise InvalidParams("alpha must be >= 1")
        if self.sigma < 0 or self.c1 < 0 or self.c1_bar < 0 or self.jitter < 0:
            raise InvalidParams("sigma, c1, c1_bar and jitter must be nonnegative")
        if not -1 <= self.e <= 1:
            raise InvalidParams("effort e must lie in [-1, 1]")
        if self.drift_mode not in ("signed", "norm"):
            raise InvalidParams("drift_mode must be 'signed' or 'norm'")
        if self.mf_term not in ("catalog", "printed"):
            raise InvalidParams("mf_term must be 'catalog' or 'printed'")
        if not self.horizon > 0:
            raise InvalidParams("horizon must be positive")

    def gamma(self, x):
        return self.kappa * x * (1.0 - x / self.K)

    def gamma_x(self, x):
        return self.kappa * (1.0 - 2.0 * x / self.K)

    def to_dict(self):
        d = asdict(self)
        d["modes"] = list(self.modes)
        return d


def effort_controls(e: float):
    """(u1, u2) with u2 - u1 = e and both inside [0, 1]."""
    return (max(-e, 0.0), max(e, 0.0))


def _moment_norm(samples, alpha, mode):
    if mode == "norm":
        return float(np.mean(abs_pow(samples, alpha))) ** (1.0 / alpha)
    return float(signed_root(np.mean(signed_pow(samples, alpha)), alpha))


def build_virus_spec(params: VirusParams, mean_field: bool = True,
                     initial_law: InitialLaw = None) -> ModelSpec:
    """Two-player model: f1 = u1^2/2, f2 = x^2/2 + u2^2/2,
    h1 = -(c1/a)|x|^a - (cb/a) M_a(m), h2 = -h1, M_a the a-th absolute moment.
    """
    P = params
    a = P.alpha

    def c(t, x, u):
        return P.gamma(x) + u[0] - u[1]

    def c_x(t, x, u):
        return P.gamma_x(x) + 0.0 * u[0]

    if mean_field:
        kern = ProductKernel(c, g=lambda y: y, c_x=c_x, g_y=lambda y: np.ones_like(y))
    else:
        kern = ProductKernel(c, c_x=c_x)

    def moment(m):
        return float(np.mean(abs_pow(m.samples, a)))

    def term_x(x):
        return abs_pow(x, a - 1.0) * np.sign(x)

    attacker = PlayerCost(
        running=lambda t, x, m, u: 0.5 * u[0] ** 2,
        terminal=lambda x, m: -(P.c1 / a * abs_pow(x, a) + P.c1_bar / a * moment(m)),
        running_x=lambda t, x, m, u: 0.0 * x,
        terminal_x=lambda x, m: -P.c1 * term_x(x),
        running_mf_x=lambda t, xs, us, w, x, m: np.zeros_like(x),
        terminal_mf_x=lambda xs, w, x, m: -P.c1_bar * term_x(x) * np.mean(w),
        depends_on_m=True,
    )
    defender = PlayerCost(
        running=lambda t, x, m, u: 0.5 * x * x + 0.5 * u[1] ** 2,
        terminal=lambda x, m: P.c1 / a * abs_pow(x, a) + P.c1_bar / a * moment(m),
        running_x=lambda t, x, m, u: x,
        terminal_x=lambda x, m: P.c1 * term_x(x),
        running_mf_x=lambda t, xs, us, w, x, m: np.zeros_like(x),
        terminal_mf_x=lambda xs, w, x, m: P.c1_bar * term_x(x) * np.mean(w),
        depends_on_m=True,
    )

    responses = None
    if P.drift_mode == "signed":
        def nrm(m):
            return _moment_norm(m.samples, a, "signed") if mean_field else 1.0

        # argmax of G (gamma + u1 - u2)(-p_i) - u_i^2/2 over [0, 1]
        responses = (
            lambda t, x, m, p, q, ell, u: -nrm(m) * p,
            lambda t, x, m, p, q, ell, u: nrm(m) * p,
        )
    return ModelSpec(
        alpha=a, horizon=P.horizon, kernel=kern, sigma=lambda t, x: P.sigma,
        sigma_x=lambda t, x: 0.0, costs=(attacker, defender),
        thetas=(P.theta1, P.theta2), boxes=((0.0, 1.0), (0.0, 1.0)),
        initial_law=initial_law or point_law(P.x0 if P.x0 is not None else 1.0),
        drift_mode=P.drift_mode, best_responses=responses, name="virus")


def printed_mf_term(params: VirusParams):
    """Cross-particle driver term in the form printed for the virus model.

    (1/w_i) mean_j w_j p_j [ |x_i|^(a-1) c_j / G^(a-1) + |x_i|^a gamma'(x_i) / (a G^(a-1)) ],
    with G the alpha-norm of m and c_j = gamma(x_j) + u1_j - u2_j.
    """
    a = params.alpha

    def term(spec, i, t, x, u, m, p_next, w):
        G = _moment_norm(m.samples, a, spec.drift_mode)
        if G == 0:
            return np.zeros_like(x)
        den = abs(G) ** (a - 1.0)
        c = params.gamma(x) + u[0] - u[1]
        s1 = np.mean(w * p_next * c)
        s2 = np.mean(w * p_next)
        return (abs_pow(x, a - 1.0) * s1 + abs_pow(x, a) * params.gamma_x(x) * s2 / a) / den / w

    return term


# -- artifacts -----------------------------------------------------------

@dataclass
class RunArtifacts:
    """Tables to be written as CSV plus the manifest."""

    manifest: dict
    tables: dict = field(default_factory=dict)  # file name -> (header, rows)

    def add(self, name, header, rows):
        self.tables[name] = (list(header), rows)

    def write(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        man = os.path.join(out_dir, "manifest.json")
        pending = dict(self.manifest, status="running")
        _write_json(man, pending)
        for name, (header, rows) in sorted(self.tables.items()):
            with open(os.path.join(out_dir, name), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for r in rows:
                    w.writerow([_fmt(v) for v in r])
        _write_json(man, dict(self.manifest, status="complete", files=sorted(self.tables)))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, float) and not np.isfinite(o):
        return str(o)
    return o


def _write_json(path, obj):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def series_rows(ens: ParticleEnsemble, alpha: float):
    S = ens.surviving()
    rows = []
    for k, t in enumerate(ens.grid.times):
        col = S[:, k]
        qs = np.quantile(col, QUANTILES)
        rows.append([t, col.mean(), col.var(), np.mean(abs_pow(col, alpha)), *qs])
    return rows


SERIES_HEADER = ["t", "mean", "var", "alpha_moment", "q05", "q25", "q50", "q75", "q95"]


def histogram_tables(ens: ParticleEnsemble, steps, n_bins: int = 40):
    S = ens.surviving()
    lo, hi = float(S[:, steps].min()), float(S[:, steps].max())
    if hi <= lo:
        hi = lo + 1e-9
    edges = np.linspace(lo, hi, n_bins + 1)
    out = {}
    for k in steps:
        counts, _ = np.histogram(S[:, k], bins=edges)
        mass = counts / S.shape[0]
        out[f"hist_{k}.csv"] = [[edges[j], edges[j + 1], mass[j]] for j in range(n_bins)]
    return out


def binned_controls(ens: ParticleEnsemble, bins: int = 32):
    """Per-step quantile-bin averages of the controls actually applied."""
    X = ens.states[ens.alive]
    U = ens.controls[:, ens.alive]
    rows = []
    for k in range(ens.grid.n_steps):
        order = np.argsort(X[:, k], kind="stable")
        for g in np.array_split(order, min(bins, order.size)):
            rows.append([k * ens.grid.dt, X[g, k].mean(), U[0, g, k].mean(), U[1, g, k].mean()])
    return rows


def _snapshots(grid):
    N = grid.n_steps
    return sorted({0, N // 4, N // 2, (3 * N) // 4, N})


def _base_manifest(scenario, params, n, grid, seed, extra=None):
    man = {"scenario": scenario, "params": params.to_dict(), "n": int(n),
           "dt": grid.dt, "horizon": grid.horizon, "seed": int(seed),
           "scheme": {"integrator": "euler-maruyama", "noise": "philox per particle",
                      "blowup_level": 1e6}}
    if extra:
        man.update(extra)
    return man


def _ensemble_artifacts(art, ens, params):
    art.add("series.csv", SERIES_HEADER, series_rows(ens, params.alpha))
    for name, rows in histogram_tables(ens, _snapshots(ens.grid)).items():
        art.add(name, ["bin_left", "bin_right", "mass"], rows)
    art.add("controls.csv", ["t", "bin_center", "u1", "u2"], binned_controls(ens))


# -- scenarios -----------------------------------------------------------

@dataclass
class ScenarioRun:
    artifacts: RunArtifacts
    ensembles: dict
    game: GameResult = None


def run_uncontrolled(params: VirusParams, n: int, grid: TimeGrid, seed: int,
                     on_blowup: str = "absorb") -> ScenarioRun:
    """dx = gamma(x) dt + sigma dB from x0 (default 0.3)."""
    x0 = params.x0 if params.x0 is not None else 0.3
    spec = build_virus_spec(params, mean_field=False, initial_law=point_law(x0))
    ens = simulate_particles(spec, ConstantPolicy([0.0, 0.0]), n, grid, seed, on_blowup=on_blowup)
    art = RunArtifacts(_base_manifest("uncontrolled", params, n, grid, seed,
                                      {"x0": x0, "blowup_fraction": ens.blowup_fraction}))
    _ensemble_artifacts(art, ens, params)
    return ScenarioRun(art, {"uncontrolled": ens})


def run_constant_effort(params: VirusParams, mean_field: bool, n: int, grid: TimeGrid,
                        seed: int, on_blowup: str = "abort") -> ScenarioRun:
    """Constant effort u2 - u1 = e from x0 (default 1), with or without the multiplier."""
    x0 = params.x0 if params.x0 is not None else 1.0
    spec = build_virus_spec(params, mean_field=mean_field, initial_law=point_law(x0))
    pol = ConstantPolicy(effort_controls(params.e))
    ens = simulate_particles(spec, pol, n, grid, seed, on_blowup=on_blowup)
    art = RunArtifacts(_base_manifest("constant-effort", params, n, grid, seed,
                                      {"x0": x0, "mean_field": mean_field,
                                       "blowup_fraction": ens.blowup_fraction}))
    _ensemble_artifacts(art, ens, params)
    return ScenarioRun(art, {"constant-effort": ens})


def feedback_policy(params: VirusParams) -> FunctionPolicy:
    """u1 = 0, u2 = clip(||m||_alpha x, 0, 1)."""
    a, mode = params.alpha, params.drift_mode

    def fn(t, x, m):
        G = _moment_norm(m.samples, a, mode)
        return np.stack([np.zeros_like(x), np.clip(G * x, 0.0, 1.0)])

    return FunctionPolicy(fn, 2, name="norm_state_feedback")


def run_feedback(params: VirusParams, n: int, grid: TimeGrid, seed: int,
                 on_blowup: str = "abort") -> ScenarioRun:
    """Mean-field model under the state feedback, next to the open-loop effort run."""
    x0 = params.x0 if params.x0 is not None else 1.0
    spec = build_virus_spec(params, mean_field=True, initial_law=point_law(x0))
    fb = simulate_particles(spec, feedback_policy(params), n, grid, seed, on_blowup=on_blowup)
    ol = simulate_particles(spec, ConstantPolicy(effort_controls(params.e)), n, grid, seed,
                            on_blowup=on_blowup)
    art = RunArtifacts(_base_manifest("feedback", params, n, grid, seed, {
        "x0": x0, "terminal_mean_feedback": float(fb.surviving()[:, -1].mean()),
        "terminal_mean_open_loop": float(ol.surviving()[:, -1].mean()),
        "blowup_fraction": fb.blowup_fraction}))
    _ensemble_artifacts(art, fb, params)
    art.add("series_open_loop.csv", SERIES_HEADER, series_rows(ol, params.alpha))
    return ScenarioRun(art, {"feedback": fb, "open-loop": ol})


def game_initial_law(params: VirusParams) -> InitialLaw:
    a, b = params.modes
    return InitialLaw("bimodal", {"a": float(a), "b": float(b), "weight_a": 0.5,
                                  "jitter": float(params.jitter)})


def max_principle_sample(spec: ModelSpec, res: GameResult, n_nodes: int = 1000,
                         seed: int = 0, tol: float = 1e-3, grid_points: int = 201):
    """Pass rate of the pointwise maximum check on randomly sampled (step, particle) nodes."""
    ens = res.ensemble
    X = ens.states[ens.alive]
    U = ens.controls[:, ens.alive]
    N, n = ens.grid.n_steps, X.shape[0]
    rng = aux_generator(seed)
    ks = rng.integers(0, N, n_nodes)
    js = rng.integers(0, n, n_nodes)
    passed = np.zeros(n_nodes, dtype=bool)
    viol = np.zeros(n_nodes)
    from .measure import EmpiricalMeasure
    for k in np.unique(ks):
        sel = np.flatnonzero(ks == k)
        m = EmpiricalMeasure(np.sort(X[:, k]))
        ok = np.ones(sel.size, dtype=bool)
        worst = np.zeros(sel.size)
        for i in range(spec.n_players):
            a = res.adjoints[i]
            lo, hi = spec.boxes[i]
            chk = pointwise_max_check(spec, i, k * ens.grid.dt, X[js[sel], k], m,
                                      a.p[js[sel], k], a.q[js[sel], k], a.ell[js[sel], k],
                                      U[:, js[sel], k], np.linspace(lo, hi, grid_points), tol)
            ok &= chk.passed
            worst = np.maximum(worst, chk.violation)
        passed[sel] = ok
        viol[sel] = worst
    return float(passed.mean()), viol


def run_game(params: VirusParams, n: int, grid: TimeGrid, seed: int, damping: float = 0.5,
             tol: float = 1e-3, max_iter: int = 50, bins: int = 32) -> ScenarioRun:
    """Full game from the bimodal initial law; returns tables and adjoint summaries."""
    spec = build_virus_spec(params, mean_field=True, initial_law=game_initial_law(params))
    mf = printed_mf_term(params) if params.mf_term == "printed" else None
    res = solve_game_fixed_point(spec, n, grid, seed, damping=damping, tol=tol,
                                 max_iter=max_iter, bins=bins, mf_term=mf)
    ens = res.ensemble
    rate, _ = max_principle_sample(spec, res, seed=seed)
    S = ens.surviving()
    v_min = [float(vt.v.min()) for vt in res.vthetas]
    art = RunArtifacts(_base_manifest("game", params, n, grid, seed, {
        "solver": {"damping": damping, "tol": tol, "max_iter": max_iter, "bins": bins},
        "residuals": res.residuals, "converged": res.converged,
        "initial_mean": float(S[:, 0].mean()), "terminal_mean": float(S[:, -1].mean()),
        "v_min": v_min, "max_principle_pass_rate": rate}))
    art.add("series.csv", SERIES_HEADER, series_rows(ens, params.alpha))
    for name, rows in histogram_tables(ens, _snapshots(grid)).items():
        art.add(name, ["bin_left", "bin_right", "mass"], rows)
    pol = res.policy
    rows = []
    for k in range(grid.n_steps):
        for j, c in enumerate(pol.centers[k]):
            rows.append([k * grid.dt, c, pol.values[0, k, j], pol.values[1, k, j]])
    art.add("controls.csv", ["t", "bin_center", "u1", "u2"], rows)
    adj_rows = []
    for k in range(grid.n_steps + 1):
        row = [k * grid.dt]
        for i in range(spec.n_players):
            a = res.adjoints[i]
            row += [a.p[:, k].mean(), a.p[:, k].std(), res.vthetas[i].v[:, k].min()]
        adj_rows.append(row)
    art.add("adjoints.csv", ["t", "p1_mean", "p1_std", "v1_min", "p2_mean", "p2_std", "v2_min"],
            adj_rows)
    return ScenarioRun(art, {"game": ens}, res)
