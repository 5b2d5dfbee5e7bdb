"""Euler-Maruyama particle systems for the L^alpha-norm drift model.

Three simulators share one loop:

* ``simulate_particles``   the interacting system, each particle sees the
  empirical law of the whole ensemble;
* ``simulate_frozen_flow`` independent particles driven by a given flow of
  measures;
* ``mckv_picard``          iterates the frozen-flow map to its fixed point
  under common random numbers.

``chaos_study`` couples the first two with shared noise to measure how fast
the interacting particles approach their independent counterparts.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import noise as nz
from .errors import (
    BlowUp,
    GridMismatch,
    InvalidParams,
    NoConvergence,
    NonFiniteResult,
    PolicyOutOfBox,
    ReferenceNotConverged,
    TooFewParticles,
)
from .measure import EmpiricalMeasure, wasserstein_sorted
from .model import ModelSpec

BLOWUP_LEVEL = 1e6
GRID_TOL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0 or not self.horizon > 0:
            raise InvalidParams("dt and horizon must be positive")
        n = int(round(self.horizon / self.dt))
        if n < 1 or abs(n * self.dt - self.horizon) > GRID_TOL * max(1.0, self.horizon):
            raise InvalidParams(f"dt={self.dt} does not divide horizon={self.horizon}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


# -- policies ------------------------------------------------------------

class Policy:
    """Control law; ``controls(k, t, x, m)`` returns a (players, n) array."""

    uniform = False  # True when the control does not depend on the state

    def controls(self, k, t, x, m):
        raise NotImplementedError

    def describe(self):
        return {"type": type(self).__name__}


class ConstantPolicy(Policy):
    uniform = True

    def __init__(self, values):
        self.values = np.atleast_1d(np.asarray(values, dtype=float))

    def controls(self, k, t, x, m):
        return np.repeat(self.values[:, None], np.size(x), axis=1)

    def describe(self):
        return {"type": "constant", "values": self.values.tolist()}


class FunctionPolicy(Policy):
    """Wraps fn(t, x, m) -> array broadcastable to (players, n)."""

    def __init__(self, fn: Callable, n_players: int, name: str = "function"):
        self.fn = fn
        self.n_players = n_players
        self.name = name

    def controls(self, k, t, x, m):
        u = np.asarray(self.fn(t, x, m), dtype=float)
        return np.array(np.broadcast_to(u.reshape(u.shape[0], -1) if u.ndim else u,
                                        (self.n_players, np.size(x))))

    def describe(self):
        return {"type": self.name}


class FeedbackTable(Policy):
    """Piecewise-linear feedback per time step and player.

    ``centers[k]`` holds ascending bin centres at step k and ``values[i][k]``
    player i's control at those centres; evaluation uses np.interp, so it is
    flat outside the occupied range.
    """

    def __init__(self, centers: np.ndarray, values: np.ndarray):
        self.centers = np.asarray(centers, dtype=float)
        self.values = np.asarray(values, dtype=float)

    def controls(self, k, t, x, m):
        c = self.centers[k]
        return np.stack([np.interp(x, c, v[k]) for v in self.values])

    def evaluate(self, k, x):
        return self.controls(k, None, x, None)

    def describe(self):
        return {"type": "feedback_table", "bins": int(self.centers.shape[1])}


# -- ensembles -----------------------------------------------------------

@dataclass(frozen=True)
class MeasureFlow:
    grid: TimeGrid
    measures: tuple

    def __post_init__(self):
        if len(self.measures) != self.grid.n_steps + 1:
            raise GridMismatch("one measure per grid node required")

    def __getitem__(self, k):
        return self.measures[k]

    def __len__(self):
        return len(self.measures)


@dataclass(frozen=True)
class ParticleEnsemble:
    grid: TimeGrid
    states: np.ndarray      # (n, n_steps+1)
    aux_z: np.ndarray       # (players, n, n_steps+1)
    increments: np.ndarray  # (n, n_steps), the Brownian increments used
    controls: np.ndarray    # (players, n, n_steps), left-point controls
    noise_seed: int
    alive: np.ndarray       # (n,) bool; False once absorbed by the guard
    blowup_step: np.ndarray  # (n,) int, -1 when the particle never blew up

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def blowup_fraction(self) -> float:
        return float(1.0 - self.alive.mean())

    def measure(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(np.sort(self.states[self.alive, k]))

    def flow(self) -> MeasureFlow:
        return MeasureFlow(self.grid, tuple(self.measure(k) for k in range(self.grid.n_steps + 1)))

    def surviving(self) -> np.ndarray:
        return self.states[self.alive]


def em_step(x, drift, diff, dt, dW):
    """One Euler-Maruyama step x + drift dt + diff dW."""
    out = x + drift * dt + diff * dW
    if not np.all(np.isfinite(out)):
        raise NonFiniteResult("Euler-Maruyama step produced a non-finite state")
    return out


@dataclass
class Noise:
    """Initial states and increments for particles 0..n-1 of one seed."""

    x0: np.ndarray
    dB: np.ndarray
    seed: int

    @classmethod
    def draw(cls, spec: ModelSpec, n: int, grid: TimeGrid, seed: int) -> "Noise":
        unif, gauss = nz.initial_draws(seed, n)
        x0 = spec.initial_law.sample(unif, gauss)
        dB = nz.brownian_increments(seed, n, grid.n_steps, grid.dt)
        return cls(x0, dB, seed)

    def head(self, n):
        return Noise(self.x0[:n], self.dB[:n], self.seed)


def _check_grid(spec, grid):
    if abs(grid.horizon - spec.horizon) > GRID_TOL * max(1.0, spec.horizon):
        raise GridMismatch(f"grid horizon {grid.horizon} differs from model horizon {spec.horizon}")


def _run(spec: ModelSpec, policy: Policy, grid: TimeGrid, nse: Noise,
         flow: Optional[MeasureFlow], on_blowup: str, tabulate: int) -> ParticleEnsemble:
    if on_blowup not in ("abort", "absorb"):
        raise InvalidParams("on_blowup must be 'abort' or 'absorb'")
    _check_grid(spec, grid)
    if flow is not None and (flow.grid.n_steps != grid.n_steps
                             or abs(flow.grid.dt - grid.dt) > GRID_TOL):
        raise GridMismatch("flow is defined on a different grid")
    n, N, P = nse.x0.size, grid.n_steps, spec.n_players
    dt = grid.dt
    X = np.empty((n, N + 1))
    Z = np.zeros((P, n, N + 1))
    U = np.empty((P, n, N))
    X[:, 0] = nse.x0
    alive = np.ones(n, dtype=bool)
    blow = np.full(n, -1, dtype=np.int64)
    kern, alpha, mode = spec.kernel, spec.alpha, spec.drift_mode
    for k in range(N):
        t = k * dt
        x = X[:, k]
        if flow is None:
            m = EmpiricalMeasure(np.sort(x[alive]))
        else:
            m = flow[k]
        u = np.asarray(policy.controls(k, t, x, m), dtype=float)
        spec.check_controls(u[:, alive], exc=PolicyOutOfBox)
        U[:, :, k] = u
        if isinstance(tabulate, FlowDriftTable):
            drift = tabulate(k, t, x)
        elif tabulate and policy.uniform and flow is not None and kern.depends_on_y:
            drift = _tabulated_drift(kern, t, x, alive, m.samples, u[:, :1], alpha, mode, tabulate)
        else:
            drift, _ = kern.barred(t, x, m.samples, u, alpha, mode)
        for i, cost in enumerate(spec.costs):
            Z[i, :, k + 1] = Z[i, :, k] + cost.f(t, x, m, u) * dt
        xn = x + drift * dt + spec.diffusion(t, x) * nse.dB[:, k]
        bad = alive & ~(np.abs(xn) <= BLOWUP_LEVEL)
        if bad.any():
            idx = np.flatnonzero(bad)
            if on_blowup == "abort":
                raise BlowUp(f"{idx.size} particle(s) left |x| <= {BLOWUP_LEVEL:g} at step {k + 1}",
                             step=k + 1, particles=idx)
            alive[idx] = False
            blow[idx] = k + 1
            if not alive.any():
                raise BlowUp("every particle blew up", step=k + 1, particles=idx)
        dead = ~alive
        xn[dead] = X[dead, k]
        Z[:, dead, k + 1] = Z[:, dead, k]
        X[:, k + 1] = xn
    for a in (X, Z, U):
        a.flags.writeable = False
    return ParticleEnsemble(grid, X, Z, nse.dB, U, nse.seed, alive, blow)


def _drift_spline(kern, t, lo, hi, ys, u_col, alpha, mode, points):
    g = np.linspace(lo, hi, points)
    ug = np.repeat(u_col, points, axis=1)
    bg, _ = kern.barred(t, g, ys, ug, alpha, mode)
    return CubicSpline(g, bg)


def _tabulated_drift(kern, t, x, alive, ys, u_col, alpha, mode, points):
    """Drift of a state-independent control against a frozen measure, read off a spline."""
    xa = x[alive]
    lo, hi = float(xa.min()), float(xa.max())
    if hi - lo < 1e-9:
        return kern.barred(t, x, ys, np.repeat(u_col, x.size, axis=1), alpha, mode)[0]
    return _drift_spline(kern, t, lo, hi, ys, u_col, alpha, mode, points)(x)


class FlowDriftTable:
    """Cubic-spline tables of the drift against a fixed flow, one per step.

    Valid for policies whose control does not depend on the state. Each table
    spans the flow's support widened by ``pad``; states outside it fall back
    to direct evaluation.
    """

    def __init__(self, spec: ModelSpec, policy: Policy, flow: MeasureFlow,
                 points: int = 96, pad: float = 0.5):
        if not policy.uniform:
            raise InvalidParams("drift tables need a state-independent policy")
        self.spec, self.flow = spec, flow
        self.splines, self.bounds, self.u = [], [], []
        kern, a, mode = spec.kernel, spec.alpha, spec.drift_mode
        for k in range(flow.grid.n_steps):
            t = k * flow.grid.dt
            ys = flow[k].samples
            u_col = np.asarray(policy.controls(k, t, ys[:1], flow[k]), dtype=float)[:, :1]
            lo, hi = float(ys[0]) - pad, float(ys[-1]) + pad
            self.splines.append(_drift_spline(kern, t, lo, hi, ys, u_col, a, mode, points))
            self.bounds.append((lo, hi))
            self.u.append(u_col)

    def __call__(self, k, t, x):
        lo, hi = self.bounds[k]
        out = self.splines[k](x)
        outside = (x < lo) | (x > hi)
        if outside.any():
            xo = x[outside]
            out[outside] = self.spec.kernel.barred(
                t, xo, self.flow[k].samples, np.repeat(self.u[k], xo.size, axis=1),
                self.spec.alpha, self.spec.drift_mode)[0]
        return out


def simulate_particles(spec: ModelSpec, policy: Policy, n: int, grid: TimeGrid, seed: int,
                       on_blowup: str = "abort", noise: Noise = None) -> ParticleEnsemble:
    """Interacting particle system; particle i's noise depends only on (seed, i)."""
    if n < 1:
        raise InvalidParams("need at least one particle")
    nse = noise if noise is not None else Noise.draw(spec, n, grid, seed)
    return _run(spec, policy, grid, nse, None, on_blowup, 0)


def simulate_frozen_flow(spec: ModelSpec, policy: Policy, flow: MeasureFlow, n: int,
                         grid: TimeGrid, seed: int, on_blowup: str = "abort",
                         noise: Noise = None, tabulate: int = 0) -> ParticleEnsemble:
    """Independent particles, each driven by the given flow of measures.

    With ``tabulate`` > 0 and a state-independent policy the drift is computed
    on that many grid points per step and spline-interpolated, which keeps the
    cost linear in the flow's sample count. A prebuilt ``FlowDriftTable`` may
    be passed instead.
    """
    if flow.grid.n_steps != grid.n_steps or abs(flow.grid.dt - grid.dt) > GRID_TOL:
        raise GridMismatch("flow is defined on a different grid")
    nse = noise if noise is not None else Noise.draw(spec, n, grid, seed)
    return _run(spec, policy, grid, nse, flow, on_blowup, tabulate)


def flow_distance(f1: MeasureFlow, f2: MeasureFlow) -> float:
    """sup over grid nodes of the order-1 Wasserstein distance."""
    return max(wasserstein_sorted(a.samples, b.samples, 1.0) for a, b in zip(f1, f2))


def bootstrap_flow_error(ens: ParticleEnsemble, n_boot: int = 20, seed: int = 0) -> float:
    """Mean sup_t d1 between the ensemble flow and path-resampled copies of it."""
    S = ens.surviving()
    sorted_cols = np.sort(S, axis=0)
    rng = nz.aux_generator(seed)
    out = []
    for _ in range(n_boot):
        idx = rng.integers(0, S.shape[0], S.shape[0])
        Bs = np.sort(S[idx], axis=0)
        out.append(np.max(np.mean(np.abs(Bs - sorted_cols), axis=0)))
    return float(np.mean(out))


@dataclass
class PicardResult:
    flow: MeasureFlow
    residuals: list
    converged: bool
    ensemble: ParticleEnsemble

    @property
    def iterations(self) -> int:
        return len(self.residuals)


def mckv_picard(spec: ModelSpec, policy: Policy, n: int, grid: TimeGrid, seed: int,
                tol: float = 1e-3, max_iter: int = 20, tabulate: int = 0,
                initial_flow: MeasureFlow = None, raise_on_fail: bool = True,
                noise: Noise = None) -> PicardResult:
    """Fixed point of the frozen-flow map under common random numbers.

    Starts from the flow that keeps the initial law at every node unless
    ``initial_flow`` is given. Residuals are sup_t d1 between consecutive
    flows; iteration stops once a residual drops below ``tol``.
    """
    if not tol > 0 or max_iter < 1:
        raise InvalidParams("tol > 0 and max_iter >= 1 required")
    nse = noise if noise is not None else Noise.draw(spec, n, grid, seed)
    if initial_flow is None:
        m0 = EmpiricalMeasure(np.sort(nse.x0))
        flow = MeasureFlow(grid, (m0,) * (grid.n_steps + 1))
    else:
        flow = initial_flow
    residuals = []
    ens = None
    for _ in range(max_iter):
        ens = simulate_frozen_flow(spec, policy, flow, n, grid, seed, noise=nse, tabulate=tabulate)
        new = ens.flow()
        residuals.append(flow_distance(new, flow))
        flow = new
        if residuals[-1] < tol:
            return PicardResult(flow, residuals, True, ens)
    res = PicardResult(flow, residuals, False, ens)
    if raise_on_fail:
        raise NoConvergence(f"Picard residual {residuals[-1]:.3g} after {max_iter} iterations", res)
    return res


@dataclass
class ChaosResult:
    n_list: list
    errors: np.ndarray
    std_errors: np.ndarray
    slope: float
    intercept: float
    reference_residuals: list

    def rows(self):
        return [(int(n), float(e), float(s)) for n, e, s in zip(self.n_list, self.errors, self.std_errors)]


def chaos_study(spec: ModelSpec, policy: Policy, n_list: Sequence[int], reps: int, seed: int,
                grid: TimeGrid, n_ref: int = None, ref_tol: float = 1e-3,
                ref_max_iter: int = 30, tabulate: int = 160) -> ChaosResult:
    """Coupling error between interacting and independent particles versus n.

    The independent particles follow a reference flow computed by Picard
    iteration with ``n_ref`` (default 8*max(n_list)) particles. Repetition r
    uses seed + r for both members of the coupled pair. The error at each n is
    (mean over particles and repetitions of sup_t |x - xbar|^alpha)^(1/alpha);
    the slope is a least-squares fit of log error against log n.
    """
    n_list = [int(v) for v in n_list]
    if reps < 1 or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InvalidParams("n_list must be ascending and reps >= 1")
    n_ref = n_ref or 8 * max(n_list)
    try:
        ref = mckv_picard(spec, policy, n_ref, grid, seed, tol=ref_tol,
                          max_iter=ref_max_iter, tabulate=tabulate)
    except NoConvergence as exc:
        raise ReferenceNotConverged(str(exc), exc.result) from exc
    tabulated = tabulate and policy.uniform and spec.kernel.depends_on_y
    table = FlowDriftTable(spec, policy, ref.flow, points=tabulate) if tabulated else 0
    a = spec.alpha
    errs, ses = [], []
    noises = [Noise.draw(spec, max(n_list), grid, seed + r) for r in range(reps)]
    for n in n_list:
        gaps = []
        for r in range(reps):
            nse = noises[r].head(n)
            inter = simulate_particles(spec, policy, n, grid, seed + r, noise=nse)
            free = simulate_frozen_flow(spec, policy, ref.flow, n, grid, seed + r,
                                        noise=nse, tabulate=table)
            gaps.append(np.max(np.abs(inter.states - free.states), axis=1) ** a)
        g = np.concatenate(gaps)
        mean = g.mean()
        errs.append(mean ** (1.0 / a))
        # delta method on the per-repetition means
        rep_means = np.array([x.mean() for x in gaps])
        se_mean = rep_means.std(ddof=1) / np.sqrt(reps) if reps > 1 else 0.0
        ses.append(se_mean * mean ** (1.0 / a - 1.0) / a)
    errs, ses = np.array(errs), np.array(ses)
    with np.errstate(divide="ignore"):
        logs = np.log(errs)
    if np.all(np.isfinite(logs)):
        slope, intercept = np.polyfit(np.log(n_list), logs, 1)
    else:
        slope, intercept = float("nan"), float("nan")
    return ChaosResult(n_list, errs, ses, float(slope), float(intercept), ref.residuals)


@dataclass
class ExchangeabilityReport:
    max_deviation: float
    std_error: float
    block_means: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_deviation <= 3.0 * self.std_error


def _product_terminal(xi, xj):
    return xi[:, -1] * xj[:, -1]


def exchangeability_check(ens: ParticleEnsemble, statistic: Callable = None,
                          n_blocks: int = 4) -> ExchangeabilityReport:
    """Compare a symmetric pair statistic across blocks of particle indices.

    Disjoint pairs (0,1), (2,3), ... are split into ``n_blocks`` contiguous
    index blocks; under exchangeability every block has the same mean. Returns
    the largest gap between block means and the standard error of such a gap.
    """
    if ens.n < 4:
        raise TooFewParticles("need at least 4 particles")
    stat = statistic or _product_terminal
    S = ens.states
    half = (ens.n // 2) * 2
    vals = np.asarray(stat(S[0:half:2], S[1:half:2]), dtype=float)
    n_blocks = max(2, min(n_blocks, vals.size // 2))
    blocks = np.array_split(vals, n_blocks)
    means = np.array([b.mean() for b in blocks])
    var = np.mean([b.var(ddof=1) for b in blocks])
    size = min(b.size for b in blocks)
    se = float(np.sqrt(2.0 * var / size))
    return ExchangeabilityReport(float(means.max() - means.min()), se, means)
