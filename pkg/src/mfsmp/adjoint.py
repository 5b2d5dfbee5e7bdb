"""Backward regression for the risk-sensitive adjoint system.

Sign convention. The stored adjoint ``p`` has terminal value

    p(T) = h_x(x(T), m(T)) + (1/phi) E[phi~ d/dx h_m(x~(T))(x(T))],
    phi  = exp(theta (z(T) + h)),

and ``q`` is the dB-coefficient of ``p``. The Hamiltonian is maximized at
(-p, -q):  H(u) = b_bar(u) (-p) + sigma (-q - theta ell p) - f(u). With this
choice the clamped strategies of the virus model read u = clip(-|m| p1) and
clip(|m| p2), and the LQ adjoint is p = +P(t) x.

Backward dynamics used by the scheme (explicit in the driver):

    dp = -(D + theta ell q) dt + q dB,
    D  = b_bar_x p + sigma_x (q + theta ell p) + f_x
         + (1/v) E[v~ (d/dx b_bar_m(x~)(x) p~ + d/dx f_m(x~)(x))].

``v`` is E[phi | x(t), z(t)], a positive martingale with dv = theta ell v dB.
Conditional expectations are least-squares projections on the basis
{1, x, x^2, x^3, z, x z}; ``v`` uses a log link so it stays positive.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NegativeV,
    NoConvergence,
    NonFiniteDriver,
    RegressionFailure,
    RiccatiBlowup,
    InvalidParams,
)
from .measure import EmpiricalMeasure
from .model import (
    InitialLaw,
    ModelSpec,
    PlayerCost,
    ProductKernel,
    normal_law,
    rs_hamiltonian,
)
from .particles import (
    ConstantPolicy,
    FeedbackTable,
    ParticleEnsemble,
    Policy,
    TimeGrid,
    simulate_particles,
)

COND_MAX = 1e8
RIDGE = 1e-8
V_FLOOR = 1e-300


# -- regression ----------------------------------------------------------

def _standardize(col):
    mu, sd = col.mean(), col.std()
    if not sd > 1e-12 * max(1.0, abs(mu)):
        return None
    return (col - mu) / sd


class Projector:
    """Least-squares projection onto span{1, x, x^2, x^3, z, x z}.

    Powers are taken of the standardized state, which spans the same space as
    the raw monomials but keeps the design well conditioned. Columns with no
    spread are dropped. If the condition number still exceeds 1e8 a ridge
    penalty of 1e-8 times the largest squared singular value is applied.
    """

    def __init__(self, x: np.ndarray, z: np.ndarray = None):
        n = x.size
        cols = [np.ones(n)]
        xs = _standardize(x)
        if xs is not None:
            cols += [xs, xs * xs, xs ** 3]
        if z is not None:
            zs = _standardize(z)
            if zs is not None:
                cols.append(zs)
                if xs is not None:
                    cols.append(xs * zs)
        A = np.column_stack(cols)
        for j in range(1, A.shape[1]):
            sd = A[:, j].std()
            if sd > 0:
                A[:, j] = (A[:, j] - A[:, j].mean()) / sd
        try:
            U, s, Vt = np.linalg.svd(A, full_matrices=False)
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise RegressionFailure(str(exc)) from exc
        if not np.all(np.isfinite(s)):
            raise RegressionFailure("non-finite design matrix")
        self.A = A
        self.U, self.s, self.Vt = U, s, Vt
        self.cond = float(s[0] / s[-1]) if s[-1] > 0 else np.inf
        self.ridge = self.cond > COND_MAX
        lam = RIDGE * s[0] ** 2 if self.ridge else 0.0
        self.shrink = s * s / (s * s + lam) if self.ridge else np.ones_like(s)
        self.n_features = A.shape[1]

    def fit(self, y: np.ndarray) -> np.ndarray:
        out = self.U @ (self.shrink * (self.U.T @ y))
        if not np.all(np.isfinite(out)):
            raise RegressionFailure("regression produced non-finite values")
        return out

    def fit_log_link(self, y: np.ndarray, max_iter: int = 50, tol: float = 1e-10):
        """Positive fit exp(A beta) by Poisson quasi-likelihood (IRLS).

        ``y`` must be nonnegative with positive mean. Returns the fitted log
        values at the samples.
        """
        A = self.A
        ybar = y.mean()
        if not ybar > 0:
            raise RegressionFailure("log-link fit needs a positive mean response")
        scale = y.max()
        ys = y / scale
        beta = np.zeros(A.shape[1])
        beta[0] = np.log(ys.mean())
        eta = A @ beta
        ll = float(ys @ eta - np.exp(eta).sum())
        for _ in range(max_iter):
            mu = np.exp(eta)
            grad = A.T @ (ys - mu)
            hess = (A * mu[:, None]).T @ A
            if self.ridge:
                hess = hess + RIDGE * np.trace(hess) * np.eye(A.shape[1])
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(hess, grad, rcond=None)[0]
            t = 1.0
            while True:
                cand = beta + t * step
                eta_c = A @ cand
                if np.all(eta_c < 700):
                    ll_c = float(ys @ eta_c - np.exp(eta_c).sum())
                    if ll_c >= ll - 1e-12 * abs(ll):
                        break
                t *= 0.5
                if t < 1e-8:
                    cand, eta_c, ll_c = beta, eta, ll
                    break
            done = abs(ll_c - ll) <= tol * (1.0 + abs(ll))
            beta, eta, ll = cand, eta_c, ll_c
            if done:
                break
        return eta + np.log(scale)


# -- v^theta and ell -----------------------------------------------------

@dataclass
class VTheta:
    v: np.ndarray       # (n, n_steps+1)
    log_v: np.ndarray   # (n, n_steps+1)
    ell: np.ndarray     # (n, n_steps)
    phi: np.ndarray     # (n,) terminal values
    theta: float
    diagnostics: list = field(default_factory=list)


def _alive_view(ens: ParticleEnsemble):
    a = ens.alive
    return (ens.states[a], ens.aux_z[:, a], ens.increments[a], ens.controls[:, a])


def _is_deterministic(spec, ens, X):
    t = ens.grid.times
    return all(np.all(spec.diffusion(t[k], X[:, k]) == 0) for k in range(ens.grid.n_steps))


def compute_v_theta(spec: ModelSpec, i: int, ens: ParticleEnsemble) -> VTheta:
    """v = E[phi | x, z] on every node and ell from increment regression."""
    X, Z, dB, _ = _alive_view(ens)
    n, N = X.shape[0], ens.grid.n_steps
    theta = spec.thetas[i]
    m_T = ens.measure(N)
    log_phi = theta * (Z[i, :, N] + spec.costs[i].h(X[:, N], m_T))
    if theta == 0:
        ones = np.ones((n, N + 1))
        return VTheta(ones, np.zeros((n, N + 1)), np.zeros((n, N)), np.ones(n), 0.0)
    if not np.all(np.isfinite(log_phi)):
        raise NonFiniteDriver("terminal exponent is not finite")
    log_v = np.empty((n, N + 1))
    log_v[:, N] = log_phi
    diags = []
    if _is_deterministic(spec, ens, X):
        # every path is a function of its initial state: E[phi | F_t] = phi
        log_v[:] = log_phi[:, None]
    else:
        shift = log_phi.max()
        y = np.exp(log_phi - shift)
        for k in range(N - 1, -1, -1):
            proj = Projector(X[:, k], Z[i, :, k])
            log_v[:, k] = proj.fit_log_link(y) + shift
            diags.append({"step": k, "features": proj.n_features, "cond": proj.cond,
                          "ridge": proj.ridge})
    if not np.all(np.isfinite(log_v)):
        raise NegativeV("v lost finiteness")
    v = np.exp(log_v)
    if np.any(v < 0):
        raise NegativeV("v became negative")
    v = np.maximum(v, V_FLOOR)
    ell = np.zeros((n, N))
    if not _is_deterministic(spec, ens, X):
        dt = ens.grid.dt
        for k in range(N):
            proj = Projector(X[:, k], Z[i, :, k])
            ratio = np.expm1(log_v[:, k + 1] - log_v[:, k])
            ell[:, k] = proj.fit(ratio * dB[:, k]) / (theta * dt)
    return VTheta(v, log_v, ell, np.exp(log_phi), theta, diags)


# -- (p, q) --------------------------------------------------------------

@dataclass
class AdjointPath:
    grid: TimeGrid
    p: np.ndarray       # (n, n_steps+1)
    q: np.ndarray       # (n, n_steps)
    v: np.ndarray
    ell: np.ndarray
    player: int
    diagnostics: list = field(default_factory=list)


def terminal_adjoint(spec: ModelSpec, i: int, x_T: np.ndarray, m_T, weights: np.ndarray):
    """h_x + (1/phi) E[phi~ d/dx h_m(x~)(x)] with phi given by ``weights``."""
    cost = spec.costs[i]
    w = weights / weights.mean()
    out = cost.h_x(x_T, m_T)
    if cost.depends_on_m:
        out = out + cost.h_mf(x_T, w, x_T, m_T) / w
    return out


def mean_field_driver(spec, i, t, x, u, m, p_next, w):
    """(1/w_i) mean_j w_j [d/dx b_bar_m(x_j)(x_i) p_j + d/dx f_m(x_j)(x_i)]."""
    kern = spec.kernel
    out = np.zeros_like(x)
    if kern.depends_on_y:
        out = out + kern.mf_x(t, x, u, w * p_next, x, m.samples, spec.alpha, spec.drift_mode)
    cost = spec.costs[i]
    if cost.depends_on_m:
        out = out + cost.f_mf(t, x, u, w, x, m)
    return out / w


def solve_adjoint_bsde(spec: ModelSpec, i: int, ens: ParticleEnsemble, vt: VTheta = None,
                       mf_term=None) -> AdjointPath:
    """Backward Euler regression for (p, q) along the simulated paths.

    ``mf_term`` may replace ``mean_field_driver`` (same signature).
    """
    if vt is None:
        vt = compute_v_theta(spec, i, ens)
    if np.any(vt.v <= 0):
        raise NegativeV("v must be strictly positive")
    X, Z, dB, U = _alive_view(ens)
    n, N, dt = X.shape[0], ens.grid.n_steps, ens.grid.dt
    theta = spec.thetas[i]
    cost = spec.costs[i]
    mf = mf_term or mean_field_driver
    p = np.empty((n, N + 1))
    q = np.zeros((n, N))
    wT = vt.v[:, N] / vt.v[:, N].mean()
    p[:, N] = terminal_adjoint(spec, i, X[:, N], ens.measure(N), wT)
    mean_field = not spec.mean_field_free
    diags = []
    for k in range(N - 1, -1, -1):
        t = k * dt
        x, u, pn = X[:, k], U[:, :, k], p[:, k + 1]
        m = EmpiricalMeasure(np.sort(x))
        proj = Projector(x, Z[i, :, k])
        # centring on the fitted conditional mean leaves E[. dB] unchanged and cuts variance
        qk = proj.fit((pn - proj.fit(pn)) * dB[:, k]) / dt
        _, bx = spec.kernel.barred(t, x, m.samples, u, spec.alpha, spec.drift_mode, need_x=True)
        ell = vt.ell[:, k]
        drv = bx * pn + cost.f_x(t, x, m, u)
        if theta != 0 or spec.sigma_x is not None:
            drv = drv + spec.diffusion_x(t, x) * (qk + theta * ell * pn)
        if mean_field:
            w = vt.v[:, k] / vt.v[:, k].mean()
            drv = drv + mf(spec, i, t, x, u, m, pn, w)
        if theta != 0:
            drv = drv + theta * ell * qk
        if not np.all(np.isfinite(drv)):
            raise NonFiniteDriver(f"driver not finite at step {k}")
        p[:, k] = proj.fit(pn + drv * dt)
        q[:, k] = qk
        diags.append({"step": k, "features": proj.n_features, "cond": proj.cond,
                      "ridge": proj.ridge,
                      "residual": float(np.sqrt(np.mean((pn + drv * dt - p[:, k]) ** 2)))})
    return AdjointPath(ens.grid, p, q, vt.v, vt.ell, i, diags)


# -- maximum principle ---------------------------------------------------

@dataclass
class MaxCheck:
    passed: np.ndarray
    violation: np.ndarray

    @property
    def all_passed(self) -> bool:
        return bool(np.all(self.passed))

    @property
    def pass_rate(self) -> float:
        return float(np.mean(self.passed))


def pointwise_max_check(spec: ModelSpec, i: int, t, x, m, p, q, ell, u_star,
                        grid_of_controls, tol: float = 1e-3) -> MaxCheck:
    """Does u_star attain the grid maximum of H^theta within tol?

    ``p``, ``q`` are in the stored convention, so the Hamiltonian is taken at
    (-p, -q). ``u_star`` is the full control profile (players, n); only player
    i's entry is varied over ``grid_of_controls``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u_star = np.asarray(u_star, dtype=float).reshape(spec.n_players, -1)
    u_star = np.broadcast_to(u_star, (spec.n_players, x.size))
    pb, qb = -np.broadcast_to(p, x.shape), -np.broadcast_to(q, x.shape)
    ell = np.broadcast_to(ell, x.shape)
    h_star = rs_hamiltonian(spec, i, t, x, m, u_star, pb, qb, ell)
    best = np.full(x.size, -np.inf)
    prof = np.array(u_star)
    for g in np.asarray(grid_of_controls, dtype=float):
        prof[i] = g
        best = np.maximum(best, rs_hamiltonian(spec, i, t, x, m, prof, pb, qb, ell))
    viol = np.maximum(0.0, best - h_star)
    return MaxCheck(viol <= tol, viol)


def grid_best_response(spec: ModelSpec, i: int, t, x, m, p, q, ell, u, points: int = 101):
    """Argmax of H^theta over player i's box by grid search plus a parabolic step."""
    lo, hi = spec.boxes[i]
    g = np.linspace(lo, hi, points)
    prof = np.array(u, dtype=float)
    vals = np.empty((points, x.size))
    for j, gj in enumerate(g):
        prof[i] = gj
        vals[j] = rs_hamiltonian(spec, i, t, x, m, prof, -p, -q, ell)
    j = np.argmax(vals, axis=0)
    best = g[j]
    inner = (j > 0) & (j < points - 1)
    if inner.any():
        cols = np.flatnonzero(inner)
        f0, f1, f2 = vals[j[cols] - 1, cols], vals[j[cols], cols], vals[j[cols] + 1, cols]
        den = f0 - 2 * f1 + f2
        h = g[1] - g[0]
        shift = np.where(den < 0, 0.5 * h * (f0 - f2) / np.where(den < 0, den, -1.0), 0.0)
        best[cols] = np.clip(best[cols] + shift, lo, hi)
    return best


def best_response(spec: ModelSpec, i: int, t, x, m, p, q, ell, u):
    if spec.best_responses is not None and spec.best_responses[i] is not None:
        return spec.clip_to_box(i, spec.best_responses[i](t, x, m, p, q, ell, u))
    return grid_best_response(spec, i, t, x, m, p, q, ell, u)


# -- game fixed point ----------------------------------------------------

@dataclass
class GameResult:
    policy: FeedbackTable
    ensemble: ParticleEnsemble
    vthetas: list
    adjoints: list
    residuals: list
    converged: bool
    candidates: np.ndarray  # (players, n, n_steps) best responses of the last pass


def _quantile_bins(x, bins):
    order = np.argsort(x, kind="stable")
    groups = np.array_split(order, min(bins, x.size))
    return groups


def _tables_from(x_steps, cand, bins):
    """Bin centres and bin-averaged controls per step."""
    P, n, N = cand.shape
    B = min(bins, n)
    centers = np.empty((N, B))
    values = np.empty((P, N, B))
    ramp = np.arange(B) * 1e-12
    for k in range(N):
        groups = _quantile_bins(x_steps[:, k], B)
        c = np.array([x_steps[g, k].mean() for g in groups])
        centers[k] = np.maximum.accumulate(c) + ramp
        for i in range(P):
            values[i, k] = [cand[i, g, k].mean() for g in groups]
    return centers, values


def _adjoint_pass(spec, policy, n, grid, seed, on_blowup, mf_term):
    ens = simulate_particles(spec, policy, n, grid, seed, on_blowup=on_blowup)
    vts, adjs = [], []
    for i in range(spec.n_players):
        vt = compute_v_theta(spec, i, ens)
        if spec.thetas[i] > 0 and not np.all(vt.v > 0):
            raise NegativeV(f"player {i}: v not strictly positive")
        vts.append(vt)
        adjs.append(solve_adjoint_bsde(spec, i, ens, vt, mf_term=mf_term))
    X = ens.states[ens.alive]
    U = ens.controls[:, ens.alive]
    N = grid.n_steps
    cand = np.empty((spec.n_players, X.shape[0], N))
    for k in range(N):
        t = k * grid.dt
        m = EmpiricalMeasure(np.sort(X[:, k]))
        for i in range(spec.n_players):
            a = adjs[i]
            cand[i, :, k] = best_response(spec, i, t, X[:, k], m, a.p[:, k], a.q[:, k],
                                          a.ell[:, k], U[:, :, k])
    return ens, vts, adjs, cand


def solve_game_fixed_point(spec: ModelSpec, n: int, grid: TimeGrid, seed: int,
                           damping: float = 0.5, tol: float = 1e-3, max_iter: int = 50,
                           bins: int = 32, on_blowup: str = "abort",
                           initial_policy: Policy = None, mf_term=None,
                           raise_on_fail: bool = True, polish: bool = True) -> GameResult:
    """Damped Picard iteration on feedback tables.

    Each pass simulates forward with the current tables, solves v, ell, p, q
    backward for every player, forms the pointwise best responses and averages
    them over quantile bins of the state at each step. Tables are updated as
    u <- (1 - damping) u + damping u_hat at the new bin centres; the residual
    is the root-mean-square change. Once it falls below ``tol`` the tables are
    set to the last undamped target when ``polish`` is on (damping only slows
    the approach to saturated controls), and a final pass with those tables
    supplies the returned ensemble and adjoints.
    """
    if not 0 < damping <= 1 or not tol > 0 or max_iter < 1:
        raise InvalidParams("need 0 < damping <= 1, tol > 0, max_iter >= 1")
    policy = initial_policy or ConstantPolicy([np.clip(0.0, lo, hi) for lo, hi in spec.boxes])
    residuals = []
    converged = False
    for _ in range(max_iter):
        ens, vts, adjs, cand = _adjoint_pass(spec, policy, n, grid, seed, on_blowup, mf_term)
        X = ens.states[ens.alive]
        centers, target = _tables_from(X[:, :-1], cand, bins)
        old = np.stack([np.stack([policy.controls(k, k * grid.dt, centers[k], None)[i]
                                  for k in range(grid.n_steps)]) for i in range(spec.n_players)])
        new = (1 - damping) * old + damping * target
        residuals.append(float(np.sqrt(np.mean((new - old) ** 2))))
        policy = FeedbackTable(centers, new)
        if residuals[-1] < tol:
            converged = True
            if polish:
                policy = FeedbackTable(centers, target)
            break
    ens, vts, adjs, cand = _adjoint_pass(spec, policy, n, grid, seed, on_blowup, mf_term)
    res = GameResult(policy, ens, vts, adjs, residuals, converged, cand)
    if not converged and raise_on_fail:
        raise NoConvergence(f"control change {residuals[-1]:.3g} after {max_iter} iterations", res)
    return res


# -- LQ oracle -----------------------------------------------------------

@dataclass
class RiccatiSolution:
    times: np.ndarray
    P: np.ndarray
    gain: np.ndarray
    offset: np.ndarray  # value function constant term c(t), V = P x^2/2 + c


def lq_riccati_oracle(a: float, q: float, r: float, s: float, sigma: float, T: float,
                      grid: TimeGrid = None, substeps: int = 200) -> RiccatiSolution:
    """Scalar Riccati equation -P' = 2 a P - P^2 / r + q, P(T) = s, by RK4.

    The optimal feedback for dx = (a x + u) dt + sigma dB with cost
    E[int (q x^2 + r u^2)/2 dt + s x(T)^2 / 2] is u = -gain(t) x, gain = P / r.
    """
    if not r > 0 or q < 0 or s < 0:
        raise InvalidParams("need r > 0 and q, s >= 0")
    grid = grid or TimeGrid(T, T / 100)
    N = grid.n_steps
    h = grid.dt / substeps

    def rhs(P):
        return -(2 * a * P - P * P / r + q)

    P = np.empty(N + 1)
    c = np.empty(N + 1)
    P[N], c[N] = s, 0.0
    cur, off = float(s), 0.0
    for k in range(N - 1, -1, -1):
        for _ in range(substeps):
            # integrate backward in time: dP/d(-t) = -rhs
            k1 = -rhs(cur)
            k2 = -rhs(cur + 0.5 * h * k1)
            k3 = -rhs(cur + 0.5 * h * k2)
            k4 = -rhs(cur + h * k3)
            nxt = cur + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
            off += 0.25 * h * sigma * sigma * (cur + nxt)
            cur = nxt
            if not np.isfinite(cur) or abs(cur) > 1e12:
                raise RiccatiBlowup(f"Riccati solution escaped near t={k * grid.dt:.4g}")
        P[k], c[k] = cur, off
    return RiccatiSolution(grid.times, P, P / r, c)


def build_lq_spec(a: float = 0.5, q: float = 1.0, r: float = 1.0, s: float = 0.5,
                  sigma: float = 0.3, T: float = 1.0, box=(-50.0, 50.0),
                  initial_law: InitialLaw = None, theta: float = 0.0) -> ModelSpec:
    """Single-player linear-quadratic model with no mean-field terms."""
    kern = ProductKernel(lambda t, x, u: a * x + u[0], c_x=lambda t, x, u: a + 0 * x)
    cost = PlayerCost(
        running=lambda t, x, m, u: 0.5 * (q * x * x + r * u[0] ** 2),
        terminal=lambda x, m: 0.5 * s * x * x,
        running_x=lambda t, x, m, u: q * x,
        terminal_x=lambda x, m: s * x,
    )

    def respond(t, x, m, p, qq, ell, u):
        return -p / r

    return ModelSpec(alpha=1.0, horizon=T, kernel=kern, sigma=lambda t, x: sigma,
                     sigma_x=lambda t, x: 0.0, costs=(cost,), thetas=(theta,), boxes=(box,),
                     initial_law=initial_law or normal_law(0.0, 1.0), drift_mode="signed",
                     best_responses=(respond,), name="lq")


def fitted_gains(policy: FeedbackTable, player: int = 0) -> np.ndarray:
    """Negative least-squares slope of each step's feedback table."""
    out = np.empty(policy.centers.shape[0])
    for k in range(out.size):
        out[k] = -np.polyfit(policy.centers[k], policy.values[player, k], 1)[0]
    return out
