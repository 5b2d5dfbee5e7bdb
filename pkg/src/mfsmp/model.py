"""Game data, the L^alpha-norm drift, measure derivatives and Hamiltonians.

Conventions
-----------
States are scalars. Functions that take ``x`` accept arrays and broadcast.
A control *profile* ``u`` is an array whose leading axis indexes players and
whose trailing shape broadcasts against ``x`` (so ``u[k]`` is player k's
control at each state).

Two aggregation modes are supported for the drift:

``norm``    b_bar = (mean_j |b(x, y_j)|^alpha)^(1/alpha)   (always >= 0)
``signed``  b_bar = sroot(mean_j sign(b)|b(x, y_j)|^alpha)

They coincide whenever b >= 0. The signed form keeps the sign of the kernel,
so a kernel that does not depend on y gives b_bar = b exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    AlphaOutOfRange,
    ControlOutOfBox,
    EmptyMeasure,
    InvalidDirection,
    InvalidParams,
    MissingAux,
    UnknownFunctional,
)
from .measure import EmpiricalMeasure, abs_pow, signed_pow, signed_root

DRIFT_MODES = ("norm", "signed")
PAIR_BLOCK = 1 << 21  # pair evaluations per chunk
BOX_TOL = 1e-12


def fd_step(x):
    return 1e-5 * np.maximum(1.0, np.abs(x))


def _samples(m):
    if isinstance(m, EmpiricalMeasure):
        return m.samples
    arr = np.asarray(m, dtype=float)
    if arr.size == 0:
        raise EmptyMeasure("measure has no samples")
    return arr


def _aggregate(B, alpha, mode, axis=-1):
    if mode == "norm":
        return np.mean(abs_pow(B, alpha), axis=axis) ** (1.0 / alpha)
    return signed_root(np.mean(signed_pow(B, alpha), axis=axis), alpha)


def _safe_pow_denominator(bbar, alpha):
    """|b_bar|^(alpha-1) with zeros mapped to inf so the ratio becomes 0."""
    if alpha == 1:
        return np.ones_like(bbar)
    d = np.abs(bbar) ** (alpha - 1.0)
    return np.where(d > 0, d, np.inf)


def _weight_for_derivative(B, alpha, mode):
    # d/db of the per-pair contribution, up to the common 1/b_bar^(alpha-1)
    if mode == "norm":
        return abs_pow(B, alpha - 1.0) * np.sign(B)
    return abs_pow(B, alpha - 1.0)


class DriftKernel:
    """Pair-interaction kernel b(t, x, y, u).

    Wraps a broadcasting callable. Derivatives in x and y default to central
    differences with step 1e-5*max(1,|.|); pass ``b_x``/``b_y`` to override.
    The aggregate methods evaluate pairs in row blocks so memory stays bounded.
    """

    def __init__(self, fn: Callable, b_x: Optional[Callable] = None,
                 b_y: Optional[Callable] = None, depends_on_y: bool = True):
        self._fn = fn
        self._bx = b_x
        self._by = b_y
        self.depends_on_y = depends_on_y

    def __call__(self, t, x, y, u):
        return self._fn(t, x, y, u)

    def b_x(self, t, x, y, u):
        if self._bx is not None:
            return self._bx(t, x, y, u)
        h = fd_step(x)
        return (self(t, x + h, y, u) - self(t, x - h, y, u)) / (2 * h)

    def b_y(self, t, x, y, u):
        if self._by is not None:
            return self._by(t, x, y, u)
        h = fd_step(y)
        return (self(t, x, y + h, u) - self(t, x, y - h, u)) / (2 * h)

    # -- pair blocks (overridable) --------------------------------------
    def pairs(self, t, x, ys, u, need_x=False):
        """Values (and x-derivatives) on the block x[:,None] by ys[None,:]."""
        xr = x[:, None]
        ur = u[..., None]
        B = self(t, xr, ys[None, :], ur)
        Bx = self.b_x(t, xr, ys[None, :], ur) if need_x else None
        return B, Bx

    def pairs_y(self, t, xs, y, us):
        """Values and y-derivatives on xs[:,None] by y[None,:]."""
        xr = xs[:, None]
        ur = us[..., None]
        return self(t, xr, y[None, :], ur), self.b_y(t, xr, y[None, :], ur)

    # -- aggregates -----------------------------------------------------
    def barred(self, t, x, ys, u, alpha, mode, need_x=False):
        """b_bar (and b_bar_x) at each x against the uniform law on ys."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        u = np.broadcast_to(u, (u.shape[0],) + x.shape)
        if not self.depends_on_y:
            B = np.broadcast_to(self(t, x, x, u), x.shape).astype(float)
            bbar = np.abs(B) if mode == "norm" else B
            if not need_x:
                return bbar, None
            Bx = np.broadcast_to(self.b_x(t, x, x, u), x.shape)
            bx = Bx * np.sign(B) if mode == "norm" else Bx.astype(float)
            return bbar, bx
        n, M = x.size, ys.size
        rows = max(1, PAIR_BLOCK // max(M, 1))
        bbar = np.empty(n)
        bx = np.empty(n) if need_x else None
        xf = x.ravel()
        uf = u.reshape(u.shape[0], -1)
        for s in range(0, n, rows):
            sl = slice(s, min(n, s + rows))
            B, Bx = self.pairs(t, xf[sl], ys, uf[:, sl], need_x)
            bb = _aggregate(B, alpha, mode)
            bbar[sl] = bb
            if need_x:
                num = np.mean(Bx * _weight_for_derivative(B, alpha, mode), axis=1)
                bx[sl] = num / _safe_pow_denominator(bb, alpha)
        bbar = bbar.reshape(x.shape)
        return bbar, (bx.reshape(x.shape) if need_x else None)

    def mf_x(self, t, xs, us, weights, x, ys, alpha, mode):
        """mean_j weights_j * d/dx [b_bar_m(xs_j)](x) for each x.

        ``b_bar_m(xi)`` is the measure derivative of b_bar(t, xi, m, u), whose
        x-derivative is |b|^(alpha-1) sgn(b) b_y / b_bar^(alpha-1) in norm
        mode (no sign factor in signed mode).
        """
        x = np.asarray(x, dtype=float)
        if not self.depends_on_y:
            return np.zeros_like(x)
        bbar_src, _ = self.barred(t, xs, ys, us, alpha, mode)
        coef = np.asarray(weights, dtype=float) / _safe_pow_denominator(bbar_src, alpha)
        out = np.zeros(x.size)
        rows = max(1, PAIR_BLOCK // max(x.size, 1))
        for s in range(0, xs.size, rows):
            sl = slice(s, min(xs.size, s + rows))
            B, By = self.pairs_y(t, xs[sl], x.ravel(), us[:, sl])
            out += coef[sl] @ (_weight_for_derivative(B, alpha, mode) * By)
        return (out / xs.size).reshape(x.shape)


class ProductKernel(DriftKernel):
    """b(t, x, y, u) = c(t, x, u) * g(y); with ``g=None`` the kernel ignores y.

    Every aggregate is O(n) since the y-integral factors out.
    """

    def __init__(self, c: Callable, g: Optional[Callable] = None,
                 c_x: Optional[Callable] = None, g_y: Optional[Callable] = None):
        self.c = c
        self.g = g
        self._cx = c_x
        self._gy = g_y
        super().__init__(self._value, depends_on_y=g is not None)

    def _value(self, t, x, y, u):
        c = self.c(t, x, u)
        return c if self.g is None else c * self.g(y)

    def c_x(self, t, x, u):
        if self._cx is not None:
            return self._cx(t, x, u)
        h = fd_step(x)
        return (self.c(t, x + h, u) - self.c(t, x - h, u)) / (2 * h)

    def g_y(self, y):
        if self._gy is not None:
            return self._gy(y)
        h = fd_step(y)
        return (self.g(y + h) - self.g(y - h)) / (2 * h)

    def b_x(self, t, x, y, u):
        cx = self.c_x(t, x, u)
        return cx if self.g is None else cx * self.g(y)

    def b_y(self, t, x, y, u):
        if self.g is None:
            return np.zeros(np.broadcast(x, y).shape)
        return self.c(t, x, u) * self.g_y(y)

    def g_factor(self, ys, alpha, mode):
        """The y-integral: ||g||_alpha (norm) or sroot(mean sgn(g)|g|^alpha)."""
        if self.g is None:
            return 1.0
        return float(_aggregate(self.g(ys), alpha, mode))

    def barred(self, t, x, ys, u, alpha, mode, need_x=False):
        x = np.asarray(x, dtype=float)
        G = self.g_factor(ys, alpha, mode)
        c = np.broadcast_to(self.c(t, x, u), x.shape)
        if mode == "norm":
            bbar = np.abs(c) * abs(G)
            bx = self.c_x(t, x, u) * np.sign(c) * abs(G) if need_x else None
        else:
            bbar = c * G
            bx = self.c_x(t, x, u) * G if need_x else None
        if bx is not None:
            bx = np.broadcast_to(bx, x.shape).astype(float)
        return np.asarray(bbar, dtype=float), bx

    def mf_x(self, t, xs, us, weights, x, ys, alpha, mode):
        x = np.asarray(x, dtype=float)
        if self.g is None:
            return np.zeros_like(x)
        G = self.g_factor(ys, alpha, mode)
        if G == 0:
            return np.zeros_like(x)
        c = self.c(t, xs, us)
        cw = np.abs(c) if mode == "norm" else c
        scale = float(np.mean(np.asarray(weights) * cw))
        gx = self.g(x)
        shape = _weight_for_derivative(gx, alpha, mode) * self.g_y(x)
        return scale * shape / abs(G) ** (alpha - 1.0)


class CooperativeKernel(DriftKernel):
    """b = u - mu*sin(x - y); pairs built from sin/cos outer products."""

    def __init__(self, mu: float = 1.0):
        self.mu = float(mu)
        super().__init__(self._value)

    def _value(self, t, x, y, u):
        return u[0] - self.mu * np.sin(x - y)

    def b_x(self, t, x, y, u):
        return -self.mu * np.cos(x - y)

    def b_y(self, t, x, y, u):
        return self.mu * np.cos(x - y)

    def barred(self, t, x, ys, u, alpha, mode, need_x=False):
        if alpha != 2 or mode != "norm":
            return super().barred(t, x, ys, u, alpha, mode, need_x)
        # the mean of b^2 expands into trigonometric moments of the measure
        x = np.asarray(x, dtype=float)
        u0 = np.broadcast_to(np.asarray(u, dtype=float)[0], x.shape)
        S, C = np.sin(ys), np.cos(ys)
        mS, mC = S.mean(), C.mean()
        mSS, mCC, mCS = (S * S).mean(), (C * C).mean(), (C * S).mean()
        s, c, mu = np.sin(x), np.cos(x), self.mu
        sq = (u0 * u0 - 2 * u0 * mu * (s * mC - c * mS)
              + mu * mu * (s * s * mCC - 2 * s * c * mCS + c * c * mSS))
        bbar = np.sqrt(np.maximum(sq, 0.0))
        if not need_x:
            return bbar, None
        num = (-mu * u0 * (c * mC + s * mS)
               + mu * mu * (c * s * (mCC - mSS) + (s * s - c * c) * mCS))
        return bbar, num / np.where(bbar > 0, bbar, np.inf)

    def pairs(self, t, x, ys, u, need_x=False):
        sx, cx = np.sin(x)[:, None], np.cos(x)[:, None]
        sy, cy = np.sin(ys)[None, :], np.cos(ys)[None, :]
        B = u[0][:, None] - self.mu * (sx * cy - cx * sy)
        Bx = -self.mu * (cx * cy + sx * sy) if need_x else None
        return B, Bx

    def pairs_y(self, t, xs, y, us):
        sx, cx = np.sin(xs)[:, None], np.cos(xs)[:, None]
        sy, cy = np.sin(y)[None, :], np.cos(y)[None, :]
        B = us[0][:, None] - self.mu * (sx * cy - cx * sy)
        return B, self.mu * (cx * cy + sx * sy)


# -- costs ---------------------------------------------------------------

@dataclass(frozen=True)
class PlayerCost:
    """Running cost f(t, x, m, u) and terminal cost h(x, m) of one player.

    The ``*_mf_x`` hooks give the cross-particle part of the adjoint driver:

    running_mf_x(t, xs, us, w, x, m) -> mean_j w_j d/dx[f_m(t, xs_j, us_j)](x)
    terminal_mf_x(xs, w, x, m)       -> mean_j w_j d/dx[h_m(xs_j)](x)

    They are required when ``depends_on_m`` is set and ignored otherwise.
    """

    running: Callable
    terminal: Callable
    running_x: Optional[Callable] = None
    terminal_x: Optional[Callable] = None
    running_mf_x: Optional[Callable] = None
    terminal_mf_x: Optional[Callable] = None
    depends_on_m: bool = False

    def __post_init__(self):
        if self.depends_on_m and (self.running_mf_x is None or self.terminal_mf_x is None):
            raise MissingAux("measure-dependent costs need both mean-field derivative hooks")

    def f(self, t, x, m, u):
        return np.broadcast_to(self.running(t, x, m, u), np.shape(x)).astype(float)

    def f_x(self, t, x, m, u):
        if self.running_x is not None:
            return np.broadcast_to(self.running_x(t, x, m, u), np.shape(x)).astype(float)
        h = fd_step(x)
        return (self.running(t, x + h, m, u) - self.running(t, x - h, m, u)) / (2 * h)

    def h(self, x, m):
        return np.broadcast_to(self.terminal(x, m), np.shape(x)).astype(float)

    def h_x(self, x, m):
        if self.terminal_x is not None:
            return np.broadcast_to(self.terminal_x(x, m), np.shape(x)).astype(float)
        h = fd_step(x)
        return (self.terminal(x + h, m) - self.terminal(x - h, m)) / (2 * h)

    def f_mf(self, t, xs, us, w, x, m):
        if not self.depends_on_m:
            return np.zeros(np.shape(x))
        return np.asarray(self.running_mf_x(t, xs, us, w, x, m), dtype=float)

    def h_mf(self, xs, w, x, m):
        if not self.depends_on_m:
            return np.zeros(np.shape(x))
        return np.asarray(self.terminal_mf_x(xs, w, x, m), dtype=float)


def zero_cost() -> PlayerCost:
    return PlayerCost(lambda t, x, m, u: 0.0, lambda x, m: 0.0,
                      lambda t, x, m, u: 0.0, lambda x, m: 0.0)


# -- initial laws --------------------------------------------------------

@dataclass(frozen=True)
class InitialLaw:
    """Maps one uniform and one standard normal per particle to x(0).

    kind: "point" (params: c), "normal" (mean, std), "bimodal"
    (a, b, weight_a, jitter) or "empirical" (samples).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def sample(self, unif: np.ndarray, gauss: np.ndarray) -> np.ndarray:
        p = self.params
        if self.kind == "point":
            return np.full(unif.shape, float(p["c"]))
        if self.kind == "normal":
            return p.get("mean", 0.0) + p.get("std", 1.0) * gauss
        if self.kind == "bimodal":
            centre = np.where(unif < p.get("weight_a", 0.5), p["a"], p["b"])
            return centre + p.get("jitter", 0.0) * gauss
        if self.kind == "empirical":
            s = np.asarray(p["samples"], dtype=float)
            return s[np.minimum((unif * s.size).astype(np.int64), s.size - 1)]
        raise InvalidParams(f"unknown initial law {self.kind!r}")

    def describe(self) -> dict:
        out = {"kind": self.kind}
        for k, v in self.params.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def point_law(c: float) -> InitialLaw:
    return InitialLaw("point", {"c": float(c)})


def normal_law(mean: float = 0.0, std: float = 1.0) -> InitialLaw:
    return InitialLaw("normal", {"mean": float(mean), "std": float(std)})


# -- model ---------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    alpha: float
    horizon: float
    kernel: DriftKernel
    sigma: Callable
    costs: tuple
    thetas: tuple
    boxes: tuple
    initial_law: InitialLaw
    drift_mode: str = "norm"
    sigma_x: Optional[Callable] = None
    best_responses: Optional[tuple] = None
    name: str = "model"

    def __post_init__(self):
        if not self.alpha >= 1:
            raise AlphaOutOfRange(f"alpha must be >= 1, got {self.alpha}")
        if not self.horizon > 0:
            raise InvalidParams("horizon must be positive")
        if self.drift_mode not in DRIFT_MODES:
            raise InvalidParams(f"drift_mode must be one of {DRIFT_MODES}")
        object.__setattr__(self, "costs", tuple(self.costs))
        object.__setattr__(self, "thetas", tuple(float(t) for t in self.thetas))
        object.__setattr__(self, "boxes", tuple((float(a), float(b)) for a, b in self.boxes))
        k = len(self.costs)
        if k < 1 or len(self.thetas) != k or len(self.boxes) != k:
            raise InvalidParams("costs, thetas and boxes must have one entry per player")
        for lo, hi in self.boxes:
            if not lo <= hi:
                raise InvalidParams(f"empty control box [{lo}, {hi}]")

    @property
    def n_players(self) -> int:
        return len(self.costs)

    @property
    def mean_field_free(self) -> bool:
        return not self.kernel.depends_on_y and not any(c.depends_on_m for c in self.costs)

    def diffusion(self, t, x):
        return np.broadcast_to(self.sigma(t, x), np.shape(x)).astype(float)

    def diffusion_x(self, t, x):
        if self.sigma_x is not None:
            return np.broadcast_to(self.sigma_x(t, x), np.shape(x)).astype(float)
        h = fd_step(x)
        return (self.sigma(t, x + h) - self.sigma(t, x - h)) / (2 * h)

    def check_controls(self, u, exc=ControlOutOfBox):
        u = np.asarray(u, dtype=float)
        for k, (lo, hi) in enumerate(self.boxes):
            uk = u[k]
            if np.any(uk < lo - BOX_TOL) or np.any(uk > hi + BOX_TOL):
                raise exc(f"player {k} control outside [{lo}, {hi}]")

    def clip_to_box(self, i, u):
        lo, hi = self.boxes[i]
        return np.clip(u, lo, hi)

    def replace(self, **kw) -> "ModelSpec":
        from dataclasses import replace
        return replace(self, **kw)


def _profile(spec, u, x):
    u = np.asarray(u, dtype=float)
    if u.ndim == 1 and u.shape[0] == spec.n_players:
        u = u.reshape((spec.n_players,) + (1,) * np.ndim(x))
    return np.broadcast_to(u, (spec.n_players,) + np.shape(x))


def barred_drift(spec: ModelSpec, t, x, m, u, check=True):
    """L^alpha-norm drift of the kernel against m at state(s) x."""
    ys = _samples(m)
    x = np.asarray(x, dtype=float)
    up = _profile(spec, u, x)
    if check:
        spec.check_controls(up)
    bbar, _ = spec.kernel.barred(t, x, ys, up, spec.alpha, spec.drift_mode)
    return bbar if bbar.ndim else float(bbar)


def barred_drift_x(spec: ModelSpec, t, x, m, u, check=True):
    """x-derivative of ``barred_drift``; 0 is selected where b_bar vanishes."""
    ys = _samples(m)
    x = np.asarray(x, dtype=float)
    up = _profile(spec, u, x)
    if check:
        spec.check_controls(up)
    _, bx = spec.kernel.barred(t, x, ys, up, spec.alpha, spec.drift_mode, need_x=True)
    return bx if bx.ndim else float(bx)


def hamiltonian(spec: ModelSpec, i: int, t, x, m, u, p, q):
    """b_bar p + sigma q - f_i, the quantity maximized over player i's control."""
    return rs_hamiltonian(spec, i, t, x, m, u, p, q, 0.0)


def rs_hamiltonian(spec: ModelSpec, i: int, t, x, m, u, p, q, ell):
    x = np.asarray(x, dtype=float)
    up = _profile(spec, u, x)
    if not isinstance(m, EmpiricalMeasure):
        m = EmpiricalMeasure(np.asarray(m, dtype=float))
    bbar = barred_drift(spec, t, x, m, up, check=False)
    sig = spec.diffusion(t, x)
    theta = spec.thetas[i]
    tilt = q if theta == 0 else q + theta * ell * p
    out = bbar * p + sig * tilt - spec.costs[i].f(t, x, m, up)
    return out if np.ndim(out) else float(out)


# -- measure derivative catalog ------------------------------------------

FUNCTIONALS = ("mean", "square_mean", "second_moment", "alpha_moment",
               "alpha_norm", "normed_drift")


@dataclass(frozen=True)
class GateauxForm:
    """Derivative kernel g_m(xi) of a measure functional and its xi-derivative."""

    value: Callable
    dx: Callable
    degenerate: bool = False


@dataclass(frozen=True)
class GateauxDirection:
    plus: EmpiricalMeasure
    minus: EmpiricalMeasure

    def __post_init__(self):
        if self.plus.n != self.minus.n:
            raise InvalidDirection("plus and minus parts need equal sample counts")


def functional_value(functional_id: str, values, weights, alpha=2.0,
                     spec: ModelSpec = None, t=0.0, x=0.0, u=None):
    """Evaluate a catalog functional on a weighted atomic (possibly signed) measure."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if functional_id == "mean":
        return float(w @ v)
    if functional_id == "square_mean":
        return 0.5 * float(w @ v) ** 2
    if functional_id == "second_moment":
        return 0.5 * float(w @ (v * v))
    if functional_id == "alpha_moment":
        return float(w @ abs_pow(v, alpha))
    if functional_id == "alpha_norm":
        return float(w @ abs_pow(v, alpha)) ** (1.0 / alpha)
    if functional_id == "normed_drift":
        a = spec.alpha
        up = _profile(spec, np.zeros(spec.n_players) if u is None else u, np.float64(x))
        B = spec.kernel(t, np.float64(x), v, up[..., None])
        if spec.drift_mode == "norm":
            return float(w @ abs_pow(B, a)) ** (1.0 / a)
        return float(signed_root(w @ signed_pow(B, a), a))
    raise UnknownFunctional(functional_id)


def gateaux_closed_form(functional_id: str, m: EmpiricalMeasure, alpha: float = 2.0,
                        spec: ModelSpec = None, t=0.0, x=0.0, u=None) -> GateauxForm:
    """Closed-form derivative kernel of a catalog functional at m.

    mean            F = int xi dm          g_m = xi
    square_mean     F = (int xi dm)^2 / 2  g_m = xi * mbar
    second_moment   F = int xi^2 dm / 2    g_m = xi^2 / 2
    alpha_moment    F = int |xi|^a dm      g_m = |xi|^a
    alpha_norm      F = (int |xi|^a dm)^(1/a)
                    g_m = |xi|^a / (a F^(a-1))
    normed_drift    F = b_bar(t, x, m, u)
                    g_m = |b(t, x, xi, u)|^a / (a F^(a-1))

    When the normalizing norm vanishes the zero selection is returned with
    ``degenerate=True``.
    """
    s = _samples(m)
    if functional_id == "mean":
        return GateauxForm(lambda xi: np.asarray(xi, dtype=float),
                           lambda xi: np.ones_like(np.asarray(xi, dtype=float)))
    if functional_id == "square_mean":
        mbar = float(s.mean())
        return GateauxForm(lambda xi: mbar * np.asarray(xi, dtype=float),
                           lambda xi: np.full(np.shape(xi), mbar))
    if functional_id == "second_moment":
        return GateauxForm(lambda xi: 0.5 * np.asarray(xi, dtype=float) ** 2,
                           lambda xi: np.asarray(xi, dtype=float))
    if functional_id == "alpha_moment":
        if not alpha >= 1:
            raise AlphaOutOfRange(alpha)
        return GateauxForm(lambda xi: abs_pow(xi, alpha),
                           lambda xi: alpha * abs_pow(xi, alpha - 1) * np.sign(xi))
    if functional_id == "alpha_norm":
        if not alpha >= 1:
            raise AlphaOutOfRange(alpha)
        nrm = float(np.mean(abs_pow(s, alpha))) ** (1.0 / alpha)
        den = nrm ** (alpha - 1.0)
        if den == 0:
            return _zero_form()
        return GateauxForm(lambda xi: abs_pow(xi, alpha) / (alpha * den),
                           lambda xi: abs_pow(xi, alpha - 1) * np.sign(xi) / den)
    if functional_id == "normed_drift":
        if spec is None:
            raise MissingAux("normed_drift needs a model")
        a, mode = spec.alpha, spec.drift_mode
        x = np.float64(x)
        up = _profile(spec, np.zeros(spec.n_players) if u is None else u, x)
        bbar = float(functional_value("normed_drift", s, np.full(s.size, 1.0 / s.size),
                                      spec=spec, t=t, x=x, u=up))
        den = abs(bbar) ** (a - 1.0)
        if den == 0:
            return _zero_form()
        kern = spec.kernel

        def value(xi):
            B = kern(t, x, np.asarray(xi, dtype=float), up[..., None])
            lead = abs_pow(B, a) if mode == "norm" else signed_pow(B, a)
            return lead / (a * den)

        def dx(xi):
            xi = np.asarray(xi, dtype=float)
            uu = up[..., None]
            B = kern(t, x, xi, uu)
            return _weight_for_derivative(B, a, mode) * kern.b_y(t, x, xi, uu) / den

        return GateauxForm(value, dx)
    raise UnknownFunctional(functional_id)


def _zero_form():
    return GateauxForm(lambda xi: np.zeros(np.shape(xi)),
                       lambda xi: np.zeros(np.shape(xi)), degenerate=True)


def gateaux_directional(form: GateauxForm, d: GateauxDirection) -> float:
    """int g_m d(plus - minus)."""
    return float(np.mean(form.value(d.plus.samples)) - np.mean(form.value(d.minus.samples)))


def _mixture(m, d, eps):
    s = _samples(m)
    k = d.plus.n
    vals = np.concatenate([s, d.plus.samples, d.minus.samples])
    w = np.concatenate([np.full(s.size, 1.0 / s.size), np.full(k, eps / k), np.full(k, -eps / k)])
    return vals, w


def gateaux_fd_oracle(F: Callable, m: EmpiricalMeasure, d: GateauxDirection,
                      eps: float, richardson: bool = False) -> float:
    """(F(m + eps d) - F(m)) / eps with m + eps d realized as a weighted union.

    ``F(values, weights)`` evaluates the functional on a weighted atomic
    measure. With ``richardson`` the two-step extrapolation
    2 D(eps/2) - D(eps) is returned, cancelling the O(eps) term.
    """
    if not isinstance(d, GateauxDirection):
        raise InvalidDirection("direction must be a GateauxDirection")
    if not eps > 0:
        raise InvalidDirection("eps must be positive")
    s = _samples(m)
    base = F(s, np.full(s.size, 1.0 / s.size))

    def diff(e):
        vals, w = _mixture(m, d, e)
        return (F(vals, w) - base) / e

    if richardson:
        return 2.0 * diff(eps / 2) - diff(eps)
    return diff(eps)


def total_mass(values, weights):
    return float(np.sum(weights))


# -- ready-made models ---------------------------------------------------

def cooperative_spec(mu: float = 1.0, sigma: float = 0.1, alpha: float = 1.0,
                     horizon: float = 1.0, initial_law: InitialLaw = None,
                     drift_mode: str = "norm") -> ModelSpec:
    """One cost-free player with kernel u - mu*sin(x - y) and constant sigma."""
    return ModelSpec(
        alpha=alpha, horizon=horizon, kernel=CooperativeKernel(mu),
        sigma=lambda t, x: sigma, sigma_x=lambda t, x: 0.0,
        costs=(zero_cost(),), thetas=(0.0,), boxes=((-1e6, 1e6),),
        initial_law=initial_law or normal_law(0.0, 1.0), drift_mode=drift_mode,
        name="cooperative")
