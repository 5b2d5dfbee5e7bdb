"""Exponentiated path costs and the entropy duality behind them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import (
    CostOverflow,
    DegenerateSample,
    InvalidParams,
    MissingAux,
    MismatchedSupport,
    ZeroMassPoint,
)
from .measure import DiscreteDistribution, relative_entropy

LOG_MAX = np.log(np.finfo(float).max)


@dataclass(frozen=True)
class PathCost:
    running: float
    terminal: float

    @property
    def psi(self) -> float:
        return self.running + self.terminal


def path_costs(spec, i: int, ens) -> tuple:
    """Running and terminal parts of Psi for every surviving particle."""
    if ens.aux_z.shape[0] <= i:
        raise MissingAux(f"ensemble carries no running cost for player {i}")
    alive = ens.alive
    m_T = ens.measure(ens.grid.n_steps)
    running = ens.aux_z[i, alive, -1]
    terminal = spec.costs[i].h(ens.states[alive, -1], m_T)
    return running, terminal


def path_psi(spec, i: int, ens, particle_index: int) -> PathCost:
    if ens.aux_z.shape[0] <= i:
        raise MissingAux(f"ensemble carries no running cost for player {i}")
    m_T = ens.measure(ens.grid.n_steps)
    x_T = ens.states[particle_index, -1]
    return PathCost(float(ens.aux_z[i, particle_index, -1]),
                    float(spec.costs[i].h(np.array([x_T]), m_T)[0]))


def psi_values(spec, i: int, ens) -> np.ndarray:
    running, terminal = path_costs(spec, i, ens)
    return running + terminal


def log_mean_exp(a: np.ndarray) -> float:
    """log(mean(exp(a))) with the usual max shift."""
    a = np.asarray(a, dtype=float)
    return float(logsumexp(a) - np.log(a.size))


def log_risk_from_samples(psi, theta: float) -> float:
    """(1/theta) log mean exp(theta psi); the sample mean when theta == 0."""
    psi = np.asarray(psi, dtype=float)
    if psi.size == 0:
        raise DegenerateSample("no cost samples")
    if theta == 0:
        return float(psi.mean())
    mean = float(psi.mean())
    a = theta * (psi - mean)
    if np.max(np.abs(a)) < 1.0:
        # small tilt: expm1/log1p keep the O(theta) terms that a max shift would round away
        return mean + float(np.log1p(np.mean(np.expm1(a)))) / theta
    # shift by a constant so that exact shift covariance holds for constants
    c = float(np.max(psi)) if theta > 0 else float(np.min(psi))
    return c + log_mean_exp(theta * (psi - c)) / theta


def risk_from_samples(psi, theta: float):
    """mean exp(theta psi) and its Monte Carlo standard error."""
    psi = np.asarray(psi, dtype=float)
    if theta == 0:
        return 1.0, 0.0
    a = theta * psi
    top = float(a.max())
    if top > LOG_MAX:
        lme = log_mean_exp(a)
        if lme > LOG_MAX:
            raise CostOverflow(f"mean of exp(theta psi) overflows (log value {lme:.1f})")
    shifted = np.exp(a - top)
    log_mean = log_mean_exp(a)
    value = float(np.exp(log_mean))
    se = float(np.exp(top) * shifted.std(ddof=1) / np.sqrt(psi.size)) if psi.size > 1 else 0.0
    return value, se


def risk_cost(spec, i: int, ens):
    """Estimate of E exp(theta_i Psi) with standard error."""
    return risk_from_samples(psi_values(spec, i, ens), spec.thetas[i])


def log_risk_cost(spec, i: int, ens) -> float:
    return log_risk_from_samples(psi_values(spec, i, ens), spec.thetas[i])


@dataclass(frozen=True)
class SmallThetaFit:
    slope: float
    thetas: np.ndarray
    residuals: np.ndarray


def small_theta_fit(psi, theta_list) -> SmallThetaFit:
    """Slope of log|J(theta) - mean - theta var/2| against log theta on one sample."""
    psi = np.asarray(psi, dtype=float)
    th = np.asarray(theta_list, dtype=float)
    if th.size < 4 or np.any(th <= 0):
        raise InvalidParams("need at least four positive theta values")
    mean, var = psi.mean(), psi.var()
    if var == 0:
        raise DegenerateSample("cost sample has zero variance")
    r = np.array([abs(log_risk_from_samples(psi, t) - mean - 0.5 * t * var) for t in th])
    if np.any(r == 0):
        raise DegenerateSample("residual vanishes exactly; slope undefined")
    slope = np.polyfit(np.log(th), np.log(r), 1)[0]
    return SmallThetaFit(float(slope), th, r)


def small_theta_check(spec, i: int, ens, theta_list) -> float:
    return small_theta_fit(psi_values(spec, i, ens), theta_list).slope


@dataclass(frozen=True)
class DVResult:
    lhs: float
    sup_value: float
    gibbs: DiscreteDistribution
    sense: str  # "sup" for theta > 0, "inf" for theta < 0


def dv_objective(phi, mu: DiscreteDistribution, nu: DiscreteDistribution, theta: float) -> float:
    """E_mu phi - (1/theta) H(mu | nu)."""
    return float(np.dot(mu.probs, phi)) - relative_entropy(mu, nu) / theta


def donsker_varadhan(phi, nu: DiscreteDistribution, theta: float) -> DVResult:
    """Both sides of (1/theta) log E_nu exp(theta phi) = opt_mu [E_mu phi - H(mu|nu)/theta].

    The optimizer is the Gibbs tilt nu exp(theta phi) / Z. For theta > 0 it
    maximizes the right-hand side; for theta < 0 the entropy term changes sign
    and the tilt is the minimizer, reported as ``sense="inf"``.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.size != nu.probs.size:
        raise MismatchedSupport("phi and nu differ in length")
    if theta == 0:
        raise InvalidParams("theta must be nonzero")
    if np.any(nu.probs <= 0):
        raise ZeroMassPoint("reference distribution must charge every point")
    logw = np.log(nu.probs) + theta * phi
    logz = logsumexp(logw)
    lhs = float(logz / theta)
    g = np.exp(logw - logz)
    g = g / g.sum()
    gibbs = DiscreteDistribution(nu.support, g)
    sup_value = dv_objective(phi, gibbs, nu, theta)
    return DVResult(lhs, sup_value, gibbs, "sup" if theta > 0 else "inf")
