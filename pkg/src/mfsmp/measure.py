"""Empirical measures on the real line.

Everything here works on uniform-weight atomic measures: the laws that come
out of a particle simulation. Distances use the quantile coupling, which is
optimal in one dimension; ``wasserstein_lp_oracle`` solves the transport LP
directly and exists only to check it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd

import numpy as np
from scipy.optimize import linprog

from .errors import (
    AlphaOutOfRange,
    EmptyInput,
    MismatchedSupport,
    NonFiniteValue,
    OrderOutOfRange,
    SupportTooLarge,
)

PROB_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform-weight atomic measure, samples kept sorted ascending."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise EmptyInput("an empirical measure needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("samples must be finite")
        if np.any(np.diff(arr) < 0):
            arr = np.sort(arr)
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @property
    def n(self) -> int:
        return self.samples.size

    def mean(self) -> float:
        return float(self.samples.mean())

    def scaled(self, factor: float) -> "EmpiricalMeasure":
        return from_samples(self.samples * factor)

    def __len__(self):
        return self.samples.size


def from_samples(values) -> EmpiricalMeasure:
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise EmptyInput("values must be nonempty")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("values must be finite")
    return EmpiricalMeasure(np.sort(arr))


def point_mass(c: float) -> EmpiricalMeasure:
    return EmpiricalMeasure(np.array([float(c)]))


def _check_alpha(alpha, exc=AlphaOutOfRange):
    if not alpha >= 1:
        raise exc(f"index must be >= 1, got {alpha}")


def alpha_moment(m: EmpiricalMeasure, alpha: float) -> float:
    """(1/n) sum |y_i|^alpha."""
    _check_alpha(alpha)
    return float(np.mean(abs_pow(m.samples, alpha)))


def alpha_norm(m: EmpiricalMeasure, alpha: float) -> float:
    return alpha_moment(m, alpha) ** (1.0 / alpha)


def abs_pow(a, alpha):
    """|a|**alpha with cheap paths for the common integer exponents."""
    a = np.abs(a)
    if alpha == 1:
        return a
    if alpha == 2:
        return a * a
    return a ** alpha


def signed_pow(a, alpha):
    """sign(a)|a|**alpha, the odd extension of the power."""
    if alpha == 1:
        return np.asarray(a, dtype=float)
    return np.sign(a) * abs_pow(a, alpha)


def signed_root(s, alpha):
    """Inverse of ``signed_pow``."""
    if alpha == 1:
        return np.asarray(s, dtype=float)
    return np.sign(s) * np.abs(s) ** (1.0 / alpha)


# -- transport ---------------------------------------------------------------

def _as_sorted(m):
    if isinstance(m, EmpiricalMeasure):
        return m.samples
    return np.sort(np.asarray(m, dtype=float))


def wasserstein_sorted(a: np.ndarray, b: np.ndarray, order: float = 1.0) -> float:
    """Quantile-coupling distance between two sorted sample arrays."""
    n, k = a.size, b.size
    if n == k:
        d = np.abs(a - b)
        if order == 1:
            return float(d.mean())
        return float(np.mean(d ** order) ** (1.0 / order))
    # Merge the two cumulative weight grids; on each cell both quantile
    # functions are constant.
    cw = np.union1d(np.arange(1, n + 1) / n, np.arange(1, k + 1) / k)
    cw[-1] = 1.0
    widths = np.diff(np.concatenate(([0.0], cw)))
    mids = cw - 0.5 * widths
    qa = a[np.minimum((mids * n).astype(np.int64), n - 1)]
    qb = b[np.minimum((mids * k).astype(np.int64), k - 1)]
    d = np.abs(qa - qb)
    if order == 1:
        return float(np.dot(widths, d))
    return float(np.dot(widths, d ** order) ** (1.0 / order))


def wasserstein(m1, m2, order: float = 1.0) -> float:
    """Order-``order`` Wasserstein distance between 1-D empirical measures.

    Computed as (int_0^1 |Q1(u) - Q2(u)|^order du)^(1/order) with Q the
    quantile functions; for equal sample counts this is the average distance
    between sorted samples matched in order.
    """
    _check_alpha(order, OrderOutOfRange)
    return wasserstein_sorted(_as_sorted(m1), _as_sorted(m2), order)


def wasserstein_lp_oracle(m1, m2, order: float = 1.0, max_support: int = 8) -> float:
    """Transport distance by solving the coupling LP (verification only).

    Masses are scaled to integers (n2 units per atom of m1, n1 per atom of m2)
    so that an optimal vertex is an integral flow. The LP solution is rounded
    to that vertex and its cost recomputed exactly, which removes the solver's
    feasibility tolerance from the answer.
    """
    _check_alpha(order, OrderOutOfRange)
    a = np.asarray(getattr(m1, "samples", m1), dtype=float).ravel()
    b = np.asarray(getattr(m2, "samples", m2), dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptyInput("both measures must be nonempty")
    if a.size > max_support or b.size > max_support:
        raise SupportTooLarge(f"supports limited to {max_support} atoms")
    n1, n2 = a.size, b.size
    cost = np.abs(a[:, None] - b[None, :]) ** order
    total = n1 * n2 // gcd(n1, n2)
    supply, demand = total // n1, total // n2
    a_eq = np.zeros((n1 + n2, n1 * n2))
    for i in range(n1):
        a_eq[i, i * n2:(i + 1) * n2] = 1.0
    for j in range(n2):
        a_eq[n1 + j, j::n2] = 1.0
    b_eq = np.concatenate([np.full(n1, supply), np.full(n2, demand)]).astype(float)
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:  # pragma: no cover - transport LPs are always feasible
        raise RuntimeError(f"transport LP failed: {res.message}")
    flow = np.rint(res.x).reshape(n1, n2)
    if np.all(flow.sum(axis=1) == supply) and np.all(flow.sum(axis=0) == demand):
        value = float(np.sum(flow * cost)) / total
    else:  # pragma: no cover
        value = float(res.fun) / total
    return value ** (1.0 / order)


# -- discrete distributions --------------------------------------------------

@dataclass(frozen=True)
class DiscreteDistribution:
    support: tuple
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float).ravel()
        support = tuple(self.support)
        if len(support) != p.size:
            raise MismatchedSupport("support and probs differ in length")
        if p.size == 0:
            raise EmptyInput("empty distribution")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise NonFiniteValue("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > PROB_TOL * max(1, p.size):
            raise InvalidProbabilities(f"probabilities sum to {p.sum()!r}")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_probs(cls, probs, support=None):
        probs = np.asarray(probs, dtype=float)
        if support is None:
            support = tuple(range(probs.size))
        return cls(support, probs)


class InvalidProbabilities(NonFiniteValue):
    pass


def relative_entropy(mu: DiscreteDistribution, nu: DiscreteDistribution) -> float:
    """sum mu_i log(mu_i/nu_i); +inf when mu is not absolutely continuous wrt nu."""
    if mu.support != nu.support:
        raise MismatchedSupport("distributions must share the same support labels")
    p, q = mu.probs, nu.probs
    pos = p > 0
    if np.any(q[pos] == 0):
        return float("inf")
    return float(np.sum(p[pos] * np.log(p[pos] / q[pos])))


def relative_entropy_array(p: np.ndarray, q: np.ndarray) -> float:
    pos = p > 0
    if np.any(q[pos] == 0):
        return float("inf")
    return float(np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos]))))
