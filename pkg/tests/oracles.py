"""Independent reference computations used by the tests."""
import itertools

import numpy as np


def brute_wasserstein_equal(a, b, order=1.0):
    """Best matching over all permutations (equal sizes, n <= 7)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    best = np.inf
    for perm in itertools.permutations(range(b.size)):
        best = min(best, np.mean(np.abs(a - b[list(perm)]) ** order))
    return best ** (1.0 / order)


def riccati_terminal_only(a, r, s, T, t):
    """P(t) for -P' = 2aP - P^2/r, P(T) = s (Bernoulli equation)."""
    tau = T - np.asarray(t, float)
    if a == 0:
        return s / (1.0 + s * tau / r)
    e = np.exp(2 * a * tau)
    return s * e / (1.0 + s * (e - 1.0) / (2 * a * r))


def riccati_unit(T, t):
    """a=0, q=r=1, s=0: P(t) = tanh(T - t)."""
    return np.tanh(T - np.asarray(t, float))


def two_point_log_risk(theta):
    """(1/theta) log((1 + e^theta)/2): Psi uniform on {0, 1}."""
    return np.log((1.0 + np.exp(theta)) / 2.0) / theta
