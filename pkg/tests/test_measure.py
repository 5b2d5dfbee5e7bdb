import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfsmp.errors import AlphaOutOfRange, EmptyInput, MismatchedSupport, OrderOutOfRange, SupportTooLarge
from mfsmp.measure import (
    DiscreteDistribution,
    alpha_moment,
    alpha_norm,
    from_samples,
    point_mass,
    relative_entropy,
    wasserstein,
    wasserstein_lp_oracle,
)
from oracles import brute_wasserstein_equal

finite = st.floats(-50, 50, allow_nan=False)
samples = st.lists(finite, min_size=1, max_size=7)


def test_from_samples_sorts_and_keeps_ties():
    assert from_samples([3, 1, 2]).samples.tolist() == [1, 2, 3]
    assert from_samples([5]).samples.tolist() == [5]
    assert from_samples([1, 1, 2]).samples.tolist() == [1, 1, 2]


def test_from_samples_rejects_empty_and_nan():
    with pytest.raises(EmptyInput):
        from_samples([])
    with pytest.raises(ValueError):
        from_samples([1.0, np.nan])


def test_samples_are_read_only():
    m = from_samples([2.0, 1.0])
    with pytest.raises(ValueError):
        m.samples[0] = 5.0


def test_alpha_moment_examples():
    assert alpha_moment(point_mass(2.0), 1.2) == pytest.approx(2 ** 1.2, abs=1e-12)
    assert alpha_moment(from_samples([1, 2, 3]), 2) == pytest.approx(14 / 3)
    assert alpha_moment(from_samples([-1, 1]), 1) == pytest.approx(1.0)


def test_alpha_norm_examples():
    for a in (1.0, 1.2, 3.0):
        assert alpha_norm(point_mass(-2.5), a) == pytest.approx(2.5)
    assert alpha_norm(from_samples([0, 0]), 1.5) == 0.0
    assert alpha_norm(from_samples([1, 2]), 1.2) == pytest.approx(((1 + 2 ** 1.2) / 2) ** (1 / 1.2))


def test_alpha_below_one_rejected():
    with pytest.raises(AlphaOutOfRange):
        alpha_moment(point_mass(1.0), 0.8)
    with pytest.raises(AlphaOutOfRange):
        alpha_norm(point_mass(1.0), 0.5)


def test_wasserstein_examples():
    assert wasserstein(point_mass(0), point_mass(3)) == 3.0
    m = from_samples([0.3, -1, 4])
    assert wasserstein(m, m) == 0.0
    assert wasserstein(from_samples([0, 2]), from_samples([1, 3])) == pytest.approx(1.0)
    with pytest.raises(OrderOutOfRange):
        wasserstein(m, m, 0.5)


def test_lp_oracle_examples():
    assert wasserstein_lp_oracle(point_mass(0), point_mass(3)) == pytest.approx(3.0)
    assert wasserstein_lp_oracle(from_samples([0, 1]), from_samples([0, 1])) == pytest.approx(0.0)
    assert wasserstein_lp_oracle(from_samples([0, 4]), from_samples([1, 2])) == pytest.approx(1.5)
    with pytest.raises(SupportTooLarge):
        wasserstein_lp_oracle(from_samples(np.arange(9)), point_mass(0))


def test_unequal_sizes_quantile_coupling():
    # uniform{0,1,2} vs uniform{0,3}: cells [0,1/3],[1/3,1/2],[1/2,2/3],[2/3,1]
    d = wasserstein(from_samples([0, 1, 2]), from_samples([0, 3]))
    assert d == pytest.approx((0 + 1 / 6 * 1 + 1 / 6 * 2 + 1 / 3 * 1))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6).flatmap(lambda k: st.tuples(
    st.lists(finite, min_size=k, max_size=k), st.lists(finite, min_size=k, max_size=k))),
    st.sampled_from([1.0, 2.0]))
def test_equal_size_matches_permutation_search(pair, order):
    a, b = pair
    assert wasserstein(from_samples(a), from_samples(b), order) == pytest.approx(
        brute_wasserstein_equal(a, b, order), rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(samples, samples, st.sampled_from([1.0, 1.5, 2.0]))
def test_matches_lp_oracle(a, b, order):
    assert wasserstein(from_samples(a), from_samples(b), order) == pytest.approx(
        wasserstein_lp_oracle(from_samples(a), from_samples(b), order), rel=1e-9, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 12).flatmap(lambda k: st.tuples(*[st.lists(finite, min_size=k, max_size=k)] * 3)))
def test_metric_axioms(triple):
    a, b, c = (from_samples(v) for v in triple)
    assert wasserstein(a, b) == wasserstein(b, a)
    assert wasserstein(a, a) == 0.0
    assert wasserstein(a, c) <= wasserstein(a, b) + wasserstein(b, c) + 1e-12


@settings(max_examples=100, deadline=None)
@given(samples, samples, st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_kantorovich_lower_bound(a, b, slopes, knots):
    # 1-Lipschitz piecewise linear test function
    k0, k1 = sorted(knots)

    def phi(x):
        x = np.asarray(x)
        return np.where(x < k0, slopes[0] * (x - k0),
                        np.where(x < k1, slopes[1] * (x - k0),
                                 slopes[1] * (k1 - k0) + slopes[2] * (x - k1)))

    gap = np.mean(phi(a)) - np.mean(phi(b))
    assert gap <= wasserstein(from_samples(a), from_samples(b)) + 1e-12 * (1 + np.abs(a).max() + np.abs(b).max())


def test_relative_entropy_examples():
    nu = DiscreteDistribution.from_probs([0.5, 0.5])
    assert relative_entropy(nu, nu) == 0.0
    assert relative_entropy(DiscreteDistribution.from_probs([1, 0]), nu) == pytest.approx(np.log(2))
    assert relative_entropy(DiscreteDistribution.from_probs([0.75, 0.25]), nu) == pytest.approx(
        0.75 * np.log(1.5) + 0.25 * np.log(0.5))
    assert relative_entropy(nu, DiscreteDistribution.from_probs([1, 0])) == np.inf
    with pytest.raises(MismatchedSupport):
        relative_entropy(nu, DiscreteDistribution(("a", "b"), [0.5, 0.5]))


def test_discrete_distribution_validates():
    with pytest.raises(ValueError):
        DiscreteDistribution.from_probs([0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteDistribution.from_probs([1.5, -0.5])
