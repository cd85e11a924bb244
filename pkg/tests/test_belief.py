import numpy as np
import pytest

from recruitsim.belief import (
    DirichletBelief,
    init_empiric,
    init_informed,
    init_jeffreys,
    sample_estimate,
    update_with_counts,
)
from recruitsim.demographics import JointDistribution, SiteModel


def _site(p, schema=None):
    from recruitsim.demographics import AttributeSchema
    schema = schema or AttributeSchema((("x", tuple(str(i) for i in range(len(p)))),))
    return SiteModel("s", JointDistribution(p, schema))


def test_jeffreys():
    b = init_jeffreys(9, 80)
    assert np.all(b.alpha == 0.5)
    np.testing.assert_allclose(b.mean(3), 1 / 80)
    np.testing.assert_array_equal(init_jeffreys(1, 2).alpha, [[0.5, 0.5]])


def test_informed(sites):
    b = init_informed(sites, mass=1.0)
    np.testing.assert_allclose(b.mean(2), sites[2].response.probs, rtol=1e-12)
    np.testing.assert_allclose(init_informed([_site([0.9, 0.1])], 1000).alpha, [[900, 100]])
    np.testing.assert_allclose(init_informed(sites, 1e6).mean(), b.mean(), rtol=1e-12)


def test_empiric(sites):
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(init_empiric(sites, 0, rng).alpha, init_jeffreys(9, 80).alpha)
    b = init_empiric(sites, 1000, rng)
    np.testing.assert_allclose(b.total_concentration(), 1000 + 40)
    big = init_empiric(sites[:2], 100_000, rng)
    for j in range(2):
        assert np.max(np.abs(big.mean(j) - sites[j].response.probs)) < 0.01


def test_sample_estimate():
    rng = np.random.default_rng(1)
    b = DirichletBelief([[1e9, 1e9]])
    np.testing.assert_allclose(sample_estimate(b, 0, rng), [0.5, 0.5], atol=1e-3)
    b = DirichletBelief([[2.0, 6.0]])
    draws = np.array([sample_estimate(b, 0, rng) for _ in range(100_000)])
    assert np.all(np.abs(draws.sum(axis=1) - 1) < 1e-12)
    np.testing.assert_allclose(draws.mean(axis=0), [0.25, 0.75], atol=0.01)


def test_sampling_tiny_concentrations_stays_finite(sites):
    b = init_informed(sites, mass=1.0)
    draw = sample_estimate(b, 0, np.random.default_rng(3))
    assert np.all(np.isfinite(draw)) and abs(draw.sum() - 1) < 1e-12


def test_sampling_reproducible():
    b = DirichletBelief(np.full((3, 5), 0.5))
    a = [sample_estimate(b, j, np.random.default_rng(7)) for j in range(3)]
    c = [sample_estimate(b, j, np.random.default_rng(7)) for j in range(3)]
    for x, y in zip(a, c):
        np.testing.assert_array_equal(x, y)


def test_update():
    b = DirichletBelief([[0.5, 0.5], [1.0, 1.0]])
    assert update_with_counts(b, 0, [0, 0]) is b
    u = update_with_counts(b, 0, [3, 1])
    np.testing.assert_array_equal(u.alpha, [[3.5, 1.5], [1.0, 1.0]])
    seq = update_with_counts(update_with_counts(b, 1, [1, 2]), 1, [4, 0])
    np.testing.assert_array_equal(seq.alpha, update_with_counts(b, 1, [5, 2]).alpha)
    with pytest.raises(ValueError):
        update_with_counts(b, 0, [-1, 2])


def test_posterior_mean_converges_single_site(sites):
    rng = np.random.default_rng(5)
    b = init_jeffreys(1, 80)
    for _ in range(40):
        b = update_with_counts(b, 0, rng.multinomial(500, sites[4].response.probs))
    assert np.max(np.abs(b.mean(0) - sites[4].response.probs)) < 0.01
