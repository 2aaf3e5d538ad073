import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carleman_lab.interaction import (RateSpec, SingularRateError, admissibility_bound, collision_jacobian,
                                      collision_map, dissipation_product, rate, sgn_plus, t_dissipativity_test)

PS = "power_sum"


@pytest.mark.parametrize("alpha, a, b, expected", [(1, 1, 1, 2), (0, 3.7, 0.2, 1), (0, 0, 0, 1), (-1, 1, 3, 0.25)])
def test_rate_values(alpha, a, b, expected):
    assert rate(RateSpec(PS, alpha), a, b) == pytest.approx(expected, rel=1e-15)


def test_singular_corner():
    with pytest.raises(SingularRateError):
        rate(RateSpec(PS, -0.5), 0.0, 0.0)
    with pytest.raises(SingularRateError):
        collision_map(RateSpec(PS, -1), np.zeros(4))


def test_sgn_plus_tie():
    np.testing.assert_array_equal(sgn_plus([-1.0, 0.0, 2.0]), [0, 0, 1])


@pytest.mark.parametrize("alpha, u, expected", [(1, [2, 1], [-3, 3]), (0, [1, 0], [-1, 1])])
def test_collision_map_examples(alpha, u, expected):
    np.testing.assert_allclose(collision_map(RateSpec(PS, alpha), np.array(u, float)), expected, rtol=1e-15)


@pytest.mark.parametrize("kind", ["power_sum", "mean_field", "power_difference"])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_equilibrium_exact(kind, n):
    out = collision_map(RateSpec(kind, 0.5), np.full(2 * n, 0.37))
    assert not out.any()


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(["power_sum", "power_difference"]), st.floats(-1, 1), st.integers(1, 3),
       st.integers(0, 2**31 - 1))
def test_conservation(kind, alpha, n, seed):
    u = np.random.default_rng(seed).uniform(0.01, 100, size=(2 * n, 16))
    out = collision_map(RateSpec(kind, alpha), u)
    scale = np.max(np.abs(u), axis=0) * np.max(np.abs(out), axis=0).clip(1)
    assert np.all(np.abs(out.sum(axis=0)) <= 1e-13 * np.maximum(scale, 1) * 2 * n)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 50), st.floats(0.01, 50), st.floats(-1, 1))
def test_rate_symmetry(a, b, alpha):
    spec = RateSpec(PS, alpha)
    assert rate(spec, a, b) == rate(spec, b, a)


@pytest.mark.parametrize("kind", ["power_sum", "mean_field", "power_difference"])
@pytest.mark.parametrize("alpha", [-1.0, -0.5, 0.0, 0.5, 1.0])
def test_jacobian_matches_finite_differences(kind, alpha):
    spec = RateSpec(kind, alpha)
    u = np.random.default_rng(3).uniform(0.5, 2.0, size=(4, 3))
    J = collision_jacobian(spec, u)
    h = 1e-6
    for j in range(4):
        du = np.zeros_like(u)
        du[j] = h
        fd = (collision_map(spec, u + du) - collision_map(spec, u - du)) / (2 * h)
        np.testing.assert_allclose(J[:, :, j].T, fd, rtol=1e-6, atol=1e-8)


def test_dissipation_hand_example():
    spec = RateSpec(PS, 1)
    u = np.array([[2.0], [1.0]])
    v = np.array([[1.0], [2.0]])
    assert dissipation_product(spec, u, v)[0] == pytest.approx(-6.0)
    assert dissipation_product(spec, u, u)[0] == 0.0


def test_dissipativity_fails_outside_range():
    rep = t_dissipativity_test(RateSpec(PS, 1.5), 2, samples=20_000, box=(0.001, 10.0), seed=1, chunk=5_000)
    assert rep.max_violation > 0
    assert not rep.certified
    assert rep.worst_u.shape == (4,)


def test_dissipativity_small_sample_certifies():
    rep = t_dissipativity_test(RateSpec(PS, -0.5), 2, samples=5_000)
    assert rep.certified


def test_admissibility_bound():
    assert admissibility_bound(RateSpec(PS, 1), 2.0) == pytest.approx(4.0)
    assert admissibility_bound(RateSpec(PS, 0), 10.0) == 1.0
    assert admissibility_bound(RateSpec(PS, -1), 2.0) == pytest.approx(4.0)


def test_monotone_relaxation():
    spec = RateSpec(PS, 0.5)
    u = np.random.default_rng(2).uniform(0.1, 3, size=(6, 200))
    w = u + 1e-3 * collision_map(spec, u)
    assert np.all(np.ptp(w, axis=0) <= np.ptp(u, axis=0))
