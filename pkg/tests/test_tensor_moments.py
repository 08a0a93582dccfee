import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensorconc.distributions import SampleBatch, SeedTrace, sample_anisotropic
from tensorconc.tensor_moments import (ABS, GAUSSIAN_CLOSED_FORM, MC_ORACLE, SIGNED,
                                       MomentFunctional, PopulationOracle, centered_gradient,
                                       centered_value, contract, dense_moment_tensor,
                                       double_factorial, dump_tensor_csv, empirical_moment,
                                       int_power, population_moment, power, power_deriv)


def gaussian_pop(lam):
    return PopulationOracle(GAUSSIAN_CLOSED_FORM, np.asarray(lam, dtype=float))


def functional(rows, p, mode=SIGNED, lam=None):
    rows = np.asarray(rows, dtype=float)
    lam = np.ones(rows.shape[1]) if lam is None else lam
    return MomentFunctional(SampleBatch(rows), p, mode, gaussian_pop(lam))


def test_single_row_second_moment():
    assert empirical_moment(functional([[1, 0]], 2), [1, 0]) == 1.0


def test_odd_moment_cancels():
    assert empirical_moment(functional([[1, 0], [-1, 0]], 3), [1, 0]) == 0.0


def test_hand_evaluated_moment():
    v = np.array([1, 1]) / math.sqrt(2)
    assert empirical_moment(functional([[1, 1], [2, 0]], 2), v) == pytest.approx(2.0, rel=1e-15)


def test_centered_value_hand():
    assert centered_value(functional([[1, 0]], 2), [0, 1]) == -1.0


def test_perfect_centering_p2():
    # rows sqrt(2) e_1, sqrt(2) e_2 have second moment exactly I_2
    f = functional(np.sqrt(2) * np.eye(2), 2)
    for theta in np.linspace(0, math.pi, 7):
        assert abs(centered_value(f, [math.cos(theta), math.sin(theta)])) < 1e-15


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        empirical_moment(functional([[1, 0]], 2), [1, 0, 0])


@pytest.mark.parametrize("p,mode", [(1, SIGNED), (2.5, SIGNED), (2, "cube")])
def test_mode_checks(p, mode):
    with pytest.raises(ValueError):
        functional([[1, 0]], p, mode)


def test_closed_form_needs_gaussian():
    with pytest.raises(ValueError):
        PopulationOracle(GAUSSIAN_CLOSED_FORM, np.ones(2), "rademacher")


def test_closed_form_rejects_abs_mode():
    with pytest.raises(ValueError):
        MomentFunctional(SampleBatch(np.ones((1, 2))), 4, ABS, gaussian_pop(np.ones(2)))


def test_double_factorial():
    assert [double_factorial(n) for n in range(-1, 8)] == [1, 1, 1, 2, 3, 8, 15, 48, 105]


@pytest.mark.parametrize("k", range(0, 9))
def test_int_power_matches_numpy(k):
    s = np.random.default_rng(k).standard_normal(100)
    np.testing.assert_allclose(int_power(s, k), s ** k, rtol=1e-14)


def test_population_examples():
    pop = gaussian_pop(np.ones(2))
    assert population_moment(pop, [1, 0], 2) == (1.0, 0.0)
    v = np.array([0.6, 0.8])
    assert population_moment(pop, v, 4)[0] == pytest.approx(3.0, rel=1e-14)
    assert population_moment(gaussian_pop([3.0, 0.2]), v, 5)[0] == 0.0


def test_mc_oracle_fourth_moment_near_three():
    pop = PopulationOracle(MC_ORACLE, np.ones(2), "gaussian", M=2_000_000, oracle_seed=3)
    val, se = population_moment(pop, [0.6, 0.8], 4)
    assert abs(val - 3.0) <= 3 * se


def test_mc_oracle_odd_moment_is_exact_zero():
    pop = PopulationOracle(MC_ORACLE, np.ones(2), "rademacher", M=1000)
    assert population_moment(pop, [0.6, 0.8], 3) == (0.0, 0.0)


def test_rademacher_fourth_moment_oracle():
    # E<Z,v>^4 = 3|v|^4 - 2 sum v_i^4 for Rademacher Z
    v = np.array([0.6, 0.8])
    exact = 3 - 2 * np.sum(v ** 4)
    pop = PopulationOracle(MC_ORACLE, np.ones(2), "rademacher", M=1_000_000)
    val, se = population_moment(pop, v, 4)
    assert abs(val - exact) <= 4 * se


def test_mc_oracle_second_moment_rotated():
    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((3, 3)))
    lam = np.array([2.0, 1.0, 0.5])
    pop = PopulationOracle(MC_ORACLE, lam, "gaussian", M=400_000, rotation=q)
    np.testing.assert_allclose(pop.second_moment(), q @ np.diag(lam) @ q.T, atol=0.02)
    closed = PopulationOracle(GAUSSIAN_CLOSED_FORM, lam, rotation=q)
    np.testing.assert_allclose(closed.second_moment(), q @ np.diag(lam) @ q.T, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(p=st.integers(2, 4), d=st.integers(1, 5), seed=st.integers(0, 10**6))
def test_lazy_matches_dense_tensor(p, d, seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((7, d))
    v = r.standard_normal(d)
    f = functional(X, p)
    assert empirical_moment(f, v) == pytest.approx(contract(dense_moment_tensor(X, p), v),
                                                   rel=1e-10, abs=1e-12)


def test_dense_tensor_limits():
    with pytest.raises(ValueError):
        dense_moment_tensor(np.ones((2, 7)), 2)
    with pytest.raises(ValueError):
        dense_moment_tensor(np.ones((2, 3)), 5)


def test_dump_tensor_csv(tmp_path):
    T = dense_moment_tensor(np.array([[1.0, 2.0]]), 2)
    path = tmp_path / "t.csv"
    dump_tensor_csv(T, path)
    assert path.read_text().splitlines() == ["i1,i2,value", "0,0,1.0", "0,1,2.0", "1,0,2.0", "1,1,4.0"]


@settings(max_examples=40, deadline=None)
@given(p=st.integers(2, 6), c=st.sampled_from([0.25, 0.5, 2.0, 4.0]), seed=st.integers(0, 10**6))
def test_homogeneity(p, c, seed):
    r = np.random.default_rng(seed)
    # dyadic entries and power-of-two c keep both sides exactly representable
    X = r.integers(-4, 5, size=(5, 3)) / 4
    v = r.integers(-4, 5, size=3) / 4
    f = functional(X, p)
    assert empirical_moment(f, c * v) == c ** p * empirical_moment(f, v)


@settings(max_examples=40, deadline=None)
@given(p=st.sampled_from([2, 4, 6]), seed=st.integers(0, 10**6))
def test_signed_and_abs_agree_for_even_p(p, seed):
    s = np.random.default_rng(seed).standard_normal(50)
    assert np.array_equal(power(s, p, SIGNED), power(s, p, ABS))
    np.testing.assert_allclose(power_deriv(s, p, SIGNED), power_deriv(s, p, ABS), rtol=1e-14)


def test_abs_mode_real_p():
    s = np.array([-2.0, 0.0, 3.0])
    np.testing.assert_allclose(power(s, 2.5, ABS), np.abs(s) ** 2.5)
    np.testing.assert_allclose(power_deriv(s, 2.5, ABS), 2.5 * np.abs(s) ** 1.5 * np.sign(s))


def fd_gradient(fn, v, h=1e-5):
    g = np.zeros_like(v)
    for j in range(v.size):
        e = np.zeros_like(v)
        e[j] = h
        g[j] = (fn(v + e) - fn(v - e)) / (2 * h)
    return g


@pytest.mark.parametrize("p", [2, 3, 4])
def test_gradient_finite_differences(p):
    r = np.random.default_rng(p)
    lam = np.array([2.0, 1.0, 0.3, 0.1])
    X = sample_anisotropic("gaussian", lam, 40, SeedTrace(p)).rows
    f = MomentFunctional(SampleBatch(X), p, SIGNED, gaussian_pop(lam))
    for _ in range(20):
        v = r.standard_normal(4)
        g = centered_gradient(f, v)
        fd = fd_gradient(lambda w: centered_value(f, w), v)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(g)


def test_gaussian_population_gradient_formula():
    lam = np.array([3.0, 1.0])
    pop = gaussian_pop(lam)
    v = np.array([0.3, -0.7])
    for p in (2, 4, 6):
        q = float(lam @ v ** 2)
        expected = p * double_factorial(p - 1) * q ** (p / 2 - 1) * lam * v
        np.testing.assert_allclose(pop.moment_grad(v, p), expected, rtol=1e-13)


def test_abs_mode_gradient_with_mc_population():
    lam = np.array([1.0, 0.5])
    pop = PopulationOracle(MC_ORACLE, lam, "rademacher", M=20_000)
    X = sample_anisotropic("rademacher", lam, 30, SeedTrace(2)).rows
    f = MomentFunctional(SampleBatch(X), 3.5, ABS, pop)
    v = np.array([0.4, -1.1])
    fd = fd_gradient(lambda w: centered_value(f, w), v)
    assert np.linalg.norm(centered_gradient(f, v) - fd) <= 1e-5 * np.linalg.norm(fd)


def test_vectorized_matches_columnwise():
    X = np.random.default_rng(0).standard_normal((20, 3))
    f = functional(X, 4)
    V = np.random.default_rng(1).standard_normal((3, 5))
    vals, G = f.value_and_grad(V)
    for j in range(5):
        assert vals[j] == pytest.approx(centered_value(f, V[:, j]), rel=1e-13)
        np.testing.assert_allclose(G[:, j], centered_gradient(f, V[:, j]), rtol=1e-12)
