import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import gammaln

from tensorconc.complexity import (LpMarginal, complexity_profile, effective_rank,
                                   ellipsoid_radius, gauss_complexity_mc, gaussian_abs_moment,
                                   lp_marginal_norm)
from tensorconc.distributions import SpectrumSpec
from tensorconc.sphere_norm import Domain


def test_effective_rank_examples():
    assert effective_rank(SpectrumSpec.identity(7)) == 7
    assert effective_rank(SpectrumSpec.flat_top(3, 10)) == 3
    assert effective_rank(np.array([2.0, 1.0, 1.0])) == 2.0


def test_effective_rank_zero_spectrum():
    with pytest.raises(ValueError):
        effective_rank(np.zeros(3))


@pytest.mark.parametrize("lam,rad", [([4.0, 1.0], 2.0), ([1.0, 1.0, 1.0], 1.0), ([0.25], 0.5)])
def test_radius(lam, rad):
    assert ellipsoid_radius(np.array(lam)) == rad


def test_effective_rank_between_one_and_d():
    r = np.random.default_rng(0)
    for _ in range(50):
        lam = r.exponential(size=r.integers(1, 30))
        assert 1 - 1e-12 <= effective_rank(lam) <= lam.size + 1e-12


def test_gamma_one_dimensional():
    g, se = gauss_complexity_mc(Domain.ellipsoid(np.array([1.0])), 100_000, seed=1)
    assert abs(g - math.sqrt(2 / math.pi)) <= 3 * se


def test_gamma_degenerate_ellipsoid_is_a_segment():
    g, se = gauss_complexity_mc(Domain.ellipsoid(np.array([1.0, 0, 0, 0])), 100_000, seed=2)
    assert abs(g - math.sqrt(2 / math.pi)) <= 3 * se


@pytest.mark.parametrize("d", [1, 3, 10, 40])
def test_gamma_sphere_matches_chi_mean(d):
    # E|g| for g ~ N(0, I_d) is sqrt(2) Gamma((d+1)/2) / Gamma(d/2)
    exact = math.sqrt(2) * math.exp(gammaln((d + 1) / 2) - gammaln(d / 2))
    g, se = gauss_complexity_mc(Domain.sphere(d), 100_000, seed=d)
    assert abs(g - exact) <= 4 * se
    assert g <= math.sqrt(d) + 3 * se


def test_gamma_point_domain():
    v = np.array([0.6, -0.8, 1.0])
    g, se = gauss_complexity_mc(Domain.single_point(v), 100_000, seed=3)
    assert abs(g - math.sqrt(2 / math.pi) * np.linalg.norm(v)) <= 4 * se


def test_gamma_rejects_few_trials():
    with pytest.raises(ValueError):
        gauss_complexity_mc(Domain.sphere(2), 10)


def test_gamma_deterministic_and_homogeneous():
    lam = np.array([2.0, 1.0, 0.1])
    a = gauss_complexity_mc(Domain.ellipsoid(lam), 5000, seed=4)
    assert a == gauss_complexity_mc(Domain.ellipsoid(lam), 5000, seed=4)
    b = gauss_complexity_mc(Domain.ellipsoid(lam).scaled(2.0), 5000, seed=4)
    assert b[0] == pytest.approx(2 * a[0], rel=1e-12)


def test_profile_fields():
    prof = complexity_profile(SpectrumSpec.poly_decay(1, 5), trials=2000)
    lam = 1 / np.arange(1, 6)
    assert prof.trace == pytest.approx(lam.sum())
    assert prof.op_norm == 1.0
    assert prof.eff_rank == pytest.approx(lam.sum())
    assert prof.radius == 1.0


@pytest.mark.parametrize("p", [1.0, 2.0, 2.5, 3.0, 4.0, 7.0])
def test_gaussian_abs_moment_by_quadrature(p):
    val, _ = integrate.quad(lambda x: abs(x) ** p * math.exp(-x * x / 2) / math.sqrt(2 * math.pi),
                            -np.inf, np.inf)
    assert gaussian_abs_moment(p) == pytest.approx(val, rel=1e-10)


def test_lp_examples():
    assert lp_marginal_norm("gaussian", np.ones(2), [1.0, 0.0], 2) == 1.0
    v = np.array([0.6, 0.8])
    assert lp_marginal_norm("gaussian", np.ones(2), v, 4) == pytest.approx(3 ** 0.25, rel=1e-14)
    for p in (2, 3.5, 6):
        assert lp_marginal_norm("rademacher", np.ones(1), [1.0], p, trials=5000) == pytest.approx(1.0, rel=1e-14)


@pytest.mark.parametrize("model", ["gaussian", "rademacher", "uniform_sphere_scaled"])
def test_l2_marginal_is_euclidean_norm(model):
    v = np.random.default_rng(0).standard_normal(4)
    assert lp_marginal_norm(model, np.ones(4), v, 2) == pytest.approx(np.linalg.norm(v), rel=1e-14)


@pytest.mark.parametrize("model", ["gaussian", "rademacher", "uniform_sphere_scaled"])
def test_lp_monotone_in_p(model):
    v = np.array([0.3, -0.2, 0.9])
    lam = np.array([2.0, 1.0, 0.5])
    vals = [lp_marginal_norm(model, lam, v, p, trials=200_000) for p in (1, 2, 3, 4, 6)]
    assert all(b >= a * (1 - 1e-3) for a, b in zip(vals, vals[1:]))


def test_rademacher_l4_against_exact_moment():
    v = np.array([0.5, -0.5, 0.7071067811865476])
    exact = (3 * np.dot(v, v) ** 2 - 2 * np.sum(v ** 4)) ** 0.25
    assert lp_marginal_norm("rademacher", np.ones(3), v, 4) == pytest.approx(exact, rel=2e-3)


@pytest.mark.parametrize("model,p", [("gaussian", 4.0), ("rademacher", 4.0), ("uniform_sphere_scaled", 3.0)])
def test_lp_gradient_finite_differences(model, p):
    m = LpMarginal(model, np.array([1.5, 1.0, 0.3]), p, trials=50_000)
    v = np.array([0.4, -0.3, 0.8])
    _, G = m.value_and_grad(v[:, None])
    h = 1e-6
    fd = np.array([(m(v + h * e) - m(v - h * e)) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(G[:, 0], fd, rtol=1e-6)
